//! Trajectory data model, JSONL log format and segment slicing.
//!
//! A [`TrajectoryLog`] holds one driver's run over one scenario, sampled at a
//! fixed 10 Hz. Every other module consumes logs through this type, so all of
//! the validation lives in [`TrajectoryLog::new`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only accepted log sample rate.
pub const SAMPLE_RATE_HZ: f64 = 10.0;
/// Waypoints per planned trajectory.
pub const WAYPOINTS: usize = 8;
/// Seconds between consecutive waypoints.
pub const WAYPOINT_DT: f64 = 0.5;
/// Raw log samples between consecutive waypoints at 10 Hz.
pub const WAYPOINT_STRIDE: usize = 5;
/// Raw samples covered by one segment window.
pub const SEGMENT_SPAN: usize = (WAYPOINTS - 1) * WAYPOINT_STRIDE + 1;
/// Flattened `(x, y, heading)` length of a planned trajectory.
pub const TRAJECTORY_FEATURES: usize = 3 * WAYPOINTS;

const SPACING_TOLERANCE: f64 = 0.01;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub lon_accel: f64,
    pub throttle: f64,
    pub brake: f64,
    pub steer: f64,
    pub lane_index: u32,
}

impl EgoState {
    fn validate(&self, index: usize) -> Result<()> {
        let fields = [
            self.t,
            self.x,
            self.y,
            self.heading,
            self.speed,
            self.lon_accel,
            self.throttle,
            self.brake,
            self.steer,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("sample {index}: non-finite field")));
        }
        if self.speed < 0.0 {
            return Err(Error::InvalidValue(format!("sample {index}: negative speed")));
        }
        if !(0.0..=1.0).contains(&self.throttle) || !(0.0..=1.0).contains(&self.brake) {
            return Err(Error::InvalidValue(format!(
                "sample {index}: throttle/brake outside [0, 1]"
            )));
        }
        if !(-1.0..=1.0).contains(&self.steer) {
            return Err(Error::InvalidValue(format!("sample {index}: steer outside [-1, 1]")));
        }
        Ok(())
    }

    pub fn pose(&self) -> Pose {
        Pose { x: self.x, y: self.y, heading: self.heading }
    }
}

/// Nearest in-lane vehicle ahead. `gap` and `rel_speed` only carry meaning
/// when `present` is set; `rel_speed` is positive when closing in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadObservation {
    pub present: bool,
    pub gap: f64,
    pub rel_speed: f64,
}

impl LeadObservation {
    pub const ABSENT: LeadObservation = LeadObservation { present: false, gap: 0.0, rel_speed: 0.0 };

    pub fn new(gap: f64, rel_speed: f64) -> Self {
        Self { present: true, gap, rel_speed }
    }
}

impl Default for LeadObservation {
    fn default() -> Self {
        Self::ABSENT
    }
}

/// A 2-D pose in some frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    /// Expresses `other` in the frame attached to `self`.
    pub fn relative(&self, other: Pose) -> Pose {
        let (s, c) = self.heading.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        Pose {
            x: c * dx + s * dy,
            y: -s * dx + c * dy,
            heading: normalize_angle(other.heading - self.heading),
        }
    }

    /// Inverse of [`Pose::relative`]: maps a pose given in `self`'s frame back out.
    pub fn compose(&self, local: Pose) -> Pose {
        let (s, c) = self.heading.sin_cos();
        Pose {
            x: self.x + c * local.x - s * local.y,
            y: self.y + s * local.x + c * local.y,
            heading: normalize_angle(self.heading + local.heading),
        }
    }
}

/// One driver's run over one scenario. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    driver_id: String,
    scenario_id: String,
    run_index: u32,
    sample_rate_hz: f64,
    route_length_m: f64,
    states: Vec<EgoState>,
    lead: Vec<LeadObservation>,
}

impl TrajectoryLog {
    /// Validates and builds a log. Headings are normalized into `(-pi, pi]`.
    pub fn new(
        driver_id: impl Into<String>,
        scenario_id: impl Into<String>,
        run_index: u32,
        sample_rate_hz: f64,
        route_length_m: f64,
        mut states: Vec<EgoState>,
        lead: Vec<LeadObservation>,
    ) -> Result<Self> {
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::UnsupportedRate(sample_rate_hz));
        }
        if !(route_length_m.is_finite() && route_length_m > 0.0) {
            return Err(Error::InvalidValue(format!("route_length_m = {route_length_m}")));
        }
        if states.len() != lead.len() {
            return Err(Error::LengthMismatch { states: states.len(), lead: lead.len() });
        }
        if states.len() < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: states.len() });
        }
        let expected = 1.0 / sample_rate_hz;
        for (i, s) in states.iter_mut().enumerate() {
            s.validate(i)?;
            s.heading = normalize_angle(s.heading);
        }
        for i in 1..states.len() {
            let (prev, t) = (states[i - 1].t, states[i].t);
            if t <= prev {
                return Err(Error::NonMonotonicTime { index: i, t, prev });
            }
            let dt = t - prev;
            if (dt - expected).abs() > SPACING_TOLERANCE * expected {
                return Err(Error::IrregularSpacing { index: i, dt, expected });
            }
        }
        for (i, l) in lead.iter().enumerate() {
            if l.present && !(l.gap.is_finite() && l.gap >= 0.0 && l.rel_speed.is_finite()) {
                return Err(Error::InvalidValue(format!("sample {i}: invalid lead observation")));
            }
        }
        Ok(Self {
            driver_id: driver_id.into(),
            scenario_id: scenario_id.into(),
            run_index,
            sample_rate_hz,
            route_length_m,
            states,
            lead,
        })
    }

    pub fn driver_id(&self) -> &str {
        &self.driver_id
    }
    pub fn scenario_id(&self) -> &str {
        &self.scenario_id
    }
    pub fn run_index(&self) -> u32 {
        self.run_index
    }
    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }
    pub fn route_length_m(&self) -> f64 {
        self.route_length_m
    }
    pub fn states(&self) -> &[EgoState] {
        &self.states
    }
    pub fn lead(&self) -> &[LeadObservation] {
        &self.lead
    }
    pub fn len(&self) -> usize {
        self.states.len()
    }
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }
    /// Elapsed time between first and last sample.
    pub fn duration(&self) -> f64 {
        self.states[self.states.len() - 1].t - self.states[0].t
    }
}

/// A single waypoint of a planned trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Eight waypoints relative to the ego pose at planning time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrajectory {
    pub points: [Waypoint; WAYPOINTS],
    pub dt: f64,
}

impl PlannedTrajectory {
    pub fn new(points: [Waypoint; WAYPOINTS]) -> Self {
        Self { points, dt: WAYPOINT_DT }
    }

    /// `(x, y, heading)` per point, in point order.
    pub fn to_flat(&self) -> [f64; TRAJECTORY_FEATURES] {
        let mut out = [0.0; TRAJECTORY_FEATURES];
        for (i, p) in self.points.iter().enumerate() {
            out[3 * i] = p.x;
            out[3 * i + 1] = p.y;
            out[3 * i + 2] = p.heading;
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != TRAJECTORY_FEATURES {
            return Err(Error::DimensionMismatch { expected: TRAJECTORY_FEATURES, got: flat.len() });
        }
        let mut points = [Waypoint::default(); WAYPOINTS];
        for (i, p) in points.iter_mut().enumerate() {
            *p = Waypoint { x: flat[3 * i], y: flat[3 * i + 1], heading: flat[3 * i + 2] };
        }
        Ok(Self::new(points))
    }

    /// Speeds implied by consecutive waypoints.
    pub fn implied_speeds(&self) -> [f64; WAYPOINTS - 1] {
        let mut out = [0.0; WAYPOINTS - 1];
        for (i, v) in out.iter_mut().enumerate() {
            let (a, b) = (self.points[i], self.points[i + 1]);
            *v = (b.x - a.x).hypot(b.y - a.y) / self.dt;
        }
        out
    }

    pub fn endpoint(&self) -> Waypoint {
        self.points[WAYPOINTS - 1]
    }
}

/// The segment starting at raw sample `start`, re-expressed relative to that
/// sample's pose. `None` when the log is too short.
pub fn segment_at(log: &TrajectoryLog, start: usize) -> Option<PlannedTrajectory> {
    if start + SEGMENT_SPAN > log.len() {
        return None;
    }
    let states = log.states();
    let origin = states[start].pose();
    let mut points = [Waypoint::default(); WAYPOINTS];
    for (j, p) in points.iter_mut().enumerate() {
        let rel = origin.relative(states[start + j * WAYPOINT_STRIDE].pose());
        *p = Waypoint { x: rel.x, y: rel.y, heading: rel.heading };
    }
    Some(PlannedTrajectory::new(points))
}

/// Segment start indices for a log of `len` samples.
pub fn segment_starts(len: usize, stride: usize) -> impl Iterator<Item = usize> {
    let stride = stride.max(1);
    let last = len.checked_sub(SEGMENT_SPAN);
    (0..).step_by(stride).take_while(move |&s| matches!(last, Some(l) if s <= l))
}

/// All 8-point segments of a log, one every `stride` raw samples.
pub fn slice_segments(log: &TrajectoryLog, stride: usize) -> Vec<PlannedTrajectory> {
    segment_starts(log.len(), stride).filter_map(|s| segment_at(log, s)).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogHeader {
    driver_id: String,
    scenario_id: String,
    run_index: u32,
    sample_rate_hz: f64,
    route_length_m: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    t: f64,
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    lon_accel: f64,
    throttle: f64,
    brake: f64,
    steer: f64,
    lane_index: u32,
    lead: LeadObservation,
}

/// Parses the JSONL log format: a header line followed by one sample per line.
pub fn parse_log(bytes: &[u8]) -> Result<TrajectoryLog> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::MalformedRecord { line: 1, message: e.to_string() })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::MalformedRecord { line: 1, message: "missing header".into() })?;
    let header: LogHeader = serde_json::from_str(first)
        .map_err(|e| Error::MalformedRecord { line: 1, message: e.to_string() })?;
    let mut states = Vec::new();
    let mut lead = Vec::new();
    for (i, line) in lines {
        let rec: SampleRecord = serde_json::from_str(line)
            .map_err(|e| Error::MalformedRecord { line: i + 1, message: e.to_string() })?;
        states.push(EgoState {
            t: rec.t,
            x: rec.x,
            y: rec.y,
            heading: rec.heading,
            speed: rec.speed,
            lon_accel: rec.lon_accel,
            throttle: rec.throttle,
            brake: rec.brake,
            steer: rec.steer,
            lane_index: rec.lane_index,
        });
        lead.push(rec.lead);
    }
    TrajectoryLog::new(
        header.driver_id,
        header.scenario_id,
        header.run_index,
        header.sample_rate_hz,
        header.route_length_m,
        states,
        lead,
    )
}

/// Serializes a log to JSONL. Numbers use the shortest round-tripping form.
pub fn write_log(log: &TrajectoryLog) -> Vec<u8> {
    let header = LogHeader {
        driver_id: log.driver_id.clone(),
        scenario_id: log.scenario_id.clone(),
        run_index: log.run_index,
        sample_rate_hz: log.sample_rate_hz,
        route_length_m: log.route_length_m,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for (s, l) in log.states.iter().zip(&log.lead) {
        let lead = if l.present { *l } else { LeadObservation::ABSENT };
        let rec = SampleRecord {
            t: s.t,
            x: s.x,
            y: s.y,
            heading: s.heading,
            speed: s.speed,
            lon_accel: s.lon_accel,
            throttle: s.throttle,
            brake: s.brake,
            steer: s.steer,
            lane_index: s.lane_index,
            lead,
        };
        serde_json::to_writer(&mut out, &rec).expect("sample serializes");
        out.push(b'\n');
    }
    out
}

pub fn read_log_file(path: &std::path::Path) -> Result<TrajectoryLog> {
    parse_log(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn straight_log(n: usize, speed: f64) -> TrajectoryLog {
        let states = (0..n)
            .map(|i| {
                let t = i as f64 / 10.0;
                EgoState {
                    t,
                    x: speed * t,
                    y: 0.0,
                    heading: 0.0,
                    speed,
                    lon_accel: 0.0,
                    throttle: 0.2,
                    brake: 0.0,
                    steer: 0.0,
                    lane_index: 0,
                }
            })
            .collect();
        TrajectoryLog::new("d", "s", 0, 10.0, 1000.0, states, vec![LeadObservation::ABSENT; n])
            .unwrap()
    }

    #[test]
    fn minimal_two_line_log() {
        let text = concat!(
            r#"{"driver_id":"a","scenario_id":"s","run_index":0,"sample_rate_hz":10.0,"route_length_m":100.0}"#,
            "\n",
            r#"{"t":0.0,"x":0.0,"y":0.0,"heading":0.0,"speed":1.0,"lon_accel":0.0,"throttle":0.0,"brake":0.0,"steer":0.0,"lane_index":0,"lead":{"present":false,"gap":0.0,"rel_speed":0.0}}"#,
            "\n",
            r#"{"t":0.1,"x":0.1,"y":0.0,"heading":0.0,"speed":1.0,"lon_accel":0.0,"throttle":0.0,"brake":0.0,"steer":0.0,"lane_index":0,"lead":{"present":false,"gap":0.0,"rel_speed":0.0}}"#,
        );
        let log = parse_log(text.as_bytes()).unwrap();
        assert_eq!(log.len(), 2);
        assert!(log.lead().iter().all(|l| !l.present));
    }

    #[test]
    fn non_monotonic_time_is_rejected() {
        let mut log = straight_log(3, 1.0);
        log.states[2].t = 0.1;
        let bytes = write_log(&log);
        assert!(matches!(parse_log(&bytes), Err(Error::NonMonotonicTime { index: 2, .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let log = straight_log(3, 1.0);
        let mut text = String::from_utf8(write_log(&log)).unwrap();
        text.push_str("{\"t\": oops}\n");
        match parse_log(text.as_bytes()) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn length_mismatch_and_rate_are_rejected() {
        let log = straight_log(3, 1.0);
        let err = TrajectoryLog::new(
            "d",
            "s",
            0,
            10.0,
            1.0,
            log.states().to_vec(),
            vec![LeadObservation::ABSENT; 2],
        );
        assert!(matches!(err, Err(Error::LengthMismatch { states: 3, lead: 2 })));
        let err = TrajectoryLog::new(
            "d",
            "s",
            0,
            20.0,
            1.0,
            log.states().to_vec(),
            log.lead().to_vec(),
        );
        assert!(matches!(err, Err(Error::UnsupportedRate(_))));
    }

    #[test]
    fn absent_lead_serializes_as_present_false() {
        let log = straight_log(2, 1.0);
        let text = String::from_utf8(write_log(&log)).unwrap();
        assert!(text.lines().skip(1).all(|l| l.contains(r#""present":false"#)));
    }

    #[test]
    fn straight_log_segments() {
        let log = straight_log(100, 10.0);
        let segs = slice_segments(&log, 10);
        assert_eq!(segs.len(), (100 - 36) / 10 + 1);
        for seg in &segs {
            for (j, p) in seg.points.iter().enumerate() {
                assert!((p.x - 5.0 * j as f64).abs() < 1e-9);
                assert!(p.y.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn segment_count_matches_enumeration() {
        assert_eq!(slice_segments(&straight_log(36, 1.0), 10).len(), 1);
        assert!(slice_segments(&straight_log(35, 1.0), 10).is_empty());
        for n in [36usize, 37, 45, 46, 80, 123] {
            for stride in [1usize, 3, 5, 10, 17] {
                // brute-force: every start whose window fits
                let brute = (0..n).filter(|s| s % stride == 0 && s + 35 < n).count();
                assert_eq!(segment_starts(n, stride).count(), brute);
                assert_eq!(brute, (n - 36) / stride + 1);
            }
        }
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!(normalize_angle(0.5) == 0.5);
    }
}
