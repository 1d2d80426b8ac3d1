//! Deterministic synthetic driving world.
//!
//! Parameterized drivers follow a scripted lead vehicle along a route using
//! the intelligent driver model, and optionally overtake it. Because every
//! driver's style parameters are known, the generated logs act as ground
//! truth for separability and adaptation experiments.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::trajectory::{normalize_angle, EgoState, LeadObservation, TrajectoryLog, SAMPLE_RATE_HZ};

pub const DT: f64 = 1.0 / SAMPLE_RATE_HZ;
pub const LANE_WIDTH: f64 = 3.5;
pub const VEHICLE_LENGTH: f64 = 4.5;
pub const WHEELBASE: f64 = 2.8;
pub const MAX_STEER_ANGLE: f64 = 0.6;
/// Leads further than this are not observed.
pub const SENSOR_RANGE: f64 = 150.0;
pub const CONTEXT_DIM: usize = 8;
/// Pedal-to-acceleration map shared by the generator and the closed loop.
pub const FULL_THROTTLE_ACCEL: f64 = 4.0;
pub const FULL_BRAKE_DECEL: f64 = 8.0;

/// Rolling and aerodynamic resistance, m/s^2.
pub fn drag(speed: f64) -> f64 {
    if speed > 0.0 {
        0.05 + 0.0003 * speed * speed
    } else {
        0.0
    }
}

/// Pedal positions that realize `accel` at `speed`; mutually exclusive.
pub fn pedals_for(accel: f64, speed: f64) -> (f64, f64) {
    let needed = accel + drag(speed);
    if needed >= 0.0 {
        ((needed / FULL_THROTTLE_ACCEL).min(1.0), 0.0)
    } else {
        (0.0, (-needed / FULL_BRAKE_DECEL).min(1.0))
    }
}

/// Generative style parameters of one synthetic driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    /// IDM desired speed on a 30 m/s road, m/s.
    pub desired_speed: f64,
    pub time_headway: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub min_gap: f64,
    pub lane_change_propensity: f64,
    pub brake_aggression: f64,
    pub noise_scale: f64,
}

/// Bounds of the profile parameter box, `(low, high)`.
pub const PROFILE_BOX: [(f64, f64); 8] = [
    (18.0, 32.0),
    (0.8, 2.4),
    (0.8, 2.8),
    (1.2, 3.0),
    (1.5, 4.0),
    (0.05, 0.95),
    (0.0, 1.0),
    (0.05, 0.6),
];

impl DriverProfile {
    fn from_array(a: [f64; 8]) -> Self {
        Self {
            desired_speed: a[0],
            time_headway: a[1],
            max_accel: a[2],
            comfort_decel: a[3],
            min_gap: a[4],
            lane_change_propensity: a[5],
            brake_aggression: a[6],
            noise_scale: a[7],
        }
    }

    /// Centre of the parameter box; the expert used for pretraining.
    pub fn median() -> Self {
        Self::from_array(PROFILE_BOX.map(|(lo, hi)| 0.5 * (lo + hi)))
    }

    /// Maps `u in [0,1]^8` into the parameter box.
    pub fn from_unit(u: [f64; 8]) -> Self {
        let mut a = [0.0; 8];
        for (i, (lo, hi)) in PROFILE_BOX.iter().enumerate() {
            a[i] = lo + (hi - lo) * u[i].clamp(0.0, 1.0);
        }
        Self::from_array(a)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.desired_speed, self.time_headway, self.max_accel, self.comfort_decel, self.min_gap];
        if dims.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidValue("profile: dimensional parameters must be positive".into()));
        }
        let fracs = [self.lane_change_propensity, self.brake_aggression, self.noise_scale];
        if fracs.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidValue("profile: propensities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Aggressive reference: fast, short headway.
    pub fn aggressive() -> Self {
        Self::from_unit([0.95, 0.05, 0.9, 0.9, 0.1, 0.9, 0.9, 0.3])
    }

    /// Conservative reference: slow, long headway.
    pub fn conservative() -> Self {
        Self::from_unit([0.05, 0.95, 0.1, 0.1, 0.9, 0.1, 0.1, 0.3])
    }
}

/// `n` profiles spread over the parameter box by stratified sampling: each
/// parameter takes one value from each of `n` equal strata.
pub fn default_profiles(n: usize, master_seed: u64) -> Vec<(String, DriverProfile)> {
    use rand::seq::SliceRandom;
    let mut rng = seed::rng(seed::derive(master_seed, "profiles"));
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(8);
    for _ in 0..8 {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        columns.push(strata.iter().map(|&k| (k as f64 + rng.random::<f64>()) / n as f64).collect());
    }
    (0..n)
        .map(|i| {
            let mut u = [0.0; 8];
            for (j, col) in columns.iter().enumerate() {
                u[j] = col[i];
            }
            (format!("driver{i:02}"), DriverProfile::from_unit(u))
        })
        .collect()
}

/// Route centreline as a polyline parameterized by arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    points: Vec<(f64, f64)>,
    #[serde(skip)]
    cum: Vec<f64>,
}

impl Route {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidValue("route needs at least two points".into()));
        }
        let mut cum = vec![0.0];
        for w in points.windows(2) {
            let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            cum.push(cum[cum.len() - 1] + d);
        }
        if cum[cum.len() - 1] <= 0.0 {
            return Err(Error::InvalidValue("empty route".into()));
        }
        Ok(Self { points, cum })
    }

    pub fn straight(length: f64) -> Self {
        Self::new(vec![(0.0, 0.0), (length, 0.0)]).expect("positive length")
    }

    /// Straight leg, half-circle turn to the left, straight leg back.
    pub fn u_turn(leg: f64, radius: f64) -> Self {
        let mut pts = vec![(0.0, 0.0), (leg, 0.0)];
        let n = 48;
        for k in 1..=n {
            let a = -PI / 2.0 + PI * k as f64 / n as f64;
            pts.push((leg + radius * a.cos(), radius + radius * a.sin()));
        }
        pts.push((0.0, 2.0 * radius));
        Self::new(pts).expect("valid u-turn")
    }

    pub fn length(&self) -> f64 {
        self.cum[self.cum.len() - 1]
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn segment_index(&self, s: f64) -> usize {
        let s = s.clamp(0.0, self.length());
        match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => (i - 1).min(self.points.len() - 2),
        }
    }

    /// Centreline position and heading at arc length `s`. Beyond either end
    /// the end segments are extended straight.
    pub fn pose_at(&self, s: f64) -> (f64, f64, f64) {
        let i = if s >= self.length() { self.points.len() - 2 } else if s <= 0.0 { 0 } else { self.segment_index(s) };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let heading = (b.1 - a.1).atan2(b.0 - a.0);
        let u = s - self.cum[i];
        (a.0 + u * heading.cos(), a.1 + u * heading.sin(), heading)
    }

    /// World position of arc length `s` offset `lateral` metres to the left.
    pub fn offset_point(&self, s: f64, lateral: f64) -> (f64, f64, f64) {
        let (x, y, h) = self.pose_at(s);
        (x - lateral * h.sin(), y + lateral * h.cos(), h)
    }

    /// Closest point on the route: `(s, signed lateral offset, heading)`.
    pub fn project(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
        for i in 0..self.points.len() - 1 {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let mut u = ((x - a.0) * dx + (y - a.1) * dy) / len2;
            if i > 0 {
                u = u.max(0.0);
            }
            if i < self.points.len() - 2 {
                u = u.min(1.0);
            }
            let (px, py) = (a.0 + u * dx, a.1 + u * dy);
            let d2 = (x - px).powi(2) + (y - py).powi(2);
            if d2 < best.0 {
                let heading = dy.atan2(dx);
                let lateral = -(x - px) * heading.sin() + (y - py) * heading.cos();
                best = (d2, self.cum[i] + u * len2.sqrt(), lateral, heading);
            }
        }
        (best.1, best.2, best.3)
    }

    fn rebuild(&mut self) {
        *self = Self::new(std::mem::take(&mut self.points)).expect("valid stored route");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedPhase {
    /// Time the phase begins, s.
    pub start: f64,
    pub target_speed: f64,
    /// Acceleration magnitude used to reach the target, m/s^2.
    pub rate: f64,
}

/// Scripted lead vehicle in lane 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadScript {
    pub entry_time: f64,
    /// Gap to the ego at entry, bumper to bumper.
    pub initial_gap: f64,
    pub initial_speed: f64,
    pub phases: Vec<SpeedPhase>,
}

impl LeadScript {
    /// Per-run variation of speeds, initial gap and phase timing.
    pub fn jittered(&self, rng: &mut ChaCha8Rng) -> Self {
        let mut n = || -> f64 { StandardNormal.sample(rng) };
        let speed_scale = 1.0 + 0.04 * n();
        let gap_scale = 1.0 + 0.08 * n();
        let time_shift = n().clamp(-2.0, 2.0);
        Self {
            entry_time: self.entry_time,
            initial_gap: self.initial_gap * gap_scale,
            initial_speed: self.initial_speed * speed_scale,
            phases: self
                .phases
                .iter()
                .map(|p| SpeedPhase {
                    start: (p.start + time_shift).max(0.0),
                    target_speed: p.target_speed * speed_scale,
                    rate: p.rate,
                })
                .collect(),
        }
    }

    fn target(&self, t: f64) -> (f64, f64) {
        let mut cur = (self.initial_speed, 1.0);
        for p in &self.phases {
            if t >= p.start {
                cur = (p.target_speed, p.rate);
            }
        }
        cur
    }
}

/// Lead vehicle state along the route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadVehicle {
    /// Arc length of the rear bumper.
    pub s_rear: f64,
    pub speed: f64,
    pub lane: u32,
}

impl LeadVehicle {
    pub fn step(&mut self, t: f64, script: &LeadScript) {
        let (target, rate) = script.target(t);
        let dv = (target - self.speed).clamp(-rate * DT, rate * DT);
        let v_new = (self.speed + dv).max(0.0);
        self.s_rear += 0.5 * (self.speed + v_new) * DT;
        self.speed = v_new;
    }
}

/// A scenario: route, lane count, scripted lead and a context descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub route_length_m: f64,
    pub lane_count: u32,
    /// Road speed limit; scales every driver's desired speed by `limit / 30`.
    pub speed_limit: f64,
    pub route: Route,
    pub lead: Option<LeadScript>,
    pub max_duration_s: f64,
}

pub const BUILTIN_SCENARIOS: [&str; 4] = ["free_highway", "car_following", "lane_change_corridor", "stop_and_go"];

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.route_length_m > 0.0) || self.lane_count < 1 || !(self.max_duration_s > 0.0) {
            return Err(Error::InvalidValue(format!("scenario `{}`", self.scenario_id)));
        }
        Ok(())
    }

    fn straight(id: &str, length: f64, lanes: u32, limit: f64, lead: Option<LeadScript>, max_t: f64) -> Self {
        Self {
            scenario_id: id.into(),
            route_length_m: length,
            lane_count: lanes,
            speed_limit: limit,
            route: Route::straight(length),
            lead,
            max_duration_s: max_t,
        }
    }

    pub fn free_highway() -> Self {
        let lead = LeadScript { entry_time: 0.0, initial_gap: 120.0, initial_speed: 18.0, phases: vec![] };
        Self::straight("free_highway", 1000.0, 3, 30.0, Some(lead), 150.0)
    }

    pub fn car_following() -> Self {
        let phases = (0..12)
            .map(|k| SpeedPhase {
                start: 6.0 * k as f64,
                target_speed: if k % 2 == 0 { 20.0 } else { 13.0 },
                rate: 1.2,
            })
            .collect();
        let lead = LeadScript { entry_time: 0.0, initial_gap: 30.0, initial_speed: 16.0, phases };
        Self::straight("car_following", 1000.0, 1, 30.0, Some(lead), 180.0)
    }

    pub fn lane_change_corridor() -> Self {
        let lead = LeadScript { entry_time: 0.0, initial_gap: 45.0, initial_speed: 12.0, phases: vec![] };
        Self::straight("lane_change_corridor", 1000.0, 2, 25.0, Some(lead), 150.0)
    }

    pub fn stop_and_go() -> Self {
        let mut phases = Vec::new();
        for k in 0..6 {
            let t0 = 10.0 + 16.0 * k as f64;
            phases.push(SpeedPhase { start: t0, target_speed: 0.0, rate: 2.5 });
            phases.push(SpeedPhase { start: t0 + 8.0, target_speed: 11.0, rate: 1.5 });
        }
        let lead = LeadScript { entry_time: 0.0, initial_gap: 20.0, initial_speed: 10.0, phases };
        Self::straight("stop_and_go", 800.0, 1, 14.0, Some(lead), 240.0)
    }

    /// Lead cruising at 15 m/s that brakes at 6 m/s^2 to a stop at t = 12 s.
    pub fn hard_brake() -> Self {
        let phases = vec![SpeedPhase { start: 12.0, target_speed: 0.0, rate: 6.0 }];
        let lead = LeadScript { entry_time: 0.0, initial_gap: 25.0, initial_speed: 15.0, phases };
        Self::straight("hard_brake", 400.0, 1, 20.0, Some(lead), 60.0)
    }

    /// Empty U-turn route for lateral tracking checks.
    pub fn u_turn() -> Self {
        let route = Route::u_turn(100.0, 20.0);
        Self {
            scenario_id: "u_turn".into(),
            route_length_m: route.length(),
            lane_count: 1,
            speed_limit: 10.0,
            route,
            lead: None,
            max_duration_s: 120.0,
        }
    }

    pub fn builtin(id: &str) -> Result<Self> {
        match id {
            "free_highway" => Ok(Self::free_highway()),
            "car_following" => Ok(Self::car_following()),
            "lane_change_corridor" => Ok(Self::lane_change_corridor()),
            "stop_and_go" => Ok(Self::stop_and_go()),
            "hard_brake" => Ok(Self::hard_brake()),
            "u_turn" => Ok(Self::u_turn()),
            other => Err(Error::Unknown { kind: "scenario", id: other.to_string() }),
        }
    }

    pub fn builtins() -> Vec<Self> {
        BUILTIN_SCENARIOS.iter().map(|id| Self::builtin(id).expect("builtin")).collect()
    }

    pub fn speed_factor(&self) -> f64 {
        self.speed_limit / 30.0
    }

    /// Fixed-length scenario descriptor standing in for scene features.
    pub fn context(&self) -> Vec<f64> {
        let lead = self.lead.as_ref();
        let stops = lead.is_some_and(|l| l.phases.iter().any(|p| p.target_speed == 0.0));
        let dynamic = lead.map_or(0.0, |l| l.phases.len() as f64 / 12.0);
        vec![
            self.lane_count as f64 / 3.0,
            lead.map_or(0.0, |_| 1.0),
            lead.map_or(1.0, |l| l.initial_gap / SENSOR_RANGE),
            lead.map_or(0.0, |l| l.initial_speed / 30.0),
            self.speed_limit / 30.0,
            if stops { 1.0 } else { 0.0 },
            self.route_length_m / 1000.0,
            dynamic.min(1.0),
        ]
    }

    /// Restores derived route data after deserialization.
    pub fn finalize(mut self) -> Self {
        self.route.rebuild();
        self
    }

    /// Lead positioned for the start of a run.
    pub fn initial_lead(&self, script: &LeadScript) -> LeadVehicle {
        LeadVehicle { s_rear: script.initial_gap, speed: script.initial_speed, lane: 0 }
    }
}

/// In-lane lead observation from arc-length positions.
pub fn observe_lead(ego_s: f64, ego_speed: f64, ego_lane: u32, lead: Option<&LeadVehicle>) -> LeadObservation {
    match lead {
        Some(l) if l.lane == ego_lane => {
            let gap = l.s_rear - ego_s;
            if gap > -VEHICLE_LENGTH && gap < SENSOR_RANGE {
                LeadObservation::new(gap.max(0.0), ego_speed - l.speed)
            } else {
                LeadObservation::ABSENT
            }
        }
        _ => LeadObservation::ABSENT,
    }
}

/// IDM acceleration with optional leader `(gap, closing speed)`.
pub fn idm_accel(v: f64, v0: f64, p: &DriverProfile, comfort_decel: f64, lead: Option<(f64, f64)>) -> f64 {
    let free = p.max_accel * (1.0 - (v / v0).powi(4));
    match lead {
        None => free,
        Some((gap, dv)) => {
            let s_star = p.min_gap + (v * p.time_headway + v * dv / (2.0 * (p.max_accel * comfort_decel).sqrt())).max(0.0);
            free - p.max_accel * (s_star / gap.max(0.1)).powi(2)
        }
    }
}

/// Result of a simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub log: TrajectoryLog,
    /// Contact episodes with the lead (gap reaching zero in the same lane).
    pub collisions: usize,
}

struct LaneChangeState {
    from: f64,
    to: f64,
    start: f64,
    duration: f64,
}

fn smoothstep(u: f64) -> (f64, f64) {
    let u = u.clamp(0.0, 1.0);
    // quintic: position and derivative w.r.t. u
    (u * u * u * (10.0 - 15.0 * u + 6.0 * u * u), 30.0 * u * u * (1.0 - u) * (1.0 - u))
}

/// Simulates one run of `profile` on `scenario`. Fully determined by `seed`.
pub fn simulate(driver_id: &str, profile: &DriverProfile, scenario: &ScenarioSpec, run_index: u32, seed: u64) -> Result<SimOutcome> {
    profile.validate()?;
    scenario.validate()?;
    let mut rng = seed::rng(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    // run-to-run variation of the driver's own parameters
    let jitter = 0.08 * profile.noise_scale;
    let mut p = *profile;
    p.desired_speed *= 1.0 + 0.5 * jitter * normal(&mut rng);
    p.time_headway *= 1.0 + jitter * normal(&mut rng);
    p.max_accel *= 1.0 + jitter * normal(&mut rng);
    p.comfort_decel *= 1.0 + jitter * normal(&mut rng);
    let v0 = p.desired_speed * scenario.speed_factor();
    let comfort_decel = p.comfort_decel * (1.0 + p.brake_aggression);
    let script = scenario.lead.as_ref().map(|l| l.jittered(&mut rng));
    let mut lead: Option<LeadVehicle> = None;

    let mut s = 0.0;
    let mut v = 0.6 * v0.min(scenario.lead.as_ref().map_or(v0, |l| l.initial_speed.max(1.0)));
    let mut lateral = 0.0;
    let mut lane_change: Option<LaneChangeState> = None;
    let mut cooldown_until = 0.0;
    let mut accel_noise = 0.0;
    let mut steer_noise = 0.0;
    let (mut wander, mut wander_heading) = (0.0, 0.0);
    let mut prev_heading = None;
    let mut collisions = 0;
    let mut in_contact = false;

    let mut states = Vec::new();
    let mut observations = Vec::new();
    let max_steps = (scenario.max_duration_s * SAMPLE_RATE_HZ).round() as usize;
    for step in 0..=max_steps {
        let t = step as f64 * DT;
        if let Some(sc) = &script {
            if lead.is_none() && t >= sc.entry_time {
                lead = Some(LeadVehicle { s_rear: s + sc.initial_gap, speed: sc.initial_speed, lane: 0 });
            }
        }
        let lane_index = ((lateral / LANE_WIDTH).round().max(0.0) as u32).min(scenario.lane_count - 1);
        let obs = observe_lead(s, v, lane_index, lead.as_ref());
        if obs.present && obs.gap <= 0.0 {
            if !in_contact {
                collisions += 1;
            }
            in_contact = true;
        } else {
            in_contact = false;
        }

        // lane-change decisions
        if lane_change.is_none() && t >= cooldown_until && scenario.lane_count > 1 {
            let lane_speed_gain = lead.as_ref().is_some_and(|l| l.speed < v0 - 1.5);
            if lane_index == 0 && obs.present && obs.gap < 50.0 && lane_speed_gain {
                let p_step = 0.08 * p.lane_change_propensity;
                if rng.random::<f64>() < p_step {
                    let duration = 4.5 - 2.5 * p.lane_change_propensity;
                    lane_change = Some(LaneChangeState { from: lateral, to: LANE_WIDTH, start: t, duration });
                }
            } else if lane_index > 0 {
                let passed = lead.as_ref().is_none_or(|l| s - (l.s_rear + VEHICLE_LENGTH) > 8.0 + 10.0 * (1.0 - p.lane_change_propensity));
                if passed {
                    let duration = 4.5 - 2.5 * p.lane_change_propensity;
                    lane_change = Some(LaneChangeState { from: lateral, to: 0.0, start: t, duration });
                }
            }
        }
        let mut lateral_rate = 0.0;
        if let Some(lc) = &lane_change {
            let (f, df) = smoothstep((t - lc.start) / lc.duration);
            lateral = lc.from + (lc.to - lc.from) * f;
            lateral_rate = (lc.to - lc.from) * df / lc.duration;
            if t - lc.start >= lc.duration {
                lateral = lc.to;
                lateral_rate = 0.0;
                lane_change = None;
                cooldown_until = t + 3.0;
            }
        }

        // longitudinal
        let leader = obs.present.then_some((obs.gap, obs.rel_speed));
        let a_idm = idm_accel(v, v0, &p, comfort_decel, leader);
        accel_noise = 0.95 * accel_noise + 0.312 * 0.6 * p.noise_scale * normal(&mut rng);
        let a_cmd = (a_idm + accel_noise).clamp(-FULL_BRAKE_DECEL + 0.5, FULL_THROTTLE_ACCEL - 0.5);
        let v_new = (v + a_cmd * DT).max(0.0);
        let accel = (v_new - v) / DT;
        let (throttle, brake) = pedals_for(accel, v);

        // Steering noise turns the car; a lane-keeping loop pulls the
        // resulting wander back towards the nominal path.
        steer_noise = 0.8 * steer_noise + 0.6 * 0.12 * p.noise_scale * normal(&mut rng);
        let vk = v.max(1.0);
        let (omega, zeta) = (3.0, 0.9);
        let correction = omega * omega * WHEELBASE / (vk * vk) * wander + 2.0 * zeta * omega * WHEELBASE / vk * wander_heading;
        let delta = (steer_noise * MAX_STEER_ANGLE / (v / 8.0).max(1.0) - correction).clamp(-MAX_STEER_ANGLE, MAX_STEER_ANGLE);

        // pose and steering
        let (x, y, route_heading) = scenario.route.offset_point(s, lateral + wander);
        let nominal = normalize_angle(route_heading + lateral_rate.atan2(v.max(0.5)));
        let heading = normalize_angle(nominal + wander_heading);
        let yaw_rate = prev_heading.map_or(0.0, |h: f64| normalize_angle(nominal - h) / DT);
        prev_heading = Some(nominal);
        let steer_ideal = (WHEELBASE * yaw_rate / v.max(1.0)).atan() / MAX_STEER_ANGLE;
        let steer = (steer_ideal + delta / MAX_STEER_ANGLE).clamp(-1.0, 1.0);

        states.push(EgoState {
            t,
            x,
            y,
            heading,
            speed: v,
            lon_accel: accel,
            throttle,
            brake,
            steer,
            lane_index,
        });
        observations.push(obs);

        if !(x.is_finite() && y.is_finite() && v.is_finite()) {
            return Err(Error::SimulationDiverged { step });
        }
        if s >= scenario.route_length_m {
            break;
        }
        s += 0.5 * (v + v_new) * DT;
        wander += v * wander_heading.sin() * DT;
        wander_heading += v / WHEELBASE * delta.tan() * DT;
        v = v_new;
        if let (Some(l), Some(sc)) = (lead.as_mut(), &script) {
            l.step(t, sc);
        }
    }
    let log = TrajectoryLog::new(
        driver_id,
        scenario.scenario_id.clone(),
        run_index,
        SAMPLE_RATE_HZ,
        scenario.route_length_m,
        states,
        observations,
    )?;
    Ok(SimOutcome { log, collisions })
}

pub fn generate(profile: &DriverProfile, scenario: &ScenarioSpec, seed: u64) -> Result<TrajectoryLog> {
    Ok(simulate("driver", profile, scenario, 0, seed)?.log)
}

/// Corpus manifest: master seed, ground-truth profiles, scenarios, log files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub profiles: BTreeMap<String, DriverProfile>,
    pub scenarios: Vec<ScenarioSpec>,
    pub logs: Vec<String>,
}

impl CorpusManifest {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("manifest serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let mut m: Self = serde_json::from_slice(bytes)?;
        m.scenarios = m.scenarios.into_iter().map(ScenarioSpec::finalize).collect();
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub logs: Vec<TrajectoryLog>,
}

pub fn log_file_name(driver: &str, scenario: &str, run: u32) -> String {
    format!("{driver}__{scenario}__{run:02}.jsonl")
}

pub fn run_seed(master: u64, driver: &str, scenario: &str, run: u32) -> u64 {
    seed::derive(master, &format!("{driver}/{scenario}/{run}"))
}

/// `runs_per_pair` logs for every (profile, scenario), ordered by profile,
/// then scenario, then run.
pub fn generate_corpus(
    profiles: &[(String, DriverProfile)],
    scenarios: &[ScenarioSpec],
    runs_per_pair: u32,
    seed: u64,
) -> Result<Corpus> {
    if profiles.len() < 2 {
        return Err(Error::TooFewDrivers(profiles.len()));
    }
    let jobs: Vec<(&str, &DriverProfile, &ScenarioSpec, u32)> = profiles
        .iter()
        .flat_map(|(id, p)| scenarios.iter().flat_map(move |s| (0..runs_per_pair).map(move |r| (id.as_str(), p, s, r))))
        .collect();
    let logs = jobs
        .par_iter()
        .map(|&(id, p, s, r)| Ok(simulate(id, p, s, r, run_seed(seed, id, &s.scenario_id, r))?.log))
        .collect::<Result<Vec<_>>>()?;
    let manifest = CorpusManifest {
        seed,
        profiles: profiles.iter().cloned().collect(),
        scenarios: scenarios.to_vec(),
        logs: jobs.iter().map(|&(id, _, s, r)| format!("logs/{}", log_file_name(id, &s.scenario_id, r))).collect(),
    };
    Ok(Corpus { manifest, logs })
}

/// Imitation pairs from the median profile driving `scenario`, one every
/// `stride` samples.
pub fn expert_rollout(scenario: &ScenarioSpec, seed: u64, stride: usize) -> Result<Vec<crate::planner::PlannerSample>> {
    let log = simulate("expert", &DriverProfile::median(), scenario, 0, seed)?.log;
    crate::planner::samples_from_log(&log, &scenario.context(), stride)
}
