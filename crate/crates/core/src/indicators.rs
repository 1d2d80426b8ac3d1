//! Per-trajectory style indicators and discriminability-based selection.
//!
//! Every indicator is a scalar summary of one [`TrajectoryLog`]. Degenerate
//! inputs (no lead vehicle, zero motion, no events) map to fixed finite
//! values so that vectors can always be compared.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::TrajectoryLog;

/// Bound on TTC and time-headway samples, seconds.
pub const T_MAX: f64 = 10.0;
/// Default number of indicators kept by selection.
pub const DEFAULT_K: usize = 10;

const TTC_MIN_CLOSING: f64 = 0.1;
const HEADWAY_MIN_SPEED: f64 = 1.0;
const LANE_HOLD_S: f64 = 1.0;
const OVERTAKE_MAX_GAP: f64 = 50.0;
const OVERTAKE_RETURN_S: f64 = 30.0;
const BRAKE_THRESHOLD: f64 = 0.1;
const BRAKE_DEBOUNCE_S: f64 = 0.5;
const STEER_DEADBAND: f64 = 0.05;
const STOP_SPEED: f64 = 0.1;
const STOP_HOLD_S: f64 = 1.0;
const EPS_TIME: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub unit: String,
    pub direction_note: String,
}

/// Ordered list of indicators; the order fixes the vector layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorCatalog {
    pub version: u32,
    entries: Vec<CatalogEntry>,
}

const STANDARD_ENTRIES: [(&str, &str, &str); 16] = [
    ("max_speed", "m/s", "higher = faster"),
    ("mean_speed", "m/s", "higher = faster"),
    ("speed_std", "m/s", "higher = less steady speed"),
    ("lon_accel_p95", "m/s^2", "higher = harder acceleration"),
    ("lon_accel_trunc_low", "m/s^2", "lower = harder braking"),
    ("jerk_rms", "m/s^3", "higher = jerkier"),
    ("mean_ttc", "s", "lower = closer approach"),
    ("min_ttc", "s", "lower = closer approach"),
    ("time_headway_mean", "s", "lower = tighter following"),
    ("overtakes_per_km", "1/km", "higher = more overtaking"),
    ("lane_changes_per_km", "1/km", "higher = more lane changes"),
    ("brake_events_per_km", "1/km", "higher = more braking"),
    ("brake_intensity_mean", "fraction", "higher = harder pedal"),
    ("throttle_mean", "fraction", "higher = more throttle"),
    ("steering_reversal_rate", "1/min", "higher = busier steering"),
    ("stop_count", "count", "higher = more stops"),
];

impl IndicatorCatalog {
    /// The fixed 16-entry candidate catalog (version 1).
    pub fn standard() -> Self {
        let entries = STANDARD_ENTRIES
            .iter()
            .map(|(id, unit, note)| CatalogEntry {
                id: id.to_string(),
                unit: unit.to_string(),
                direction_note: note.to_string(),
            })
            .collect();
        Self { version: 1, entries }
    }

    /// Builds a catalog from a subset of standard ids, in the given order.
    pub fn subset(ids: &[impl AsRef<str>]) -> Result<Self> {
        let std = Self::standard();
        let mut entries = Vec::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            let e = std
                .entries
                .iter()
                .find(|e| e.id == id)
                .ok_or_else(|| Error::Unknown { kind: "indicator", id: id.to_string() })?;
            if entries.iter().any(|x: &CatalogEntry| x.id == id) {
                return Err(Error::InvalidValue(format!("duplicate indicator `{id}`")));
            }
            entries.push(e.clone());
        }
        Ok(Self { version: std.version, entries })
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }
}

/// One value per catalog entry for a single log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorVector {
    pub driver_id: String,
    pub scenario_id: String,
    pub run_index: u32,
    pub values: Vec<f64>,
}

/// Discriminability scores and the top-k indicator ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Score per catalog id, in catalog order.
    pub scores: Vec<(String, f64)>,
    pub selected: Vec<String>,
}

/// Discrete lane-change event: sample index at which the new lane begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneChange {
    pub index: usize,
    pub from: u32,
    pub to: u32,
}

/// Sustained lane transitions; a new lane must be held for at least 1 s.
pub fn lane_change_events(log: &TrajectoryLog) -> Vec<LaneChange> {
    let states = log.states();
    let dt = log.dt();
    let mut events = Vec::new();
    let mut stable = states[0].lane_index;
    let mut i = 1;
    while i < states.len() {
        let lane = states[i].lane_index;
        if lane == stable {
            i += 1;
            continue;
        }
        let run = states[i..].iter().take_while(|s| s.lane_index == lane).count();
        if run as f64 * dt + EPS_TIME >= LANE_HOLD_S {
            events.push(LaneChange { index: i, from: stable, to: lane });
            stable = lane;
        }
        i += run;
    }
    events
}

pub fn detect_lane_changes(log: &TrajectoryLog) -> usize {
    lane_change_events(log).len()
}

/// Out-and-back maneuvers: a lane change away while a lead is within 50 m,
/// followed by a change back to the original lane within 30 s.
pub fn detect_overtakes(log: &TrajectoryLog) -> usize {
    let events = lane_change_events(log);
    let lead = log.lead();
    let states = log.states();
    let mut count = 0;
    let mut k = 0;
    while k < events.len() {
        let ev = events[k];
        let before = lead[ev.index - 1];
        let blocked = before.present && before.gap < OVERTAKE_MAX_GAP;
        if blocked {
            if let Some(back) = events.get(k + 1) {
                let elapsed = states[back.index].t - states[ev.index].t;
                if back.to == ev.from && elapsed <= OVERTAKE_RETURN_S + EPS_TIME {
                    count += 1;
                    k += 2;
                    continue;
                }
            }
        }
        k += 1;
    }
    count
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn population_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Linear-interpolated percentile (`q` in [0, 1]) of unsorted data.
pub(crate) fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Mean of the lowest 5% of samples (at least one sample).
pub(crate) fn truncated_low_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = ((0.05 * v.len() as f64).ceil() as usize).max(1);
    mean(&v[..n])
}

pub(crate) fn positive_p95(xs: &[f64]) -> f64 {
    let pos: Vec<f64> = xs.iter().copied().filter(|a| *a > 0.0).collect();
    percentile(&pos, 0.95)
}

pub(crate) fn jerk_rms(accels: &[f64], dt: f64) -> f64 {
    if accels.len() < 2 {
        return 0.0;
    }
    let sq: Vec<f64> = accels.windows(2).map(|w| ((w[1] - w[0]) / dt).powi(2)).collect();
    mean(&sq).sqrt()
}

/// Upward brake crossings of 0.1, debounced by 0.5 s. Returns each event's
/// pedal samples (from the crossing until release).
fn brake_events(log: &TrajectoryLog) -> Vec<Vec<f64>> {
    let states = log.states();
    let mut events: Vec<Vec<f64>> = Vec::new();
    let mut last_start: Option<f64> = None;
    let mut i = 1;
    while i < states.len() {
        let crossing = states[i - 1].brake < BRAKE_THRESHOLD && states[i].brake >= BRAKE_THRESHOLD;
        if crossing {
            let t = states[i].t;
            let held: Vec<f64> = states[i..]
                .iter()
                .take_while(|s| s.brake >= BRAKE_THRESHOLD)
                .map(|s| s.brake)
                .collect();
            let debounced = last_start.is_some_and(|t0| t - t0 < BRAKE_DEBOUNCE_S - EPS_TIME);
            if debounced {
                if let Some(last) = events.last_mut() {
                    last.extend_from_slice(&held);
                }
            } else {
                events.push(held.clone());
                last_start = Some(t);
            }
            i += held.len().max(1);
            continue;
        }
        i += 1;
    }
    events
}

fn steering_reversals(log: &TrajectoryLog) -> usize {
    let mut last_sign = 0i8;
    let mut count = 0;
    for s in log.states() {
        if s.steer.abs() <= STEER_DEADBAND {
            continue;
        }
        let sign = if s.steer > 0.0 { 1 } else { -1 };
        if last_sign != 0 && sign != last_sign {
            count += 1;
        }
        last_sign = sign;
    }
    count
}

fn stop_count(log: &TrajectoryLog) -> usize {
    let dt = log.dt();
    let mut count = 0;
    let mut run = 0usize;
    let mut counted = false;
    for s in log.states() {
        if s.speed < STOP_SPEED {
            run += 1;
            if !counted && run as f64 * dt + EPS_TIME >= STOP_HOLD_S {
                count += 1;
                counted = true;
            }
        } else {
            run = 0;
            counted = false;
        }
    }
    count
}

/// Per-sample TTC, bounded by [`T_MAX`]; undefined samples contribute `T_MAX`.
pub(crate) fn ttc_samples(log: &TrajectoryLog) -> Vec<f64> {
    log.lead()
        .iter()
        .map(|l| {
            if l.present && l.rel_speed > TTC_MIN_CLOSING {
                (l.gap / l.rel_speed).min(T_MAX)
            } else {
                T_MAX
            }
        })
        .collect()
}

fn indicator_value(id: &str, log: &TrajectoryLog) -> f64 {
    let states = log.states();
    let per_km = 1000.0 / log.route_length_m();
    let speeds: Vec<f64> = states.iter().map(|s| s.speed).collect();
    let accels: Vec<f64> = states.iter().map(|s| s.lon_accel).collect();
    match id {
        "max_speed" => speeds.iter().copied().fold(0.0, f64::max),
        "mean_speed" => mean(&speeds),
        "speed_std" => population_std(&speeds),
        "lon_accel_p95" => positive_p95(&accels),
        "lon_accel_trunc_low" => truncated_low_mean(&accels),
        "jerk_rms" => jerk_rms(&accels, log.dt()),
        "mean_ttc" => mean(&ttc_samples(log)),
        "min_ttc" => ttc_samples(log).into_iter().fold(T_MAX, f64::min),
        "time_headway_mean" => {
            let hw: Vec<f64> = states
                .iter()
                .zip(log.lead())
                .filter(|(s, l)| l.present && s.speed > HEADWAY_MIN_SPEED)
                .map(|(s, l)| (l.gap / s.speed).min(T_MAX))
                .collect();
            if hw.is_empty() {
                T_MAX
            } else {
                mean(&hw)
            }
        }
        "overtakes_per_km" => detect_overtakes(log) as f64 * per_km,
        "lane_changes_per_km" => detect_lane_changes(log) as f64 * per_km,
        "brake_events_per_km" => brake_events(log).len() as f64 * per_km,
        "brake_intensity_mean" => {
            let all: Vec<f64> = brake_events(log).into_iter().flatten().collect();
            mean(&all)
        }
        "throttle_mean" => mean(&states.iter().map(|s| s.throttle).collect::<Vec<_>>()),
        "steering_reversal_rate" => {
            let minutes = log.duration() / 60.0;
            steering_reversals(log) as f64 / minutes
        }
        "stop_count" => stop_count(log) as f64,
        other => unreachable!("catalog validated at construction: {other}"),
    }
}

/// Evaluates every catalog indicator on one log.
pub fn compute_indicators(log: &TrajectoryLog, catalog: &IndicatorCatalog) -> IndicatorVector {
    IndicatorVector {
        driver_id: log.driver_id().to_string(),
        scenario_id: log.scenario_id().to_string(),
        run_index: log.run_index(),
        values: catalog.entries().iter().map(|e| indicator_value(&e.id, log)).collect(),
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Dispersion of median-centred driver means: population standard deviation
/// of `m_d - median(m)`.
pub fn discriminability(driver_means: &[f64]) -> f64 {
    let n = driver_means.len();
    let mut sorted = driver_means.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = median_sorted(&sorted);
    let centred: Vec<f64> = driver_means.iter().map(|m| m - mid).collect();
    let mu = centred.iter().sum::<f64>() / n as f64;
    (centred.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64).sqrt()
}

/// Scores each indicator per scenario from driver means, averages the scores
/// over scenarios with at least two drivers and returns the top `k`.
///
/// Inputs are expected to be scenario min-max normalized already. Runs and
/// drivers are visited in sorted key order, so the result does not depend on
/// the order of `vectors`.
pub fn select_top_k(
    vectors: &[IndicatorVector],
    catalog: &IndicatorCatalog,
    k: usize,
) -> Result<SelectionResult> {
    let dim = catalog.len();
    // scenario -> driver -> run -> values
    let mut grouped: BTreeMap<&str, BTreeMap<&str, BTreeMap<u32, &[f64]>>> = BTreeMap::new();
    for v in vectors {
        if v.values.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: v.values.len() });
        }
        grouped
            .entry(&v.scenario_id)
            .or_default()
            .entry(&v.driver_id)
            .or_default()
            .insert(v.run_index, &v.values);
    }
    let mut totals = vec![0.0; dim];
    let mut scenarios = 0usize;
    let mut max_drivers = 0usize;
    for drivers in grouped.values() {
        max_drivers = max_drivers.max(drivers.len());
        if drivers.len() < 2 {
            continue;
        }
        scenarios += 1;
        for (j, total) in totals.iter_mut().enumerate() {
            let means: Vec<f64> = drivers
                .values()
                .map(|runs| runs.values().map(|v| v[j]).sum::<f64>() / runs.len() as f64)
                .collect();
            *total += discriminability(&means);
        }
    }
    if scenarios == 0 {
        return Err(Error::TooFewDrivers(max_drivers));
    }
    let scores: Vec<f64> = totals.iter().map(|t| t / scenarios as f64).collect();
    let mut order: Vec<usize> = (0..dim).collect();
    // stable sort keeps catalog order among ties
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let selected = order
        .into_iter()
        .take(k.min(dim))
        .map(|j| catalog.entries()[j].id.clone())
        .collect();
    Ok(SelectionResult {
        scores: catalog.entries().iter().map(|e| e.id.clone()).zip(scores).collect(),
        selected,
    })
}

impl SelectionResult {
    /// Catalog positions of the selected ids, in selection order.
    pub fn positions(&self, catalog: &IndicatorCatalog) -> Result<Vec<usize>> {
        self.selected
            .iter()
            .map(|id| {
                catalog
                    .position(id)
                    .ok_or_else(|| Error::Unknown { kind: "indicator", id: id.clone() })
            })
            .collect()
    }

    pub fn to_json(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Out<'a> {
            scores: serde_json::Map<String, serde_json::Value>,
            selected: &'a [String],
        }
        let scores = self
            .scores
            .iter()
            .map(|(id, s)| (id.clone(), serde_json::Value::from(*s)))
            .collect();
        let mut out = serde_json::to_vec_pretty(&Out { scores, selected: &self.selected })
            .expect("selection serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        #[derive(Deserialize)]
        struct In {
            scores: serde_json::Map<String, serde_json::Value>,
            selected: Vec<String>,
        }
        let parsed: In = serde_json::from_slice(bytes)?;
        let scores = parsed
            .scores
            .into_iter()
            .map(|(id, v)| {
                v.as_f64()
                    .map(|s| (id.clone(), s))
                    .ok_or_else(|| Error::InvalidValue(format!("score for `{id}` is not a number")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { scores, selected: parsed.selected })
    }
}

/// Writes `driver_id,scenario_id,run_index,<ids...>` CSV.
pub fn write_indicator_csv<W: Write>(
    out: W,
    catalog: &IndicatorCatalog,
    vectors: &[IndicatorVector],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["driver_id", "scenario_id", "run_index"];
    header.extend(catalog.ids());
    w.write_record(&header)?;
    for v in vectors {
        let mut rec = vec![v.driver_id.clone(), v.scenario_id.clone(), v.run_index.to_string()];
        rec.extend(v.values.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an indicator CSV, returning the catalog implied by its header.
pub fn read_indicator_csv<R: Read>(input: R) -> Result<(IndicatorCatalog, Vec<IndicatorVector>)> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "driver_id" || &header[1] != "scenario_id" {
        return Err(Error::InvalidValue("indicator CSV header".into()));
    }
    let ids: Vec<&str> = header.iter().skip(3).collect();
    let catalog = IndicatorCatalog::subset(&ids)?;
    let mut vectors = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| Error::MalformedRecord { line: row + 2, message: m };
        let run_index = rec[2].parse::<u32>().map_err(|e| bad(e.to_string()))?;
        let values = rec
            .iter()
            .skip(3)
            .map(|s| s.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        vectors.push(IndicatorVector {
            driver_id: rec[0].to_string(),
            scenario_id: rec[1].to_string(),
            run_index,
            values,
        });
    }
    Ok((catalog, vectors))
}
