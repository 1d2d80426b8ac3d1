//! Closed-loop execution of a planner inside the synthetic world: route
//! waypoint densification, PID steering, proportional speed control and a
//! TTC safety override applied last.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{self, PlannerInput, PlannerParams};
use crate::seed;
use crate::trajectory::{normalize_angle, EgoState, LeadObservation, PlannedTrajectory, TrajectoryLog, Waypoint, SAMPLE_RATE_HZ, WAYPOINTS, WAYPOINT_DT};
use crate::world::{
    self, observe_lead, pedals_for, DriverProfile, LeadVehicle, Route, ScenarioSpec, DT, FULL_BRAKE_DECEL,
    FULL_THROTTLE_ACCEL, LANE_WIDTH, MAX_STEER_ANGLE, WHEELBASE,
};

pub const TURN_KP: f64 = 0.86;
pub const TURN_KI: f64 = 0.75;
pub const TURN_KD: f64 = 0.3;
pub const TURN_N: usize = 40;
pub const DEFAULT_DENSIFY_RATE: usize = 15;
pub const TTC_THRESHOLD: f64 = 1.5;
pub const GAP_THRESHOLD: f64 = 6.0;
pub const LATERAL_RANGE: f64 = 1.2;
/// Proportional gain of the speed controller, 1/s.
pub const SPEED_GAIN: f64 = 2.0;
/// Route waypoints closer than this are considered reached.
pub const REACH_RADIUS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub throttle: f64,
    pub brake: f64,
    pub steer: f64,
}

impl ControlCommand {
    /// Clamps inputs; a positive throttle and brake together keep only the brake.
    pub fn new(throttle: f64, brake: f64, steer: f64) -> Self {
        let brake = brake.clamp(0.0, 1.0);
        let throttle = if brake > 0.0 { 0.0 } else { throttle.clamp(0.0, 1.0) };
        Self { throttle, brake, steer: steer.clamp(-1.0, 1.0) }
    }

    pub fn full_brake(steer: f64) -> Self {
        Self::new(0.0, 1.0, steer)
    }
}

/// Steering PID over heading error with a sliding error window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PidState {
    window: VecDeque<f64>,
    prev_error: f64,
}

impl PidState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn window(&self) -> &VecDeque<f64> {
        &self.window
    }
}

/// `KP e + KI mean(window) (len dt) + KD (e - e_prev) / dt`, clamped to
/// [-1, 1]. The integral uses the window as it was before this error; `e`
/// is then pushed and the oldest entry dropped beyond 40.
pub fn pid_steer(state: &mut PidState, heading_error: f64, dt: f64) -> f64 {
    let integral = if state.window.is_empty() {
        0.0
    } else {
        let n = state.window.len() as f64;
        state.window.iter().sum::<f64>() / n * (n * dt)
    };
    let derivative = (heading_error - state.prev_error) / dt;
    state.window.push_back(heading_error);
    if state.window.len() > TURN_N {
        state.window.pop_front();
    }
    state.prev_error = heading_error;
    (TURN_KP * heading_error + TURN_KI * integral + TURN_KD * derivative).clamp(-1.0, 1.0)
}

/// Route resampled into `n = ceil(L / spacing)` equal intervals, where
/// `spacing = rate * dt * ref_speed`. The start point is not included.
pub fn densify_waypoints(route: &Route, rate: usize, ref_speed: f64) -> Result<Vec<(f64, f64)>> {
    if rate < 1 {
        return Err(Error::InvalidValue("densify rate must be at least 1".into()));
    }
    if !(ref_speed > 0.0 && ref_speed.is_finite()) {
        return Err(Error::InvalidValue("reference speed must be positive".into()));
    }
    let length = route.length();
    let spacing = rate as f64 * DT * ref_speed;
    let n = (length / spacing).ceil().max(1.0) as usize;
    Ok((1..=n)
        .map(|k| {
            let (x, y, _) = route.pose_at(length * k as f64 / n as f64);
            (x, y)
        })
        .collect())
}

/// A vehicle that may trigger the override.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Bumper-to-bumper distance ahead, m.
    pub gap: f64,
    /// Closing speed, positive when approaching.
    pub rel_speed: f64,
    /// Lateral offset from the ego centreline.
    pub lateral_offset: f64,
}

/// True iff the neighbour is ahead within the lateral band and either
/// `gap < 6` or `TTC < 1.5` with a positive closing speed.
pub fn override_triggers(n: &Neighbor) -> bool {
    if n.lateral_offset.abs() > LATERAL_RANGE || n.gap < -world::VEHICLE_LENGTH {
        return false;
    }
    if n.gap < GAP_THRESHOLD {
        return true;
    }
    n.rel_speed > 0.0 && n.gap / n.rel_speed < TTC_THRESHOLD
}

pub fn safety_override(_ego: &EgoState, neighbors: &[Neighbor]) -> Option<ControlCommand> {
    neighbors.iter().any(override_triggers).then(|| ControlCommand::full_brake(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub route_completion: f64,
    pub collisions: usize,
    pub success: bool,
    pub driving_score: f64,
    pub max_lateral_error: f64,
    pub override_steps: usize,
    pub steps: usize,
}

impl RolloutMetrics {
    pub fn new(route_completion: f64, collisions: usize) -> Self {
        let route_completion = route_completion.clamp(0.0, 1.0);
        Self {
            route_completion,
            collisions,
            success: route_completion >= 1.0 && collisions == 0,
            driving_score: 100.0 * route_completion * 0.5f64.powi(collisions.min(i32::MAX as usize) as i32),
            max_lateral_error: 0.0,
            override_steps: 0,
            steps: 0,
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("metrics serialize");
        out.push(b'\n');
        out
    }
}

/// What a planner sees each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub input: PlannerInput,
    pub speed: f64,
    pub lead: LeadObservation,
    pub speed_factor: f64,
}

pub trait Planner {
    fn plan(&mut self, obs: &Observation) -> Result<PlannedTrajectory>;
}

/// The learned planner: predict, then take the most confident proposal.
pub struct ToyPlanner<'a>(pub &'a PlannerParams);

impl Planner for ToyPlanner<'_> {
    fn plan(&mut self, obs: &Observation) -> Result<PlannedTrajectory> {
        let set = planner::predict(self.0, &obs.input)?;
        Ok(planner::select_best(&set).1)
    }
}

fn straight_from_distances(dist: [f64; WAYPOINTS]) -> PlannedTrajectory {
    let mut points = [Waypoint::default(); WAYPOINTS];
    for (p, d) in points.iter_mut().zip(dist) {
        p.x = d;
    }
    PlannedTrajectory::new(points)
}

/// Drives straight at a fixed speed and ignores everything.
pub struct BlindPlanner {
    pub speed: f64,
}

impl Planner for BlindPlanner {
    fn plan(&mut self, _obs: &Observation) -> Result<PlannedTrajectory> {
        Ok(straight_from_distances(std::array::from_fn(|i| self.speed * WAYPOINT_DT * i as f64)))
    }
}

/// IDM expert that forecasts its own motion behind a constant-speed lead.
pub struct IdmPlanner {
    pub profile: DriverProfile,
}

impl Planner for IdmPlanner {
    fn plan(&mut self, obs: &Observation) -> Result<PlannedTrajectory> {
        let p = &self.profile;
        let v0 = p.desired_speed * obs.speed_factor;
        let decel = p.comfort_decel * (1.0 + p.brake_aggression);
        let mut v = obs.speed;
        let mut s = 0.0;
        let mut lead = obs.lead.present.then_some((obs.lead.gap, obs.speed - obs.lead.rel_speed));
        let mut dist = [0.0; WAYPOINTS];
        let per_point = (WAYPOINT_DT * SAMPLE_RATE_HZ).round() as usize;
        for d in dist.iter_mut().skip(1) {
            for _ in 0..per_point {
                let leader = lead.map(|(gap, lv)| (gap - s, v - lv));
                let a = world::idm_accel(v, v0, p, decel, leader);
                let v_new = (v + a * DT).max(0.0);
                s += 0.5 * (v + v_new) * DT;
                v = v_new;
                if let Some((gap, lv)) = lead.as_mut() {
                    *gap += *lv * DT;
                }
            }
            *d = s;
        }
        Ok(straight_from_distances(dist))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub densify_rate: usize,
    pub safety_override: bool,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self { densify_rate: DEFAULT_DENSIFY_RATE, safety_override: true, seed: 0 }
    }
}

/// Kinematic bicycle state; `(x, y)` is the front bumper.
#[derive(Debug, Clone, Copy)]
struct Vehicle {
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
}

/// Runs `planner` on `scenario` at 10 Hz until the route end or the time
/// limit. The lead script is jittered from `config.seed`.
pub fn rollout(planner: &mut dyn Planner, scenario: &ScenarioSpec, config: &RolloutConfig) -> Result<(TrajectoryLog, RolloutMetrics)> {
    scenario.validate()?;
    let waypoints = densify_waypoints(&scenario.route, config.densify_rate, scenario.speed_limit)?;
    let context = scenario.context();
    let mut rng = seed::rng(seed::derive(config.seed, &scenario.scenario_id));
    let script = scenario.lead.as_ref().map(|l| l.jittered(&mut rng));
    let mut lead: Option<LeadVehicle> = None;

    let (x0, y0, h0) = scenario.route.pose_at(0.0);
    let start_speed = 0.6 * scenario.lead.as_ref().map_or(scenario.speed_limit, |l| l.initial_speed.max(1.0).min(scenario.speed_limit));
    let mut ego = Vehicle { x: x0, y: y0, heading: h0, speed: start_speed };
    let mut pid = PidState::new();
    let mut target = 0usize;
    let mut prev_accel = 0.0;
    let mut states: Vec<EgoState> = Vec::new();
    let mut observations = Vec::new();
    let mut collisions = 0;
    let mut in_contact = false;
    let mut max_lateral: f64 = 0.0;
    let mut override_steps = 0;
    let mut completion = 0.0;

    let max_steps = (scenario.max_duration_s * SAMPLE_RATE_HZ).round() as usize;
    for step in 0..=max_steps {
        let t = step as f64 * DT;
        if let Some(sc) = &script {
            if lead.is_none() && t >= sc.entry_time {
                let (s_ego, _, _) = scenario.route.project(ego.x, ego.y);
                lead = Some(LeadVehicle { s_rear: s_ego + sc.initial_gap, speed: sc.initial_speed, lane: 0 });
            }
        }
        let (s, lateral, _) = scenario.route.project(ego.x, ego.y);
        if !(s.is_finite() && ego.speed.is_finite() && ego.heading.is_finite()) {
            return Err(Error::SimulationDiverged { step });
        }
        completion = (s / scenario.route_length_m).clamp(0.0, 1.0);
        max_lateral = max_lateral.max(lateral.abs());
        let lane_index = ((lateral / LANE_WIDTH).round().max(0.0) as u32).min(scenario.lane_count - 1);
        let obs = observe_lead(s, ego.speed, 0, lead.as_ref());
        let lead_obs = if lateral.abs() <= LANE_WIDTH / 2.0 { obs } else { LeadObservation::ABSENT };
        let contact = lead.as_ref().is_some_and(|l| {
            let gap = l.s_rear - s;
            gap <= 0.0 && gap > -2.0 * world::VEHICLE_LENGTH && lateral.abs() < 2.0
        });
        if contact && !in_contact {
            collisions += 1;
        }
        in_contact = contact;

        let state = EgoState {
            t,
            x: ego.x,
            y: ego.y,
            heading: normalize_angle(ego.heading),
            speed: ego.speed,
            lon_accel: prev_accel,
            throttle: 0.0,
            brake: 0.0,
            steer: 0.0,
            lane_index,
        };
        states.push(state);
        observations.push(lead_obs);
        if s >= scenario.route_length_m {
            break;
        }
        if step == max_steps {
            break;
        }

        // plan
        let lo = states.len().saturating_sub(planner::HISTORY);
        let input = PlannerInput::new(&states[lo..], lead_obs, &context)?;
        let plan = planner.plan(&Observation { input, speed: ego.speed, lead: lead_obs, speed_factor: scenario.speed_factor() })?;
        let speeds = plan.implied_speeds();
        let target_speed = 0.5 * (speeds[0] + speeds[1]);
        if !target_speed.is_finite() {
            return Err(Error::NonFinite(format!("planned speed at step {step}")));
        }

        // lateral: PID on the heading error to the next route waypoint
        while target + 1 < waypoints.len() {
            let (wx, wy) = waypoints[target];
            let (dx, dy) = (wx - ego.x, wy - ego.y);
            let ahead = dx * ego.heading.cos() + dy * ego.heading.sin();
            if dx.hypot(dy) < REACH_RADIUS || ahead < 0.0 {
                target += 1;
            } else {
                break;
            }
        }
        let (wx, wy) = waypoints[target];
        let heading_error = normalize_angle((wy - ego.y).atan2(wx - ego.x) - ego.heading);
        let steer = pid_steer(&mut pid, heading_error, DT);

        // longitudinal: proportional speed tracking
        let accel_cmd = SPEED_GAIN * (target_speed - ego.speed);
        let (throttle, brake) = pedals_for(accel_cmd.clamp(-FULL_BRAKE_DECEL, FULL_THROTTLE_ACCEL), ego.speed);
        let mut command = ControlCommand::new(throttle, brake, steer);

        if config.safety_override {
            let neighbors: Vec<Neighbor> = lead
                .iter()
                .map(|l| Neighbor { gap: l.s_rear - s, rel_speed: ego.speed - l.speed, lateral_offset: -lateral })
                .collect();
            if safety_override(&state, &neighbors).is_some() {
                command = ControlCommand::full_brake(command.steer);
                override_steps += 1;
            }
        }
        let last = states.last_mut().expect("pushed above");
        last.throttle = command.throttle;
        last.brake = command.brake;
        last.steer = command.steer;

        // vehicle update
        let accel = command.throttle * FULL_THROTTLE_ACCEL - command.brake * FULL_BRAKE_DECEL - world::drag(ego.speed);
        let v_new = (ego.speed + accel * DT).max(0.0);
        let v_mid = 0.5 * (ego.speed + v_new);
        let yaw_rate = v_mid * (command.steer * MAX_STEER_ANGLE).tan() / WHEELBASE;
        let h_mid = ego.heading + 0.5 * yaw_rate * DT;
        ego.x += v_mid * h_mid.cos() * DT;
        ego.y += v_mid * h_mid.sin() * DT;
        ego.heading = normalize_angle(ego.heading + yaw_rate * DT);
        prev_accel = (v_new - ego.speed) / DT;
        ego.speed = v_new;
        if let (Some(l), Some(sc)) = (lead.as_mut(), &script) {
            l.step(t, sc);
        }
    }
    let steps = states.len();
    let log = TrajectoryLog::new(
        "rollout",
        scenario.scenario_id.clone(),
        0,
        SAMPLE_RATE_HZ,
        scenario.route_length_m,
        states,
        observations,
    )?;
    let mut metrics = RolloutMetrics::new(completion, collisions);
    metrics.max_lateral_error = max_lateral;
    metrics.override_steps = override_steps;
    metrics.steps = steps;
    Ok((log, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(gap: f64, rel_speed: f64) -> Neighbor {
        Neighbor { gap, rel_speed, lateral_offset: 0.0 }
    }

    #[test]
    fn override_thresholds() {
        assert!(override_triggers(&n(5.0, -3.0)));
        assert!(override_triggers(&n(20.0, 15.0)));
        assert!(!override_triggers(&n(30.0, 10.0)));
        assert!(!override_triggers(&n(6.0, 0.0)));
        assert!(!override_triggers(&n(15.0, 10.0)));
        assert!(!override_triggers(&Neighbor { gap: 2.0, rel_speed: 5.0, lateral_offset: 1.3 }));
        assert!(override_triggers(&Neighbor { gap: 2.0, rel_speed: 5.0, lateral_offset: -1.2 }));
    }

    #[test]
    fn pid_hand_values() {
        let mut s = PidState::new();
        assert_eq!(pid_steer(&mut s, 0.0, 0.1), 0.0);
        let mut s = PidState::new();
        let steer = pid_steer(&mut s, 0.1, 0.1);
        assert!((steer - (0.86 * 0.1 + 0.3 * 0.1 / 0.1)).abs() < 1e-12);
        // second step: integral 0.1 * 0.1, no derivative
        let steer = pid_steer(&mut s, 0.1, 0.1);
        assert!((steer - (0.086 + 0.75 * 0.01)).abs() < 1e-12);
        assert_eq!(pid_steer(&mut PidState::new(), 3.0, 0.1), 1.0);
        assert_eq!(pid_steer(&mut PidState::new(), -3.0, 0.1), -1.0);
        let mut s = PidState::new();
        for _ in 0..100 {
            pid_steer(&mut s, 0.01, 0.1);
        }
        assert_eq!(s.window().len(), TURN_N);
    }

    #[test]
    fn densify_arithmetic() {
        let r = Route::straight(1000.0);
        let w = densify_waypoints(&r, 15, 10.0).unwrap();
        assert_eq!(w.len(), 67);
        let step = 1000.0 / 67.0;
        for (k, p) in w.iter().enumerate() {
            assert!((p.0 - step * (k + 1) as f64).abs() < 1e-6 && p.1.abs() < 1e-6);
        }
        for rate in [2, 16, 30, 50] {
            let a = densify_waypoints(&r, rate, 10.0).unwrap().len();
            let b = densify_waypoints(&r, rate / 2, 10.0).unwrap().len();
            assert!(b == 2 * a || b + 1 == 2 * a, "{rate}: {a} {b}");
        }
        assert!(densify_waypoints(&r, 0, 10.0).is_err());
    }

    #[test]
    fn metrics_rules() {
        let m = RolloutMetrics::new(1.0, 0);
        assert!(m.success && m.driving_score == 100.0);
        let m = RolloutMetrics::new(0.5, 2);
        assert!(!m.success && (m.driving_score - 12.5).abs() < 1e-12);
    }

    #[test]
    fn command_exclusivity() {
        let c = ControlCommand::new(0.5, 0.2, 3.0);
        assert_eq!((c.throttle, c.brake, c.steer), (0.0, 0.2, 1.0));
    }
}
