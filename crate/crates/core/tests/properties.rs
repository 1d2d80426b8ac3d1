use drivestyle::metrics::{mmd_squared, mmdss};
use drivestyle::planner::select_best;
use drivestyle::trajectory::{parse_log, slice_segments, write_log, SAMPLE_RATE_HZ};
use drivestyle::{EgoState, LeadObservation, PlannedTrajectory, ProposalSet, TrajectoryLog, Waypoint};
use proptest::prelude::*;

fn log_from(steps: &[(f64, f64, f64)], speed: f64, lead_gap: Option<f64>) -> TrajectoryLog {
    let (mut x, mut y, mut heading) = (0.0, 0.0, 0.0);
    let mut states = Vec::new();
    for (i, &(turn, accel, pedal)) in steps.iter().enumerate() {
        heading += turn;
        x += speed * heading.cos() / SAMPLE_RATE_HZ;
        y += speed * heading.sin() / SAMPLE_RATE_HZ;
        states.push(EgoState {
            t: i as f64 / SAMPLE_RATE_HZ,
            x,
            y,
            heading,
            speed,
            lon_accel: accel,
            throttle: pedal.max(0.0),
            brake: (-pedal).max(0.0),
            steer: (turn * 4.0).clamp(-1.0, 1.0),
            lane_index: (i / 30) as u32 % 2,
        });
    }
    let lead = (0..states.len())
        .map(|i| lead_gap.map_or(LeadObservation::ABSENT, |g| LeadObservation::new(g + 0.1 * i as f64, 0.3)))
        .collect();
    TrajectoryLog::new("d", "s", 3, SAMPLE_RATE_HZ, 500.0, states, lead).unwrap()
}

fn steps(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-0.05..0.05f64, -3.0..3.0f64, -1.0..1.0f64), n)
}

fn rigid(log: &TrajectoryLog, angle: f64, tx: f64, ty: f64) -> TrajectoryLog {
    let (s, c) = angle.sin_cos();
    let states = log
        .states()
        .iter()
        .map(|e| EgoState { x: c * e.x - s * e.y + tx, y: s * e.x + c * e.y + ty, heading: e.heading + angle, ..*e })
        .collect();
    TrajectoryLog::new("d", "s", 3, SAMPLE_RATE_HZ, 500.0, states, log.lead().to_vec()).unwrap()
}

fn points(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, dim), n)
}

fn marker(i: usize) -> PlannedTrajectory {
    let mut pts = [Waypoint::default(); 8];
    pts[7].x = i as f64;
    PlannedTrajectory::new(pts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_round_trips_bit_identically(s in steps(2..120), speed in 0.0..35.0f64, gap in prop::option::of(0.0..80.0f64)) {
        let log = log_from(&s, speed, gap);
        let bytes = write_log(&log);
        let back = parse_log(&bytes).unwrap();
        prop_assert_eq!(&back, &log);
        prop_assert_eq!(write_log(&back), bytes);
    }

    #[test]
    fn slicing_ignores_rigid_motions(s in steps(36..140), speed in 1.0..30.0f64, angle in -3.1..3.1f64,
                                     tx in -1e3..1e3f64, ty in -1e3..1e3f64, stride in 1usize..12) {
        let log = log_from(&s, speed, None);
        let a = slice_segments(&log, stride);
        let b = slice_segments(&rigid(&log, angle, tx, ty), stride);
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            for (u, v) in p.to_flat().iter().zip(q.to_flat()) {
                prop_assert!((u - v).abs() < 1e-9, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn mmd_is_symmetric(x in points(1..12, 3), y in points(1..12, 3), gamma in 0.01..5.0f64) {
        let a = mmd_squared(&x, &y, gamma).unwrap();
        let b = mmd_squared(&y, &x, gamma).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a > -1e-12);
        let s = mmdss(&x, &y).unwrap();
        prop_assert!(s > 0.0 && s <= 1.0);
        prop_assert!((s - mmdss(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mmdss_ignores_common_scale_and_shift(x in points(2..10, 4), y in points(2..10, 4), c in 0.1..20.0f64, shift in -10.0..10.0f64) {
        let map = |v: &Vec<Vec<f64>>| v.iter().map(|r| r.iter().map(|u| c * u + shift).collect::<Vec<f64>>()).collect::<Vec<_>>();
        let (xs, ys) = (map(&x), map(&y));
        let a = mmdss(&x, &y).unwrap();
        let b = mmdss(&xs, &ys).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn selection_survives_positive_affine_logits(logits in prop::collection::vec(-10.0..10.0f64, 20),
                                                 scale in 0.01..100.0f64, shift in -50.0..50.0f64) {
        let set = ProposalSet { proposals: (0..20).map(marker).collect(), confidences: logits.clone() };
        let moved = ProposalSet { confidences: logits.iter().map(|l| scale * l + shift).collect(), ..set.clone() };
        let (i, _) = select_best(&set);
        let (j, traj) = select_best(&moved);
        prop_assert_eq!(i, j);
        prop_assert_eq!(traj.endpoint().x, i as f64);
    }
}
