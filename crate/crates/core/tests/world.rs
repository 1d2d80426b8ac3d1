use drivestyle::indicators::compute_indicators;
use drivestyle::world::{generate, generate_corpus, simulate};
use drivestyle::{DriverProfile, IndicatorCatalog, ScenarioSpec, TrajectoryLog};

fn indicator(log: &TrajectoryLog, id: &str) -> f64 {
    let catalog = IndicatorCatalog::standard();
    compute_indicators(log, &catalog).values[catalog.position(id).unwrap()]
}

#[test]
fn aggressive_reference_is_faster_and_closer_in_most_runs() {
    let profiles = vec![
        ("aggressive".to_string(), DriverProfile::aggressive()),
        ("conservative".to_string(), DriverProfile::conservative()),
    ];
    let scenarios = vec![ScenarioSpec::car_following(), ScenarioSpec::free_highway()];
    let runs = 20;
    let corpus = generate_corpus(&profiles, &scenarios, runs, 17).unwrap();
    let (agg, cons) = corpus.logs.split_at(corpus.logs.len() / 2);
    let (mut faster, mut closer) = (0, 0);
    for (a, c) in agg.iter().zip(cons) {
        assert_eq!((a.scenario_id(), a.run_index()), (c.scenario_id(), c.run_index()));
        faster += (indicator(a, "max_speed") > indicator(c, "max_speed")) as usize;
        closer += (indicator(a, "mean_ttc") < indicator(c, "mean_ttc")) as usize;
    }
    let pairs = agg.len() as f64;
    assert!(faster as f64 >= 0.95 * pairs, "max_speed direction held in {faster}/{pairs}");
    assert!(closer as f64 >= 0.95 * pairs, "mean_ttc direction held in {closer}/{pairs}");
}

#[test]
fn longer_headway_alone_raises_mean_headway() {
    let scenario = ScenarioSpec::car_following();
    let mut previous = f64::NEG_INFINITY;
    for step in 0..6 {
        let mut p = DriverProfile::median();
        p.noise_scale = 0.0;
        p.time_headway = 0.8 + 0.3 * step as f64;
        let headway = indicator(&generate(&p, &scenario, 9).unwrap(), "time_headway_mean");
        assert!(headway > previous, "T_h {} gave {headway} after {previous}", p.time_headway);
        previous = headway;
    }
}

#[test]
fn corpus_is_reproducible_and_runs_differ() {
    let profiles = vec![("a".to_string(), DriverProfile::median()), ("b".to_string(), DriverProfile::aggressive())];
    let scenarios = vec![ScenarioSpec::stop_and_go()];
    let first = generate_corpus(&profiles, &scenarios, 3, 4).unwrap();
    let again = generate_corpus(&profiles, &scenarios, 3, 4).unwrap();
    assert_eq!(first, again);
    assert_ne!(first.logs[0].states(), first.logs[1].states());
    assert_ne!(first, generate_corpus(&profiles, &scenarios, 3, 5).unwrap());
}

#[test]
fn contact_only_with_a_flagged_collision() {
    let drivers = [DriverProfile::aggressive(), DriverProfile::conservative(), DriverProfile::from_unit([1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0])];
    let mut scenarios = ScenarioSpec::builtins();
    scenarios.push(ScenarioSpec::hard_brake());
    for p in &drivers {
        for sc in &scenarios {
            for seed in 0..3 {
                let out = simulate("d", p, sc, 0, seed).unwrap();
                assert!(out.log.states().iter().all(|s| s.speed >= 0.0));
                let contact = out.log.lead().iter().any(|l| l.present && l.gap <= 0.0);
                assert!(!contact || out.collisions > 0, "{} seed {seed}: contact without a collision", sc.scenario_id);
            }
        }
    }
}
