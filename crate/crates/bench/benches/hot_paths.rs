use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use drivestyle::closed_loop::{rollout, RolloutConfig, ToyPlanner};
use drivestyle::metrics::{mmd_squared, mmdss};
use drivestyle::reward::{self, Mode};
use drivestyle::seed;
use drivestyle::world::CONTEXT_DIM;
use drivestyle::{PlannerParams, ScenarioSpec};
use rand::Rng;

fn samples(n: usize, shift: f64, tag: &str) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed::derive(1, tag));
    (0..n).map(|_| (0..10).map(|_| rng.random::<f64>() + shift).collect()).collect()
}

fn bench_mmd(c: &mut Criterion) {
    let x = samples(32, 0.0, "x");
    let y = samples(32, 0.2, "y");
    c.bench_function("mmd_squared 32x32 d10", |b| b.iter(|| mmd_squared(black_box(&x), black_box(&y), 0.5).unwrap()));
    c.bench_function("mmdss 32x32 d10 median heuristic", |b| b.iter(|| mmdss(black_box(&x), black_box(&y)).unwrap()));
}

fn bench_reward(c: &mut Criterion) {
    let params = reward::init_params(3, CONTEXT_DIM);
    let features: Vec<f64> = (0..params.in_dim()).map(|i| (i as f64 * 0.37).fract()).collect();
    let target = vec![0.5; 10];
    c.bench_function("reward forward eval", |b| b.iter(|| reward::forward(&params, black_box(&features), Mode::Eval, 0).unwrap()));
    c.bench_function("reward backward", |b| b.iter(|| reward::backward(&params, black_box(&features), &target).unwrap()));
}

fn bench_rollout(c: &mut Criterion) {
    let params = PlannerParams::init(5, CONTEXT_DIM);
    let scenario = ScenarioSpec::builtin("hard_brake").unwrap();
    let config = RolloutConfig::default();
    let mut group = c.benchmark_group("closed loop");
    group.sample_size(10);
    group.bench_function("hard_brake rollout, untrained planner", |b| {
        b.iter(|| rollout(&mut ToyPlanner(&params), black_box(&scenario), &config).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_mmd, bench_reward, bench_rollout);
criterion_main!(benches);
