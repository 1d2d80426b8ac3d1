//! Planner pretraining and style-guided fine-tuning on a small synthetic
//! corpus shared by every test in this file.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use drivestyle::finetune::{evaluate_style_alignment, finetune, style_loss_head, FinetuneConfig};
use drivestyle::metrics::{mmdss, scenario_minmax};
use drivestyle::pipeline::{self, LogKey, PipelineConfig, RewardModels, TargetData};
use drivestyle::planner::{evaluate, pretrain, PretrainConfig};
use drivestyle::world::{expert_rollout, generate_corpus, CONTEXT_DIM};
use drivestyle::{seed, Corpus, DriverProfile, PlannerParams, ScenarioSpec, StyleVector, Variant};
use ndarray::Array2;

// Default scenarios, runs and planner/fine-tuning settings; fewer drivers
// and reward epochs to keep the file under a few minutes on one core.
const CONFIG: &str = r#"{
  "seed": 5,
  "drivers": 6,
  "reward": { "train": { "epochs": 60 } },
  "finetune": { "auto_targets": 1 }
}"#;

struct Fixture {
    cfg: PipelineConfig,
    corpus: Corpus,
    styles: BTreeMap<LogKey, StyleVector>,
    rewards: RewardModels,
    planner: PlannerParams,
    trajectory_curve: Vec<f64>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = PipelineConfig::from_json(CONFIG.as_bytes()).unwrap();
        let corpus = pipeline::gen_data(&cfg).unwrap();
        let normalized = scenario_minmax(&pipeline::extract(&corpus));
        let selection = pipeline::select(&normalized, cfg.k).unwrap();
        let styles = pipeline::log_styles(&normalized, &selection).unwrap();
        let rewards = pipeline::train_rewards(&cfg, &corpus, &styles).unwrap();
        let (planner, curve) = pipeline::pretrain_planner(&cfg, &corpus.manifest.scenarios).unwrap();
        Fixture { cfg, corpus, styles, rewards, planner, trajectory_curve: curve.trajectory }
    })
}

fn data(driver: &str) -> TargetData {
    let f = fixture();
    pipeline::target_data(&f.cfg, &f.corpus, &f.styles, driver).unwrap()
}

fn target() -> String {
    pipeline::targets(&fixture().cfg, &fixture().styles).remove(0)
}

fn score(params: &PlannerParams, data: &TargetData) -> f64 {
    let f = fixture();
    evaluate_style_alignment(params, &f.rewards.evaluation, &data.eval, f.cfg.finetune.stride).unwrap()
}

fn tune(driver: &str, variant: Variant, lambda: f64) -> (PlannerParams, drivestyle::FinetuneReport) {
    let f = fixture();
    let config = FinetuneConfig { lambda_style: lambda, ..pipeline::finetune_config(&f.cfg, driver, variant) };
    finetune(&f.planner, Some(&f.rewards.full), &data(driver).train, &config).unwrap()
}

#[test]
fn style_gradient_reaches_head_weights() {
    let f = fixture();
    let d = data(&target());
    let sample = &d.train[3];
    let latent = f.planner.latents(&[&sample.input]).unwrap();
    let loss_at = |p: &PlannerParams| {
        let out = p.head_forward(latent.view());
        style_loss_head(out.row(0), &sample.style, &f.rewards.full, &sample.context).unwrap()
    };
    let (_, d_out) = loss_at(&f.planner);
    let d_out = Array2::from_shape_vec((1, d_out.len()), d_out).unwrap();
    let (grad, _) = f.planner.head.backward(latent.view(), d_out.view());
    let mut rng = seed::rng(12);
    let mut checked = 0;
    let h = 1e-6;
    while checked < 8 {
        use rand::Rng;
        let (i, j) = (rng.random_range(0..grad.w.nrows()), rng.random_range(0..grad.w.ncols()));
        let analytic = grad.w[[i, j]];
        if analytic.abs() < 1e-6 {
            continue;
        }
        let (mut plus, mut minus) = (f.planner.clone(), f.planner.clone());
        plus.head.w[[i, j]] += h;
        minus.head.w[[i, j]] -= h;
        let numeric = (loss_at(&plus).0 - loss_at(&minus).0) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        assert!(rel < 1e-3, "w[{i},{j}]: analytic {analytic} numeric {numeric}");
        checked += 1;
    }
}

#[test]
fn finetuning_touches_only_the_head() {
    let f = fixture();
    let reward_before = f.rewards.full.clone();
    let (tuned, _) = tune(&target(), Variant::Pdsa, 1.0);
    assert_eq!(tuned.backbone, f.planner.backbone);
    assert_ne!(tuned.head, f.planner.head);
    assert!(!tuned.backbone_trainable);
    assert_eq!(f.rewards.full, reward_before);
}

#[test]
fn zero_style_weight_matches_plain_finetuning() {
    let driver = target();
    let (dft, dft_report) = tune(&driver, Variant::Dft, 1.0);
    let (zero, zero_report) = tune(&driver, Variant::Pdsa, 0.0);
    assert_eq!(dft.head, zero.head);
    assert_eq!(dft_report.losses.trajectory, zero_report.losses.trajectory);
    assert!(zero_report.losses.style.is_none());
}

fn smoothed_pretrain_curve() -> Vec<f64> {
    fixture().trajectory_curve.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect()
}

#[test]
fn pretraining_loss_trends_down() {
    let smooth = smoothed_pretrain_curve();
    let (first, last) = (smooth[0], *smooth.last().unwrap());
    assert!(last < 0.5 * first, "smoothed loss {first} -> {last}");
    let mid = smooth.len() / 2;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&smooth[mid..]) < mean(&smooth[..mid]));
}

#[test]
#[ignore = "minibatch noise on the plateau leaves bumps of up to about 1% after window-5 smoothing; see pretraining_loss_trends_down"]
fn pretraining_loss_never_rises_after_smoothing() {
    let smooth = smoothed_pretrain_curve();
    for (e, w) in smooth.windows(2).enumerate() {
        assert!(w[1] <= w[0], "smoothed loss rose at epoch {}: {} -> {}", e + 5, w[0], w[1]);
    }
}

#[test]
fn pretrained_planner_imitates_the_straight_road_expert() {
    let scenario = ScenarioSpec::free_highway();
    let train: Vec<_> = (0..2).flat_map(|s| expert_rollout(&scenario, s, 5).unwrap()).collect();
    let held_out = expert_rollout(&scenario, 99, 5).unwrap();
    let cfg = PretrainConfig { seed: 3, ..PretrainConfig::default() };
    let (params, _) = pretrain(PlannerParams::init(1, CONTEXT_DIM), &train, &cfg).unwrap();
    let (selected, _) = evaluate(&params, &held_out).unwrap();
    assert!(selected < 1.0, "held-out selected ADE {selected} m");
}

#[test]
fn random_planner_scores_below_pretrained() {
    let d = data(&target());
    let random = PlannerParams::init(77, CONTEXT_DIM);
    let (r, p) = (score(&random, &d), score(&fixture().planner, &d));
    assert!(r < p, "random {r} vs pretrained {p}");
}

fn mean_style(driver: &str) -> Vec<f64> {
    let rows: Vec<&StyleVector> = fixture().styles.iter().filter(|(k, _)| k.0 == driver).map(|(_, v)| v).collect();
    (0..rows[0].values().len()).map(|j| rows.iter().map(|v| v.values()[j]).sum::<f64>() / rows.len() as f64).collect()
}

#[test]
fn tuned_planner_prefers_its_own_target() {
    let a = target();
    let ma = mean_style(&a);
    let b = fixture()
        .corpus
        .manifest
        .profiles
        .keys()
        .filter(|d| **d != a)
        .max_by(|x, y| {
            let dist = |d: &str| mean_style(d).iter().zip(&ma).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
            dist(x).total_cmp(&dist(y))
        })
        .unwrap()
        .clone();
    let (tuned, _) = tune(&a, Variant::Pdsa, 1.0);
    let (own, other) = (score(&tuned, &data(&a)), score(&tuned, &data(&b)));
    assert!(own > other, "tuned on {a}: {own} vs {b}: {other}");
}

#[test]
fn finetuning_keeps_held_out_error_bounded() {
    let f = fixture();
    let driver = target();
    let d = data(&driver);
    let inputs = pipeline::FinetuneInputs { rewards: &f.rewards, data: &d, scenarios: &f.corpus.manifest.scenarios };
    for variant in Variant::ALL {
        let (_, report) = pipeline::run_finetune(&f.cfg, &f.planner, &inputs, &driver, variant, None).unwrap();
        let (pre, post) = (report.pre_heldout_l2.unwrap(), report.post_heldout_l2.unwrap());
        assert!(post <= 1.5 * pre, "{variant}: held-out L2 {pre} -> {post}");
    }
}

#[test]
fn ground_truth_styles_match_themselves() {
    let f = fixture();
    let own: Vec<Vec<f64>> = f.styles.values().map(|v| v.values().to_vec()).collect();
    assert_eq!(mmdss(&own, &own).unwrap(), 1.0);

    // Split noise of the biased estimator is about (1/m + 1/n)(1 - E k) in
    // mmd2, close to 0.9/m per half here, so 0.95 needs about 350 logs per
    // half. 500 per half puts the expected score near 0.96.
    let half = 500;
    let profiles = vec![("median".to_string(), DriverProfile::median()), ("fast".to_string(), DriverProfile::aggressive())];
    let corpus = generate_corpus(&profiles, &[ScenarioSpec::car_following()], 2 * half, 31).unwrap();
    let normalized = scenario_minmax(&pipeline::extract(&corpus));
    let selection = pipeline::select(&normalized, 10).unwrap();
    let styles = pipeline::log_styles(&normalized, &selection).unwrap();
    let median: Vec<Vec<f64>> = styles.iter().filter(|(k, _)| k.0 == "median").map(|(_, v)| v.values().to_vec()).collect();
    let (x, y) = median.split_at(half as usize);
    let s = mmdss(x, y).unwrap();
    assert!(s >= 0.95, "half-split self-similarity {s}");
}
