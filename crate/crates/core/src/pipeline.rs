//! End-to-end stages with file-based handoff. Each stage is a pure function
//! of its inputs and the master seed; the CLI wraps these one to one.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_loop::{rollout, RolloutConfig, RolloutMetrics, ToyPlanner, DEFAULT_DENSIFY_RATE};
use crate::error::{Error, Result};
use crate::finetune::{
    evaluate_style_alignment, finetune, finetune_samples, heldout_l2, EvalItem, FinetuneConfig, FinetuneReport,
    FinetuneSample, SafetySummary, Variant,
};
use crate::indicators::{compute_indicators, select_top_k, IndicatorCatalog, IndicatorVector, SelectionResult};
use crate::io::write_atomic;
use crate::metrics::{scenario_minmax, similarity_report, style_vector, SimilarityReport, StyleDistribution, StyleVector};
use crate::planner::{pretrain, samples_from_log, PlannerParams, PlannerSample, PretrainConfig, PretrainCurve};
use crate::reward::{RawRewardSample, RewardModel, TrainConfig, TrainingCurve};
use crate::seed;
use crate::trajectory::{read_log_file, segment_at, segment_starts, write_log, TrajectoryLog};
use crate::world::{
    default_profiles, expert_rollout, generate_corpus, Corpus, CorpusManifest, ScenarioSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardStage {
    /// Raw-sample stride between training segments.
    pub stride: usize,
    /// `seed` is ignored; it is derived from the master seed.
    pub train: TrainConfig,
}

impl Default for RewardStage {
    fn default() -> Self {
        Self { stride: 5, train: TrainConfig { epochs: 120, ..TrainConfig::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerStage {
    /// Expert runs per scenario.
    pub expert_runs: u32,
    pub stride: usize,
    /// `seed` is ignored; it is derived from the master seed.
    pub train: PretrainConfig,
}

impl Default for PlannerStage {
    fn default() -> Self {
        Self { expert_runs: 6, stride: 5, train: PretrainConfig { epochs: 60, ..PretrainConfig::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneStage {
    /// Target drivers; empty picks the `auto_targets` drivers with the most
    /// atypical style.
    pub targets: Vec<String>,
    pub auto_targets: usize,
    /// Highest run indices of each scenario held out for evaluation.
    pub eval_runs: u32,
    pub stride: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda_style: f64,
    pub batch_size: usize,
}

impl Default for FinetuneStage {
    fn default() -> Self {
        let d = FinetuneConfig::default();
        Self {
            targets: Vec::new(),
            auto_targets: 3,
            eval_runs: 2,
            stride: 5,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            lambda_style: d.lambda_style,
            batch_size: d.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutStage {
    /// Rollout seeds per scenario.
    pub seeds: u64,
    pub densify_rate: usize,
}

impl Default for RolloutStage {
    fn default() -> Self {
        Self { seeds: 5, densify_rate: DEFAULT_DENSIFY_RATE }
    }
}

/// Whole-pipeline configuration (JSON). Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub drivers: usize,
    pub runs_per_pair: u32,
    pub scenarios: Vec<String>,
    pub k: usize,
    pub reward: RewardStage,
    pub planner: PlannerStage,
    pub finetune: FinetuneStage,
    pub rollout: RolloutStage,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            drivers: 10,
            runs_per_pair: 8,
            scenarios: crate::world::BUILTIN_SCENARIOS.iter().map(|s| s.to_string()).collect(),
            k: crate::indicators::DEFAULT_K,
            reward: RewardStage::default(),
            planner: PlannerStage::default(),
            finetune: FinetuneStage::default(),
            rollout: RolloutStage::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("config serializes");
        out.push(b'\n');
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.drivers < 2 {
            return Err(Error::TooFewDrivers(self.drivers));
        }
        if self.runs_per_pair < 2 || self.scenarios.is_empty() {
            return Err(Error::Config("need at least two runs per pair and one scenario".into()));
        }
        if self.finetune.eval_runs == 0 || self.finetune.eval_runs >= self.runs_per_pair {
            return Err(Error::Config("eval_runs must be in [1, runs_per_pair)".into()));
        }
        for id in &self.scenarios {
            ScenarioSpec::builtin(id)?;
        }
        if self.k != crate::metrics::STYLE_DIM {
            return Err(Error::Config(format!("k must equal the style dimension {}", crate::metrics::STYLE_DIM)));
        }
        Ok(())
    }

    pub fn scenario_specs(&self) -> Result<Vec<ScenarioSpec>> {
        self.scenarios.iter().map(|id| ScenarioSpec::builtin(id)).collect()
    }

    /// Seed for one named stage, derived from the master seed.
    pub fn stage_seed(&self, tag: &str) -> u64 {
        seed::derive(self.seed, tag)
    }
}

// ---------------------------------------------------------------- gen-data

pub fn gen_data(cfg: &PipelineConfig) -> Result<Corpus> {
    let profiles = default_profiles(cfg.drivers, cfg.seed);
    generate_corpus(&profiles, &cfg.scenario_specs()?, cfg.runs_per_pair, cfg.stage_seed("corpus"))
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    for (log, rel) in corpus.logs.iter().zip(&corpus.manifest.logs) {
        write_atomic(&dir.join(rel), &write_log(log))?;
    }
    write_atomic(&dir.join("manifest.json"), &corpus.manifest.to_json())
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest = CorpusManifest::from_json(&std::fs::read(dir.join("manifest.json"))?)?;
    let logs = manifest.logs.iter().map(|rel| read_log_file(&dir.join(rel))).collect::<Result<Vec<_>>>()?;
    for log in &logs {
        if !manifest.profiles.contains_key(log.driver_id()) {
            return Err(Error::Unknown { kind: "driver", id: log.driver_id().to_string() });
        }
    }
    Ok(Corpus { manifest, logs })
}

fn scenario_map(manifest: &CorpusManifest) -> BTreeMap<&str, &ScenarioSpec> {
    manifest.scenarios.iter().map(|s| (s.scenario_id.as_str(), s)).collect()
}

fn context_of(manifest: &CorpusManifest, scenario: &str) -> Result<Vec<f64>> {
    scenario_map(manifest)
        .get(scenario)
        .map(|s| s.context())
        .ok_or_else(|| Error::Unknown { kind: "scenario", id: scenario.to_string() })
}

// ----------------------------------------------------------------- extract

/// Raw indicator vectors for every log, in corpus order.
pub fn extract(corpus: &Corpus) -> Vec<IndicatorVector> {
    let catalog = IndicatorCatalog::standard();
    corpus.logs.par_iter().map(|l| compute_indicators(l, &catalog)).collect()
}

pub fn write_indicators(path: &Path, vectors: &[IndicatorVector]) -> Result<()> {
    let mut buf = Vec::new();
    crate::indicators::write_indicator_csv(&mut buf, &IndicatorCatalog::standard(), vectors)?;
    write_atomic(path, &buf)
}

pub fn read_indicators(path: &Path) -> Result<Vec<IndicatorVector>> {
    let (catalog, vectors) = crate::indicators::read_indicator_csv(std::fs::File::open(path)?)?;
    if catalog.ids() != IndicatorCatalog::standard().ids() {
        return Err(Error::InvalidValue("indicator CSV columns do not match the standard catalog".into()));
    }
    Ok(vectors)
}

// ------------------------------------------------------- select-indicators

pub fn select(normalized: &[IndicatorVector], k: usize) -> Result<SelectionResult> {
    select_top_k(normalized, &IndicatorCatalog::standard(), k)
}

/// Key of one log: `(driver, scenario, run)`.
pub type LogKey = (String, String, u32);

pub fn log_styles(normalized: &[IndicatorVector], selection: &SelectionResult) -> Result<BTreeMap<LogKey, StyleVector>> {
    let positions = selection.positions(&IndicatorCatalog::standard())?;
    normalized
        .iter()
        .map(|v| Ok(((v.driver_id.clone(), v.scenario_id.clone(), v.run_index), style_vector(v, &positions)?)))
        .collect()
}

// -------------------------------------------------------------- eval-style

/// Per-driver style distributions, pooled over scenarios.
pub fn driver_distributions(styles: &BTreeMap<LogKey, StyleVector>) -> Result<Vec<StyleDistribution>> {
    let mut by: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for ((driver, _, _), s) in styles {
        by.entry(driver).or_default().push(s.values().to_vec());
    }
    by.into_iter().map(|(d, samples)| StyleDistribution::new(d, samples)).collect()
}

pub fn eval_style(normalized: &[IndicatorVector], selection: &SelectionResult, seed: u64) -> Result<SimilarityReport> {
    similarity_report(&driver_distributions(&log_styles(normalized, selection)?)?, seed)
}

// ------------------------------------------------------------ train-reward

fn log_group(key: &LogKey) -> u64 {
    seed::derive(0, &format!("{}/{}/{}", key.0, key.1, key.2))
}

/// Segment/style pairs from every log; `with_context = false` gives the
/// context-free variant.
pub fn reward_samples(corpus: &Corpus, styles: &BTreeMap<LogKey, StyleVector>, stride: usize, with_context: bool) -> Result<Vec<RawRewardSample>> {
    let mut out = Vec::new();
    for log in &corpus.logs {
        let key = (log.driver_id().to_string(), log.scenario_id().to_string(), log.run_index());
        let style = styles.get(&key).ok_or_else(|| Error::Unknown { kind: "log", id: format!("{key:?}") })?;
        let context = if with_context { context_of(&corpus.manifest, log.scenario_id())? } else { Vec::new() };
        for i in segment_starts(log.len(), stride) {
            out.push(RawRewardSample {
                segment: segment_at(log, i).expect("start within range"),
                context: context.clone(),
                target: style.clone(),
                group: log_group(&key),
            });
        }
    }
    Ok(out)
}

/// The three reward models: with context, without context, and an
/// independently seeded evaluation model.
#[derive(Debug, Clone)]
pub struct RewardModels {
    pub full: RewardModel,
    pub without_context: RewardModel,
    pub evaluation: RewardModel,
    pub curves: BTreeMap<String, TrainingCurve>,
}

pub const REWARD_FULL: &str = "reward.json";
pub const REWARD_WB: &str = "reward_wb.json";
pub const REWARD_EVAL: &str = "reward_eval.json";

/// The three reward models a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    /// Trajectory plus scenario context; drives PDSA.
    Full,
    /// Trajectory only; drives PDSA-WB.
    WithoutContext,
    /// Independently seeded twin of `Full`, used only to score planners.
    Evaluation,
}

impl RewardKind {
    pub const ALL: [RewardKind; 3] = [RewardKind::Full, RewardKind::WithoutContext, RewardKind::Evaluation];

    pub fn name(self) -> &'static str {
        match self {
            RewardKind::Full => "full",
            RewardKind::WithoutContext => "without_context",
            RewardKind::Evaluation => "evaluation",
        }
    }

    fn seed_tag(self) -> &'static str {
        match self {
            RewardKind::Full => "reward",
            RewardKind::WithoutContext => "reward-wb",
            RewardKind::Evaluation => "reward-eval",
        }
    }
}

pub fn train_reward(cfg: &PipelineConfig, corpus: &Corpus, styles: &BTreeMap<LogKey, StyleVector>, kind: RewardKind) -> Result<(RewardModel, TrainingCurve)> {
    let with_context = kind != RewardKind::WithoutContext;
    let samples = reward_samples(corpus, styles, cfg.reward.stride, with_context)?;
    let context_dim = samples.first().map_or(0, |s| s.context.len());
    let train = TrainConfig { seed: cfg.stage_seed(kind.seed_tag()), ..cfg.reward.train };
    RewardModel::fit(&samples, context_dim, &train)
}

impl RewardModels {
    /// Assembles the set from one trained model per kind, in any order.
    pub fn from_trained(trained: Vec<(RewardKind, (RewardModel, TrainingCurve))>) -> Result<Self> {
        let mut by_kind: BTreeMap<&str, (RewardModel, TrainingCurve)> = trained.into_iter().map(|(k, m)| (k.name(), m)).collect();
        let mut take = |k: RewardKind| by_kind.remove(k.name()).ok_or_else(|| Error::Config(format!("missing {} reward model", k.name())));
        let (full, c1) = take(RewardKind::Full)?;
        let (without_context, c2) = take(RewardKind::WithoutContext)?;
        let (evaluation, c3) = take(RewardKind::Evaluation)?;
        let curves = [(RewardKind::Full, c1), (RewardKind::WithoutContext, c2), (RewardKind::Evaluation, c3)]
            .into_iter()
            .map(|(k, c)| (k.name().to_string(), c))
            .collect();
        Ok(Self { full, without_context, evaluation, curves })
    }
}

pub fn train_rewards(cfg: &PipelineConfig, corpus: &Corpus, styles: &BTreeMap<LogKey, StyleVector>) -> Result<RewardModels> {
    let trained = RewardKind::ALL
        .par_iter()
        .map(|&kind| Ok((kind, train_reward(cfg, corpus, styles, kind)?)))
        .collect::<Result<Vec<_>>>()?;
    RewardModels::from_trained(trained)
}

/// Intra/inter MMDSS from analytic style vectors and from reward-model
/// style vectors (mean prediction over each log's segments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub analytic_intra: f64,
    pub analytic_inter: f64,
    pub reward_intra: f64,
    pub reward_inter: f64,
    pub delta_intra: f64,
    pub delta_inter: f64,
}

pub fn reward_style_vectors(reward: &RewardModel, corpus: &Corpus, stride: usize) -> Result<BTreeMap<LogKey, StyleVector>> {
    corpus
        .logs
        .par_iter()
        .map(|log| {
            let segs: Vec<_> = segment_starts(log.len(), stride).filter_map(|i| segment_at(log, i)).collect();
            let ctx = if reward.context_dim() == 0 { Vec::new() } else { context_of(&corpus.manifest, log.scenario_id())? };
            let preds = reward.predict(&segs, &ctx)?;
            let mut mean = vec![0.0; crate::metrics::STYLE_DIM];
            for p in &preds {
                for (m, v) in mean.iter_mut().zip(p) {
                    *m += v / preds.len() as f64;
                }
            }
            let key = (log.driver_id().to_string(), log.scenario_id().to_string(), log.run_index());
            Ok((key, StyleVector::new(mean)?))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

pub fn reward_fidelity(reward: &RewardModel, corpus: &Corpus, styles: &BTreeMap<LogKey, StyleVector>, stride: usize, seed: u64) -> Result<FidelityReport> {
    let analytic = similarity_report(&driver_distributions(styles)?, seed)?;
    let predicted = similarity_report(&driver_distributions(&reward_style_vectors(reward, corpus, stride)?)?, seed)?;
    let get = |m: Option<f64>| m.ok_or(Error::EmptyDistribution);
    let (ai, ae) = (get(analytic.intra.mmdss)?, get(analytic.inter.mmdss)?);
    let (ri, re) = (get(predicted.intra.mmdss)?, get(predicted.inter.mmdss)?);
    Ok(FidelityReport {
        analytic_intra: ai,
        analytic_inter: ae,
        reward_intra: ri,
        reward_inter: re,
        delta_intra: (ri - ai).abs(),
        delta_inter: (re - ae).abs(),
    })
}

// -------------------------------------------------------- pretrain-planner

pub fn pretrain_corpus(cfg: &PipelineConfig, scenarios: &[ScenarioSpec]) -> Result<Vec<PlannerSample>> {
    let mut out = Vec::new();
    for sc in scenarios {
        for run in 0..cfg.planner.expert_runs {
            let s = seed::derive(cfg.stage_seed("expert"), &format!("{}/{run}", sc.scenario_id));
            out.extend(expert_rollout(sc, s, cfg.planner.stride)?);
        }
    }
    Ok(out)
}

pub fn pretrain_planner(cfg: &PipelineConfig, scenarios: &[ScenarioSpec]) -> Result<(PlannerParams, PretrainCurve)> {
    let corpus = pretrain_corpus(cfg, scenarios)?;
    let context_dim = scenarios.first().map_or(crate::world::CONTEXT_DIM, |s| s.context().len());
    let train = PretrainConfig { seed: cfg.stage_seed("planner-train"), ..cfg.planner.train };
    pretrain(PlannerParams::init(cfg.stage_seed("planner-init"), context_dim), &corpus, &train)
}

// ---------------------------------------------------------------- finetune

/// Drivers with the most atypical style: largest distance between the
/// driver's mean style vector and the mean over all logs. Ties by id.
pub fn auto_targets(styles: &BTreeMap<LogKey, StyleVector>, n: usize) -> Vec<String> {
    let mut sums: BTreeMap<&str, (Vec<f64>, f64)> = BTreeMap::new();
    let mut total = vec![0.0; crate::metrics::STYLE_DIM];
    for ((driver, _, _), v) in styles {
        let e = sums.entry(driver.as_str()).or_insert_with(|| (vec![0.0; total.len()], 0.0));
        for ((s, t), x) in e.0.iter_mut().zip(total.iter_mut()).zip(v.values()) {
            *s += x;
            *t += x;
        }
        e.1 += 1.0;
    }
    let count = styles.len().max(1) as f64;
    let mut ranked: Vec<(&str, f64)> = sums
        .iter()
        .map(|(id, (s, c))| (*id, s.iter().zip(&total).map(|(a, t)| (a / c - t / count).powi(2)).sum::<f64>()))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().take(n).map(|(id, _)| id.to_string()).collect()
}

pub fn targets(cfg: &PipelineConfig, styles: &BTreeMap<LogKey, StyleVector>) -> Vec<String> {
    if cfg.finetune.targets.is_empty() {
        auto_targets(styles, cfg.finetune.auto_targets)
    } else {
        cfg.finetune.targets.clone()
    }
}

/// A target driver's data split into fine-tuning samples and held-out logs.
#[derive(Debug, Clone)]
pub struct TargetData {
    pub train: Vec<FinetuneSample>,
    pub heldout_pairs: Vec<PlannerSample>,
    pub eval: Vec<EvalItem>,
}

pub fn target_data(cfg: &PipelineConfig, corpus: &Corpus, styles: &BTreeMap<LogKey, StyleVector>, driver: &str) -> Result<TargetData> {
    if !corpus.manifest.profiles.contains_key(driver) {
        return Err(Error::Unknown { kind: "driver", id: driver.to_string() });
    }
    let first_eval = cfg.runs_per_pair - cfg.finetune.eval_runs;
    let mut data = TargetData { train: Vec::new(), heldout_pairs: Vec::new(), eval: Vec::new() };
    for log in corpus.logs.iter().filter(|l| l.driver_id() == driver) {
        let key = (driver.to_string(), log.scenario_id().to_string(), log.run_index());
        let style = styles.get(&key).ok_or_else(|| Error::Unknown { kind: "log", id: format!("{key:?}") })?;
        let context = context_of(&corpus.manifest, log.scenario_id())?;
        if log.run_index() < first_eval {
            data.train.extend(finetune_samples(log, &context, style, cfg.finetune.stride)?);
        } else {
            data.heldout_pairs.extend(samples_from_log(log, &context, cfg.finetune.stride)?);
            data.eval.push(EvalItem { log: log.clone(), context, style: style.clone() });
        }
    }
    if data.train.is_empty() || data.eval.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    Ok(data)
}

pub fn finetune_config(cfg: &PipelineConfig, driver: &str, variant: Variant) -> FinetuneConfig {
    FinetuneConfig {
        variant,
        lambda_style: cfg.finetune.lambda_style,
        learning_rate: cfg.finetune.learning_rate,
        epochs: cfg.finetune.epochs,
        batch_size: cfg.finetune.batch_size,
        seed: seed::derive(cfg.stage_seed("finetune"), driver),
        target_driver_id: driver.to_string(),
    }
}

/// One closed-loop run of the pretrained or a fine-tuned planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub scenario_id: String,
    pub seed: u64,
    pub metrics: RolloutMetrics,
}

/// Closed-loop runs over `scenarios x seeds`, in scenario-then-seed order
/// regardless of scheduling.
pub fn run_rollouts(params: &PlannerParams, scenarios: &[ScenarioSpec], seeds: &[u64], densify_rate: usize, safety_override: bool) -> Result<Vec<(TrajectoryLog, RolloutRecord)>> {
    let jobs: Vec<(&ScenarioSpec, u64)> = scenarios.iter().flat_map(|s| seeds.iter().map(move |&k| (s, k))).collect();
    jobs.par_iter()
        .map(|&(sc, k)| {
            let config = RolloutConfig { densify_rate, safety_override, seed: k };
            let (log, metrics) = rollout(&mut ToyPlanner(params), sc, &config)?;
            Ok((log, RolloutRecord { scenario_id: sc.scenario_id.clone(), seed: k, metrics }))
        })
        .collect()
}

pub fn summarize(records: &[RolloutRecord]) -> SafetySummary {
    let n = records.len().max(1) as f64;
    SafetySummary {
        rollouts: records.len(),
        success_rate: records.iter().filter(|r| r.metrics.success).count() as f64 / n,
        collisions: records.iter().map(|r| r.metrics.collisions).sum(),
        mean_driving_score: records.iter().map(|r| r.metrics.driving_score).sum::<f64>() / n,
    }
}

/// Closed-loop success over `scenarios x seeds` with the override enabled.
pub fn safety_summary(params: &PlannerParams, scenarios: &[ScenarioSpec], seeds: u64, densify_rate: usize) -> Result<SafetySummary> {
    let seeds: Vec<u64> = (0..seeds).collect();
    let runs = run_rollouts(params, scenarios, &seeds, densify_rate, true)?;
    Ok(summarize(&runs.into_iter().map(|(_, r)| r).collect::<Vec<_>>()))
}

/// Everything a fine-tuning run needs besides the planner.
pub struct FinetuneInputs<'a> {
    pub rewards: &'a RewardModels,
    pub data: &'a TargetData,
    pub scenarios: &'a [ScenarioSpec],
}

/// Fine-tunes one variant and fills the report's evaluation fields.
/// `baseline_safety`, when given, is the pretrained planner's summary; the
/// fine-tuned planner is then rolled out on the same scenarios and seeds.
pub fn run_finetune(
    cfg: &PipelineConfig,
    planner: &PlannerParams,
    inputs: &FinetuneInputs<'_>,
    driver: &str,
    variant: Variant,
    baseline_safety: Option<&SafetySummary>,
) -> Result<(PlannerParams, FinetuneReport)> {
    let reward = match variant {
        Variant::Dft => None,
        Variant::PdsaWb => Some(&inputs.rewards.without_context),
        Variant::Pdsa => Some(&inputs.rewards.full),
    };
    let config = finetune_config(cfg, driver, variant);
    let (tuned, mut report) = finetune(planner, reward, &inputs.data.train, &config)?;
    let align = |p: &PlannerParams| evaluate_style_alignment(p, &inputs.rewards.evaluation, &inputs.data.eval, cfg.finetune.stride);
    report.pre_mmdss = Some(align(planner)?);
    report.post_mmdss = Some(align(&tuned)?);
    report.pre_heldout_l2 = Some(heldout_l2(planner, &inputs.data.heldout_pairs)?);
    report.post_heldout_l2 = Some(heldout_l2(&tuned, &inputs.data.heldout_pairs)?);
    if let Some(pre) = baseline_safety {
        report.pre_safety = Some(pre.clone());
        report.post_safety = Some(safety_summary(&tuned, inputs.scenarios, cfg.rollout.seeds, cfg.rollout.densify_rate)?);
    }
    Ok((tuned, report))
}

// ------------------------------------------------------------------ report

/// Artifact locations under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn indicators_raw(&self) -> PathBuf {
        self.root.join("indicators_raw.csv")
    }
    pub fn indicators(&self) -> PathBuf {
        self.root.join("indicators.csv")
    }
    pub fn selection(&self) -> PathBuf {
        self.root.join("selection.json")
    }
    pub fn similarity(&self) -> PathBuf {
        self.root.join("similarity.json")
    }
    pub fn reward(&self, name: &str) -> PathBuf {
        self.root.join("reward").join(name)
    }
    pub fn reward_curves(&self) -> PathBuf {
        self.root.join("reward").join("curves.json")
    }
    pub fn fidelity(&self) -> PathBuf {
        self.root.join("reward").join("fidelity.json")
    }
    pub fn planner(&self) -> PathBuf {
        self.root.join("planner").join("pretrained.json")
    }
    pub fn planner_curve(&self) -> PathBuf {
        self.root.join("planner").join("curve.json")
    }
    pub fn finetune_dir(&self, driver: &str, variant: Variant) -> PathBuf {
        self.root.join("finetune").join(driver).join(variant.as_str())
    }
    pub fn rollout_dir(&self, name: &str) -> PathBuf {
        self.root.join("rollouts").join(name)
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    write_atomic(path, &out)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Markdown summary of whatever artifacts exist under `layout`.
pub fn report(layout: &Layout) -> Result<String> {
    let mut md = String::from("# Driving style pipeline report\n\n");
    if let Ok(sel) = SelectionResult::from_json(&std::fs::read(layout.selection()).unwrap_or_default()) {
        md.push_str("## Selected indicators\n\n| rank | indicator | score |\n|---|---|---|\n");
        let scores: BTreeMap<&str, f64> = sel.scores.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        for (i, id) in sel.selected.iter().enumerate() {
            md.push_str(&format!("| {} | {} | {:.4} |\n", i + 1, id, scores.get(id.as_str()).copied().unwrap_or(f64::NAN)));
        }
        md.push('\n');
    }
    if let Ok(sim) = read_json::<SimilarityReport>(&layout.similarity()) {
        md.push_str("## Intra- vs inter-driver similarity\n\n| | MMDSS | KL |\n|---|---|---|\n");
        md.push_str(&format!("| intra-driver | {} | {} |\n", fmt_opt(sim.intra.mmdss), fmt_opt(sim.intra.kl)));
        md.push_str(&format!("| inter-driver | {} | {} |\n\n", fmt_opt(sim.inter.mmdss), fmt_opt(sim.inter.kl)));
    }
    if let Ok(fid) = read_json::<FidelityReport>(&layout.fidelity()) {
        md.push_str("## Reward model fidelity\n\n| | analytic | reward model | abs diff |\n|---|---|---|---|\n");
        md.push_str(&format!("| intra MMDSS | {:.4} | {:.4} | {:.4} |\n", fid.analytic_intra, fid.reward_intra, fid.delta_intra));
        md.push_str(&format!("| inter MMDSS | {:.4} | {:.4} | {:.4} |\n\n", fid.analytic_inter, fid.reward_inter, fid.delta_inter));
    }
    let mut reports: Vec<FinetuneReport> = Vec::new();
    if let Ok(drivers) = std::fs::read_dir(layout.root.join("finetune")) {
        let mut dirs: Vec<PathBuf> = drivers.filter_map(|e| e.ok().map(|e| e.path())).collect();
        dirs.sort();
        for d in dirs {
            for v in Variant::ALL {
                if let Ok(r) = read_json::<FinetuneReport>(&d.join(v.as_str()).join("report.json")) {
                    reports.push(r);
                }
            }
        }
    }
    if !reports.is_empty() {
        md.push_str("## Fine-tuning style alignment (MMDSS)\n\n| driver | variant | pretrained | fine-tuned | held-out L2 pre | held-out L2 post |\n|---|---|---|---|---|---|\n");
        for r in &reports {
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                r.target_driver_id,
                r.variant,
                fmt_opt(r.pre_mmdss),
                fmt_opt(r.post_mmdss),
                fmt_opt(r.pre_heldout_l2),
                fmt_opt(r.post_heldout_l2)
            ));
        }
        md.push_str("\n## Closed-loop driving\n\n| driver | variant | success pre | success post | collisions post | score post |\n|---|---|---|---|---|---|\n");
        for r in reports.iter().filter(|r| r.post_safety.is_some()) {
            let (pre, post) = (r.pre_safety.as_ref(), r.post_safety.as_ref().expect("filtered"));
            md.push_str(&format!(
                "| {} | {} | {} | {:.3} | {} | {:.1} |\n",
                r.target_driver_id,
                r.variant,
                pre.map_or("n/a".into(), |p| format!("{:.3}", p.success_rate)),
                post.success_rate,
                post.collisions,
                post.mean_driving_score
            ));
        }
        md.push('\n');
    }
    if let Ok(entries) = std::fs::read_dir(layout.root.join("rollouts")) {
        let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        dirs.sort();
        let mut rows = String::new();
        for d in dirs {
            if let Ok(records) = read_json::<Vec<RolloutRecord>>(&d.join("metrics.json")) {
                let s = summarize(&records);
                let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                rows.push_str(&format!("| {name} | {} | {:.3} | {} | {:.1} |\n", s.rollouts, s.success_rate, s.collisions, s.mean_driving_score));
            }
        }
        if !rows.is_empty() {
            md.push_str("## Rollouts\n\n| run | rollouts | success | collisions | driving score |\n|---|---|---|---|---|\n");
            md.push_str(&rows);
            md.push('\n');
        }
    }
    Ok(md)
}

/// Every artifact of a full run, held in memory.
pub struct FullRun {
    pub corpus: Corpus,
    pub raw: Vec<IndicatorVector>,
    pub normalized: Vec<IndicatorVector>,
    pub selection: SelectionResult,
    pub similarity: SimilarityReport,
    pub styles: BTreeMap<LogKey, StyleVector>,
    pub rewards: RewardModels,
    pub fidelity: FidelityReport,
    pub planner: PlannerParams,
    pub planner_curve: PretrainCurve,
}

/// Runs every stage up to pretraining, writing artifacts under `layout`.
pub fn run_base(cfg: &PipelineConfig, layout: Option<&Layout>) -> Result<FullRun> {
    cfg.validate()?;
    let corpus = gen_data(cfg)?;
    let raw = extract(&corpus);
    let normalized = scenario_minmax(&raw);
    let selection = select(&normalized, cfg.k)?;
    let similarity = eval_style(&normalized, &selection, cfg.stage_seed("similarity"))?;
    let styles = log_styles(&normalized, &selection)?;
    let rewards = train_rewards(cfg, &corpus, &styles)?;
    let fidelity = reward_fidelity(&rewards.full, &corpus, &styles, cfg.reward.stride, cfg.stage_seed("similarity"))?;
    let (planner, planner_curve) = pretrain_planner(cfg, &corpus.manifest.scenarios)?;
    if let Some(l) = layout {
        write_corpus(&corpus, &l.corpus())?;
        write_indicators(&l.indicators_raw(), &raw)?;
        write_indicators(&l.indicators(), &normalized)?;
        write_atomic(&l.selection(), &selection.to_json())?;
        write_atomic(&l.similarity(), &similarity.to_json())?;
        write_rewards(l, &rewards)?;
        write_json(&l.fidelity(), &fidelity)?;
        planner.save(&l.planner())?;
        write_json(&l.planner_curve(), &planner_curve)?;
    }
    Ok(FullRun { corpus, raw, normalized, selection, similarity, styles, rewards, fidelity, planner, planner_curve })
}

// ----------------------------------------------------------------- loaders

/// Reads the corpus under `layout` and checks it was generated from `cfg`.
pub fn load_corpus(cfg: &PipelineConfig, layout: &Layout) -> Result<Corpus> {
    let corpus = read_corpus(&layout.corpus())?;
    if corpus.manifest.seed != cfg.stage_seed("corpus") {
        return Err(Error::Config(format!(
            "corpus under {} was generated with a different master seed",
            layout.corpus().display()
        )));
    }
    let ids: Vec<&str> = corpus.manifest.scenarios.iter().map(|s| s.scenario_id.as_str()).collect();
    if ids != cfg.scenarios.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Config(format!("corpus scenarios {ids:?} differ from the config's {:?}", cfg.scenarios)));
    }
    Ok(corpus)
}

pub fn load_selection(layout: &Layout) -> Result<SelectionResult> {
    SelectionResult::from_json(&std::fs::read(layout.selection())?)
}

/// Per-log style vectors from the normalized indicators and the selection.
pub fn load_styles(layout: &Layout) -> Result<BTreeMap<LogKey, StyleVector>> {
    log_styles(&read_indicators(&layout.indicators())?, &load_selection(layout)?)
}

pub fn write_rewards(layout: &Layout, rewards: &RewardModels) -> Result<()> {
    rewards.full.save(&layout.reward(REWARD_FULL))?;
    rewards.without_context.save(&layout.reward(REWARD_WB))?;
    rewards.evaluation.save(&layout.reward(REWARD_EVAL))?;
    write_json(&layout.reward_curves(), &rewards.curves)
}

pub fn load_rewards(layout: &Layout) -> Result<RewardModels> {
    Ok(RewardModels {
        full: RewardModel::load(&layout.reward(REWARD_FULL))?,
        without_context: RewardModel::load(&layout.reward(REWARD_WB))?,
        evaluation: RewardModel::load(&layout.reward(REWARD_EVAL))?,
        curves: read_json(&layout.reward_curves()).unwrap_or_default(),
    })
}

pub fn write_finetune(layout: &Layout, params: &PlannerParams, report: &FinetuneReport) -> Result<()> {
    let dir = layout.finetune_dir(&report.target_driver_id, report.variant);
    params.save(&dir.join("planner.json"))?;
    write_atomic(&dir.join("report.json"), &report.to_json())
}

/// Writes one JSONL log per run plus `metrics.json` listing every run.
pub fn write_rollouts(dir: &Path, runs: &[(TrajectoryLog, RolloutRecord)]) -> Result<()> {
    for (log, r) in runs {
        write_atomic(&dir.join(format!("{}_{}.jsonl", r.scenario_id, r.seed)), &write_log(log))?;
    }
    let records: Vec<&RolloutRecord> = runs.iter().map(|(_, r)| r).collect();
    write_json(&dir.join("metrics.json"), &records)
}

/// Every stage, every target and variant, pretrained rollouts and the
/// report, written under `layout`.
pub fn run_all(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let base = run_base(cfg, Some(layout))?;
    let scenarios = base.corpus.manifest.scenarios.clone();
    let seeds: Vec<u64> = (0..cfg.rollout.seeds).collect();
    let baseline = run_rollouts(&base.planner, &scenarios, &seeds, cfg.rollout.densify_rate, true)?;
    write_rollouts(&layout.rollout_dir("pretrained"), &baseline)?;
    let baseline = summarize(&baseline.into_iter().map(|(_, r)| r).collect::<Vec<_>>());
    for driver in targets(cfg, &base.styles) {
        let data = target_data(cfg, &base.corpus, &base.styles, &driver)?;
        let inputs = FinetuneInputs { rewards: &base.rewards, data: &data, scenarios: &scenarios };
        for variant in Variant::ALL {
            let (tuned, report) = run_finetune(cfg, &base.planner, &inputs, &driver, variant, Some(&baseline))?;
            write_finetune(layout, &tuned, &report)?;
        }
    }
    write_atomic(&layout.report(), report(layout)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_round_trip() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let partial = PipelineConfig::from_json(br#"{"seed": 3, "finetune": {"epochs": 2}}"#).unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.finetune.epochs, 2);
        assert_eq!(partial.finetune.eval_runs, 2);
        assert!(matches!(PipelineConfig::from_json(br#"{"sed": 3}"#), Err(Error::Config(_))));
        assert!(PipelineConfig::from_json(br#"{"scenarios": ["moon"]}"#).is_err());
    }

    #[test]
    fn auto_targets_prefer_atypical_styles() {
        let mut styles = BTreeMap::new();
        let mut put = |d: &str, run: u32, v: f64| {
            styles.insert((d.to_string(), "s".to_string(), run), StyleVector::new(vec![v; 10]).unwrap());
        };
        for run in 0..4 {
            put("a_mid", run, 0.5);
            put("b_mid", run, 0.45 + 0.025 * run as f64);
            put("c_low", run, 0.1);
            put("d_high", run, 0.95);
        }
        // overall mean 0.5125: d_high sits 0.4375 away, c_low 0.4125
        assert_eq!(auto_targets(&styles, 2), vec!["d_high".to_string(), "c_low".to_string()]);
        assert_eq!(auto_targets(&styles, 3)[2], "b_mid");
    }
}
