//! Learned style reward: an MLP mapping an 8-point trajectory segment (plus
//! an optional scenario context vector) to a 10-dimensional style vector.
//!
//! Architecture: `in -> 256 -> ReLU -> dropout -> 256 -> ReLU -> dropout -> 10`
//! with `in = 24 + context_dim`. Inputs are min-max normalized with
//! statistics from the training corpus and clamped to `[0, 1]`.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{StyleVector, STYLE_DIM};
use crate::nn::{Adam, AdamConfig, DenseGrad, Dropout, LayerRecord, Mlp};
use crate::seed;
use crate::trajectory::{PlannedTrajectory, TRAJECTORY_FEATURES};

pub const HIDDEN: usize = 256;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Per-feature min and max over the training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureNormStats {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut it = rows.into_iter();
        let first = it.next().ok_or(Error::EmptyDistribution)?;
        let (mut min, mut max) = (first.to_vec(), first.to_vec());
        for row in it {
            if row.len() != min.len() {
                return Err(Error::DimensionMismatch { expected: min.len(), got: row.len() });
            }
            for ((lo, hi), x) in min.iter_mut().zip(max.iter_mut()).zip(row) {
                *lo = lo.min(*x);
                *hi = hi.max(*x);
            }
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Normalized features and `d normalized / d raw` per feature. Degenerate
    /// features map to 0.5; clamped and degenerate features have zero slope.
    pub fn normalize_with_slope(&self, raw: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if raw.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: raw.len() });
        }
        let mut out = Vec::with_capacity(raw.len());
        let mut slope = Vec::with_capacity(raw.len());
        for ((&x, &lo), &hi) in raw.iter().zip(&self.min).zip(&self.max) {
            if hi > lo {
                let v = (x - lo) / (hi - lo);
                out.push(v.clamp(0.0, 1.0));
                slope.push(if (0.0..=1.0).contains(&v) { 1.0 / (hi - lo) } else { 0.0 });
            } else {
                out.push(0.5);
                slope.push(0.0);
            }
        }
        Ok((out, slope))
    }

    pub fn normalize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        Ok(self.normalize_with_slope(raw)?.0)
    }
}

/// Flattened `(x, y, heading) x 8` followed by the context vector.
pub fn raw_input(segment: &PlannedTrajectory, context: &[f64]) -> Vec<f64> {
    let mut v = segment.to_flat().to_vec();
    v.extend_from_slice(context);
    v
}

/// Builds the normalized network input for one segment.
pub fn normalize_input(
    segment: &PlannedTrajectory,
    context: &[f64],
    stats: &FeatureNormStats,
    context_dim: usize,
) -> Result<Vec<f64>> {
    if context.len() != context_dim {
        return Err(Error::DimensionMismatch { expected: context_dim, got: context.len() });
    }
    stats.normalize(&raw_input(segment, context))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weights and biases of the three reward-network layers.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardNetParams {
    pub context_dim: usize,
    pub net: Mlp,
}

impl RewardNetParams {
    pub fn in_dim(&self) -> usize {
        TRAJECTORY_FEATURES + self.context_dim
    }

    fn check(&self) -> Result<()> {
        if !self.net.is_finite() {
            return Err(Error::NonFinite("reward network parameters".into()));
        }
        Ok(())
    }
}

pub fn init_params(seed: u64, context_dim: usize) -> RewardNetParams {
    let mut rng = seed::rng(seed::derive(seed, "reward-init"));
    let in_dim = TRAJECTORY_FEATURES + context_dim;
    RewardNetParams { context_dim, net: Mlp::uniform(&[in_dim, HIDDEN, HIDDEN, STYLE_DIM], false, &mut rng) }
}

/// Forward pass over a batch of normalized feature rows.
pub fn forward_batch(params: &RewardNetParams, features: ArrayView2<f64>, mode: Mode, seed: u64, dropout_p: f64) -> Result<Array2<f64>> {
    params.check()?;
    match mode {
        Mode::Eval => Ok(params.net.forward(features, None)?.0),
        Mode::Train => {
            let mut rng = seed::rng(seed);
            Ok(params.net.forward(features, Some(Dropout { p: dropout_p, rng: &mut rng }))?.0)
        }
    }
}

/// Single-sample forward. Train mode applies dropout (p = 0.1) drawn from
/// `seed`; eval mode ignores the seed.
pub fn forward(params: &RewardNetParams, features: &[f64], mode: Mode, seed: u64) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, features.len()), features)
        .map_err(|e| Error::InvalidValue(e.to_string()))?;
    Ok(forward_batch(params, x, mode, seed, TrainConfig::default().dropout_p)?.row(0).to_vec())
}

/// Eval-mode gradients for one sample.
#[derive(Debug, Clone)]
pub struct Backward {
    pub grads: Vec<DenseGrad>,
    pub grad_input: Vec<f64>,
    pub loss: f64,
}

/// Mean squared error over the 10 outputs and its exact gradients with
/// respect to every parameter and to the input features.
pub fn backward(params: &RewardNetParams, features: &[f64], target: &[f64]) -> Result<Backward> {
    params.check()?;
    if target.len() != STYLE_DIM {
        return Err(Error::DimensionMismatch { expected: STYLE_DIM, got: target.len() });
    }
    let x = ArrayView2::from_shape((1, features.len()), features)
        .map_err(|e| Error::InvalidValue(e.to_string()))?;
    let (y, cache) = params.net.forward(x, None)?;
    let t = ArrayView2::from_shape((1, STYLE_DIM), target).expect("checked length");
    let (per_row, dy) = crate::nn::mse_rows(&y, &t.to_owned());
    let loss = per_row[0];
    if !loss.is_finite() {
        return Err(Error::NonFinite("reward output layer".into()));
    }
    let (grads, dx) = params.net.backward(&cache, dy.view())?;
    Ok(Backward { grads, grad_input: dx.row(0).to_vec(), loss })
}

/// Loss summed over rows of raw (unnormalized) trajectories sharing one
/// context and target, with the gradient w.r.t. the raw trajectory features.
/// This is the path style gradients take into a planner.
pub fn summed_loss_raw_grad(
    model: &RewardModel,
    raw_trajectories: ArrayView2<f64>,
    context: &[f64],
    target: &[f64],
) -> Result<(Vec<f64>, Array2<f64>)> {
    let rows = raw_trajectories.nrows();
    let in_dim = model.params.in_dim();
    let mut x = Array2::zeros((rows, in_dim));
    let mut slope = Array2::zeros((rows, TRAJECTORY_FEATURES));
    for (r, traj) in raw_trajectories.rows().into_iter().enumerate() {
        let mut raw = traj.to_vec();
        raw.extend_from_slice(context);
        let (n, s) = model.norm.normalize_with_slope(&raw)?;
        x.row_mut(r).assign(&ndarray::ArrayView1::from(&n));
        slope.row_mut(r).assign(&ndarray::ArrayView1::from(&s[..TRAJECTORY_FEATURES]));
    }
    let (y, cache) = model.params.net.forward(x.view(), None)?;
    let t = Array2::from_shape_fn((rows, STYLE_DIM), |(_, j)| target[j]);
    let diff = &y - &t;
    let per_row: Vec<f64> = diff.rows().into_iter().map(|r| r.mapv(|d| d * d).sum() / STYLE_DIM as f64).collect();
    if per_row.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("style loss".into()));
    }
    // d(sum_r mse_r)/dy = 2 (y - t) / dim
    let dy = diff * (2.0 / STYLE_DIM as f64);
    let (_, dx) = model.params.net.backward(&cache, dy.view())?;
    let grad = dx.slice(ndarray::s![.., ..TRAJECTORY_FEATURES]).to_owned() * slope;
    Ok((per_row, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_p: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 40,
            dropout_p: 0.1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

/// One training example. `group` identifies the source trajectory so that
/// the train/validation split never separates segments of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSample {
    pub features: Vec<f64>,
    pub target: StyleVector,
    pub group: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
}

/// 80/20 split by group; falls back to validating on the training set when
/// there is a single group.
pub fn split_by_group(samples: &[RewardSample], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut groups: Vec<u64> = samples.iter().map(|s| s.group).collect();
    groups.sort_unstable();
    groups.dedup();
    if groups.len() < 2 {
        let all: Vec<usize> = (0..samples.len()).collect();
        return (all.clone(), all);
    }
    groups.shuffle(&mut seed::rng(seed::derive(seed, "split")));
    let n_val = ((groups.len() as f64 * 0.2).round() as usize).clamp(1, groups.len() - 1);
    let val_groups = &groups[..n_val];
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        if val_groups.contains(&s.group) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

fn matrices(samples: &[RewardSample], idx: &[usize], in_dim: usize) -> (Array2<f64>, Array2<f64>) {
    let x = Array2::from_shape_fn((idx.len(), in_dim), |(r, c)| samples[idx[r]].features[c]);
    let t = Array2::from_shape_fn((idx.len(), STYLE_DIM), |(r, c)| samples[idx[r]].target.values()[c]);
    (x, t)
}

/// Eval-mode mean squared error over the given samples.
pub fn evaluate_mse(params: &RewardNetParams, samples: &[RewardSample], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for chunk in idx.chunks(1024) {
        let (x, t) = matrices(samples, chunk, params.in_dim());
        let (y, _) = params.net.forward(x.view(), None)?;
        total += crate::nn::mse_rows(&y, &t).0.sum();
    }
    Ok(total / idx.len() as f64)
}

/// Trains a fresh network with Adam on normalized features. Deterministic
/// for a given config seed.
pub fn train(samples: &[RewardSample], context_dim: usize, config: &TrainConfig) -> Result<(RewardNetParams, TrainingCurve)> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if !(0.0..1.0).contains(&config.dropout_p) {
        return Err(Error::Config(format!("dropout_p = {}", config.dropout_p)));
    }
    let mut params = init_params(config.seed, context_dim);
    let in_dim = params.in_dim();
    if let Some(bad) = samples.iter().find(|s| s.features.len() != in_dim) {
        return Err(Error::DimensionMismatch { expected: in_dim, got: bad.features.len() });
    }
    let (train_idx, val_idx) = split_by_group(samples, config.seed);
    let mut opt = Adam::new(config.adam(), &params.net.layers);
    let mut order_rng = seed::rng(seed::derive(config.seed, "reward-order"));
    let mut dropout_rng = seed::rng(seed::derive(config.seed, "reward-dropout"));
    let mut curve = TrainingCurve::default();
    let mut order = train_idx.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let (x, t) = matrices(samples, batch, in_dim);
            let dropout = Some(Dropout { p: config.dropout_p, rng: &mut dropout_rng });
            let (y, cache) = params.net.forward(x.view(), dropout)?;
            let (per_row, dy) = crate::nn::mse_rows(&y, &t);
            if !per_row.iter().all(|l| l.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            let (grads, _) = params.net.backward(&cache, dy.view()).map_err(|_| Error::Divergence { epoch })?;
            opt.step(&mut params.net.layers, &grads);
        }
        let tr = evaluate_mse(&params, samples, &train_idx)?;
        let va = evaluate_mse(&params, samples, &val_idx)?;
        if !(tr.is_finite() && va.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        curve.train_mse.push(tr);
        curve.val_mse.push(va);
    }
    Ok((params, curve))
}

/// Network plus the normalization it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub params: RewardNetParams,
    pub norm: FeatureNormStats,
}

/// Raw training example before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRewardSample {
    pub segment: PlannedTrajectory,
    pub context: Vec<f64>,
    pub target: StyleVector,
    pub group: u64,
}

impl RewardModel {
    /// Fits normalization statistics on the corpus and trains a network.
    pub fn fit(raw: &[RawRewardSample], context_dim: usize, config: &TrainConfig) -> Result<(Self, TrainingCurve)> {
        let rows: Vec<Vec<f64>> = raw
            .iter()
            .map(|s| {
                if s.context.len() != context_dim {
                    return Err(Error::DimensionMismatch { expected: context_dim, got: s.context.len() });
                }
                Ok(raw_input(&s.segment, &s.context))
            })
            .collect::<Result<_>>()?;
        let norm = FeatureNormStats::fit(rows.iter().map(Vec::as_slice))?;
        let samples = rows
            .iter()
            .zip(raw)
            .map(|(r, s)| Ok(RewardSample { features: norm.normalize(r)?, target: s.target.clone(), group: s.group }))
            .collect::<Result<Vec<_>>>()?;
        let (params, curve) = train(&samples, context_dim, config)?;
        Ok((Self { params, norm }, curve))
    }

    pub fn context_dim(&self) -> usize {
        self.params.context_dim
    }

    /// Eval-mode style predictions for a batch of segments sharing a context.
    pub fn predict(&self, segments: &[PlannedTrajectory], context: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut x = Array2::zeros((segments.len(), self.params.in_dim()));
        for (r, seg) in segments.iter().enumerate() {
            let f = normalize_input(seg, context, &self.norm, self.params.context_dim)?;
            x.row_mut(r).assign(&ndarray::ArrayView1::from(&f));
        }
        let y = forward_batch(&self.params, x.view(), Mode::Eval, 0, 0.0)?;
        Ok(y.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            context_dim: self.params.context_dim,
            norm_stats: self.norm.clone(),
            layers: self.params.net.layers.iter().map(LayerRecord::from).collect(),
        };
        let mut out = serde_json::to_vec(&ck).expect("checkpoint serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let probe: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let found = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { expected: CHECKPOINT_VERSION, found });
        }
        let ck: Checkpoint = serde_json::from_value(probe).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let layers = ck.layers.into_iter().map(crate::nn::Dense::try_from).collect::<Result<Vec<_>>>()?;
        let in_dim = TRAJECTORY_FEATURES + ck.context_dim;
        let shapes: Vec<(usize, usize)> = layers.iter().map(|l| (l.inputs(), l.outputs())).collect();
        if shapes != [(in_dim, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, STYLE_DIM)] {
            return Err(Error::CorruptCheckpoint(format!("unexpected layer shapes {shapes:?}")));
        }
        if ck.norm_stats.min.len() != in_dim || ck.norm_stats.max.len() != in_dim {
            return Err(Error::CorruptCheckpoint("norm_stats length".into()));
        }
        Ok(Self {
            params: RewardNetParams { context_dim: ck.context_dim, net: Mlp { layers, relu_output: false } },
            norm: ck.norm_stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    context_dim: usize,
    norm_stats: FeatureNormStats,
    layers: Vec<LayerRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Waypoint, WAYPOINTS};

    fn segment(scale: f64) -> PlannedTrajectory {
        let mut pts = [Waypoint::default(); WAYPOINTS];
        for (j, p) in pts.iter_mut().enumerate() {
            *p = Waypoint { x: scale * j as f64, y: 0.1 * j as f64, heading: 0.01 * j as f64 };
        }
        PlannedTrajectory::new(pts)
    }

    #[test]
    fn normalization_rules() {
        let stats = FeatureNormStats { min: vec![0.0, 1.0, 2.0], max: vec![10.0, 1.0, 4.0] };
        let (v, s) = stats.normalize_with_slope(&[0.0, 1.0, 4.0]).unwrap();
        assert_eq!(v, vec![0.0, 0.5, 1.0]);
        assert_eq!(s, vec![0.1, 0.0, 0.5]);
        let (v, s) = stats.normalize_with_slope(&[12.0, 3.0, 4.8]).unwrap();
        assert_eq!(v, vec![1.0, 0.5, 1.0]);
        assert_eq!(s, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn context_dimension_is_checked() {
        let seg = segment(1.0);
        let stats = FeatureNormStats { min: vec![0.0; 26], max: vec![1.0; 26] };
        assert!(normalize_input(&seg, &[0.0], &stats, 2).is_err());
        assert!(normalize_input(&seg, &[0.0, 1.0], &stats, 2).is_ok());
    }

    #[test]
    fn dead_network_outputs_bias() {
        let mut p = init_params(1, 0);
        for l in &mut p.net.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        let v: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        p.net.layers[2].b = ndarray::Array1::from(v.clone());
        let out = forward(&p, &[0.3; 24], Mode::Eval, 0).unwrap();
        assert_eq!(out, v);
        let out = forward(&p, &[0.9; 24], Mode::Train, 5).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn eval_is_deterministic_and_train_replays_by_seed() {
        let p = init_params(4, 0);
        let f = vec![0.4; 24];
        assert_eq!(forward(&p, &f, Mode::Eval, 1).unwrap(), forward(&p, &f, Mode::Eval, 2).unwrap());
        let a = forward(&p, &f, Mode::Train, 9).unwrap();
        let b = forward(&p, &f, Mode::Train, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, forward(&p, &f, Mode::Train, 10).unwrap());
    }

    #[test]
    fn init_params_contract() {
        let a = init_params(7, 8);
        assert_eq!(a, init_params(7, 8));
        assert_ne!(a, init_params(8, 8));
        for l in &a.net.layers {
            let bound = 1.0 / (l.inputs() as f64).sqrt();
            assert!(l.w.iter().all(|w| w.is_finite() && w.abs() <= bound));
            assert!(l.b.iter().all(|b| *b == 0.0));
        }
        assert_eq!(a.in_dim(), 32);
    }

    #[test]
    fn zero_loss_has_zero_gradients() {
        let p = init_params(3, 0);
        let f = vec![0.2; 24];
        let y = forward(&p, &f, Mode::Eval, 0).unwrap();
        let b = backward(&p, &f, &y).unwrap();
        assert_eq!(b.loss, 0.0);
        assert!(b.grads.iter().all(|g| g.w.iter().chain(g.b.iter()).all(|v| *v == 0.0)));
        assert!(b.grad_input.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let mut p = init_params(3, 0);
        p.net.layers[1].w[[0, 0]] = f64::NAN;
        assert!(matches!(forward(&p, &[0.0; 24], Mode::Eval, 0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn constant_target_is_learned() {
        let target = StyleVector::new(vec![0.3, 0.7, 0.5, 0.1, 0.9, 0.2, 0.4, 0.6, 0.8, 0.5]).unwrap();
        let raw: Vec<RawRewardSample> = (0..512)
            .map(|i| RawRewardSample { segment: segment(1.0 + i as f64 * 0.01), context: vec![], target: target.clone(), group: i / 8 })
            .collect();
        let cfg = TrainConfig { epochs: 200, seed: 2, ..Default::default() };
        let (_, curve) = RewardModel::fit(&raw, 0, &cfg).unwrap();
        let best = curve.val_mse.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(best < 1e-4, "best validation MSE {best}");
    }

    #[test]
    fn split_keeps_groups_together() {
        let t = StyleVector::new(vec![0.0; 10]).unwrap();
        let s: Vec<RewardSample> = (0..50).map(|i| RewardSample { features: vec![], target: t.clone(), group: i / 5 }).collect();
        let (tr, va) = split_by_group(&s, 3);
        assert_eq!(tr.len() + va.len(), 50);
        assert_eq!(va.len(), 10);
        for &v in &va {
            assert!(tr.iter().all(|&t| s[t].group != s[v].group));
        }
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let model = RewardModel {
            params: init_params(5, 8),
            norm: FeatureNormStats { min: vec![-1.0 / 3.0; 32], max: vec![0.1 + 0.2; 32] },
        };
        let bytes = model.to_json();
        let back = RewardModel::from_json(&bytes).unwrap();
        assert_eq!(back, model);
        assert!(matches!(RewardModel::from_json(&bytes[..bytes.len() / 2]), Err(Error::CorruptCheckpoint(_))));
        let text = String::from_utf8(bytes).unwrap().replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(RewardModel::from_json(text.as_bytes()), Err(Error::VersionMismatch { found: 2, .. })));
    }
}
