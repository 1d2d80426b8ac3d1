//! Style-guided fine-tuning of the planner head, and the open-loop style
//! alignment evaluation used to judge it.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mmdss, StyleVector, STYLE_DIM};
use crate::nn::{Adam, AdamConfig};
use crate::planner::{
    self, wta_loss, PlannerInput, PlannerParams, PlannerSample, ProposalSet, HEAD_OUTPUTS, PROPOSALS,
};
use crate::reward::{summed_loss_raw_grad, RewardModel};
use crate::seed;
use crate::trajectory::{segment_at, segment_starts, PlannedTrajectory, TrajectoryLog, TRAJECTORY_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Direct fine-tuning, no style loss.
    #[serde(rename = "dft")]
    Dft,
    /// Style loss from a reward model without context.
    #[serde(rename = "pdsa-wb")]
    PdsaWb,
    #[serde(rename = "pdsa")]
    Pdsa,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dft, Variant::PdsaWb, Variant::Pdsa];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dft => "dft",
            Variant::PdsaWb => "pdsa-wb",
            Variant::Pdsa => "pdsa",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Unknown { kind: "variant", id: s.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub variant: Variant,
    pub lambda_style: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub target_driver_id: String,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Pdsa,
            lambda_style: 1.0,
            learning_rate: 1e-4,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            target_driver_id: String::new(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_style >= 0.0 && self.lambda_style.is_finite()) {
            return Err(Error::Config("lambda_style must be finite and non-negative".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("learning_rate and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Style weight actually applied; always 0 for DFT.
    pub fn effective_lambda(&self) -> f64 {
        match self.variant {
            Variant::Dft => 0.0,
            _ => self.lambda_style,
        }
    }
}

/// One fine-tuning example of the target driver.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSample {
    pub input: PlannerInput,
    pub target: PlannedTrajectory,
    /// Style of the whole source log, not of this segment.
    pub style: StyleVector,
    pub context: Vec<f64>,
}

/// Samples every `stride` steps of a log whose global style is `style`.
pub fn finetune_samples(log: &TrajectoryLog, context: &[f64], style: &StyleVector, stride: usize) -> Result<Vec<FinetuneSample>> {
    segment_starts(log.len(), stride)
        .map(|i| {
            Ok(FinetuneSample {
                input: PlannerInput::from_log(log, i, context)?,
                target: segment_at(log, i).expect("start within range"),
                style: style.clone(),
                context: context.to_vec(),
            })
        })
        .collect()
}

/// Summed MSE between reward-model styles of every proposal and the target,
/// with the gradient w.r.t. each proposal's `(x, y, heading)` waypoints.
pub fn style_loss(set: &ProposalSet, target_style: &StyleVector, reward: &RewardModel, context: &[f64]) -> Result<(f64, Array2<f64>)> {
    if context.len() != reward.context_dim() {
        return Err(Error::DimensionMismatch { expected: reward.context_dim(), got: context.len() });
    }
    let mut raw = Array2::zeros((set.proposals.len(), TRAJECTORY_FEATURES));
    for (r, p) in set.proposals.iter().enumerate() {
        raw.row_mut(r).assign(&ArrayView1::from(&p.to_flat()));
    }
    let (per_row, grad) = summed_loss_raw_grad(reward, raw.view(), context, target_style.values())?;
    let loss: f64 = per_row.iter().sum();
    if !loss.is_finite() {
        return Err(Error::NonFinite("style loss".into()));
    }
    Ok((loss, grad))
}

/// [`style_loss`] with the gradient mapped onto one head output row.
pub fn style_loss_head(out: ArrayView1<f64>, target_style: &StyleVector, reward: &RewardModel, context: &[f64]) -> Result<(f64, Vec<f64>)> {
    let set = ProposalSet::from_head_output(out)?;
    let (loss, grad) = style_loss(&set, target_style, reward, context)?;
    let mut d = vec![0.0; HEAD_OUTPUTS];
    for k in 0..PROPOSALS {
        for c in 0..TRAJECTORY_FEATURES {
            let scale = if c % 3 == 2 { 1.0 } else { planner::POSITION_SCALE };
            d[k * TRAJECTORY_FEATURES + c] = grad[[k, c]] * scale;
        }
    }
    Ok((loss, d))
}

/// Per-epoch sample-mean losses. `style` is absent when the style loss is
/// not part of the objective.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub trajectory: Vec<f64>,
    pub style: Option<Vec<f64>>,
    pub total: Vec<f64>,
}

/// Closed-loop summary over a fixed set of scenario rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetySummary {
    pub rollouts: usize,
    pub success_rate: f64,
    pub collisions: usize,
    pub mean_driving_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub variant: Variant,
    pub target_driver_id: String,
    pub lambda_style: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub losses: EpochLosses,
    pub pre_mmdss: Option<f64>,
    pub post_mmdss: Option<f64>,
    pub pre_heldout_l2: Option<f64>,
    pub post_heldout_l2: Option<f64>,
    pub pre_safety: Option<SafetySummary>,
    pub post_safety: Option<SafetySummary>,
}

impl FinetuneReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

/// Fine-tunes the head only; the backbone is frozen and its latents are
/// computed once. Trajectory loss is the winner-take-all L2 plus the
/// confidence cross-entropy, as in pretraining.
pub fn finetune(
    planner: &PlannerParams,
    reward: Option<&RewardModel>,
    samples: &[FinetuneSample],
    config: &FinetuneConfig,
) -> Result<(PlannerParams, FinetuneReport)> {
    use rand::seq::SliceRandom;
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let lambda = config.effective_lambda();
    let reward = if lambda > 0.0 {
        Some(reward.ok_or_else(|| Error::Config(format!("variant {} needs a reward model", config.variant)))?)
    } else {
        None
    };
    let mut params = planner.clone();
    params.freeze_backbone();
    let inputs: Vec<&PlannerInput> = samples.iter().map(|s| &s.input).collect();
    let latents = params.latents(&inputs)?;
    let contexts: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| match (config.variant, reward) {
            (Variant::PdsaWb, Some(r)) => vec![0.0; r.context_dim()],
            _ => s.context.clone(),
        })
        .collect();

    let mut opt = Adam::new(AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() }, std::slice::from_ref(&params.head));
    let mut rng = seed::rng(seed::derive(config.seed, "finetune-shuffle"));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = EpochLosses { style: reward.map(|_| Vec::new()), ..Default::default() };
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut traj_sum, mut style_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let lat = latents.select(Axis(0), batch);
            let out = params.head_forward(lat.view());
            let targets: Vec<PlannedTrajectory> = batch.iter().map(|&i| samples[i].target.clone()).collect();
            let wta = wta_loss(out.view(), &targets)?;
            let mut d_out = wta.d_out;
            traj_sum += (wta.trajectory + wta.confidence) * batch.len() as f64;
            if let Some(r) = reward {
                let scale = lambda / batch.len() as f64;
                for (row, &i) in batch.iter().enumerate() {
                    let (loss, d) = style_loss_head(out.row(row), &samples[i].style, r, &contexts[i])?;
                    style_sum += loss;
                    for (dst, g) in d_out.row_mut(row).iter_mut().zip(d) {
                        *dst += scale * g;
                    }
                }
            }
            let (grad, _) = params.head.backward(lat.view(), d_out.view());
            planner::head_step(&mut params, &mut opt, &grad);
            if !params.head.is_finite() {
                return Err(Error::Divergence { epoch });
            }
        }
        let n = samples.len() as f64;
        losses.trajectory.push(traj_sum / n);
        if let Some(style) = losses.style.as_mut() {
            style.push(style_sum / n);
        }
        losses.total.push((traj_sum + lambda * style_sum) / n);
        if !(losses.total.last().is_some_and(|t| t.is_finite())) {
            return Err(Error::Divergence { epoch });
        }
    }
    let report = FinetuneReport {
        variant: config.variant,
        target_driver_id: config.target_driver_id.clone(),
        lambda_style: config.lambda_style,
        learning_rate: config.learning_rate,
        epochs: config.epochs,
        seed: config.seed,
        losses,
        pre_mmdss: None,
        post_mmdss: None,
        pre_heldout_l2: None,
        post_heldout_l2: None,
        pre_safety: None,
        post_safety: None,
    };
    Ok((params, report))
}

/// Mean winner-take-all L2 (the trajectory term without confidence) on
/// held-out pairs.
pub fn heldout_l2(params: &PlannerParams, samples: &[PlannerSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let inputs: Vec<&PlannerInput> = samples.iter().map(|s| &s.input).collect();
    let out = params.head_forward(params.latents(&inputs)?.view());
    let targets: Vec<PlannedTrajectory> = samples.iter().map(|s| s.target.clone()).collect();
    Ok(wta_loss(out.view(), &targets)?.trajectory)
}

/// Style of the trajectories a planner selects along a log, open loop: the
/// mean reward-model prediction over the selected trajectories at every
/// `stride`-th sample.
pub fn planned_style(params: &PlannerParams, reward: &RewardModel, log: &TrajectoryLog, context: &[f64], stride: usize) -> Result<StyleVector> {
    let starts: Vec<usize> = segment_starts(log.len(), stride.max(1)).collect();
    if starts.is_empty() {
        return Err(Error::TooFewSamples { needed: crate::trajectory::SEGMENT_SPAN, got: log.len() });
    }
    let inputs = starts.iter().map(|&i| PlannerInput::from_log(log, i, context)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PlannerInput> = inputs.iter().collect();
    let out = params.head_forward(params.latents(&refs)?.view());
    let selected = out
        .rows()
        .into_iter()
        .map(|row| Ok(planner::select_best(&ProposalSet::from_head_output(row)?).1))
        .collect::<Result<Vec<_>>>()?;
    let ctx = if reward.context_dim() == 0 { &[][..] } else { context };
    let preds = reward.predict(&selected, ctx)?;
    let mut mean = vec![0.0; STYLE_DIM];
    for p in &preds {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / preds.len() as f64;
        }
    }
    StyleVector::new(mean)
}

/// One held-out log with its scenario context and ground-truth style.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub log: TrajectoryLog,
    pub context: Vec<f64>,
    pub style: StyleVector,
}

/// MMDSS between the planner's styles on the held-out logs and the logs'
/// ground-truth styles.
pub fn evaluate_style_alignment(params: &PlannerParams, reward: &RewardModel, eval: &[EvalItem], stride: usize) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let planned = eval
        .iter()
        .map(|e| Ok(planned_style(params, reward, &e.log, &e.context, stride)?.values().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<Vec<f64>> = eval.iter().map(|e| e.style.values().to_vec()).collect();
    mmdss(&planned, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::{init_params, FeatureNormStats};
    use crate::trajectory::{EgoState, LeadObservation, Waypoint, WAYPOINTS};

    fn reward_model(seed: u64, context_dim: usize) -> RewardModel {
        let dim = TRAJECTORY_FEATURES + context_dim;
        RewardModel {
            params: init_params(seed, context_dim),
            norm: FeatureNormStats { min: vec![-50.0; dim], max: vec![50.0; dim] },
        }
    }

    fn input() -> PlannerInput {
        let s = EgoState { t: 0.0, x: 0.0, y: 0.0, heading: 0.0, speed: 10.0, lon_accel: 0.0, throttle: 0.0, brake: 0.0, steer: 0.0, lane_index: 0 };
        PlannerInput::new(&[s], LeadObservation::ABSENT, &[0.3; 8]).unwrap()
    }

    fn straight(speed: f64) -> PlannedTrajectory {
        let mut pts = [Waypoint::default(); WAYPOINTS];
        for (i, p) in pts.iter_mut().enumerate() {
            p.x = speed * 0.5 * i as f64;
        }
        PlannedTrajectory::new(pts)
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{v}\""));
        }
        assert!("pdsa_wb".parse::<Variant>().is_err());
    }

    #[test]
    fn style_loss_zero_at_target() {
        let r = reward_model(1, 8);
        let set = ProposalSet { proposals: vec![straight(10.0); PROPOSALS], confidences: vec![0.0; PROPOSALS] };
        let target = StyleVector::new(r.predict(&[straight(10.0)], &[0.3; 8]).unwrap()[0].clone()).unwrap();
        let (loss, grad) = style_loss(&set, &target, &r, &[0.3; 8]).unwrap();
        assert!(loss.abs() < 1e-24);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn style_loss_sum_bound() {
        let r = reward_model(2, 8);
        let set = ProposalSet {
            proposals: (0..PROPOSALS).map(|k| straight(k as f64)).collect(),
            confidences: vec![0.0; PROPOSALS],
        };
        let target = StyleVector::new(vec![0.5; STYLE_DIM]).unwrap();
        let (loss, _) = style_loss(&set, &target, &r, &[0.3; 8]).unwrap();
        let per: Vec<f64> = r
            .predict(&set.proposals, &[0.3; 8])
            .unwrap()
            .iter()
            .map(|p| p.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>() / STYLE_DIM as f64)
            .collect();
        let min = per.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(loss >= PROPOSALS as f64 * min);
        assert!((loss - per.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn dft_never_needs_a_reward_model() {
        let p = PlannerParams::init(1, 8);
        let style = StyleVector::new(vec![0.5; STYLE_DIM]).unwrap();
        let samples = vec![FinetuneSample { input: input(), target: straight(10.0), style, context: vec![0.3; 8] }];
        let cfg = FinetuneConfig { variant: Variant::Dft, epochs: 3, ..Default::default() };
        let (q, report) = finetune(&p, None, &samples, &cfg).unwrap();
        assert_eq!(q.backbone, p.backbone);
        assert!(report.losses.style.is_none());
        assert_eq!(report.losses.trajectory, report.losses.total);
        let cfg = FinetuneConfig { variant: Variant::Pdsa, epochs: 1, ..Default::default() };
        assert!(matches!(finetune(&p, None, &samples, &cfg), Err(Error::Config(_))));
        let cfg = FinetuneConfig { lambda_style: -1.0, ..Default::default() };
        assert!(finetune(&p, None, &samples, &cfg).is_err());
    }
}
