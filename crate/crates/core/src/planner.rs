//! Multi-proposal toy planner: a frozen-able feature backbone and a single
//! linear head that emits 20 eight-point trajectories with confidence logits.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Dense, DenseGrad, LayerRecord, Mlp};
use crate::seed;
use crate::trajectory::{
    segment_at, EgoState, LeadObservation, PlannedTrajectory, TrajectoryLog, TRAJECTORY_FEATURES, WAYPOINTS,
};

pub const PROPOSALS: usize = 20;
pub const HISTORY: usize = 4;
pub const STATE_FEATURES: usize = 5;
pub const LEAD_FEATURES: usize = 3;
pub const BACKBONE_HIDDEN: usize = 128;
pub const LATENT: usize = 64;
pub const HEAD_OUTPUTS: usize = PROPOSALS * TRAJECTORY_FEATURES + PROPOSALS;
/// Head outputs for x and y are in units of this many metres.
pub const POSITION_SCALE: f64 = 10.0;
pub const CHECKPOINT_VERSION: u32 = 1;

const SPEED_SCALE: f64 = 10.0;
const ACCEL_SCALE: f64 = 3.0;
const GAP_SCALE: f64 = 50.0;
const ABSENT_GAP: f64 = 150.0;

/// Number of planner input features for a context of `context_dim`.
///
/// Layout: 4 history states oldest first, each `(x/10, y/10, heading,
/// speed/10, accel/3)` relative to the current pose; then `(present,
/// gap/50, closing speed/10)` for the lead (an absent lead reads as a 150 m
/// gap); then the context vector.
pub const fn input_dim(context_dim: usize) -> usize {
    HISTORY * STATE_FEATURES + LEAD_FEATURES + context_dim
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerInput {
    features: Vec<f64>,
    speed: f64,
}

impl PlannerInput {
    /// `history` is oldest first and ends with the current state; fewer than
    /// four states are padded by repeating the oldest.
    pub fn new(history: &[EgoState], lead: LeadObservation, context: &[f64]) -> Result<Self> {
        let Some(current) = history.last() else {
            return Err(Error::InvalidValue("planner input needs at least one state".into()));
        };
        if history.len() > HISTORY {
            return Err(Error::DimensionMismatch { expected: HISTORY, got: history.len() });
        }
        let origin = current.pose();
        let mut features = Vec::with_capacity(input_dim(context.len()));
        let pad = HISTORY - history.len();
        for k in 0..HISTORY {
            let s = &history[k.saturating_sub(pad)];
            let rel = origin.relative(s.pose());
            features.extend([
                rel.x / POSITION_SCALE,
                rel.y / POSITION_SCALE,
                rel.heading,
                s.speed / SPEED_SCALE,
                s.lon_accel / ACCEL_SCALE,
            ]);
        }
        if lead.present {
            features.extend([1.0, lead.gap / GAP_SCALE, lead.rel_speed / SPEED_SCALE]);
        } else {
            features.extend([0.0, ABSENT_GAP / GAP_SCALE, 0.0]);
        }
        features.extend_from_slice(context);
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("planner input".into()));
        }
        Ok(Self { features, speed: current.speed })
    }

    /// Input at sample `index` of a recorded log.
    pub fn from_log(log: &TrajectoryLog, index: usize, context: &[f64]) -> Result<Self> {
        if index >= log.len() {
            return Err(Error::InvalidValue(format!("index {index} beyond log of {}", log.len())));
        }
        let lo = (index + 1).saturating_sub(HISTORY);
        Self::new(&log.states()[lo..=index], log.lead()[index], context)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Ego speed at planning time.
    pub fn speed(&self) -> f64 {
        self.speed
    }
}

/// Twenty proposals relative to the ego pose, with confidence logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub proposals: Vec<PlannedTrajectory>,
    pub confidences: Vec<f64>,
}

impl ProposalSet {
    /// Decodes one row of head output.
    pub fn from_head_output(out: ArrayView1<f64>) -> Result<Self> {
        if out.len() != HEAD_OUTPUTS {
            return Err(Error::DimensionMismatch { expected: HEAD_OUTPUTS, got: out.len() });
        }
        let proposals = (0..PROPOSALS)
            .map(|k| PlannedTrajectory::from_flat(&proposal_flat(out, k)))
            .collect::<Result<Vec<_>>>()?;
        let confidences = out.slice(s![PROPOSALS * TRAJECTORY_FEATURES..]).to_vec();
        Ok(Self { proposals, confidences })
    }

    /// Mean pairwise endpoint distance; a diversity diagnostic.
    pub fn spread(&self) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for i in 0..self.proposals.len() {
            for j in i + 1..self.proposals.len() {
                let (a, b) = (self.proposals[i].endpoint(), self.proposals[j].endpoint());
                total += (a.x - b.x).hypot(a.y - b.y);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }
}

/// Scale applied to head output coordinate `c` of a proposal.
fn coord_scale(c: usize) -> f64 {
    if c % 3 == 2 {
        1.0
    } else {
        POSITION_SCALE
    }
}

/// Proposal `k` of a head output row in trajectory units.
pub fn proposal_flat(out: ArrayView1<f64>, k: usize) -> [f64; TRAJECTORY_FEATURES] {
    let mut flat = [0.0; TRAJECTORY_FEATURES];
    for (c, v) in flat.iter_mut().enumerate() {
        *v = out[k * TRAJECTORY_FEATURES + c] * coord_scale(c);
    }
    flat
}

/// Index of the highest-confidence proposal; ties go to the lowest index.
pub fn select_best(set: &ProposalSet) -> (usize, PlannedTrajectory) {
    let mut best = 0;
    for (i, c) in set.confidences.iter().enumerate() {
        if *c > set.confidences[best] {
            best = i;
        }
    }
    (best, set.proposals[best].clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerParams {
    pub context_dim: usize,
    pub backbone: Mlp,
    pub head: Dense,
    pub backbone_trainable: bool,
    pub head_trainable: bool,
}

impl PlannerParams {
    pub fn init(seed: u64, context_dim: usize) -> Self {
        let mut rng = seed::rng(seed::derive(seed, "planner-init"));
        let backbone = Mlp::uniform(&[input_dim(context_dim), BACKBONE_HIDDEN, LATENT], true, &mut rng);
        let head = Dense::uniform(LATENT, HEAD_OUTPUTS, &mut rng);
        Self { context_dim, backbone, head, backbone_trainable: true, head_trainable: true }
    }

    pub fn input_dim(&self) -> usize {
        input_dim(self.context_dim)
    }

    pub fn freeze_backbone(&mut self) {
        self.backbone_trainable = false;
    }

    fn check_input(&self, input: &PlannerInput) -> Result<()> {
        if input.features.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: input.features.len() });
        }
        Ok(())
    }

    /// Backbone latents for a batch of inputs.
    pub fn latents(&self, inputs: &[&PlannerInput]) -> Result<Array2<f64>> {
        Ok(self.backbone.forward(stack(self, inputs)?.view(), None)?.0)
    }

    pub fn head_forward(&self, latents: ArrayView2<f64>) -> Array2<f64> {
        self.head.forward(latents)
    }

    pub fn is_finite(&self) -> bool {
        self.backbone.is_finite() && self.head.is_finite()
    }
}

fn stack(params: &PlannerParams, inputs: &[&PlannerInput]) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((inputs.len(), params.input_dim()));
    for (r, inp) in inputs.iter().enumerate() {
        params.check_input(inp)?;
        x.row_mut(r).assign(&ArrayView1::from(&inp.features));
    }
    Ok(x)
}

pub fn predict(params: &PlannerParams, input: &PlannerInput) -> Result<ProposalSet> {
    let latent = params.latents(&[input])?;
    let out = params.head_forward(latent.view());
    ProposalSet::from_head_output(out.row(0))
}

/// Mean over points of the squared `(x, y, heading)` error.
pub fn proposal_error(flat: &[f64; TRAJECTORY_FEATURES], target: &[f64; TRAJECTORY_FEATURES]) -> f64 {
    flat.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / WAYPOINTS as f64
}

/// Mean Euclidean point error in the plane.
pub fn ade(a: &PlannedTrajectory, b: &PlannedTrajectory) -> f64 {
    a.points.iter().zip(&b.points).map(|(p, q)| (p.x - q.x).hypot(p.y - q.y)).sum::<f64>() / WAYPOINTS as f64
}

/// Batch-mean winner-take-all loss and its gradient w.r.t. head outputs.
#[derive(Debug, Clone)]
pub struct WtaLoss {
    pub trajectory: f64,
    pub confidence: f64,
    pub winners: Vec<usize>,
    pub d_out: Array2<f64>,
}

/// Winner = proposal with the smallest error; only it gets waypoint
/// gradients, and the confidences get cross-entropy toward it.
pub fn wta_loss(out: ArrayView2<f64>, targets: &[PlannedTrajectory]) -> Result<WtaLoss> {
    let rows = out.nrows();
    if rows != targets.len() || out.ncols() != HEAD_OUTPUTS {
        return Err(Error::DimensionMismatch { expected: rows, got: targets.len() });
    }
    let scale = 1.0 / rows as f64;
    let mut d_out = Array2::zeros((rows, HEAD_OUTPUTS));
    let mut trajectory = 0.0;
    let mut confidence = 0.0;
    let mut winners = Vec::with_capacity(rows);
    for (r, target) in targets.iter().enumerate() {
        let row = out.row(r);
        let t = target.to_flat();
        let errors: Vec<f64> = (0..PROPOSALS).map(|k| proposal_error(&proposal_flat(row, k), &t)).collect();
        let mut win = 0;
        for (k, e) in errors.iter().enumerate() {
            if *e < errors[win] {
                win = k;
            }
        }
        trajectory += errors[win];
        let flat = proposal_flat(row, win);
        for c in 0..TRAJECTORY_FEATURES {
            d_out[[r, win * TRAJECTORY_FEATURES + c]] =
                scale * 2.0 * (flat[c] - t[c]) / WAYPOINTS as f64 * coord_scale(c);
        }
        let logits = row.slice(s![PROPOSALS * TRAJECTORY_FEATURES..]);
        let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        confidence += z.ln() + m - logits[win];
        for k in 0..PROPOSALS {
            let p = (logits[k] - m).exp() / z;
            let onehot = if k == win { 1.0 } else { 0.0 };
            d_out[[r, PROPOSALS * TRAJECTORY_FEATURES + k]] = scale * (p - onehot);
        }
        winners.push(win);
    }
    let loss = WtaLoss { trajectory: trajectory * scale, confidence: confidence * scale, winners, d_out };
    if !(loss.trajectory.is_finite() && loss.confidence.is_finite()) {
        return Err(Error::NonFinite("planner loss".into()));
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, batch_size: 64, epochs: 150, seed: 0 }
    }
}

/// One (input, ground-truth trajectory) imitation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerSample {
    pub input: PlannerInput,
    pub target: PlannedTrajectory,
}

/// Per-epoch mean trajectory and confidence losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainCurve {
    pub trajectory: Vec<f64>,
    pub confidence: Vec<f64>,
}

/// Winner-take-all imitation with Adam on every trainable part.
pub fn pretrain(mut params: PlannerParams, corpus: &[PlannerSample], config: &PretrainConfig) -> Result<(PlannerParams, PretrainCurve)> {
    use rand::seq::SliceRandom;
    if corpus.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let adam_cfg = AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() };
    let mut backbone_opt = Adam::new(adam_cfg, &params.backbone.layers);
    let mut head_opt = Adam::new(adam_cfg, std::slice::from_ref(&params.head));
    let mut rng = seed::rng(seed::derive(config.seed, "planner-shuffle"));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut curve = PretrainCurve::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut traj, mut conf) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size.max(1)) {
            let inputs: Vec<&PlannerInput> = batch.iter().map(|&i| &corpus[i].input).collect();
            let targets: Vec<PlannedTrajectory> = batch.iter().map(|&i| corpus[i].target.clone()).collect();
            let x = stack(&params, &inputs)?;
            let (latent, cache) = params.backbone.forward(x.view(), None)?;
            let out = params.head.forward(latent.view());
            let loss = wta_loss(out.view(), &targets)?;
            traj += loss.trajectory * batch.len() as f64;
            conf += loss.confidence * batch.len() as f64;
            let (head_grad, d_latent) = params.head.backward(latent.view(), loss.d_out.view());
            if params.backbone_trainable {
                let (grads, _) = params.backbone.backward(&cache, d_latent.view())?;
                backbone_opt.step(&mut params.backbone.layers, &grads);
            }
            if params.head_trainable {
                head_opt.step(std::slice::from_mut(&mut params.head), std::slice::from_ref(&head_grad));
            }
            if !params.is_finite() {
                return Err(Error::Divergence { epoch });
            }
        }
        curve.trajectory.push(traj / corpus.len() as f64);
        curve.confidence.push(conf / corpus.len() as f64);
    }
    Ok((params, curve))
}

/// Applies a head gradient with an existing optimizer; used by fine-tuning.
pub fn head_step(params: &mut PlannerParams, opt: &mut Adam, grad: &DenseGrad) {
    opt.step(std::slice::from_mut(&mut params.head), std::slice::from_ref(grad));
}

/// Imitation pairs from a recorded log, one every `stride` samples.
pub fn samples_from_log(log: &TrajectoryLog, context: &[f64], stride: usize) -> Result<Vec<PlannerSample>> {
    crate::trajectory::segment_starts(log.len(), stride)
        .map(|i| {
            Ok(PlannerSample {
                input: PlannerInput::from_log(log, i, context)?,
                target: segment_at(log, i).expect("start within range"),
            })
        })
        .collect()
}

/// Mean ADE of the selected proposal and of the best proposal.
pub fn evaluate(params: &PlannerParams, samples: &[PlannerSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let inputs: Vec<&PlannerInput> = samples.iter().map(|s| &s.input).collect();
    let out = params.head_forward(params.latents(&inputs)?.view());
    let (mut selected, mut best) = (0.0, 0.0);
    for (r, s) in samples.iter().enumerate() {
        let set = ProposalSet::from_head_output(out.row(r))?;
        selected += ade(&select_best(&set).1, &s.target);
        best += set.proposals.iter().map(|p| ade(p, &s.target)).fold(f64::INFINITY, f64::min);
    }
    Ok((selected / samples.len() as f64, best / samples.len() as f64))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartRecord {
    part: String,
    trainable: bool,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    context_dim: usize,
    parts: Vec<PartRecord>,
}

impl PlannerParams {
    pub fn to_json(&self) -> Vec<u8> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            context_dim: self.context_dim,
            parts: vec![
                PartRecord {
                    part: "backbone".into(),
                    trainable: self.backbone_trainable,
                    layers: self.backbone.layers.iter().map(LayerRecord::from).collect(),
                },
                PartRecord { part: "head".into(), trainable: self.head_trainable, layers: vec![LayerRecord::from(&self.head)] },
            ],
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
        let mut backbone = None;
        let mut head = None;
        for part in ck.parts {
            let layers = part.layers.into_iter().map(Dense::try_from).collect::<Result<Vec<_>>>()?;
            match part.part.as_str() {
                "backbone" => backbone = Some((layers, part.trainable)),
                "head" => head = Some((layers, part.trainable)),
                other => return Err(Error::CorruptCheckpoint(format!("unknown part `{other}`"))),
            }
        }
        let (Some((backbone, backbone_trainable)), Some((mut head, head_trainable))) = (backbone, head) else {
            return Err(Error::CorruptCheckpoint("missing backbone or head".into()));
        };
        let shapes: Vec<(usize, usize)> = backbone.iter().map(|l| (l.inputs(), l.outputs())).collect();
        if shapes != [(input_dim(ck.context_dim), BACKBONE_HIDDEN), (BACKBONE_HIDDEN, LATENT)]
            || head.len() != 1
            || (head[0].inputs(), head[0].outputs()) != (LATENT, HEAD_OUTPUTS)
        {
            return Err(Error::CorruptCheckpoint("unexpected layer shapes".into()));
        }
        Ok(Self {
            context_dim: ck.context_dim,
            backbone: Mlp { layers: backbone, relu_output: true },
            head: head.remove(0),
            backbone_trainable,
            head_trainable,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }
}

/// Head outputs of one row as a plain vector; handy for tests.
pub fn head_output(params: &PlannerParams, input: &PlannerInput) -> Result<Array1<f64>> {
    let latent = params.latents(&[input])?;
    Ok(params.head_forward(latent.view()).row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Waypoint;

    fn state(t: f64, x: f64, speed: f64) -> EgoState {
        EgoState { t, x, y: 0.0, heading: 0.0, speed, lon_accel: 0.0, throttle: 0.0, brake: 0.0, steer: 0.0, lane_index: 0 }
    }

    fn input(speed: f64) -> PlannerInput {
        let h: Vec<EgoState> = (0..4).map(|i| state(i as f64 * 0.1, speed * 0.1 * i as f64, speed)).collect();
        PlannerInput::new(&h, LeadObservation::ABSENT, &[0.5; 8]).unwrap()
    }

    fn straight(speed: f64) -> PlannedTrajectory {
        let mut pts = [Waypoint::default(); WAYPOINTS];
        for (i, p) in pts.iter_mut().enumerate() {
            p.x = speed * 0.5 * i as f64;
        }
        PlannedTrajectory::new(pts)
    }

    #[test]
    fn feature_layout() {
        let inp = input(10.0);
        assert_eq!(inp.features().len(), input_dim(8));
        // newest history state is the origin
        assert_eq!(&inp.features()[15..18], &[0.0, 0.0, 0.0]);
        assert!((inp.features()[0] + 0.3).abs() < 1e-12);
        assert_eq!(&inp.features()[20..23], &[0.0, 3.0, 0.0]);
        let padded = PlannerInput::new(&[state(0.0, 0.0, 5.0)], LeadObservation::new(25.0, 1.0), &[]).unwrap();
        assert_eq!(padded.features()[..5], padded.features()[15..20]);
        assert_eq!(&padded.features()[20..23], &[1.0, 0.5, 0.1]);
    }

    #[test]
    fn dead_head_gives_identical_zero_proposals() {
        let mut p = PlannerParams::init(1, 8);
        p.head = Dense::zeros(LATENT, HEAD_OUTPUTS);
        let set = predict(&p, &input(12.0)).unwrap();
        assert_eq!(set.proposals.len(), PROPOSALS);
        assert_eq!(set.confidences.len(), PROPOSALS);
        assert!(set.proposals.iter().all(|q| q.to_flat() == [0.0; TRAJECTORY_FEATURES]));
        assert_eq!(select_best(&set).0, 0);
    }

    #[test]
    fn selection_rules() {
        let set = |c: Vec<f64>| ProposalSet { proposals: vec![straight(1.0); PROPOSALS], confidences: c };
        let mut c = vec![0.0; PROPOSALS];
        c[7] = 1.0;
        assert_eq!(select_best(&set(c.clone())).0, 7);
        assert_eq!(select_best(&set(c.iter().map(|v| 3.0 * v - 2.0).collect())).0, 7);
        assert_eq!(select_best(&set(vec![0.3; PROPOSALS])).0, 0);
    }

    #[test]
    fn predict_is_deterministic() {
        let p = PlannerParams::init(4, 8);
        assert_eq!(predict(&p, &input(8.0)).unwrap(), predict(&p, &input(8.0)).unwrap());
        let bad = PlannerInput::new(&[state(0.0, 0.0, 1.0)], LeadObservation::ABSENT, &[0.0; 3]).unwrap();
        assert!(matches!(predict(&p, &bad), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn wta_gradient_matches_finite_differences() {
        let p = PlannerParams::init(9, 8);
        let out = head_output(&p, &input(10.0)).unwrap().insert_axis(ndarray::Axis(0));
        let target = vec![straight(10.0)];
        let loss = wta_loss(out.view(), &target).unwrap();
        let h = 1e-6;
        for idx in [loss.winners[0] * TRAJECTORY_FEATURES + 3, loss.winners[0] * TRAJECTORY_FEATURES + 5, HEAD_OUTPUTS - 1] {
            let mut plus = out.clone();
            plus[[0, idx]] += h;
            let mut minus = out.clone();
            minus[[0, idx]] -= h;
            let f = |o: &Array2<f64>| {
                let l = wta_loss(o.view(), &target).unwrap();
                l.trajectory + l.confidence
            };
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((numeric - loss.d_out[[0, idx]]).abs() < 1e-5 * numeric.abs().max(1.0), "{idx}");
        }
    }

    #[test]
    fn single_sample_overfits() {
        let sample = PlannerSample { input: input(10.0), target: straight(10.0) };
        let cfg = PretrainConfig { epochs: 500, batch_size: 1, ..Default::default() };
        let (p, curve) = pretrain(PlannerParams::init(0, 8), std::slice::from_ref(&sample), &cfg).unwrap();
        let set = predict(&p, &sample.input).unwrap();
        let best = set.proposals.iter().map(|q| ade(q, &sample.target)).fold(f64::INFINITY, f64::min);
        assert!(best < 1e-2, "best ADE {best}, final loss {:?}", curve.trajectory.last());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = PlannerParams::init(3, 8);
        p.freeze_backbone();
        let back = PlannerParams::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        let text = String::from_utf8(p.to_json()).unwrap().replace("\"version\":1", "\"version\":9");
        assert!(matches!(PlannerParams::from_json(text.as_bytes()), Err(Error::VersionMismatch { .. })));
        let cut = &p.to_json()[..100];
        assert!(matches!(PlannerParams::from_json(cut), Err(Error::CorruptCheckpoint(_))));
    }
}
