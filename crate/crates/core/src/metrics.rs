//! Distribution-level style comparison.
//!
//! Style is treated as a distribution over [`StyleVector`]s rather than a
//! single point. Two distributions are compared with the biased (V-statistic)
//! squared maximum mean discrepancy under an RBF kernel, turned into a
//! similarity score `1 / (1 + MMD)`, and with a diagonal-Gaussian KL
//! divergence. The kernel bandwidth follows the median heuristic.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::IndicatorVector;
use crate::seed;

/// Dimension of a style vector.
pub const STYLE_DIM: usize = 10;
/// Variance floor for the Gaussian KL fit.
pub const KL_VARIANCE_FLOOR: f64 = 1e-6;

/// Ten normalized indicator values, ordered by the selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StyleVector(Vec<f64>);

impl StyleVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != STYLE_DIM {
            return Err(Error::DimensionMismatch { expected: STYLE_DIM, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("style vector".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for StyleVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for StyleVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<StyleVector> for Vec<f64> {
    fn from(v: StyleVector) -> Self {
        v.0
    }
}

/// A labelled set of equal-dimension samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleDistribution {
    label: String,
    samples: Vec<Vec<f64>>,
}

impl StyleDistribution {
    pub fn new(label: impl Into<String>, samples: Vec<Vec<f64>>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDistribution)?;
        let dim = first.len();
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
        }
        Ok(Self { label: label.into(), samples })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(-gamma * |x - y|^2)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidValue(format!("gamma = {gamma}")));
    }
    Ok((-gamma * squared_distance(x, y)).exp())
}

fn kernel_sum<S: AsRef<[f64]>>(a: &[S], b: &[S], gamma: f64) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += (-gamma * squared_distance(x.as_ref(), y.as_ref())).exp();
        }
    }
    total
}

fn check_pair<S: AsRef<[f64]>>(x: &[S], y: &[S]) -> Result<()> {
    let (Some(a), Some(b)) = (x.first(), y.first()) else {
        return Err(Error::EmptyDistribution);
    };
    let dim = a.as_ref().len();
    for s in x.iter().chain(y) {
        if s.as_ref().len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: s.as_ref().len() });
        }
    }
    debug_assert_eq!(b.as_ref().len(), dim);
    Ok(())
}

/// Biased empirical squared MMD; self-pairs are included in both
/// within-set sums.
pub fn mmd_squared<S: AsRef<[f64]>>(x: &[S], y: &[S], gamma: f64) -> Result<f64> {
    check_pair(x, y)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidValue(format!("gamma = {gamma}")));
    }
    let (m, n) = (x.len() as f64, y.len() as f64);
    let kxx = kernel_sum(x, x, gamma) / (m * m);
    let kyy = kernel_sum(y, y, gamma) / (n * n);
    let kxy = kernel_sum(x, y, gamma) / (m * n);
    Ok(kxx + kyy - 2.0 * kxy)
}

/// Median-heuristic bandwidth over the pooled samples: `gamma = 1/(2 sigma^2)`
/// with `sigma` the median pairwise Euclidean distance (1 if that is zero).
pub fn median_heuristic_gamma<S: AsRef<[f64]>>(pooled: &[&S]) -> f64 {
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(squared_distance(pooled[i].as_ref(), pooled[j].as_ref()).sqrt());
        }
    }
    let sigma = if dists.is_empty() {
        0.0
    } else {
        dists.sort_by(f64::total_cmp);
        let n = dists.len();
        if n % 2 == 1 {
            dists[n / 2]
        } else {
            0.5 * (dists[n / 2 - 1] + dists[n / 2])
        }
    };
    let sigma = if sigma > 0.0 { sigma } else { 1.0 };
    1.0 / (2.0 * sigma * sigma)
}

pub fn pair_gamma<S: AsRef<[f64]>>(x: &[S], y: &[S]) -> f64 {
    let pooled: Vec<&S> = x.iter().chain(y).collect();
    median_heuristic_gamma(&pooled)
}

/// `1 / (1 + sqrt(max(0, mmd2)))`.
pub fn mmdss_from_mmd2(mmd2: f64) -> f64 {
    1.0 / (1.0 + mmd2.max(0.0).sqrt())
}

/// MMD similarity score with a median-heuristic bandwidth fitted to the pair.
pub fn mmdss<S: AsRef<[f64]>>(x: &[S], y: &[S]) -> Result<f64> {
    check_pair(x, y)?;
    let gamma = pair_gamma(x, y);
    Ok(mmdss_from_mmd2(mmd_squared(x, y, gamma)?))
}

/// Closed-form `KL(N(m0, v0) || N(m1, v1))` for univariate Gaussians.
pub fn gaussian_kl(m0: f64, v0: f64, m1: f64, v1: f64) -> f64 {
    0.5 * ((v1 / v0).ln() + (v0 + (m0 - m1) * (m0 - m1)) / v1 - 1.0)
}

/// Per-dimension mean and floored population variance.
pub fn diagonal_moments<S: AsRef<[f64]>>(x: &[S]) -> (Vec<f64>, Vec<f64>) {
    let dim = x[0].as_ref().len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in x {
        for (m, v) in mean.iter_mut().zip(s.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in x {
        for ((acc, v), m) in var.iter_mut().zip(s.as_ref()).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|v| *v = (*v / n).max(KL_VARIANCE_FLOOR));
    (mean, var)
}

/// Diagonal-Gaussian `KL(X || Y)` averaged over dimensions.
pub fn kl_divergence<S: AsRef<[f64]>>(x: &[S], y: &[S]) -> Result<f64> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: x.len().min(y.len()) });
    }
    check_pair(x, y)?;
    let (mx, vx) = diagonal_moments(x);
    let (my, vy) = diagonal_moments(y);
    let dim = mx.len() as f64;
    let total: f64 = (0..mx.len()).map(|d| gaussian_kl(mx[d], vx[d], my[d], vy[d])).sum();
    Ok((total / dim).max(0.0))
}

/// Per-scenario, per-indicator min-max statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioNormalizer {
    pub ranges: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl ScenarioNormalizer {
    pub fn fit(vectors: &[IndicatorVector]) -> Self {
        let mut ranges: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for v in vectors {
            let (lo, hi) = ranges
                .entry(v.scenario_id.clone())
                .or_insert_with(|| (v.values.clone(), v.values.clone()));
            for ((l, h), x) in lo.iter_mut().zip(hi.iter_mut()).zip(&v.values) {
                *l = l.min(*x);
                *h = h.max(*x);
            }
        }
        Self { ranges }
    }

    /// Maps one value; a constant indicator maps to 0.5. Values outside the
    /// fitted range are not clamped.
    pub fn normalize_value(lo: f64, hi: f64, x: f64) -> f64 {
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.5
        }
    }

    pub fn apply(&self, v: &IndicatorVector) -> Result<IndicatorVector> {
        let (lo, hi) = self
            .ranges
            .get(&v.scenario_id)
            .ok_or_else(|| Error::Unknown { kind: "scenario", id: v.scenario_id.clone() })?;
        let values = v
            .values
            .iter()
            .enumerate()
            .map(|(j, &x)| Self::normalize_value(lo[j], hi[j], x))
            .collect();
        Ok(IndicatorVector { values, ..v.clone() })
    }
}

/// Min-max normalizes every indicator separately within each scenario.
pub fn scenario_minmax(vectors: &[IndicatorVector]) -> Vec<IndicatorVector> {
    let norm = ScenarioNormalizer::fit(vectors);
    vectors.iter().map(|v| norm.apply(v).expect("fitted on the same vectors")).collect()
}

/// Picks the selected indicator positions out of a normalized vector.
pub fn style_vector(v: &IndicatorVector, positions: &[usize]) -> Result<StyleVector> {
    StyleVector::new(positions.iter().map(|&p| v.values[p]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub mmdss: Option<f64>,
    pub kl: Option<f64>,
}

/// Pairwise similarity between labelled style distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub labels: Vec<String>,
    pub mmdss: Vec<Vec<f64>>,
    pub kl: Vec<Vec<f64>>,
    pub intra: MetricPair,
    pub inter: MetricPair,
    pub gamma: f64,
    pub seed: u64,
    /// Half-split self-similarity per label; `None` below four samples.
    pub intra_by_label: Vec<Option<(f64, f64)>>,
}

impl SimilarityReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }
}

fn split_halves(samples: &[Vec<f64>], seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut seed::rng(seed));
    let half = samples.len() / 2;
    let a = idx[..half].iter().map(|&i| samples[i].clone()).collect();
    let b = idx[half..].iter().map(|&i| samples[i].clone()).collect();
    (a, b)
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Full pairwise MMDSS and KL matrices plus intra/inter means.
///
/// A single median-heuristic bandwidth is fitted on all samples pooled, so
/// every entry (including the half-split intra values) shares one kernel.
pub fn similarity_report(dists: &[StyleDistribution], seed: u64) -> Result<SimilarityReport> {
    if dists.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: dists.len() });
    }
    let dim = dists[0].samples[0].len();
    for d in dists {
        if d.samples[0].len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: d.samples[0].len() });
        }
        if d.len() < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: d.len() });
        }
    }
    let pooled: Vec<&Vec<f64>> = dists.iter().flat_map(|d| d.samples.iter()).collect();
    let gamma = median_heuristic_gamma(&pooled);
    let n = dists.len();

    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let values: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(i, j)| {
            let (x, y) = (&dists[i].samples, &dists[j].samples);
            let mmd2 = mmd_squared(x, y, gamma)?;
            Ok((mmdss_from_mmd2(mmd2), kl_divergence(x, y)?))
        })
        .collect::<Result<_>>()?;
    let mut mmdss = vec![vec![0.0; n]; n];
    let mut kl = vec![vec![0.0; n]; n];
    for (&(i, j), &(s, k)) in cells.iter().zip(&values) {
        mmdss[i][j] = s;
        kl[i][j] = k;
    }

    let intra_by_label: Vec<Option<(f64, f64)>> = dists
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            if d.len() < 4 {
                return Ok(None);
            }
            let (a, b) = split_halves(&d.samples, seed::derive_index(seed, i as u64));
            let s = mmdss_from_mmd2(mmd_squared(&a, &b, gamma)?);
            Ok(Some((s, kl_divergence(&a, &b)?)))
        })
        .collect::<Result<_>>()?;

    let off_diag = || cells.iter().filter(|(i, j)| i != j);
    let inter = MetricPair {
        mmdss: mean_of(off_diag().map(|&(i, j)| mmdss[i][j])),
        kl: mean_of(off_diag().map(|&(i, j)| kl[i][j])),
    };
    let intra = MetricPair {
        mmdss: mean_of(intra_by_label.iter().flatten().map(|p| p.0)),
        kl: mean_of(intra_by_label.iter().flatten().map(|p| p.1)),
    };
    Ok(SimilarityReport {
        labels: dists.iter().map(|d| d.label.clone()).collect(),
        mmdss,
        kl,
        intra,
        inter,
        gamma,
        seed,
        intra_by_label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn kernel_hand_values() {
        assert_eq!(rbf_kernel(&[0.3, 0.1], &[0.3, 0.1], 2.0).unwrap(), 1.0);
        assert!((rbf_kernel(&[0.0], &[1.0], 0.5).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!((rbf_kernel(&[0.0], &[1.0], 0.5).unwrap() - 0.6065).abs() < 1e-4);
        assert!(matches!(rbf_kernel(&[0.0], &[1.0, 2.0], 0.5), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn mmd_single_points() {
        let v = mmd_squared(&pts(&[0.0]), &pts(&[1.0]), 0.5).unwrap();
        assert!((v - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-12);
        assert!((v - 0.7869).abs() < 1e-4);
        let s = mmdss_from_mmd2(v);
        assert!((s - 1.0 / (1.0 + v.sqrt())).abs() < 1e-15);
        assert!((s - 0.5299).abs() < 1e-4);
    }

    #[test]
    fn mmd_identical_sets_is_zero() {
        let x = vec![vec![0.1, 0.2], vec![0.7, 0.3], vec![0.4, 0.9]];
        assert!(mmd_squared(&x, &x, 1.3).unwrap().abs() <= 1e-12);
        assert_eq!(mmdss(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn mmdss_fixed_points() {
        assert_eq!(mmdss_from_mmd2(0.0), 1.0);
        assert_eq!(mmdss_from_mmd2(1.0), 0.5);
        assert_eq!(mmdss_from_mmd2(-1e-15), 1.0);
    }

    #[test]
    fn empty_distribution_is_an_error() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(mmd_squared(&empty, &pts(&[1.0]), 1.0), Err(Error::EmptyDistribution)));
        assert!(StyleDistribution::new("x", vec![]).is_err());
    }

    #[test]
    fn gaussian_kl_closed_form() {
        assert!((gaussian_kl(0.0, 1.0, 1.0, 1.0) - 0.5).abs() < 1e-15);
        // X = {-1, 1}: mean 0, population variance 1; Y = {0, 2}: mean 1, variance 1
        let k = kl_divergence(&pts(&[-1.0, 1.0]), &pts(&[0.0, 2.0])).unwrap();
        assert!((k - 0.5).abs() < 1e-12);
        let x = pts(&[0.2, 0.4, 0.1]);
        assert!(kl_divergence(&x, &x).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_is_directed() {
        let x = pts(&[-0.1, 0.1]); // narrow
        let y = pts(&[-2.0, 2.0]); // wide
        let a = kl_divergence(&x, &y).unwrap();
        let b = kl_divergence(&y, &x).unwrap();
        assert!((a - b).abs() > 1.0, "{a} vs {b}");
        assert!(matches!(kl_divergence(&pts(&[1.0]), &y), Err(Error::TooFewSamples { .. })));
    }

    fn iv(scenario: &str, values: Vec<f64>) -> IndicatorVector {
        IndicatorVector { driver_id: "d".into(), scenario_id: scenario.into(), run_index: 0, values }
    }

    #[test]
    fn minmax_per_scenario() {
        let v = vec![iv("a", vec![2.0, 7.0]), iv("a", vec![4.0, 7.0]), iv("a", vec![6.0, 7.0])];
        let out = scenario_minmax(&v);
        let col: Vec<f64> = out.iter().map(|v| v.values[0]).collect();
        assert_eq!(col, vec![0.0, 0.5, 1.0]);
        assert!(out.iter().all(|v| v.values[1] == 0.5));

        // raw 4.0 in two groups with different ranges
        let v = vec![
            iv("a", vec![2.0]),
            iv("a", vec![4.0]),
            iv("a", vec![6.0]),
            iv("b", vec![4.0]),
            iv("b", vec![12.0]),
        ];
        let out = scenario_minmax(&v);
        assert_eq!(out[1].values[0], 0.5);
        assert_eq!(out[3].values[0], 0.0);
    }

    #[test]
    fn report_on_identical_distributions() {
        let s: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 8.0, (i * i) as f64 / 64.0]).collect();
        let a = StyleDistribution::new("a", s.clone()).unwrap();
        let b = StyleDistribution::new("b", s).unwrap();
        let r = similarity_report(&[a, b], 7).unwrap();
        assert!((r.mmdss[0][1] - 1.0).abs() < 1e-9);
        assert!((r.mmdss[0][0] - 1.0).abs() < 1e-9);
        assert!(r.kl[0][0].abs() < 1e-9);
        assert!(r.intra.mmdss.is_some());
    }

    #[test]
    fn report_marks_small_distributions_without_intra() {
        let a = StyleDistribution::new("a", pts(&[0.0, 0.1, 0.2])).unwrap();
        let b = StyleDistribution::new("b", pts(&[0.5, 0.6, 0.7, 0.8])).unwrap();
        let r = similarity_report(&[a, b], 1).unwrap();
        assert!(r.intra_by_label[0].is_none());
        assert!(r.intra_by_label[1].is_some());
        let json: serde_json::Value = serde_json::from_slice(&r.to_json()).unwrap();
        for key in ["labels", "mmdss", "kl", "intra", "inter", "gamma", "seed"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn style_vector_dimension() {
        assert!(StyleVector::new(vec![0.0; 9]).is_err());
        assert!(StyleVector::new(vec![f64::NAN; 10]).is_err());
        assert!(StyleVector::new(vec![0.5; 10]).is_ok());
    }
}
