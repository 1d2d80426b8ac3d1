//! Minimal dense-network machinery: fully connected layers, ReLU MLPs with
//! inverted dropout, exact backpropagation and Adam.
//!
//! Batches are row-major `(batch, features)` matrices. Weights are stored
//! `(in, out)` so a layer computes `x · W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { w: Array2::zeros((inputs, outputs)), b: Array1::zeros(outputs) }
    }

    /// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let w = Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-bound..=bound));
        Self { w, b: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Gradients of the layer parameters and of its input.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> (DenseGrad, Array2<f64>) {
        let grad = DenseGrad { w: x.t().dot(&dy), b: dy.sum_axis(Axis(0)) };
        (grad, dy.dot(&self.w.t()))
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        Self { w: Array2::zeros(layer.w.raw_dim()), b: Array1::zeros(layer.b.raw_dim()) }
    }
}

/// Serializable layer: `w` as rows of the `(in, out)` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl From<&Dense> for LayerRecord {
    fn from(d: &Dense) -> Self {
        Self { w: d.w.rows().into_iter().map(|r| r.to_vec()).collect(), b: d.b.to_vec() }
    }
}

impl TryFrom<LayerRecord> for Dense {
    type Error = Error;
    fn try_from(r: LayerRecord) -> Result<Self> {
        let rows = r.w.len();
        let cols = r.w.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || r.w.iter().any(|row| row.len() != cols) || r.b.len() != cols {
            return Err(Error::CorruptCheckpoint("inconsistent layer shape".into()));
        }
        let flat: Vec<f64> = r.w.into_iter().flatten().collect();
        let w = Array2::from_shape_vec((rows, cols), flat)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let layer = Dense { w, b: Array1::from(r.b) };
        if !layer.is_finite() {
            return Err(Error::CorruptCheckpoint("non-finite parameter".into()));
        }
        Ok(layer)
    }
}

/// Forward-pass intermediates needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (after activation and dropout of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers applied after each hidden activation.
    masks: Vec<Option<Array2<f64>>>,
}

impl MlpCache {
    /// ReLU on/off pattern of every hidden unit; used to detect kinks when
    /// checking gradients numerically.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.pre.iter().flat_map(|p| p.iter().map(|v| *v > 0.0)).collect()
    }

    pub fn pre_activations(&self, layer: usize) -> &Array2<f64> {
        &self.pre[layer]
    }
}

/// Stack of dense layers with ReLU between them. The last layer is linear
/// unless `relu_output` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub relu_output: bool,
}

/// Dropout applied after each hidden activation during training.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Mlp {
    pub fn uniform(sizes: &[usize], relu_output: bool, rng: &mut ChaCha8Rng) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::uniform(w[0], w[1], rng)).collect();
        Self { layers, relu_output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    fn activates(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.relu_output
    }

    pub fn forward(&self, x: ArrayView2<f64>, mut dropout: Option<Dropout<'_>>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        let n = self.layers.len();
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(h.view());
            cache.inputs.push(h);
            let mut a = if self.activates(i) { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            let hidden = i + 1 < n;
            let mask = match dropout.as_mut() {
                Some(d) if hidden && d.p > 0.0 => {
                    let keep = 1.0 - d.p;
                    let m = Array2::from_shape_simple_fn(a.raw_dim(), || {
                        if d.rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            cache.pre.push(z);
            cache.masks.push(mask);
            h = a;
        }
        Ok((h, cache))
    }

    /// Backpropagates `d_out` (gradient w.r.t. the network output). Returns
    /// per-layer parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, cache: &MlpCache, d_out: ArrayView2<f64>) -> Result<(Vec<DenseGrad>, Array2<f64>)> {
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut d = d_out.to_owned();
        for i in (0..n).rev() {
            if let Some(m) = &cache.masks[i] {
                d *= m;
            }
            if self.activates(i) {
                d.zip_mut_with(&cache.pre[i], |g, z| {
                    if *z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            let (g, dx) = self.layers[i].backward(cache.inputs[i].view(), d.view());
            if g.w.iter().chain(g.b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of layer {}", i + 1)));
            }
            grads.push(g);
            d = dx;
        }
        grads.reverse();
        Ok((grads, d))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam over a fixed list of dense layers.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: i32,
    m: Vec<DenseGrad>,
    v: Vec<DenseGrad>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, layers: &[Dense]) -> Self {
        let zeros: Vec<DenseGrad> = layers.iter().map(DenseGrad::zeros_like).collect();
        Self { cfg, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, layers: &mut [Dense], grads: &[DenseGrad]) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= c.learning_rate * mhat / (vhat.sqrt() + c.eps);
        };
        for (((layer, g), m), v) in layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut layer.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(
                |p, &g, m, v| update(p, g, m, v),
            );
            ndarray::Zip::from(&mut layer.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(
                |p, &g, m, v| update(p, g, m, v),
            );
        }
    }
}

/// Per-row mean squared error and its gradient `2 (y - t) / dim / rows`.
pub fn mse_rows(y: &Array2<f64>, t: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let dim = y.ncols() as f64;
    let rows = y.nrows() as f64;
    let diff = y - t;
    let per_row = diff.mapv(|d| d * d).sum_axis(Axis(1)) / dim;
    let grad = diff * (2.0 / (dim * rows));
    (per_row, grad)
}
