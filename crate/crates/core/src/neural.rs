//! Fully connected sub-networks with exact reverse-mode gradients, and Adam.
//!
//! Inputs pass through a frozen per-dimension standardizer, then a stack of
//! affine layers `d_i = f_i(Ψ_i d_{i-1} + b_i)` with `tanh` or identity
//! activations. Layers may carry inverted dropout, active only in
//! [`Mode::Train`].

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

pub use crate::config::TrainConfig;

/// Floor applied to per-dimension variances when standardizing.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Frozen per-dimension standardization `(x - mean) / sqrt(var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vector,
    pub var: Vector,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Vector::zeros(dim),
            var: Vector::from_element(dim, 1.0),
        }
    }

    /// Fits mean and population variance on `d × n` data.
    pub fn fit(x: &Matrix) -> Result<Self> {
        let n = x.ncols();
        if n < 2 {
            return Err(Error::DegenerateBatch(n));
        }
        // shifted mean: exact for constant rows
        let mean = Vector::from_iterator(
            x.nrows(),
            x.row_iter().map(|row| {
                let first = row[0];
                first + row.iter().map(|v| v - first).sum::<f64>() / n as f64
            }),
        );
        let xc = linalg::subtract_mean(x, &mean);
        let mut clamped = 0usize;
        let var = Vector::from_iterator(
            x.nrows(),
            xc.row_iter().map(|row| {
                let v = row.norm_squared() / n as f64;
                if v < VARIANCE_FLOOR {
                    clamped += 1;
                    VARIANCE_FLOOR
                } else {
                    v
                }
            }),
        );
        if clamped > 0 {
            warn!("{clamped} input dimension(s) have (near-)zero variance; clamped to {VARIANCE_FLOOR:e}");
        }
        Ok(Self { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.nrows() != self.dim() {
            return Err(Error::dims("standardizer input", self.dim(), x.nrows()));
        }
        let mut out = linalg::subtract_mean(x, &self.mean);
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row /= self.var[i].sqrt();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vector,
    pub activation: Activation,
    pub dropout: f64,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        LayerSpec {
            units: self.weight.nrows(),
            activation: self.activation,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub standardizer: Standardizer,
    pub layers: Vec<Layer>,
}

/// Intermediate values of one forward pass, consumed by [`MlpNetwork::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each layer (the standardized data for layer 0).
    inputs: Vec<Matrix>,
    /// Post-activation values before dropout.
    activations: Vec<Matrix>,
    /// Dropout multipliers (`0` or `1/(1-p)`) per layer, when applied.
    masks: Vec<Option<Matrix>>,
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn into_output(self) -> Matrix {
        self.output
    }

    /// Output of every layer, after dropout.
    pub fn layer_outputs(&self) -> impl Iterator<Item = &Matrix> {
        self.inputs.iter().skip(1).chain(std::iter::once(&self.output))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
    /// Gradient with respect to the raw (unstandardized) input.
    pub input: Matrix,
}

impl NetworkGrads {
    /// Same order as [`MlpNetwork::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

impl MlpNetwork {
    /// Glorot-uniform weights, zero biases.
    pub fn new(standardizer: Standardizer, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Argument("network needs at least one layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = standardizer.dim();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            if !(0.0..1.0).contains(&spec.dropout) {
                return Err(Error::Argument(format!("dropout {} outside [0, 1)", spec.dropout)));
            }
            let limit = (6.0 / (fan_in + spec.units) as f64).sqrt();
            let weight = Matrix::from_fn(spec.units, fan_in, |_, _| rng.random_range(-limit..limit));
            layers.push(Layer {
                weight,
                bias: Vector::zeros(spec.units),
                activation: spec.activation,
                dropout: spec.dropout,
            });
            fan_in = spec.units;
        }
        Ok(Self { standardizer, layers })
    }

    /// Two `tanh` hidden layers with dropout and a linear output layer.
    pub fn two_hidden(standardizer: Standardizer, hidden: usize, output: usize, dropout: f64, seed: u64) -> Result<Self> {
        let specs = [
            LayerSpec { units: hidden, activation: Activation::Tanh, dropout },
            LayerSpec { units: hidden, activation: Activation::Tanh, dropout },
            LayerSpec { units: output, activation: Activation::Linear, dropout: 0.0 },
        ];
        Self::new(standardizer, &specs, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.nrows())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// `[Ψ_1, b_1, Ψ_2, b_2, ...]`
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Forward pass on `d × n` data. Dropout masks are drawn from `seed`.
    pub fn forward(&self, x: &Matrix, mode: Mode, seed: u64) -> Result<ForwardCache> {
        let mut current = self.standardizer.apply(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut z = &layer.weight * &current;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if layer.activation == Activation::Tanh {
                z.apply(|v| *v = v.tanh());
            }
            let (out, mask) = if mode == Mode::Train && layer.dropout > 0.0 {
                let keep = 1.0 - layer.dropout;
                let scale = 1.0 / keep;
                let mask = Matrix::from_fn(z.nrows(), z.ncols(), |_, _| {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                });
                (z.component_mul(&mask), Some(mask))
            } else {
                (z.clone(), None)
            };
            inputs.push(std::mem::replace(&mut current, out));
            activations.push(z);
            masks.push(mask);
        }
        Ok(ForwardCache {
            inputs,
            activations,
            masks,
            output: current,
        })
    }

    /// Reverse-mode gradients of `sum(grad_output ⊙ output)`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<NetworkGrads> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Argument("forward cache does not belong to this network".into()));
        }
        if grad_output.shape() != cache.output.shape() {
            return Err(Error::Argument(format!(
                "stale forward cache: output {:?}, gradient {:?}",
                cache.output.shape(),
                grad_output.shape()
            )));
        }
        let n_layers = self.layers.len();
        let mut weights = vec![Matrix::zeros(0, 0); n_layers];
        let mut biases = vec![Vector::zeros(0); n_layers];
        let mut g = grad_output.clone();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            if cache.inputs[l].nrows() != layer.weight.ncols() {
                return Err(Error::Argument(format!("stale forward cache at layer {l}")));
            }
            if let Some(mask) = &cache.masks[l] {
                g.component_mul_assign(mask);
            }
            if layer.activation == Activation::Tanh {
                g.zip_apply(&cache.activations[l], |gi, a| *gi *= 1.0 - a * a);
            }
            weights[l] = &g * cache.inputs[l].transpose();
            biases[l] = Vector::from_iterator(g.nrows(), g.row_iter().map(|r| r.sum()));
            g = layer.weight.transpose() * &g;
        }
        for (i, mut row) in g.row_iter_mut().enumerate() {
            row /= self.standardizer.var[i].sqrt();
        }
        Ok(NetworkGrads {
            weights,
            biases,
            input: g,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            epsilon: c.adam_epsilon,
        }
    }
}

/// Adam with bias-corrected moments over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step: `θ ← θ - lr · m̂ / (sqrt(v̂) + ε)`.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dims("Adam tensor count", self.m.len(), params.len().max(grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::dims(format!("Adam tensor {i}"), self.m[i].len(), p.len()));
            }
        }
        self.t += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
