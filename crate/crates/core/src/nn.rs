//! Feedforward binary classifier: forward pass, logistic-link Bernoulli
//! likelihood and exact parameter gradients via backpropagation.
//!
//! Parameters are held as one flat vector `theta`. The flattening order is
//! fixed: layers in forward order, and within each layer the weight matrix in
//! row-major layout (rows = output units) followed by the bias vector. The
//! variational module treats `theta` as a single vector, so this order is the
//! contract both sides rely on.

use crate::rng::Prng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("label {0} is not binary")]
    NonBinaryLabel(u8),
    #[error("empty batch")]
    EmptyBatch,
}

/// Hidden-layer activation. The output layer is always linear; the
/// class probability comes from [`logistic`] applied to the raw score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            // Subgradient at exactly 0 is taken as 0, so relu(0) = 0 and
            // the unit is treated as dead there.
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Layer sizes of the scalar-output feedforward network, input first.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NetworkArch {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

impl NetworkArch {
    /// A network with ReLU hidden layers. `layer_sizes` runs from the input
    /// dimension to the scalar output, e.g. `[p, 4, 4, 1]`.
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self, NnError> {
        Self::with_activation(layer_sizes, Activation::Relu)
    }

    pub fn with_activation(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 {
            return Err(NnError::InvalidArch(
                "need at least an input and an output layer".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(NnError::InvalidArch("zero-width layer".into()));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(NnError::InvalidArch("output layer must have width 1".into()));
        }
        Ok(NetworkArch {
            layer_sizes,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of weight layers (connections between consecutive layers).
    pub fn n_weight_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Total parameter count `m = sum_l (n_{l-1} n_l + n_l)`.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Flattened parameter vector together with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    theta: Vec<f64>,
    arch: NetworkArch,
}

impl NetworkParams {
    pub fn new(theta: Vec<f64>, arch: NetworkArch) -> Result<Self, NnError> {
        if theta.len() != arch.param_count() {
            return Err(NnError::DimensionMismatch {
                expected: arch.param_count(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("theta"));
        }
        Ok(NetworkParams { theta, arch })
    }

    pub fn zeros(arch: NetworkArch) -> Self {
        let m = arch.param_count();
        NetworkParams {
            theta: vec![0.0; m],
            arch,
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }
}

/// Glorot-uniform weight initialization with zero biases.
pub fn init_params(arch: &NetworkArch, rng: &mut Prng) -> NetworkParams {
    let mut theta = vec![0.0; arch.param_count()];
    let mut off = 0;
    for w in arch.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in theta[off..off + fan_in * fan_out].iter_mut() {
            *v = rng.uniform_in(-bound, bound);
        }
        off += fan_in * fan_out + fan_out; // biases stay zero
    }
    NetworkParams {
        theta,
        arch: arch.clone(),
    }
}

/// A batch of standardized feature rows with binary labels.
#[derive(Debug, Clone)]
pub struct BinaryBatch {
    features: Vec<f64>, // row-major, len = n * n_features
    n_features: usize,
    labels: Vec<u8>,
}

impl BinaryBatch {
    pub fn new(features: Vec<f64>, n_features: usize, labels: Vec<u8>) -> Result<Self, NnError> {
        if features.len() != n_features * labels.len() {
            return Err(NnError::DimensionMismatch {
                expected: n_features * labels.len(),
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("features"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(NnError::NonBinaryLabel(bad));
        }
        Ok(BinaryBatch {
            features,
            n_features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Numerically stable logistic link `g(a) = 1 / (1 + exp(-a))`.
#[inline]
pub fn logistic(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `log g(a)` computed as `-log(1 + exp(-a))` without overflow.
#[inline]
fn log_logistic(a: f64) -> f64 {
    -softplus(-a)
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Reusable forward/backward buffers for one architecture.
#[derive(Debug)]
pub(crate) struct Scratch {
    /// Post-activation values per layer; `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
    /// Pre-activation values per weight layer.
    pre: Vec<Vec<f64>>,
    /// Backpropagated sensitivities per weight layer.
    delta: Vec<Vec<f64>>,
}

impl Scratch {
    pub(crate) fn for_arch(arch: &NetworkArch) -> Self {
        let acts = arch.layer_sizes.iter().map(|&s| vec![0.0; s]).collect();
        let pre = arch.layer_sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        let delta = arch.layer_sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        Scratch { acts, pre, delta }
    }
}

/// Forward pass over the flattened parameters; caller guarantees shapes.
pub(crate) fn forward_into(arch: &NetworkArch, theta: &[f64], x: &[f64], ws: &mut Scratch) -> f64 {
    ws.acts[0].copy_from_slice(x);
    let n_layers = arch.n_weight_layers();
    let mut off = 0;
    for l in 0..n_layers {
        let n_in = arch.layer_sizes[l];
        let n_out = arch.layer_sizes[l + 1];
        let (weights, rest) = theta[off..].split_at(n_in * n_out);
        let biases = &rest[..n_out];
        let last = l + 1 == n_layers;
        let (head, tail) = ws.acts.split_at_mut(l + 1);
        let input = &head[l];
        let output = &mut tail[0];
        for j in 0..n_out {
            let row = &weights[j * n_in..(j + 1) * n_in];
            let mut z = biases[j];
            for (w, a) in row.iter().zip(input.iter()) {
                z += w * a;
            }
            ws.pre[l][j] = z;
            output[j] = if last { z } else { arch.activation.apply(z) };
        }
        off += n_in * n_out + n_out;
    }
    ws.acts[n_layers][0]
}

/// Backpropagates `d f / d theta` for the scalar output; the gradient is
/// written into `grad` in the documented flattening order. Returns `f`.
pub(crate) fn backprop_into(
    arch: &NetworkArch,
    theta: &[f64],
    x: &[f64],
    ws: &mut Scratch,
    grad: &mut [f64],
) -> f64 {
    let f = forward_into(arch, theta, x, ws);
    let n_layers = arch.n_weight_layers();
    ws.delta[n_layers - 1][0] = 1.0; // output layer is linear

    // Propagate sensitivities backwards through the weight layers.
    let mut offsets = Vec::with_capacity(n_layers);
    let mut off = 0;
    for l in 0..n_layers {
        offsets.push(off);
        off += arch.layer_sizes[l] * arch.layer_sizes[l + 1] + arch.layer_sizes[l + 1];
    }
    for l in (1..n_layers).rev() {
        let n_in = arch.layer_sizes[l];
        let n_out = arch.layer_sizes[l + 1];
        let weights = &theta[offsets[l]..offsets[l] + n_in * n_out];
        let (lower, upper) = ws.delta.split_at_mut(l);
        let delta_out = &upper[0];
        let delta_in = &mut lower[l - 1];
        for i in 0..n_in {
            let mut s = 0.0;
            for j in 0..n_out {
                s += weights[j * n_in + i] * delta_out[j];
            }
            delta_in[i] = s * arch.activation.derivative(ws.pre[l - 1][i]);
        }
    }

    for l in 0..n_layers {
        let n_in = arch.layer_sizes[l];
        let n_out = arch.layer_sizes[l + 1];
        let base = offsets[l];
        for j in 0..n_out {
            let d = ws.delta[l][j];
            let row = &mut grad[base + j * n_in..base + (j + 1) * n_in];
            for (g, a) in row.iter_mut().zip(ws.acts[l].iter()) {
                *g = d * a;
            }
            grad[base + n_in * n_out + j] = d;
        }
    }
    f
}

/// Raw pre-link score `f_NN(x, theta)`.
pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<f64, NnError> {
    if x.len() != params.arch.input_dim() {
        return Err(NnError::DimensionMismatch {
            expected: params.arch.input_dim(),
            got: x.len(),
        });
    }
    let mut ws = Scratch::for_arch(&params.arch);
    Ok(forward_into(&params.arch, &params.theta, x, &mut ws))
}

/// Exact gradient of [`forward`] with respect to `theta`.
pub fn network_gradient(params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>, NnError> {
    if x.len() != params.arch.input_dim() {
        return Err(NnError::DimensionMismatch {
            expected: params.arch.input_dim(),
            got: x.len(),
        });
    }
    let mut ws = Scratch::for_arch(&params.arch);
    let mut grad = vec![0.0; params.theta.len()];
    backprop_into(&params.arch, &params.theta, x, &mut ws, &mut grad);
    Ok(grad)
}

fn check_batch(params: &NetworkParams, batch: &BinaryBatch) -> Result<(), NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    if batch.n_features() != params.arch.input_dim() {
        return Err(NnError::DimensionMismatch {
            expected: params.arch.input_dim(),
            got: batch.n_features(),
        });
    }
    Ok(())
}

/// Bernoulli log-likelihood `sum_i [y_i log g(f_i) + (1 - y_i) log(1 - g(f_i))]`.
pub fn log_likelihood(params: &NetworkParams, batch: &BinaryBatch) -> Result<f64, NnError> {
    check_batch(params, batch)?;
    let mut ws = Scratch::for_arch(&params.arch);
    let mut total = 0.0;
    for i in 0..batch.len() {
        let f = forward_into(&params.arch, &params.theta, batch.row(i), &mut ws);
        total += if batch.labels()[i] == 1 {
            log_logistic(f)
        } else {
            log_logistic(-f)
        };
    }
    Ok(total)
}

/// Gradient of the log-likelihood: `sum_i (y_i - g(f_i)) grad_theta f_NN(x_i)`,
/// the per-sample form of the two-sum likelihood-gradient expression.
pub fn grad_log_likelihood(params: &NetworkParams, batch: &BinaryBatch) -> Result<Vec<f64>, NnError> {
    check_batch(params, batch)?;
    let mut ws = Scratch::for_arch(&params.arch);
    let mut grad_f = vec![0.0; params.theta.len()];
    let mut total = vec![0.0; params.theta.len()];
    for i in 0..batch.len() {
        let f = backprop_into(&params.arch, &params.theta, batch.row(i), &mut ws, &mut grad_f);
        let coeff = f64::from(batch.labels()[i]) - logistic(f);
        for (t, g) in total.iter_mut().zip(grad_f.iter()) {
            *t += coeff * g;
        }
    }
    Ok(total)
}
