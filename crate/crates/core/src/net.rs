//! Trainable feature extractor: a small multilayer perceptron with
//! hand-written reverse-mode gradients and an Adam optimizer.
//!
//! Hidden layers use a smooth activation (softplus by default) so gradient
//! checks against central finite differences hold everywhere; the output layer
//! is linear.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softplus,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            // max(z,0) + ln(1+e^-|z|) is the overflow-safe softplus.
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// One dense layer; weights are `in_dim x out_dim` so a batch maps as `X W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    fn affine(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul(&self.weights)?;
        for i in 0..z.rows() {
            let row = z.row_mut(i);
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

/// Multilayer perceptron feature map. The last layer is always linear; all
/// earlier layers pass through the activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNet {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Per-layer parameter gradients plus the gradient w.r.t. the input batch.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
    pub input: Matrix,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    /// Input to each layer (cache.inputs[0] is the batch itself).
    inputs: Vec<Matrix>,
    /// Pre-activation output of each hidden layer.
    pre_activations: Vec<Matrix>,
}

impl FeatureNet {
    /// Build a net with `depth` hidden layers of width `hidden_dim` and a
    /// linear output of width `out_dim`. `depth == 0` gives a single linear
    /// layer. Weights initialize uniformly in +-sqrt(6/(fan_in+fan_out)),
    /// biases at zero.
    pub fn new(
        in_dim: usize,
        hidden_dim: usize,
        depth: usize,
        out_dim: usize,
        activation: Activation,
        stream: RngStream,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 || (depth > 0 && hidden_dim == 0) {
            return Err(Error::InvalidArgument(
                "feature net dimensions must be positive".into(),
            ));
        }
        let mut dims = Vec::with_capacity(depth + 2);
        dims.push(in_dim);
        dims.extend(std::iter::repeat_n(hidden_dim, depth));
        dims.push(out_dim);

        let mut rng = stream.rng();
        let mut layers = Vec::with_capacity(depth + 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weights = Matrix::zeros(fan_in, fan_out);
            for v in weights.data_mut() {
                *v = rand::Rng::random_range(&mut rng, -limit..=limit);
            }
            layers.push(Layer {
                weights,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(FeatureNet { layers, activation })
    }

    /// A single linear layer fixed at W = I, b = 0: forward is the identity.
    pub fn identity(dim: usize) -> Self {
        FeatureNet {
            layers: vec![Layer {
                weights: Matrix::eye(dim),
                bias: vec![0.0; dim],
            }],
            activation: Activation::Softplus,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn check_input(&self, x: &Matrix, context: &'static str) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context,
                detail: format!(
                    "input has {} columns, net expects {}",
                    x.cols(),
                    self.in_dim()
                ),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x, "FeatureNet::forward")?;
        let hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(hidden);
        let mut current = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(current.clone());
            let z = layer.affine(&current)?;
            if l < hidden {
                pre_activations.push(z.clone());
                current = z.map(|v| self.activation.apply(v));
            } else {
                current = z;
            }
        }
        Ok((
            current,
            ForwardCache {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Reverse-mode gradients of the scalar whose per-output sensitivity is
    /// `upstream` (same shape as the forward output).
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<NetGrads> {
        let last = self.layers.len() - 1;
        if upstream.cols() != self.out_dim() || upstream.rows() != cache.inputs[0].rows() {
            return Err(Error::DimensionMismatch {
                context: "FeatureNet::backward",
                detail: format!(
                    "upstream is {}x{}, expected {}x{}",
                    upstream.rows(),
                    upstream.cols(),
                    cache.inputs[0].rows(),
                    self.out_dim()
                ),
            });
        }
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            // dW = input^T delta, db = column sums of delta.
            let dw = cache.inputs[l].matmul_tn(&delta)?;
            let mut db = vec![0.0; delta.cols()];
            for i in 0..delta.rows() {
                for (j, b) in db.iter_mut().enumerate() {
                    *b += delta.get(i, j);
                }
            }
            grads.push(LayerGrads {
                weights: dw,
                bias: db,
            });
            // Propagate to the layer input; through the activation for hidden layers.
            let mut next = delta.matmul_nt(&self.layers[l].weights)?;
            if l > 0 {
                let z = &cache.pre_activations[l - 1];
                for i in 0..next.rows() {
                    for j in 0..next.cols() {
                        let g = next.get(i, j) * self.activation.derivative(z.get(i, j));
                        next.set(i, j, g);
                    }
                }
            }
            delta = next;
            let _ = last;
        }
        grads.reverse();
        Ok(NetGrads {
            layers: grads,
            input: delta,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    /// Flatten all parameters (layer by layer, weights then bias).
    pub fn params_to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(l.weights.data());
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_params_from_vec(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "FeatureNet::set_params_from_vec",
                detail: format!(
                    "expected {} params, got {}",
                    self.param_count(),
                    params.len()
                ),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let wlen = l.weights.data().len();
            l.weights
                .data_mut()
                .copy_from_slice(&params[offset..offset + wlen]);
            offset += wlen;
            let blen = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + blen]);
            offset += blen;
        }
        Ok(())
    }
}

impl NetGrads {
    /// Flatten parameter gradients in the same order as `params_to_vec`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(l.weights.data());
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn accumulate(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

/// Adam accumulators over a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn first_moments(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moments(&self) -> &[f64] {
        &self.v
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            context: "adam_step",
            detail: format!(
                "params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}
