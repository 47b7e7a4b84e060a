//! Dense feed-forward networks used as shift functions inside coupling layers.
//!
//! Hidden layers apply the activation, the read-out layer is affine. Weights
//! are row-major `(out, in)`. Gradients are exact reverse mode; the flat
//! parameter layout (per layer: weights then biases) is shared by
//! [`Mlp::params`], [`Mlp::set_params`] and the gradient buffers so the
//! optimizer can work on plain slices.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::SampleRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Global Lipschitz constant of the scalar activation.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            Activation::Tanh | Activation::Relu => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Parameter gradients with the same shapes as the owning [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config(format!(
            "mlp needs at least an input and an output dimension, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Config(format!(
            "mlp dimensions must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = SampleRng::new(seed);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.uniform_in(-limit, limit))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        validate_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect(),
            biases: dims.windows(2).map(|p| vec![0.0; p[1]]).collect(),
            activation,
        })
    }

    /// Builds a network from explicit parameters, checking every shape and
    /// rejecting non-finite entries.
    pub fn from_parts(
        dims: Vec<usize>,
        activation: Activation,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        validate_dims(&dims)?;
        let n = dims.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::parse(
                "weights",
                format!(
                    "expected {n} weight and bias blocks, got {} and {}",
                    weights.len(),
                    biases.len()
                ),
            ));
        }
        for (l, pair) in dims.windows(2).enumerate() {
            if weights[l].len() != pair[0] * pair[1] {
                return Err(Error::parse(
                    format!("weights[{l}]"),
                    format!(
                        "expected {}x{} entries, got {}",
                        pair[1],
                        pair[0],
                        weights[l].len()
                    ),
                ));
            }
            if biases[l].len() != pair[1] {
                return Err(Error::parse(
                    format!("biases[{l}]"),
                    format!("expected {} entries, got {}", pair[1], biases[l].len()),
                ));
            }
            if let Some(bad) = weights[l].iter().chain(&biases[l]).find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite parameter {bad} in layer {l}"
                )));
            }
        }
        Ok(Self {
            dims,
            weights,
            biases,
            activation,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn hidden_layers(&self) -> usize {
        self.dims.len() - 2
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("mlp parameters", self.num_params(), flat.len())?;
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("mlp input", self.input_dim(), x.len())?;
        let mut out = vec![0.0; self.output_dim()];
        self.forward_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked hot path; `x` and `out` must have the network's dimensions.
    pub(crate) fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        let last = self.weights.len() - 1;
        let mut current: Vec<f64> = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let n_in = self.dims[l];
            let n_out = self.dims[l + 1];
            if l == last {
                affine(w, b, &current, n_in, out);
            } else {
                let mut next = vec![0.0; n_out];
                affine(w, b, &current, n_in, &mut next);
                for v in &mut next {
                    *v = self.activation.apply(*v);
                }
                current = next;
            }
        }
    }

    /// Gradients of `<upstream, forward(x)>` with respect to the parameters and to `x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        check_dim("mlp input", self.input_dim(), x.len())?;
        check_dim("mlp upstream", self.output_dim(), upstream.len())?;
        let mut flat = vec![0.0; self.num_params()];
        let mut grad_x = vec![0.0; self.input_dim()];
        self.backward_accumulate(x, upstream, &mut flat, &mut grad_x);

        let mut grads = MlpGrads {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        };
        let mut at = 0;
        for (w, b) in grads.weights.iter_mut().zip(grads.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok((grads, grad_x))
    }

    /// Unchecked hot path: adds parameter gradients into `grad_params`
    /// (flat layout) and input gradients into `grad_x`.
    pub(crate) fn backward_accumulate(
        &self,
        x: &[f64],
        upstream: &[f64],
        grad_params: &mut [f64],
        grad_x: &mut [f64],
    ) {
        let n_layers = self.weights.len();
        // Inputs to every affine map, and the hidden pre-activations.
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers - 1);
        inputs.push(x.to_vec());
        for l in 0..n_layers - 1 {
            let mut z = vec![0.0; self.dims[l + 1]];
            affine(
                &self.weights[l],
                &self.biases[l],
                &inputs[l],
                self.dims[l],
                &mut z,
            );
            inputs.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            pre.push(z);
        }

        let mut offsets = Vec::with_capacity(n_layers);
        let mut at = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            offsets.push(at);
            at += w.len() + b.len();
        }

        let mut delta: Vec<f64> = upstream.to_vec();
        for l in (0..n_layers).rev() {
            let n_in = self.dims[l];
            let n_out = self.dims[l + 1];
            let w = &self.weights[l];
            let input = &inputs[l];
            let base = offsets[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad_params[base + o * n_in..base + (o + 1) * n_in];
                for (g, &xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
                grad_params[base + n_in * n_out + o] += d;
            }
            let mut back = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (bi, &wi) in back.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *bi += wi * d;
                }
            }
            if l == 0 {
                for (g, v) in grad_x.iter_mut().zip(&back) {
                    *g += v;
                }
            } else {
                for (bi, &z) in back.iter_mut().zip(&pre[l - 1]) {
                    *bi *= self.activation.derivative(z);
                }
                delta = back;
            }
        }
    }

    /// Input Jacobian, row-major `(d_out, d_in)`.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("mlp input", self.input_dim(), x.len())?;
        let (n_in, n_out) = (self.input_dim(), self.output_dim());
        let mut jac = vec![0.0; n_out * n_in];
        let mut scratch = vec![0.0; self.num_params()];
        let mut unit = vec![0.0; n_out];
        for o in 0..n_out {
            unit.fill(0.0);
            unit[o] = 1.0;
            self.backward_accumulate(x, &unit, &mut scratch, &mut jac[o * n_in..(o + 1) * n_in]);
        }
        Ok(jac)
    }

    /// Upper bound on the sup-norm Lipschitz constant: the product of the
    /// weight matrices' infinity norms times `L_act^hidden_layers`.
    pub fn lipschitz_bound(&self) -> f64 {
        let mut bound = self
            .activation
            .lipschitz()
            .powi(self.hidden_layers() as i32);
        for (l, w) in self.weights.iter().enumerate() {
            let n_in = self.dims[l];
            let norm = w
                .chunks(n_in)
                .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            bound *= norm;
        }
        bound
    }
}

#[inline]
fn affine(w: &[f64], b: &[f64], x: &[f64], n_in: usize, out: &mut [f64]) {
    for (o, (out_o, &b_o)) in out.iter_mut().zip(b).enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *out_o = row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b_o;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update. Parameters are left untouched when
    /// the gradient contains a non-finite entry.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim("adam parameters", self.m.len(), params.len())?;
        check_dim("adam gradients", self.m.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { step: self.t + 1 });
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
