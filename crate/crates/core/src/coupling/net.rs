use crate::error::{check_dim, Error, Result};

use super::layer::Layer;
use super::shift::ShiftFn;

/// A composition `m_N ∘ ... ∘ m_1` of coupling layers. Layer 0 is applied first.
#[derive(Debug, Clone, PartialEq)]
pub struct MPNet {
    dim: usize,
    layers: Vec<Layer>,
}

/// Gradients from [`MPNet::backward`]. `params` follows [`MPNet::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl MPNet {
    /// The identity map on `R^dim`.
    pub fn identity(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!(
                "state dimension must be at least 2, got {dim}"
            )));
        }
        Ok(Self {
            dim,
            layers: Vec::new(),
        })
    }

    pub fn from_layers(dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut net = Self::identity(dim)?;
        for layer in layers {
            net.push(layer)?;
        }
        Ok(net)
    }

    pub fn push(&mut self, layer: Layer) -> Result<()> {
        check_dim("layer dimension", self.dim, layer.dim())?;
        self.layers.push(layer);
        Ok(())
    }

    /// `other ∘ self`.
    pub fn then(mut self, other: &MPNet) -> Result<Self> {
        check_dim("net dimension", self.dim, other.dim)?;
        self.layers.extend(other.layers.iter().cloned());
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("net input", self.dim, x.len())?;
        let mut y = x.to_vec();
        self.forward_in_place(&mut y);
        Ok(y)
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("net input", self.dim, y.len())?;
        let mut x = y.to_vec();
        for layer in self.layers.iter().rev() {
            layer.apply_in_place(&mut x, -1.0);
        }
        Ok(x)
    }

    pub(crate) fn forward_in_place(&self, x: &mut [f64]) {
        for layer in &self.layers {
            layer.apply_in_place(x, 1.0);
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.shift().num_params()).sum()
    }

    /// Trainable parameters of every MLP shift, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            if let ShiftFn::Mlp(m) = layer.shift() {
                out.extend(m.params());
            }
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("net parameters", self.num_params(), flat.len())?;
        let mut at = 0;
        for layer in &mut self.layers {
            if let ShiftFn::Mlp(m) = layer.shift_mut() {
                let n = m.num_params();
                m.set_params(&flat[at..at + n])?;
                at += n;
            }
        }
        Ok(())
    }

    /// Gradients of `<upstream, forward(x)>` with respect to all trainable
    /// parameters and to `x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<NetGrads> {
        check_dim("net input", self.dim, x.len())?;
        check_dim("net upstream", self.dim, upstream.len())?;
        let mut params = vec![0.0; self.num_params()];
        let input = self.backward_accumulate(x, upstream, &mut params)?;
        Ok(NetGrads { params, input })
    }

    /// Adds parameter gradients into `grad_params` and returns the input gradient.
    pub(crate) fn backward_accumulate(
        &self,
        x: &[f64],
        upstream: &[f64],
        grad_params: &mut [f64],
    ) -> Result<Vec<f64>> {
        let mut states = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for layer in &self.layers {
            states.push(current.clone());
            layer.apply_in_place(&mut current, 1.0);
        }

        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for layer in &self.layers {
            offsets.push(at);
            at += layer.shift().num_params();
        }

        let mut grad = upstream.to_vec();
        let mut next = vec![0.0; self.dim];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let n = layer.shift().num_params();
            let slot = &mut grad_params[offsets[l]..offsets[l] + n];
            layer.backward(&states[l], &grad, slot, &mut next)?;
            std::mem::swap(&mut grad, &mut next);
        }
        Ok(grad)
    }
}
