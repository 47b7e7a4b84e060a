use crate::error::{check_dim, Error, Result};

use super::shift::ShiftFn;

/// Which block a layer modifies. `s` and `i` are 1-based.
///
/// With `x[a:b]` meaning components `a` inclusive to `b` exclusive:
/// - `Upper { s }`: `x[:s] += shift(x[s:])`
/// - `Lower { s }`: `x[s:] += shift(x[:s])`
/// - `Shear { i }`: `x[i] += shift(x without component i)`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Upper { s: usize },
    Lower { s: usize },
    Shear { i: usize },
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Upper { .. } => "upper",
            LayerKind::Lower { .. } => "lower",
            LayerKind::Shear { .. } => "shear",
        }
    }

    /// `(shift input dim, shift output dim)` in ambient dimension `dim`.
    pub fn shift_dims(self, dim: usize) -> (usize, usize) {
        match self {
            LayerKind::Upper { s } => (dim + 1 - s, s - 1),
            LayerKind::Lower { s } => (s - 1, dim + 1 - s),
            LayerKind::Shear { .. } => (dim - 1, 1),
        }
    }

    fn validate(self, dim: usize) -> Result<()> {
        if dim < 2 {
            return Err(Error::Config(format!(
                "state dimension must be at least 2, got {dim}"
            )));
        }
        match self {
            LayerKind::Upper { s } | LayerKind::Lower { s } if !(2..=dim).contains(&s) => {
                Err(Error::Config(format!("split s = {s} outside 2..={dim}")))
            }
            LayerKind::Shear { i } if !(1..=dim).contains(&i) => Err(Error::Config(format!(
                "shear index i = {i} outside 1..={dim}"
            ))),
            _ => Ok(()),
        }
    }
}

/// One additive coupling module.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    dim: usize,
    kind: LayerKind,
    shift: ShiftFn,
}

impl Layer {
    pub fn new(dim: usize, kind: LayerKind, shift: impl Into<ShiftFn>) -> Result<Self> {
        kind.validate(dim)?;
        let shift = shift.into();
        let (n_in, n_out) = kind.shift_dims(dim);
        check_dim("shift input", n_in, shift.in_dim())?;
        check_dim("shift output", n_out, shift.out_dim())?;
        Ok(Self { dim, kind, shift })
    }

    pub fn upper(dim: usize, s: usize, shift: impl Into<ShiftFn>) -> Result<Self> {
        Self::new(dim, LayerKind::Upper { s }, shift)
    }

    pub fn lower(dim: usize, s: usize, shift: impl Into<ShiftFn>) -> Result<Self> {
        Self::new(dim, LayerKind::Lower { s }, shift)
    }

    pub fn shear(dim: usize, i: usize, shift: impl Into<ShiftFn>) -> Result<Self> {
        Self::new(dim, LayerKind::Shear { i }, shift)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn shift(&self) -> &ShiftFn {
        &self.shift
    }

    pub fn shift_mut(&mut self) -> &mut ShiftFn {
        &mut self.shift
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("layer input", self.dim, x.len())?;
        let mut y = x.to_vec();
        self.apply_in_place(&mut y, 1.0);
        Ok(y)
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("layer input", self.dim, y.len())?;
        let mut x = y.to_vec();
        self.apply_in_place(&mut x, -1.0);
        Ok(x)
    }

    /// `sign = 1` adds the shift, `sign = -1` subtracts it. The shift reads
    /// only the block that the layer leaves unchanged, so either direction
    /// sees the same argument.
    pub(crate) fn apply_in_place(&self, x: &mut [f64], sign: f64) {
        match self.kind {
            LayerKind::Upper { s } => {
                let (head, tail) = x.split_at_mut(s - 1);
                let mut delta = vec![0.0; head.len()];
                self.shift.eval_into(tail, &mut delta);
                add_scaled(head, &delta, sign);
            }
            LayerKind::Lower { s } => {
                let (head, tail) = x.split_at_mut(s - 1);
                let mut delta = vec![0.0; tail.len()];
                self.shift.eval_into(head, &mut delta);
                add_scaled(tail, &delta, sign);
            }
            LayerKind::Shear { i } => {
                let input = without(x, i - 1);
                let mut delta = [0.0];
                self.shift.eval_into(&input, &mut delta);
                if sign > 0.0 {
                    x[i - 1] += delta[0];
                } else {
                    x[i - 1] -= delta[0];
                }
            }
        }
    }

    /// Chain rule through the layer. `x` is the layer input, `upstream` the
    /// gradient with respect to the layer output; `grad_x` is overwritten
    /// with the gradient with respect to `x`.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        upstream: &[f64],
        grad_params: &mut [f64],
        grad_x: &mut [f64],
    ) -> Result<()> {
        grad_x.copy_from_slice(upstream);
        match self.kind {
            LayerKind::Upper { s } => {
                let (_, x_in) = x.split_at(s - 1);
                let (up_mod, _) = upstream.split_at(s - 1);
                let (_, g_in) = grad_x.split_at_mut(s - 1);
                self.shift
                    .backward_accumulate(x_in, up_mod, grad_params, g_in)
            }
            LayerKind::Lower { s } => {
                let (x_in, _) = x.split_at(s - 1);
                let (_, up_mod) = upstream.split_at(s - 1);
                let (g_in, _) = grad_x.split_at_mut(s - 1);
                self.shift
                    .backward_accumulate(x_in, up_mod, grad_params, g_in)
            }
            LayerKind::Shear { i } => {
                let input = without(x, i - 1);
                let mut g_in = vec![0.0; input.len()];
                self.shift.backward_accumulate(
                    &input,
                    &upstream[i - 1..i],
                    grad_params,
                    &mut g_in,
                )?;
                let mut k = 0;
                for (j, g) in grad_x.iter_mut().enumerate() {
                    if j != i - 1 {
                        *g += g_in[k];
                        k += 1;
                    }
                }
                Ok(())
            }
        }
    }
}

#[inline]
fn add_scaled(target: &mut [f64], delta: &[f64], sign: f64) {
    if sign > 0.0 {
        target.iter_mut().zip(delta).for_each(|(t, d)| *t += d);
    } else {
        target.iter_mut().zip(delta).for_each(|(t, d)| *t -= d);
    }
}

/// `x` with the 0-based component `skip` removed.
pub(crate) fn without(x: &[f64], skip: usize) -> Vec<f64> {
    x.iter()
        .enumerate()
        .filter_map(|(j, &v)| (j != skip).then_some(v))
        .collect()
}

/// Inverse of [`without`]: reinserts `value` at 0-based position `at`.
pub(crate) fn with_inserted(rest: &[f64], at: usize, value: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(rest.len() + 1);
    y.extend_from_slice(&rest[..at]);
    y.push(value);
    y.extend_from_slice(&rest[at..]);
    y
}
