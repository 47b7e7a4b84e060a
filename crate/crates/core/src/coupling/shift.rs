//! Shift functions: the maps a coupling layer adds onto its modified block.
//!
//! A shift is either a trainable [`Mlp`] or a fixed analytic function looked
//! up by string id in a [`ShiftRegistry`]. Fixed shifts carry their id and
//! parameter vector so nets containing them stay serializable.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::mlp::Mlp;

/// A fixed, non-trainable shift `R^in -> R^out`.
pub trait AnalyticShift: Send + Sync + fmt::Debug {
    fn eval(&self, input: &[f64], out: &mut [f64]);

    /// Row-major `(out, in)` Jacobian, when analytic partials are known.
    fn jacobian(&self, _input: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Clone)]
pub struct FixedShift {
    id: String,
    params: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
    func: Arc<dyn AnalyticShift>,
}

impl fmt::Debug for FixedShift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FixedShift")
            .field("id", &self.id)
            .field("params", &self.params)
            .field("in_dim", &self.in_dim)
            .field("out_dim", &self.out_dim)
            .finish()
    }
}

impl PartialEq for FixedShift {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.in_dim == other.in_dim
            && self.out_dim == other.out_dim
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl FixedShift {
    /// Wraps an already-resolved function. The caller guarantees that
    /// resolving `(id, params)` through a registry yields the same map.
    pub fn from_parts(
        id: impl Into<String>,
        params: Vec<f64>,
        in_dim: usize,
        out_dim: usize,
        func: Arc<dyn AnalyticShift>,
    ) -> Self {
        Self {
            id: id.into(),
            params,
            in_dim,
            out_dim,
            func,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn function(&self) -> &Arc<dyn AnalyticShift> {
        &self.func
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShiftFn {
    Mlp(Mlp),
    Fixed(FixedShift),
}

impl From<Mlp> for ShiftFn {
    fn from(m: Mlp) -> Self {
        ShiftFn::Mlp(m)
    }
}

impl ShiftFn {
    pub fn in_dim(&self) -> usize {
        match self {
            ShiftFn::Mlp(m) => m.input_dim(),
            ShiftFn::Fixed(f) => f.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ShiftFn::Mlp(m) => m.output_dim(),
            ShiftFn::Fixed(f) => f.out_dim,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            ShiftFn::Mlp(m) => m.num_params(),
            ShiftFn::Fixed(_) => 0,
        }
    }

    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("shift input", self.in_dim(), input.len())?;
        let mut out = vec![0.0; self.out_dim()];
        self.eval_into(input, &mut out);
        Ok(out)
    }

    pub(crate) fn eval_into(&self, input: &[f64], out: &mut [f64]) {
        match self {
            ShiftFn::Mlp(m) => m.forward_into(input, out),
            ShiftFn::Fixed(f) => f.func.eval(input, out),
        }
    }

    /// Accumulates `J^T upstream` into `grad_input` and, for trainable
    /// shifts, the parameter gradient into `grad_params`.
    pub(crate) fn backward_accumulate(
        &self,
        input: &[f64],
        upstream: &[f64],
        grad_params: &mut [f64],
        grad_input: &mut [f64],
    ) -> Result<()> {
        match self {
            ShiftFn::Mlp(m) => {
                m.backward_accumulate(input, upstream, grad_params, grad_input);
                Ok(())
            }
            ShiftFn::Fixed(f) => {
                let jac = f.func.jacobian(input).ok_or_else(|| {
                    Error::UnsupportedGradient(format!(
                        "fixed shift `{}` has no registered analytic partials",
                        f.id
                    ))
                })?;
                for (o, &u) in upstream.iter().enumerate() {
                    for (j, g) in grad_input.iter_mut().enumerate() {
                        *g += jac[o * f.in_dim + j] * u;
                    }
                }
                Ok(())
            }
        }
    }
}

type Factory = dyn Fn(&str, &[f64], usize, usize) -> Result<Arc<dyn AnalyticShift>> + Send + Sync;

/// Maps fixed-shift ids to constructors. An entry registered under `name`
/// handles the id `name` itself and every id of the form `name:<suffix>`.
pub struct ShiftRegistry {
    entries: Vec<(String, Box<Factory>)>,
}

impl fmt::Debug for ShiftRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.entries.iter().map(|(n, _)| n))
            .finish()
    }
}

impl Default for ShiftRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ShiftRegistry {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// `zero`, `constant` and `affine`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("zero", |_, params, _, out| {
            if !params.is_empty() {
                return Err(Error::parse("shift.params", "`zero` takes no parameters"));
            }
            Ok(Arc::new(Constant(vec![0.0; out])) as Arc<dyn AnalyticShift>)
        });
        reg.register("constant", |_, params, _, out| {
            if params.len() != out {
                return Err(Error::parse(
                    "shift.params",
                    format!("`constant` needs {out} values, got {}", params.len()),
                ));
            }
            Ok(Arc::new(Constant(params.to_vec())) as Arc<dyn AnalyticShift>)
        });
        reg.register("affine", |_, params, n_in, n_out| {
            if params.len() != n_out * (n_in + 1) {
                return Err(Error::parse(
                    "shift.params",
                    format!(
                        "`affine` needs {} values (matrix then offset), got {}",
                        n_out * (n_in + 1),
                        params.len()
                    ),
                ));
            }
            Ok(Arc::new(Affine {
                n_in,
                matrix: params[..n_out * n_in].to_vec(),
                offset: params[n_out * n_in..].to_vec(),
            }) as Arc<dyn AnalyticShift>)
        });
        reg
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&str, &[f64], usize, usize) -> Result<Arc<dyn AnalyticShift>> + Send + Sync + 'static,
    {
        self.entries.retain(|(n, _)| n != name);
        self.entries.push((name.to_string(), Box::new(factory)));
    }

    pub fn resolve(
        &self,
        id: &str,
        params: Vec<f64>,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<FixedShift> {
        if let Some(bad) = params.iter().find(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!(
                "fixed shift `{id}` has non-finite parameter {bad}"
            )));
        }
        let (_, factory) = self
            .entries
            .iter()
            .find(|(name, _)| {
                id == name
                    || id
                        .strip_prefix(name.as_str())
                        .is_some_and(|r| r.starts_with(':'))
            })
            .ok_or_else(|| Error::parse("shift.id", format!("unknown fixed shift id `{id}`")))?;
        let func = factory(id, &params, in_dim, out_dim)?;
        Ok(FixedShift::from_parts(id, params, in_dim, out_dim, func))
    }

    pub fn constant(&self, values: Vec<f64>, in_dim: usize) -> FixedShift {
        let out = values.len();
        FixedShift::from_parts(
            "constant",
            values.clone(),
            in_dim,
            out,
            Arc::new(Constant(values)),
        )
    }

    pub fn zero(&self, in_dim: usize, out_dim: usize) -> FixedShift {
        FixedShift::from_parts(
            "zero",
            Vec::new(),
            in_dim,
            out_dim,
            Arc::new(Constant(vec![0.0; out_dim])),
        )
    }
}

#[derive(Debug)]
struct Constant(Vec<f64>);

impl AnalyticShift for Constant {
    fn eval(&self, _input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }

    fn jacobian(&self, input: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; self.0.len() * input.len()])
    }
}

#[derive(Debug)]
struct Affine {
    n_in: usize,
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl AnalyticShift for Affine {
    fn eval(&self, input: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().enumerate() {
            let row = &self.matrix[o * self.n_in..(o + 1) * self.n_in];
            *v = row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + self.offset[o];
        }
    }

    fn jacobian(&self, _input: &[f64]) -> Option<Vec<f64>> {
        Some(self.matrix.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve() {
        let reg = ShiftRegistry::with_builtins();
        let c = reg.resolve("constant", vec![1.0, 2.0], 3, 2).unwrap();
        assert_eq!(ShiftFn::Fixed(c).eval(&[0.0; 3]).unwrap(), vec![1.0, 2.0]);
        let a = reg.resolve("affine", vec![1.0, 2.0, 0.5], 2, 1).unwrap();
        assert_eq!(ShiftFn::Fixed(a).eval(&[1.0, 1.0]).unwrap(), vec![3.5]);
    }

    #[test]
    fn unknown_or_malformed_ids_fail() {
        let reg = ShiftRegistry::with_builtins();
        assert!(matches!(
            reg.resolve("nope", vec![], 1, 1),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            reg.resolve("constantly", vec![1.0], 1, 1),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            reg.resolve("constant", vec![1.0, 2.0], 1, 1),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn prefixed_ids_route_to_entry() {
        let mut reg = ShiftRegistry::empty();
        reg.register("family", |id, _, _, out| {
            let v = id.split(':').nth(1).unwrap().parse::<f64>().unwrap();
            Ok(Arc::new(Constant(vec![v; out])) as Arc<dyn AnalyticShift>)
        });
        let f = reg.resolve("family:4", vec![], 1, 1).unwrap();
        assert_eq!(ShiftFn::Fixed(f).eval(&[0.0]).unwrap(), vec![4.0]);
    }
}
