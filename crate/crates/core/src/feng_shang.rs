//! Splitting a divergence-free field into a sum of `D - 1` fields, each
//! active only in two neighbouring coordinates `(d, d+1)` and generated by a
//! scalar function of all coordinates.
//!
//! The construction walks `d = 1 .. D-2` keeping a remainder `r`, starting
//! from `r = f`. Pair `d` takes `r_d` as its first active component and
//!
//! ```text
//!     -∫_0^{y_{d+1}} ∂r_d/∂y_d (y_1, .., y_d, s, y_{d+2}, ..) ds
//! ```
//!
//! as its second, which makes the pair divergence-free on its own. The pair
//! is subtracted from the remainder; the last pair is whatever is left in
//! components `D-1, D`. Partials are central differences and the integral is
//! Gauss–Legendre quadrature on `[0, y_{d+1}]`. When the sampled partial
//! `∂r_d/∂y_d` vanishes the integral is replaced by an exact zero.

use std::fmt;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::dynamics::{divergence_fd, VectorField};
use crate::error::{check_dim, Error, Result};
use crate::rng::SampleRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeConfig {
    pub sample_box: BoxDomain,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
    #[serde(default = "default_h_fd")]
    pub h_fd: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_quad_nodes() -> usize {
    32
}
fn default_h_fd() -> f64 {
    1e-5
}
fn default_tol() -> f64 {
    1e-6
}
fn default_n_samples() -> usize {
    200
}

impl DecomposeConfig {
    pub fn new(sample_box: BoxDomain) -> Self {
        Self {
            sample_box,
            quad_nodes: default_quad_nodes(),
            h_fd: default_h_fd(),
            tol: default_tol(),
            n_samples: default_n_samples(),
            seed: 0,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        self.sample_box.validate()?;
        check_dim("sample box", dim, self.sample_box.dim())?;
        if self.quad_nodes == 0 || self.n_samples == 0 {
            return Err(Error::Config(
                "quad_nodes and n_samples must be positive".into(),
            ));
        }
        if !(self.h_fd > 0.0 && self.tol > 0.0) {
            return Err(Error::Config("h_fd and tol must be positive".into()));
        }
        Ok(())
    }
}

/// Shared evaluation context of one decomposition.
pub(crate) struct Context {
    field: VectorField,
    rule: GaussLegendre,
    h_fd: f64,
}

impl fmt::Debug for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Context")
            .field("field", &self.field)
            .field("h_fd", &self.h_fd)
            .finish()
    }
}

/// Scalar expression for one active component of a pair. Indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Zero,
    /// Component `index` of the base field.
    Field {
        index: usize,
    },
    Difference(Box<Component>, Box<Component>),
    /// `-∫_0^{y_var} ∂_{wrt} integrand(y with y_var = s) ds`.
    NegAntiderivative {
        integrand: Box<Component>,
        wrt: usize,
        var: usize,
    },
}

impl Component {
    fn difference(a: Component, b: Component) -> Component {
        match b {
            Component::Zero => a,
            b => Component::Difference(Box::new(a), Box::new(b)),
        }
    }

    fn eval(&self, ctx: &Context, t: f64, y: &[f64]) -> f64 {
        match self {
            Component::Zero => 0.0,
            Component::Field { index } => ctx.field.eval(t, y)[*index],
            Component::Difference(a, b) => a.eval(ctx, t, y) - b.eval(ctx, t, y),
            Component::NegAntiderivative {
                integrand,
                wrt,
                var,
            } => {
                let mut probe = y.to_vec();
                let integral = ctx.rule.integrate(0.0, y[*var], |s| {
                    probe[*var] = s;
                    integrand.partial(ctx, t, &probe, *wrt)
                });
                -integral
            }
        }
    }

    fn fd_partial(&self, ctx: &Context, t: f64, y: &[f64], j: usize) -> f64 {
        let h = ctx.h_fd;
        let mut probe = y.to_vec();
        probe[j] = y[j] + h;
        let plus = self.eval(ctx, t, &probe);
        probe[j] = y[j] - h;
        let minus = self.eval(ctx, t, &probe);
        (plus - minus) / (2.0 * h)
    }

    /// Partial derivative using the structure of the expression; finite
    /// differences are taken only across an antiderivative in a variable
    /// other than its upper limit, so they never nest through the recursion.
    fn partial(&self, ctx: &Context, t: f64, y: &[f64], j: usize) -> f64 {
        match self {
            Component::Zero => 0.0,
            Component::Field { index } => match ctx.field.partial(t, y, *index, j) {
                Some(v) => v,
                None => self.fd_partial(ctx, t, y, j),
            },
            Component::Difference(a, b) => a.partial(ctx, t, y, j) - b.partial(ctx, t, y, j),
            Component::NegAntiderivative {
                integrand,
                wrt,
                var,
            } if *var == j => -integrand.partial(ctx, t, y, *wrt),
            Component::NegAntiderivative { .. } => self.fd_partial(ctx, t, y, j),
        }
    }

    /// Exact partial, when neither a field partial nor an integral over a
    /// non-limit variable is missing.
    fn analytic_partial(&self, ctx: &Context, t: f64, y: &[f64], j: usize) -> Option<f64> {
        match self {
            Component::Zero => Some(0.0),
            Component::Field { index } => ctx.field.partial(t, y, *index, j),
            Component::Difference(a, b) => {
                Some(a.analytic_partial(ctx, t, y, j)? - b.analytic_partial(ctx, t, y, j)?)
            }
            Component::NegAntiderivative {
                integrand,
                wrt,
                var,
            } if *var == j => Some(-integrand.analytic_partial(ctx, t, y, *wrt)?),
            Component::NegAntiderivative { integrand, .. } if integrand.is_zero() => Some(0.0),
            Component::NegAntiderivative { .. } => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Component::Zero)
    }

    pub fn uses_quadrature(&self) -> bool {
        match self {
            Component::Zero | Component::Field { .. } => false,
            Component::Difference(a, b) => a.uses_quadrature() || b.uses_quadrature(),
            Component::NegAntiderivative { .. } => true,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Zero => write!(f, "0"),
            Component::Field { index } => write!(f, "f{}", index + 1),
            Component::Difference(a, b) => write!(f, "{a} - ({b})"),
            Component::NegAntiderivative {
                integrand,
                wrt,
                var,
            } => {
                write!(f, "-int_0^y{} d/dy{}[{integrand}] ds", var + 1, wrt + 1)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Separability {
    Yes,
    No,
    Unknown,
}

/// A field whose only nonzero components are `d` and `d+1` (1-based `d`).
#[derive(Debug, Clone)]
pub struct PairField {
    d: usize,
    ctx: Arc<Context>,
    first: Component,
    second: Component,
    separable: Separability,
}

impl PairField {
    /// 1-based index of the first active coordinate.
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dim(&self) -> usize {
        self.ctx.field.dim()
    }

    pub fn separable(&self) -> Separability {
        self.separable
    }

    pub fn components(&self) -> (&Component, &Component) {
        (&self.first, &self.second)
    }

    /// Value of the active component `d` (`which = 0`) or `d+1` (`which = 1`).
    pub fn active(&self, which: usize, t: f64, y: &[f64]) -> f64 {
        match which {
            0 => self.first.eval(&self.ctx, t, y),
            _ => self.second.eval(&self.ctx, t, y),
        }
    }

    /// Analytic gradient of one active component, if it needs no quadrature.
    pub fn active_gradient(&self, which: usize, t: f64, y: &[f64]) -> Option<Vec<f64>> {
        let c = if which == 0 {
            &self.first
        } else {
            &self.second
        };
        (0..y.len())
            .map(|j| c.analytic_partial(&self.ctx, t, y, j))
            .collect()
    }

    pub fn active_fd_partial(&self, which: usize, t: f64, y: &[f64], j: usize) -> f64 {
        let c = if which == 0 {
            &self.first
        } else {
            &self.second
        };
        c.fd_partial(&self.ctx, t, y, j)
    }

    /// The pair embedded in `R^D`; components outside `{d, d+1}` are exactly 0.
    pub fn eval(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("pair state", self.dim(), y.len())?;
        let mut out = vec![0.0; y.len()];
        out[self.d - 1] = self.active(0, t, y);
        out[self.d] = self.active(1, t, y);
        Ok(out)
    }

    /// Central-difference `∂u_d/∂y_d + ∂u_{d+1}/∂y_{d+1}`.
    pub fn divergence_fd(&self, t: f64, y: &[f64]) -> f64 {
        self.active_fd_partial(0, t, y, self.d - 1) + self.active_fd_partial(1, t, y, self.d)
    }

    /// Human-readable expressions for the two active components.
    pub fn analytic_form(&self) -> (String, String) {
        (self.first.to_string(), self.second.to_string())
    }
}

/// Evaluates one pair field at `(t, y)`.
pub fn pair_eval(pair: &PairField, t: f64, y: &[f64]) -> Result<Vec<f64>> {
    pair.eval(t, y)
}

/// `true` iff every sampled `|∂u_d/∂y_d|` and `|∂u_{d+1}/∂y_{d+1}|` is below `tol`.
pub fn separability_check(
    pair: &PairField,
    domain: &BoxDomain,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<bool> {
    check_dim("sample box", pair.dim(), domain.dim())?;
    let mut rng = SampleRng::new(seed);
    for _ in 0..n_samples {
        let y = pair.ctx.field.sample_regular(domain, &mut rng)?;
        let own_first = pair.active_fd_partial(0, 0.0, &y, pair.d - 1).abs();
        let own_second = pair.active_fd_partial(1, 0.0, &y, pair.d).abs();
        if !(own_first < tol && own_second < tol) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub field: VectorField,
    pub config: DecomposeConfig,
    pub pairs: Vec<PairField>,
    /// Largest sampled `‖f - Σ pairs‖_∞`.
    pub residual_max: f64,
    pub samples: usize,
}

impl Decomposition {
    /// `Σ_d pair_d(t, y)`.
    pub fn sum(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let mut total = vec![0.0; y.len()];
        for pair in &self.pairs {
            for (acc, v) in total.iter_mut().zip(pair.eval(t, y)?) {
                *acc += v;
            }
        }
        Ok(total)
    }

    pub fn all_separable(&self) -> bool {
        self.pairs.iter().all(|p| p.separable == Separability::Yes)
    }

    pub fn report(&self) -> DecompositionReport {
        DecompositionReport {
            field: self.field.id().to_string(),
            pairs: self
                .pairs
                .iter()
                .map(|p| {
                    let (first, second) = p.analytic_form();
                    PairReport {
                        d: p.d,
                        separable: p.separable,
                        analytic_form: (!p.first.uses_quadrature() && !p.second.uses_quadrature())
                            .then(|| [first.clone(), second.clone()]),
                        expression: [first, second],
                    }
                })
                .collect(),
            residual_max: self.residual_max,
            samples: self.samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub d: usize,
    pub separable: Separability,
    /// Present when both components are closed-form in the base field.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic_form: Option<[String; 2]>,
    pub expression: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub field: String,
    pub pairs: Vec<PairReport>,
    pub residual_max: f64,
    pub samples: usize,
}

fn sample_points(field: &VectorField, config: &DecomposeConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = SampleRng::new(config.seed);
    (0..config.n_samples)
        .map(|_| field.sample_regular(&config.sample_box, &mut rng))
        .collect()
}

pub fn decompose(field: &VectorField, config: &DecomposeConfig) -> Result<Decomposition> {
    field.validate()?;
    let dim = field.dim();
    config.validate(dim)?;
    let points = sample_points(field, config)?;

    let mut worst = (0.0f64, &points[0]);
    for y in &points {
        let div = divergence_fd(field, 0.0, y, config.h_fd)?.abs();
        if div > worst.0 {
            worst = (div, y);
        }
    }
    if worst.0 >= config.tol {
        return Err(Error::NotDivergenceFree {
            point: worst.1.clone(),
            divergence: worst.0,
        });
    }

    let nodes = NonZeroUsize::new(config.quad_nodes).expect("validated above");
    let ctx = Arc::new(Context {
        field: field.clone(),
        rule: GaussLegendre::new(nodes),
        h_fd: config.h_fd,
    });

    let mut pairs = Vec::with_capacity(dim - 1);
    let mut carried = Component::Zero;
    for d in 0..dim - 1 {
        let first = Component::difference(Component::Field { index: d }, carried.clone());
        let second = if d == dim - 2 {
            Component::Field { index: dim - 1 }
        } else {
            let own_partial_vanishes = points
                .iter()
                .all(|y| first.fd_partial(&ctx, 0.0, y, d).abs() < config.tol);
            if own_partial_vanishes {
                Component::Zero
            } else {
                Component::NegAntiderivative {
                    integrand: Box::new(first.clone()),
                    wrt: d,
                    var: d + 1,
                }
            }
        };
        carried = second.clone();
        pairs.push(PairField {
            d: d + 1,
            ctx: Arc::clone(&ctx),
            first,
            second,
            separable: Separability::Unknown,
        });
    }

    let mut decomposition = Decomposition {
        field: field.clone(),
        config: config.clone(),
        pairs,
        residual_max: 0.0,
        samples: points.len(),
    };

    let mut worst_residual = (0.0f64, &points[0]);
    for y in &points {
        let f = field.eval(0.0, y);
        let total = decomposition.sum(0.0, y)?;
        let r = f
            .iter()
            .zip(&total)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !(r <= worst_residual.0) {
            worst_residual = (r, y);
        }
    }
    if !(worst_residual.0 < config.tol) {
        return Err(Error::Decomposition {
            point: worst_residual.1.clone(),
            residual: worst_residual.0,
            tol: config.tol,
        });
    }
    decomposition.residual_max = worst_residual.0;

    for pair in &mut decomposition.pairs {
        let yes = separability_check(
            pair,
            &config.sample_box,
            config.n_samples,
            config.tol,
            config.seed,
        )?;
        pair.separable = if yes {
            Separability::Yes
        } else {
            Separability::No
        };
    }
    Ok(decomposition)
}
