//! Vector fields `f(t, y)`, integrators, and flow-map datasets.

use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{check_dim, Error, Result};
use crate::rng::SampleRng;

/// Radius around the `y1 = y2 = 0` axis that sampling routines avoid for
/// the Lorentz-force field.
pub const LORENTZ_EXCLUSION_RADIUS: f64 = 0.05;

/// One term `coeff * prod_j y_j^powers[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Registered vector fields. Serialized as `{"kind": "...", ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorField {
    /// Charged particle in the plane under a Coulomb-like central force and a
    /// magnetic field of strength `r`:
    /// `y1' = y3, y2' = y4,
    ///  y3' = y1 / (100 r^3) + r y4,
    ///  y4' = y2 / (100 r^3) - r y3`, with `r = sqrt(y1^2 + y2^2)`.
    Lorentz4d,
    /// `(-y2, y1)`.
    Harmonic2d,
    Zero {
        dim: usize,
    },
    /// `f(y) = A y`.
    Linear {
        matrix: Vec<Vec<f64>>,
    },
    /// One list of monomials per component.
    Polynomial {
        dim: usize,
        components: Vec<Vec<Monomial>>,
    },
}

impl VectorField {
    pub fn id(&self) -> &'static str {
        match self {
            VectorField::Lorentz4d => "lorentz4d",
            VectorField::Harmonic2d => "harmonic2d",
            VectorField::Zero { .. } => "zero",
            VectorField::Linear { .. } => "linear",
            VectorField::Polynomial { .. } => "polynomial",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorField::Lorentz4d => 4,
            VectorField::Harmonic2d => 2,
            VectorField::Zero { dim } | VectorField::Polynomial { dim, .. } => *dim,
            VectorField::Linear { matrix } => matrix.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if dim < 2 {
            return Err(Error::Config(format!(
                "{} field needs dimension >= 2, got {dim}",
                self.id()
            )));
        }
        match self {
            VectorField::Linear { matrix } => {
                for (r, row) in matrix.iter().enumerate() {
                    if row.len() != dim {
                        return Err(Error::Config(format!(
                            "linear field row {r} has {} entries, expected {dim}",
                            row.len()
                        )));
                    }
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Config(format!("linear field row {r} is not finite")));
                    }
                }
            }
            VectorField::Polynomial { components, .. } => {
                if components.len() != dim {
                    return Err(Error::Config(format!(
                        "polynomial field has {} components, expected {dim}",
                        components.len()
                    )));
                }
                for (c, terms) in components.iter().enumerate() {
                    for term in terms {
                        if term.powers.len() != dim || !term.coeff.is_finite() {
                            return Err(Error::Config(format!(
                                "polynomial component {} has a malformed term {term:?}",
                                c + 1
                            )));
                        }
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Flat parameter encoding used by fixed-shift ids.
    ///
    /// `zero`: `[D]`; `linear`: `[D, A row-major]`; `polynomial`:
    /// `[D, then per component: n_terms, then per term: coeff, powers...]`.
    pub fn params(&self) -> Vec<f64> {
        match self {
            VectorField::Lorentz4d | VectorField::Harmonic2d => Vec::new(),
            VectorField::Zero { dim } => vec![*dim as f64],
            VectorField::Linear { matrix } => {
                let mut out = vec![matrix.len() as f64];
                out.extend(matrix.iter().flatten());
                out
            }
            VectorField::Polynomial { dim, components } => {
                let mut out = vec![*dim as f64];
                for terms in components {
                    out.push(terms.len() as f64);
                    for t in terms {
                        out.push(t.coeff);
                        out.extend(t.powers.iter().map(|&p| p as f64));
                    }
                }
                out
            }
        }
    }

    pub fn from_params(id: &str, params: &[f64]) -> Result<Self> {
        let bad = |msg: &str| Error::parse("shift.params", format!("{id} field: {msg}"));
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(bad("expected a non-negative integer"))
            }
        };
        let field = match id {
            "lorentz4d" | "harmonic2d" if !params.is_empty() => {
                return Err(bad("takes no parameters"))
            }
            "lorentz4d" => VectorField::Lorentz4d,
            "harmonic2d" => VectorField::Harmonic2d,
            "zero" => {
                if params.len() != 1 {
                    return Err(bad("expected [dim]"));
                }
                VectorField::Zero {
                    dim: as_count(params[0])?,
                }
            }
            "linear" => {
                let dim = as_count(*params.first().ok_or_else(|| bad("missing dim"))?)?;
                if params.len() != 1 + dim * dim {
                    return Err(bad("matrix has the wrong size"));
                }
                VectorField::Linear {
                    matrix: params[1..]
                        .chunks(dim.max(1))
                        .map(<[f64]>::to_vec)
                        .collect(),
                }
            }
            "polynomial" => {
                let dim = as_count(*params.first().ok_or_else(|| bad("missing dim"))?)?;
                let mut at = 1;
                let mut components = Vec::with_capacity(dim);
                for _ in 0..dim {
                    let n = as_count(*params.get(at).ok_or_else(|| bad("truncated"))?)?;
                    at += 1;
                    let mut terms = Vec::with_capacity(n);
                    for _ in 0..n {
                        let chunk = params
                            .get(at..at + 1 + dim)
                            .ok_or_else(|| bad("truncated"))?;
                        let powers = chunk[1..]
                            .iter()
                            .map(|&p| as_count(p).map(|p| p as u32))
                            .collect::<Result<Vec<_>>>()?;
                        terms.push(Monomial {
                            coeff: chunk[0],
                            powers,
                        });
                        at += 1 + dim;
                    }
                    components.push(terms);
                }
                if at != params.len() {
                    return Err(bad("trailing parameters"));
                }
                VectorField::Polynomial { dim, components }
            }
            other => return Err(Error::parse("field", format!("unknown field id `{other}`"))),
        };
        field.validate()?;
        Ok(field)
    }

    /// Unchecked evaluation; `y` must have dimension [`Self::dim`].
    pub fn eval(&self, _t: f64, y: &[f64]) -> Vec<f64> {
        match self {
            VectorField::Lorentz4d => {
                let r2 = y[0] * y[0] + y[1] * y[1];
                let r = r2.sqrt();
                let coulomb = 100.0 * r2 * r;
                vec![
                    y[2],
                    y[3],
                    y[0] / coulomb + r * y[3],
                    y[1] / coulomb - r * y[2],
                ]
            }
            VectorField::Harmonic2d => vec![-y[1], y[0]],
            VectorField::Zero { dim } => vec![0.0; *dim],
            VectorField::Linear { matrix } => matrix
                .iter()
                .map(|row| row.iter().zip(y).map(|(a, b)| a * b).sum())
                .collect(),
            VectorField::Polynomial { components, .. } => components
                .iter()
                .map(|terms| terms.iter().map(|t| monomial(t, y)).sum())
                .collect(),
        }
    }

    pub fn eval_checked(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("field state", self.dim(), y.len())?;
        Ok(self.eval(t, y))
    }

    /// Analytic `∂f_i / ∂y_j` (0-based).
    pub fn partial(&self, _t: f64, y: &[f64], i: usize, j: usize) -> Option<f64> {
        Some(match self {
            VectorField::Lorentz4d => {
                let r2 = y[0] * y[0] + y[1] * y[1];
                let r = r2.sqrt();
                let r3 = r2 * r;
                let r5 = r3 * r2;
                match (i, j) {
                    (0, 2) | (1, 3) => 1.0,
                    (0, _) | (1, _) => 0.0,
                    (2, 0) => {
                        1.0 / (100.0 * r3) - 3.0 * y[0] * y[0] / (100.0 * r5) + y[0] * y[3] / r
                    }
                    (2, 1) => -3.0 * y[0] * y[1] / (100.0 * r5) + y[1] * y[3] / r,
                    (2, 2) => 0.0,
                    (2, 3) => r,
                    (3, 0) => -3.0 * y[0] * y[1] / (100.0 * r5) - y[0] * y[2] / r,
                    (3, 1) => {
                        1.0 / (100.0 * r3) - 3.0 * y[1] * y[1] / (100.0 * r5) - y[1] * y[2] / r
                    }
                    (3, 2) => -r,
                    (3, 3) => 0.0,
                    _ => return None,
                }
            }
            VectorField::Harmonic2d => match (i, j) {
                (0, 1) => -1.0,
                (1, 0) => 1.0,
                _ => 0.0,
            },
            VectorField::Zero { .. } => 0.0,
            VectorField::Linear { matrix } => matrix[i][j],
            VectorField::Polynomial { components, .. } => components[i]
                .iter()
                .filter(|t| t.powers[j] > 0)
                .map(|t| {
                    let mut reduced = t.clone();
                    reduced.powers[j] -= 1;
                    t.powers[j] as f64 * monomial(&reduced, y)
                })
                .sum(),
        })
    }

    /// Points where the formula is singular and verification routines skip.
    pub fn near_singularity(&self, y: &[f64]) -> bool {
        match self {
            VectorField::Lorentz4d => y[0].hypot(y[1]) < LORENTZ_EXCLUSION_RADIUS,
            _ => false,
        }
    }

    /// Uniform sample from `domain`, rejecting points near singularities.
    pub fn sample_regular(&self, domain: &BoxDomain, rng: &mut SampleRng) -> Result<Vec<f64>> {
        for _ in 0..10_000 {
            let y = domain.sample(rng);
            if !self.near_singularity(&y) {
                return Ok(y);
            }
        }
        Err(Error::Config(
            "sample box lies inside the field's excluded region".into(),
        ))
    }
}

fn monomial(t: &Monomial, y: &[f64]) -> f64 {
    t.powers.iter().zip(y).fold(
        t.coeff,
        |acc, (&p, &v)| if p == 0 { acc } else { acc * v.powi(p as i32) },
    )
}

/// Central-difference estimate of `sum_d ∂f_d/∂y_d`.
pub fn divergence_fd(field: &VectorField, t: f64, y: &[f64], h: f64) -> Result<f64> {
    check_dim("field state", field.dim(), y.len())?;
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = y.to_vec();
    let mut div = 0.0;
    for d in 0..y.len() {
        probe[d] = y[d] + h;
        let plus = field.eval(t, &probe)[d];
        probe[d] = y[d] - h;
        let minus = field.eval(t, &probe)[d];
        probe[d] = y[d];
        div += (plus - minus) / (2.0 * h);
    }
    if div.is_finite() {
        Ok(div)
    } else {
        Err(Error::Numeric(format!("non-finite divergence at {y:?}")))
    }
}

/// One explicit Euler step `x + h f(tau, x)`.
pub fn euler_step(field: &VectorField, tau: f64, h: f64, x: &[f64]) -> Result<Vec<f64>> {
    let f = field.eval_checked(tau, x)?;
    Ok(x.iter().zip(&f).map(|(xi, fi)| xi + h * fi).collect())
}

fn rk4_step(field: &VectorField, t: f64, h: f64, y: &[f64]) -> Vec<f64> {
    let shifted =
        |k: &[f64], c: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    let k1 = field.eval(t, y);
    let k2 = field.eval(t + 0.5 * h, &shifted(&k1, 0.5 * h));
    let k3 = field.eval(t + 0.5 * h, &shifted(&k2, 0.5 * h));
    let k4 = field.eval(t + h, &shifted(&k3, h));
    y.iter()
        .enumerate()
        .map(|(i, v)| v + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Number of equal substeps of size at most `h_ref` covering `span`. A
/// ratio within rounding of an integer uses that integer.
fn substeps(span: f64, h_ref: f64) -> usize {
    let ratio = span / h_ref;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
        nearest.max(1.0) as usize
    } else {
        ratio.ceil() as usize
    }
}

fn check_flow_args(field: &VectorField, span: f64, h_ref: f64, x: &[f64]) -> Result<()> {
    check_dim("flow initial state", field.dim(), x.len())?;
    if !(h_ref > 0.0) {
        return Err(Error::Config(format!(
            "reference step must be positive, got {h_ref}"
        )));
    }
    if !(span >= 0.0 && span.is_finite()) {
        return Err(Error::Config(format!(
            "flow time must be finite and non-negative, got {span}"
        )));
    }
    Ok(())
}

/// Classic fourth-order Runge–Kutta approximation of the time-`span` flow
/// starting at time `tau`. The substep is `span / ceil(span / h_ref)`.
pub fn rk4_flow(
    field: &VectorField,
    tau: f64,
    span: f64,
    h_ref: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_flow_args(field, span, h_ref, x)?;
    if span == 0.0 {
        return Ok(x.to_vec());
    }
    let n = substeps(span, h_ref);
    let h = span / n as f64;
    let mut y = x.to_vec();
    for k in 0..n {
        y = rk4_step(field, tau + k as f64 * h, h, &y);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: k + 1 });
        }
    }
    Ok(y)
}

/// Like [`rk4_flow`] but keeps every substep.
pub fn rk4_trajectory(
    field: &VectorField,
    tau: f64,
    span: f64,
    h_ref: f64,
    x: &[f64],
) -> Result<Trajectory> {
    check_flow_args(field, span, h_ref, x)?;
    let n = if span == 0.0 {
        0
    } else {
        substeps(span, h_ref)
    };
    let h = if n == 0 { 0.0 } else { span / n as f64 };
    let mut times = vec![tau];
    let mut states = vec![x.to_vec()];
    for k in 0..n {
        let next = rk4_step(field, tau + k as f64 * h, h, &states[k]);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: k + 1 });
        }
        times.push(tau + (k + 1) as f64 * h);
        states.push(next);
    }
    Ok(Trajectory { times, states })
}

/// Applies `subflows` in order: `subflows[K-1] ∘ ... ∘ subflows[0]`.
pub fn splitting_step<F>(subflows: &[F], x: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut y = x.to_vec();
    for (k, flow) in subflows.iter().enumerate() {
        let next = flow(&y);
        if next.len() != x.len() {
            return Err(Error::Dimension {
                context: if k == 0 {
                    "first subflow output"
                } else {
                    "subflow output"
                },
                expected: x.len(),
                got: next.len(),
            });
        }
        y = next;
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::Config(format!(
                "trajectory has {} times but {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }
}

/// Consecutive state pairs `(x_n, x_{n+1})` sampled at spacing `h_data`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub h_data: f64,
}

impl PairDataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, h_data: f64) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Config(format!(
                "dataset has {} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(d) = inputs.first().map(Vec::len) {
            if inputs.iter().chain(&targets).any(|v| v.len() != d) {
                return Err(Error::Config(
                    "dataset rows have inconsistent dimensions".into(),
                ));
            }
        }
        Ok(Self {
            inputs,
            targets,
            h_data,
        })
    }

    /// Pairs of consecutive trajectory states.
    pub fn from_trajectory(traj: &Trajectory, h_data: f64) -> Self {
        let inputs = traj.states[..traj.len().saturating_sub(1)].to_vec();
        let targets = traj.states.iter().skip(1).cloned().collect();
        Self {
            inputs,
            targets,
            h_data,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
}

/// States `x_0 .. x_{n_pairs}` at spacing `h_data`; each hop is an RK4
/// flow over `[n h_data, (n+1) h_data]` with substeps of at most `h_ref`.
pub fn data_trajectory(
    field: &VectorField,
    x0: &[f64],
    h_data: f64,
    n_states: usize,
    h_ref: f64,
) -> Result<Trajectory> {
    check_dim("initial state", field.dim(), x0.len())?;
    if !(h_data > 0.0) {
        return Err(Error::Config(format!(
            "data step must be positive, got {h_data}"
        )));
    }
    if n_states == 0 {
        return Err(Error::Config("trajectory needs at least one state".into()));
    }
    let mut times = Vec::with_capacity(n_states);
    let mut states = Vec::with_capacity(n_states);
    times.push(0.0);
    states.push(x0.to_vec());
    for n in 1..n_states {
        let tau = (n - 1) as f64 * h_data;
        let next = rk4_flow(field, tau, h_data, h_ref, &states[n - 1])?;
        times.push(n as f64 * h_data);
        states.push(next);
    }
    Ok(Trajectory { times, states })
}

pub fn generate_dataset(
    field: &VectorField,
    x0: &[f64],
    h_data: f64,
    n_pairs: usize,
    h_ref: f64,
) -> Result<PairDataset> {
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be at least 1".into()));
    }
    let traj = data_trajectory(field, x0, h_data, n_pairs + 1, h_ref)?;
    Ok(PairDataset::from_trajectory(&traj, h_data))
}
