//! Compiling divergence-free flows into nets of exactly volume-preserving
//! shear layers, and rewriting sigmoid shears as coupling layers.
//!
//! A separable pair field `(g1(t, y without y_d), g2(t, y without y_{d+1}))`
//! active in coordinates `(d, d+1)` is integrated over one step `h` by two
//! shears: first `y_d += h g1(τ', ·)`, then `y_{d+1} += h g2(τ', ·)` on the
//! updated state. A step of the full field applies the pairs in ascending
//! `d`; `n_steps` such steps approximate the time-`T` flow to first order.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::coupling::verify::{fd_jacobian_det, DEFAULT_FD_STEP};
use crate::coupling::{
    with_inserted, AnalyticShift, FixedShift, Layer, LayerKind, MPNet, ShiftFn, ShiftRegistry,
};
use crate::domain::BoxDomain;
use crate::dynamics::{rk4_flow, VectorField};
use crate::error::{check_dim, Error, Result};
use crate::feng_shang::{decompose, DecomposeConfig, Decomposition, PairField, Separability};
use crate::mlp::{Activation, Mlp};
use crate::rng::SampleRng;

/// Fixed-shift id prefix of compiled shears: `pair_shear:<field id>`.
pub const PAIR_SHEAR_ID: &str = "pair_shear";

/// Reference RK4 step for "exact" flows.
pub const REFERENCE_STEP: f64 = 1e-3;

/// `h * u(τ, y)` for one active component `u` of a pair, seen as a function
/// of the other `D - 1` coordinates.
#[derive(Debug)]
struct PairShear {
    pair: PairField,
    which: usize,
    tau: f64,
    h: f64,
}

impl PairShear {
    fn own_index(&self) -> usize {
        self.pair.d() - 1 + self.which
    }
}

impl AnalyticShift for PairShear {
    fn eval(&self, input: &[f64], out: &mut [f64]) {
        // Separable components do not read their own coordinate.
        let y = with_inserted(input, self.own_index(), 0.0);
        out[0] = self.h * self.pair.active(self.which, self.tau, &y);
    }

    fn jacobian(&self, input: &[f64]) -> Option<Vec<f64>> {
        let own = self.own_index();
        let y = with_inserted(input, own, 0.0);
        let grad = self.pair.active_gradient(self.which, self.tau, &y)?;
        Some(
            grad.iter()
                .enumerate()
                .filter_map(|(j, g)| (j != own).then_some(self.h * g))
                .collect(),
        )
    }
}

/// Leading entries of a `pair_shear` parameter vector:
/// `[tau, h, d, which, quad_nodes, h_fd, tol, n_samples, seed, box lo.., box hi.., field params..]`.
const HEADER: usize = 9;

fn encode_count(v: u64, what: &str) -> Result<f64> {
    if v < (1u64 << 53) {
        Ok(v as f64)
    } else {
        Err(Error::Config(format!(
            "{what} = {v} is too large to encode in a model file"
        )))
    }
}

fn shear_params(
    pair: &PairField,
    which: usize,
    tau: f64,
    h: f64,
    field: &VectorField,
    cfg: &DecomposeConfig,
) -> Result<Vec<f64>> {
    let mut p = vec![
        tau,
        h,
        pair.d() as f64,
        which as f64,
        encode_count(cfg.quad_nodes as u64, "quad_nodes")?,
        cfg.h_fd,
        cfg.tol,
        encode_count(cfg.n_samples as u64, "n_samples")?,
        encode_count(cfg.seed, "seed")?,
    ];
    p.extend(&cfg.sample_box.lo);
    p.extend(&cfg.sample_box.hi);
    p.extend(field.params());
    Ok(p)
}

fn decode_count(v: f64, field: &str) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 && v < (1u64 << 53) as f64 {
        Ok(v as u64)
    } else {
        Err(Error::parse(
            "shift.params",
            format!("{field} must be a non-negative integer, got {v}"),
        ))
    }
}

type DecompositionCache = Mutex<HashMap<Vec<u64>, Arc<Decomposition>>>;

/// Adds the `pair_shear` family to `registry`. Decompositions are rebuilt
/// from the encoded field and configuration and shared between layers.
pub fn register_shifts(registry: &mut ShiftRegistry) {
    let cache: Arc<DecompositionCache> = Arc::default();
    registry.register(PAIR_SHEAR_ID, move |id, params, n_in, n_out| {
        let field_id = id
            .strip_prefix(PAIR_SHEAR_ID)
            .and_then(|r| r.strip_prefix(':'))
            .ok_or_else(|| Error::parse("shift.id", format!("`{id}` lacks a field id")))?;
        if n_out != 1 {
            return Err(Error::parse("shift", "compiled shears are scalar"));
        }
        let dim = n_in + 1;
        if params.len() < HEADER + 2 * dim {
            return Err(Error::parse(
                "shift.params",
                "too few parameters for a compiled shear",
            ));
        }
        let (tau, h) = (params[0], params[1]);
        let d = decode_count(params[2], "d")? as usize;
        let which = decode_count(params[3], "which")? as usize;
        if !(1..dim).contains(&d) || which > 1 {
            return Err(Error::parse(
                "shift.params",
                format!("invalid pair index d = {d}, which = {which}"),
            ));
        }
        let cfg = DecomposeConfig {
            sample_box: BoxDomain::new(
                params[HEADER..HEADER + dim].to_vec(),
                params[HEADER + dim..HEADER + 2 * dim].to_vec(),
            )
            .map_err(|e| Error::parse("shift.params", e.to_string()))?,
            quad_nodes: decode_count(params[4], "quad_nodes")? as usize,
            h_fd: params[5],
            tol: params[6],
            n_samples: decode_count(params[7], "n_samples")? as usize,
            seed: decode_count(params[8], "seed")?,
        };
        let field = VectorField::from_params(field_id, &params[HEADER + 2 * dim..])?;
        check_dim("compiled shear field", dim, field.dim())?;

        let mut key: Vec<u64> = id.bytes().map(u64::from).collect();
        key.extend(params[4..].iter().map(|v| v.to_bits()));
        let dec = {
            let mut guard = cache.lock().expect("decomposition cache poisoned");
            match guard.get(&key) {
                Some(dec) => Arc::clone(dec),
                None => {
                    let dec = Arc::new(decompose(&field, &cfg)?);
                    guard.insert(key, Arc::clone(&dec));
                    dec
                }
            }
        };
        let pair = dec.pairs[d - 1].clone();
        Ok(Arc::new(PairShear {
            pair,
            which,
            tau,
            h,
        }) as Arc<dyn AnalyticShift>)
    });
}

/// The two shears integrating one separable pair over a step `h` at time `tau`.
pub fn shear_pair(
    pair: &PairField,
    tau: f64,
    h: f64,
    field: &VectorField,
    cfg: &DecomposeConfig,
) -> Result<(Layer, Layer)> {
    if pair.separable() != Separability::Yes {
        return Err(Error::Unsupported(format!(
            "pair ({}, {}) is not separable; turning a general two-coordinate Hamiltonian flow into \
             shears needs a polynomial-Hamiltonian approximation that is not implemented",
            pair.d(),
            pair.d() + 1
        )));
    }
    let dim = pair.dim();
    let id = format!("{PAIR_SHEAR_ID}:{}", field.id());
    let make = |which: usize| -> Result<Layer> {
        let shift = FixedShift::from_parts(
            id.clone(),
            shear_params(pair, which, tau, h, field, cfg)?,
            dim - 1,
            1,
            Arc::new(PairShear {
                pair: pair.clone(),
                which,
                tau,
                h,
            }),
        );
        Layer::shear(dim, pair.d() + which, ShiftFn::Fixed(shift))
    };
    Ok((make(0)?, make(1)?))
}

#[derive(Debug, Clone)]
pub struct CompiledFlow {
    pub net: MPNet,
    pub field: VectorField,
    pub tau: f64,
    pub span: f64,
    pub n_steps: usize,
    pub h: f64,
    pub pair_separability: Vec<Separability>,
}

/// Splitting integrator over `[tau, tau + span]` with `n_steps` steps,
/// emitted as `n_steps * 2 * (D - 1)` shear layers.
pub fn compile_flow(
    field: &VectorField,
    tau: f64,
    span: f64,
    n_steps: usize,
    cfg: &DecomposeConfig,
) -> Result<CompiledFlow> {
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    if !(span >= 0.0 && span.is_finite() && tau.is_finite()) {
        return Err(Error::Config(format!(
            "invalid time window tau = {tau}, T = {span}"
        )));
    }
    let dec = decompose(field, cfg)?;
    let h = span / n_steps as f64;
    let mut net = MPNet::identity(field.dim())?;
    for k in 0..n_steps {
        let tau_k = tau + k as f64 * h;
        for pair in &dec.pairs {
            let (first, second) = shear_pair(pair, tau_k, h, field, cfg)?;
            net.push(first)?;
            net.push(second)?;
        }
    }
    Ok(CompiledFlow {
        net,
        field: field.clone(),
        tau,
        span,
        n_steps,
        h,
        pair_separability: dec.pairs.iter().map(PairField::separable).collect(),
    })
}

/// Largest `|det J - 1|` of `net` over `n_points` samples from `domain`.
pub fn det_check(net: &MPNet, domain: &BoxDomain, n_points: usize, seed: u64) -> Result<f64> {
    check_dim("det-check box", net.dim(), domain.dim())?;
    let mut rng = SampleRng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_points {
        let x = domain.sample(&mut rng);
        let det = fd_jacobian_det(|v| net.forward(v), &x, DEFAULT_FD_STEP)?;
        worst = worst.max((det - 1.0).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub field: String,
    pub step_counts: Vec<usize>,
    pub step_sizes: Vec<f64>,
    /// Sup-norm error against the RK4 reference flow over the sample set.
    pub errors: Vec<f64>,
    pub det_max_dev: Vec<f64>,
    /// Least-squares slope of `log error` against `log h`.
    pub slope: Option<f64>,
    /// All errors below `1e-12`; the slope is then undefined.
    pub exact: bool,
}

/// Compiles at each step count and measures the error of the compiled map
/// against RK4 (step [`REFERENCE_STEP`]) at `n_samples` points.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    field: &VectorField,
    tau: f64,
    span: f64,
    step_counts: &[usize],
    sample_box: &BoxDomain,
    n_samples: usize,
    seed: u64,
    cfg: &DecomposeConfig,
) -> Result<ConvergenceReport> {
    if step_counts.len() < 2 || step_counts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "step_counts must hold at least two strictly increasing values".into(),
        ));
    }
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be positive".into()));
    }
    check_dim("sample box", field.dim(), sample_box.dim())?;
    let mut rng = SampleRng::new(seed);
    let points = (0..n_samples)
        .map(|_| field.sample_regular(sample_box, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let reference = points
        .iter()
        .map(|x| rk4_flow(field, tau, span, REFERENCE_STEP, x))
        .collect::<Result<Vec<_>>>()?;

    let mut step_sizes = Vec::new();
    let mut errors = Vec::new();
    let mut det_max_dev = Vec::new();
    for &n in step_counts {
        let compiled = compile_flow(field, tau, span, n, cfg)?;
        let mut err = 0.0f64;
        let mut dev = 0.0f64;
        for (x, y_ref) in points.iter().zip(&reference) {
            let y = compiled.net.forward(x)?;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "compiled flow produced non-finite output at {x:?}"
                )));
            }
            err = err.max(
                y.iter()
                    .zip(y_ref)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
            let det = fd_jacobian_det(|v| compiled.net.forward(v), x, DEFAULT_FD_STEP)?;
            dev = dev.max((det - 1.0).abs());
        }
        step_sizes.push(compiled.h);
        errors.push(err);
        det_max_dev.push(dev);
    }

    let exact = errors.iter().all(|&e| e < 1e-12);
    let slope = if exact {
        None
    } else {
        let xs: Vec<f64> = step_sizes.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = errors
            .iter()
            .map(|e| e.max(f64::MIN_POSITIVE).ln())
            .collect();
        Some(least_squares_slope(&xs, &ys))
    };
    Ok(ConvergenceReport {
        field: field.id().to_string(),
        step_counts: step_counts.to_vec(),
        step_sizes,
        errors,
        det_max_dev,
        slope,
        exact,
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

pub const DEFAULT_CANONICAL_DELTA: f64 = 1e-3;
pub const DEFAULT_CANONICAL_SPLIT: usize = 2;

/// Rewrites a sigmoid shear on component 1,
/// `x1 += Σ_w a_w σ(K_w · x[2:] + b_w)`, as `3 W` coupling layers with split `s`.
///
/// For every hidden unit `w`, with `c = K_w[s-1] + δ` (1-based `K` entries
/// multiply `x[2..D]`):
/// 1. a lower layer adds `c⁻¹ K_w[:s-1] · x[2:s]` to `x_s`,
/// 2. an upper layer adds `a_w σ(c x_s + K_w[s:] · x[s+1:] + b_w)` to `x_1`,
/// 3. a lower layer subtracts the first update again.
///
/// The composition equals the target shear with `K_w · x[2:]` replaced by
/// `K_w · x[2:] + δ x_s`; see [`canonicalize_error_bound`].
pub fn canonicalize_r(shear: &Layer, s: usize, delta: f64) -> Result<MPNet> {
    let dim = shear.dim();
    if shear.kind() != (LayerKind::Shear { i: 1 }) {
        return Err(Error::Unsupported(format!(
            "only shears on component 1 can be rewritten, got {:?}",
            shear.kind()
        )));
    }
    let ShiftFn::Mlp(m) = shear.shift() else {
        return Err(Error::Unsupported(
            "shear shift must be a sigmoid MLP".into(),
        ));
    };
    if m.activation() != Activation::Sigmoid || m.hidden_layers() != 1 {
        return Err(Error::Unsupported(
            "shear shift must have exactly one sigmoid hidden layer".into(),
        ));
    }
    if !(2..=dim).contains(&s) {
        return Err(Error::Config(format!("split s = {s} outside 2..={dim}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let width = m.dims()[1];
    let k = &m.weights()[0]; // width x (dim - 1)
    let b = &m.biases()[0];
    let a = &m.weights()[1]; // 1 x width
    let out_bias = m.biases()[1][0];
    let n_in = dim - 1;

    let mut net = MPNet::identity(dim)?;
    for w in 0..width {
        let row = &k[w * n_in..(w + 1) * n_in];
        // row[j] multiplies x_{j+2} (1-based), so x_s pairs with row[s-2].
        let c = row[s - 2] + delta;
        if c == 0.0 {
            return Err(Error::Numeric(format!(
                "degenerate delta: K[{}][{}] + delta = 0",
                w + 1,
                s - 1
            )));
        }

        // Lower layer: input x[1..s-1], output x[s..D]; only x_s moves.
        let lower_out = dim - s + 1;
        let mut lift = vec![0.0; lower_out * (s - 1)];
        for m_in in 1..s - 1 {
            lift[m_in] = row[m_in - 1] / c;
        }
        let drop: Vec<f64> = lift.iter().map(|v| -v).collect();
        let linear = |weights: Vec<f64>| {
            Mlp::from_parts(
                vec![s - 1, lower_out],
                Activation::Sigmoid,
                vec![weights],
                vec![vec![0.0; lower_out]],
            )
        };

        // Upper layer: input x[s..D], output x[1..s-1]; only x_1 moves.
        let mut hidden = Vec::with_capacity(dim - s + 1);
        hidden.push(c);
        hidden.extend_from_slice(&row[s - 1..]);
        let mut readout = vec![0.0; s - 1];
        readout[0] = a[w];
        let mut readout_bias = vec![0.0; s - 1];
        if w == 0 {
            readout_bias[0] = out_bias;
        }
        let squash = Mlp::from_parts(
            vec![dim - s + 1, 1, s - 1],
            Activation::Sigmoid,
            vec![hidden, readout],
            vec![vec![b[w]], readout_bias],
        )?;

        net.push(Layer::lower(dim, s, linear(lift)?)?)?;
        net.push(Layer::upper(dim, s, squash)?)?;
        net.push(Layer::lower(dim, s, linear(drop)?)?)?;
    }
    Ok(net)
}

/// `Σ_w |a_w| · L_σ · δ · max_{x ∈ box} |x_s|` with `L_σ = 1/4`.
pub fn canonicalize_error_bound(
    shear: &Layer,
    s: usize,
    delta: f64,
    domain: &BoxDomain,
) -> Result<f64> {
    let ShiftFn::Mlp(m) = shear.shift() else {
        return Err(Error::Unsupported("shear shift must be an MLP".into()));
    };
    check_dim("bound box", shear.dim(), domain.dim())?;
    let a_sum: f64 = m.weights()[1].iter().map(|v| v.abs()).sum();
    Ok(a_sum * Activation::Sigmoid.lipschitz() * delta * domain.max_abs(s - 1))
}
