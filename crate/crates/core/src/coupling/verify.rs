//! Numerical checks for maps `R^D -> R^D`: finite-difference Jacobian
//! determinants, round-trip errors, and Monte Carlo `L^p` distances.

use nalgebra::DMatrix;

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::rng::SampleRng;

use super::net::MPNet;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference Jacobian, row-major `(D, D)`.
pub fn fd_jacobian<F>(map: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let dim = x.len();
    let mut jac = vec![0.0; dim * dim];
    let mut probe = x.to_vec();
    for j in 0..dim {
        probe[j] = x[j] + h;
        let plus = map(&probe)?;
        probe[j] = x[j] - h;
        let minus = map(&probe)?;
        probe[j] = x[j];
        if plus.len() != dim || minus.len() != dim {
            return Err(Error::Dimension {
                context: "jacobian map output",
                expected: dim,
                got: plus.len(),
            });
        }
        for i in 0..dim {
            jac[i * dim + j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    if let Some(bad) = jac.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite Jacobian entry {bad} at {x:?}"
        )));
    }
    Ok(jac)
}

pub fn fd_jacobian_det<F>(map: F, x: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let dim = x.len();
    let jac = fd_jacobian(map, x, h)?;
    let det = DMatrix::from_row_slice(dim, dim, &jac).determinant();
    if det.is_finite() {
        Ok(det)
    } else {
        Err(Error::Numeric(format!("non-finite determinant at {x:?}")))
    }
}

/// Sup-norm of `inverse(forward(x)) - x`.
pub fn round_trip_error(net: &MPNet, x: &[f64]) -> Result<f64> {
    let y = net.forward(x)?;
    let back = net.inverse(&y)?;
    if y.iter().chain(&back).any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite value in round trip from {x:?}"
        )));
    }
    Ok(back
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Estimates `sum_d ( ∫_U |a_d - b_d|^p dx )^(1/p)` from `n_samples`
/// uniform points in `domain`.
///
/// The standard error uses the delta method on the per-component means,
/// with the sample covariance between components taken into account.
pub fn lp_error<A, B>(
    map_a: A,
    map_b: B,
    domain: &BoxDomain,
    p: f64,
    n_samples: usize,
    seed: u64,
) -> Result<LpEstimate>
where
    A: Fn(&[f64]) -> Result<Vec<f64>>,
    B: Fn(&[f64]) -> Result<Vec<f64>>,
{
    domain.validate()?;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Config(format!("p must lie in [1, inf), got {p}")));
    }
    if n_samples == 0 {
        return Err(Error::Config("lp_error needs at least one sample".into()));
    }
    let mut rng = SampleRng::new(seed);
    let mut values = Vec::with_capacity(n_samples * domain.dim());
    for _ in 0..n_samples {
        let x = domain.sample(&mut rng);
        let a = map_a(&x)?;
        let b = map_b(&x)?;
        if a.len() != b.len() {
            return Err(Error::Dimension {
                context: "lp_error map outputs",
                expected: a.len(),
                got: b.len(),
            });
        }
        for (u, v) in a.iter().zip(&b) {
            values.push((u - v).abs().powf(p));
        }
    }
    let n_out = values.len() / n_samples;
    let n = n_samples as f64;
    let means: Vec<f64> = (0..n_out)
        .map(|d| values.iter().skip(d).step_by(n_out).sum::<f64>() / n)
        .collect();

    let vol = domain.volume();
    let mut value = 0.0;
    let mut slope = vec![0.0; n_out];
    for (d, &m) in means.iter().enumerate() {
        let integral = vol * m;
        value += integral.powf(1.0 / p);
        if m > 0.0 {
            slope[d] = vol * integral.powf(1.0 / p - 1.0) / p;
        }
    }
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite L^p estimate".into()));
    }

    let std_error = if n_samples > 1 {
        let lin: Vec<f64> = values
            .chunks(n_out)
            .map(|row| row.iter().zip(&slope).map(|(v, c)| v * c).sum())
            .collect();
        let mean = lin.iter().sum::<f64>() / n;
        let var = lin.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(LpEstimate { value, std_error })
}
