//! Full-batch Adam training of coupling nets on flow-map pairs, and
//! multi-step rollouts.

use serde::{Deserialize, Serialize};

use crate::coupling::verify::{fd_jacobian_det, DEFAULT_FD_STEP};
use crate::coupling::{Layer, LayerKind, MPNet};
use crate::dynamics::{PairDataset, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::mlp::{Activation, AdamConfig, AdamState, Mlp};
use crate::rng::SampleRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Layers alternate upper, lower, upper, ...
    pub n_layers: usize,
    pub s: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Loss and determinant are logged every `log_every` epochs.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_layers: 8,
            s: 2,
            width: 64,
            hidden_layers: 1,
            activation: Activation::Sigmoid,
            lr: 1e-3,
            epochs: 50_000,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        if self.width == 0 || self.hidden_layers == 0 {
            return Err(Error::Config(
                "width and hidden_layers must be at least 1".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.s < 2 {
            return Err(Error::Config(format!(
                "split s must be at least 2, got {}",
                self.s
            )));
        }
        Ok(())
    }

    /// A freshly initialized net for `dim`-dimensional states.
    pub fn build_net(&self, dim: usize) -> Result<MPNet> {
        self.validate()?;
        if self.s > dim {
            return Err(Error::Config(format!(
                "split s = {} exceeds state dimension {dim}",
                self.s
            )));
        }
        let mut net = MPNet::identity(dim)?;
        for l in 0..self.n_layers {
            let kind = if l % 2 == 0 {
                LayerKind::Upper { s: self.s }
            } else {
                LayerKind::Lower { s: self.s }
            };
            let (n_in, n_out) = kind.shift_dims(dim);
            let mut dims = vec![n_in];
            dims.extend(std::iter::repeat_n(self.width, self.hidden_layers));
            dims.push(n_out);
            let seed = SampleRng::substream(self.seed, l as u64).next_u64();
            net.push(Layer::new(
                dim,
                kind,
                Mlp::new(&dims, self.activation, seed)?,
            )?)?;
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub loss_curve: Vec<(usize, f64)>,
    /// `(epoch, |det J - 1|)` at the first training input.
    pub det_checks: Vec<(usize, f64)>,
    pub final_loss: f64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// `(1/N) Σ ‖net(x_n) - x'_n‖²`.
pub fn mse_loss(net: &MPNet, data: &PairDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    check_dim("dataset", net.dim(), data.dim())?;
    let mut total = 0.0;
    for (x, target) in data.inputs.iter().zip(&data.targets) {
        let y = net.forward(x)?;
        total += y
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

/// Loss and its parameter gradient, summed over pairs in dataset order.
fn loss_and_grad(net: &MPNet, data: &PairDataset, grad: &mut [f64]) -> Result<f64> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 2.0 / data.len() as f64;
    let mut total = 0.0;
    let mut y = vec![0.0; net.dim()];
    for (x, target) in data.inputs.iter().zip(&data.targets) {
        y.copy_from_slice(x);
        net.forward_in_place(&mut y);
        let mut upstream = Vec::with_capacity(y.len());
        for (a, b) in y.iter().zip(target) {
            let r = a - b;
            total += r * r;
            upstream.push(scale * r);
        }
        net.backward_accumulate(x, &upstream, grad)?;
    }
    Ok(total / data.len() as f64)
}

pub fn train(data: &PairDataset, config: &TrainConfig) -> Result<(MPNet, TrainMetrics)> {
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let net = config.build_net(data.dim())?;
    train_from(net, data, config)
}

/// Continues training `net`, keeping its architecture; only `lr`, `epochs`
/// and `log_every` of `config` are used.
pub fn train_from(
    mut net: MPNet,
    data: &PairDataset,
    config: &TrainConfig,
) -> Result<(MPNet, TrainMetrics)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    check_dim("dataset", net.dim(), data.dim())?;
    let started = std::time::Instant::now();

    let mut params = net.params();
    let mut grad = vec![0.0; params.len()];
    let mut adam = AdamState::new(
        params.len(),
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut loss_curve = Vec::new();
    let mut det_checks = Vec::new();
    let probe = data.inputs[0].clone();
    let mut checkpoint = net.clone();

    for epoch in 0..config.epochs {
        let loss = loss_and_grad(&net, data, &mut grad)?;
        if !loss.is_finite() {
            return Err(Error::TrainingAborted {
                epoch,
                checkpoint: Box::new(checkpoint),
            });
        }
        if epoch % config.log_every == 0 {
            loss_curve.push((epoch, loss));
            let det = fd_jacobian_det(|v| net.forward(v), &probe, DEFAULT_FD_STEP)?;
            det_checks.push((epoch, (det - 1.0).abs()));
        }
        checkpoint.set_params(&params)?;
        if let Err(Error::NonFiniteGradient { .. }) = adam.step(&mut params, &grad) {
            return Err(Error::TrainingAborted {
                epoch,
                checkpoint: Box::new(checkpoint),
            });
        }
        net.set_params(&params)?;
    }

    let final_loss = mse_loss(&net, data)?;
    if !final_loss.is_finite() {
        return Err(Error::TrainingAborted {
            epoch: config.epochs,
            checkpoint: Box::new(checkpoint),
        });
    }
    loss_curve.push((config.epochs, final_loss));
    let det = fd_jacobian_det(|v| net.forward(v), &probe, DEFAULT_FD_STEP)?;
    det_checks.push((config.epochs, (det - 1.0).abs()));
    Ok((
        net,
        TrainMetrics {
            loss_curve,
            det_checks,
            final_loss,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    ))
}

fn iterate<F>(
    dim: usize,
    x0: &[f64],
    n_steps: usize,
    h_data: Option<f64>,
    step: F,
) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    check_dim("rollout start", dim, x0.len())?;
    let dt = h_data.unwrap_or(1.0);
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0.to_vec());
    for k in 1..=n_steps {
        let next = step(&states[k - 1])?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: k });
        }
        states.push(next);
    }
    let times = (0..=n_steps).map(|k| k as f64 * dt).collect();
    Trajectory::new(times, states)
}

/// `x0, net(x0), net(net(x0)), ...`; times are step indices scaled by `h_data`.
pub fn rollout(net: &MPNet, x0: &[f64], n_steps: usize, h_data: Option<f64>) -> Result<Trajectory> {
    iterate(net.dim(), x0, n_steps, h_data, |x| net.forward(x))
}

/// Rollout of the inverse map.
pub fn rollout_inverse(
    net: &MPNet,
    x0: &[f64],
    n_steps: usize,
    h_data: Option<f64>,
) -> Result<Trajectory> {
    iterate(net.dim(), x0, n_steps, h_data, |x| net.inverse(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::verify::round_trip_error;

    fn small_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            n_layers: 2,
            width: 6,
            epochs,
            log_every: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_examples() {
        let net = MPNet::identity(2).unwrap();
        let same = PairDataset::new(
            vec![vec![0.3, 0.4], vec![1.0, -2.0]],
            vec![vec![0.3, 0.4], vec![1.0, -2.0]],
            0.2,
        )
        .unwrap();
        assert_eq!(mse_loss(&net, &same).unwrap(), 0.0);
        let shifted = PairDataset::new(vec![vec![0.3, 0.4]], vec![vec![1.3, 0.4]], 0.2).unwrap();
        assert!((mse_loss(&net, &shifted).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn loss_is_order_invariant() {
        let net = small_config(1).build_net(3).unwrap();
        let xs = vec![
            vec![0.1, 0.2, 0.3],
            vec![-0.5, 0.4, 1.0],
            vec![0.9, -0.9, 0.0],
        ];
        let ys = vec![
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.4, 1.0],
            vec![0.2, 0.1, -0.3],
        ];
        let a = PairDataset::new(xs.clone(), ys.clone(), 0.1).unwrap();
        let b = PairDataset::new(
            xs.into_iter().rev().collect(),
            ys.into_iter().rev().collect(),
            0.1,
        )
        .unwrap();
        assert!((mse_loss(&net, &a).unwrap() - mse_loss(&net, &b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn empty_and_mismatched_datasets() {
        let net = MPNet::identity(2).unwrap();
        let empty = PairDataset::new(vec![], vec![], 0.2);
        if let Ok(ds) = empty {
            assert!(mse_loss(&net, &ds).is_err());
        }
        let wrong = PairDataset::new(vec![vec![0.0; 3]], vec![vec![0.0; 3]], 0.2).unwrap();
        assert!(matches!(
            mse_loss(&net, &wrong),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn identity_pairs_with_zero_shifts_stay_at_zero() {
        let mut net = small_config(1).build_net(2).unwrap();
        net.set_params(&vec![0.0; net.num_params()]).unwrap();
        let xs = vec![vec![0.5, -0.5], vec![1.0, 2.0]];
        let ds = PairDataset::new(xs.clone(), xs, 0.2).unwrap();
        let (_, metrics) = train_from(net, &ds, &small_config(50)).unwrap();
        assert!(metrics.loss_curve.iter().all(|&(_, l)| l == 0.0));
    }

    #[test]
    fn config_validation() {
        for bad in [
            TrainConfig {
                n_layers: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                width: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                s: 1,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr: -1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        assert!(TrainConfig {
            s: 5,
            ..TrainConfig::default()
        }
        .build_net(4)
        .is_err());
        let parsed: std::result::Result<TrainConfig, _> =
            serde_json::from_str(r#"{"epochs": 5, "momentum": 0.9}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn training_is_deterministic_and_structure_preserving() {
        let mut rng = SampleRng::new(9);
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                vec![
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                ]
            })
            .collect();
        let ys: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| vec![x[0] + 0.1 * x[1], x[1] - 0.1 * x[0], x[2]])
            .collect();
        let ds = PairDataset::new(xs, ys, 0.1).unwrap();
        let (a, ma) = train(&ds, &small_config(200)).unwrap();
        let (b, _) = train(&ds, &small_config(200)).unwrap();
        let bits = |n: &MPNet| n.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert!(ma.final_loss < ma.loss_curve[0].1);
        assert!(ma.loss_curve.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(ma.det_checks.iter().all(|&(_, d)| d < 1e-6));
        for x in &ds.inputs {
            assert!(round_trip_error(&a, x).unwrap() < 1e-11);
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_checkpoint() {
        let net = small_config(1).build_net(2).unwrap();
        let ds = PairDataset::new(vec![vec![0.0, 0.0]], vec![vec![1e300, 0.0]], 0.2).unwrap();
        match train_from(net.clone(), &ds, &small_config(5)) {
            Err(Error::TrainingAborted { epoch, checkpoint }) => {
                assert_eq!(epoch, 0);
                assert_eq!(*checkpoint, net);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rollouts() {
        let id = MPNet::identity(3).unwrap();
        let traj = rollout(&id, &[1.0, 2.0, 3.0], 5, Some(0.2)).unwrap();
        assert_eq!(traj.len(), 6);
        assert!(traj.states.iter().all(|s| s == &vec![1.0, 2.0, 3.0]));
        assert!((traj.times[5] - 1.0).abs() < 1e-15);

        let net = small_config(1).build_net(3).unwrap();
        let x0 = [0.2, -0.4, 0.7];
        let fwd = rollout(&net, &x0, 50, None).unwrap();
        let back = rollout_inverse(&net, fwd.states.last().unwrap(), 50, None).unwrap();
        let end = back.states.last().unwrap();
        assert!(end.iter().zip(&x0).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}
