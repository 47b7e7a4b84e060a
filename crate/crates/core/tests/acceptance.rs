//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line; run with
//! `cargo test -p mpnet --test acceptance -- --nocapture` to see them.

use std::time::Instant;

use mpnet::compiler::{canonicalize_error_bound, canonicalize_r, convergence_study};
use mpnet::coupling::verify::{fd_jacobian_det, lp_error, round_trip_error, DEFAULT_FD_STEP};
use mpnet::dynamics::{data_trajectory, PairDataset, VectorField};
use mpnet::feng_shang::{decompose, DecomposeConfig, Separability};
use mpnet::rng::SampleRng;
use mpnet::trainer::{mse_loss, rollout, train, TrainConfig};
use mpnet::{Activation, BoxDomain, Layer, LayerKind, MPNet, Mlp};

fn report(id: u32, name: &str, pass: bool, detail: String, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {id} [{verdict}] {name}: {detail} ({:.1} s)",
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {id} failed: {detail}");
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_net(rng: &mut SampleRng, dim: usize, n_layers: usize) -> MPNet {
    let mut net = MPNet::identity(dim).unwrap();
    for _ in 0..n_layers {
        let kind = match rng.next_u64() % 3 {
            0 => LayerKind::Upper {
                s: 2 + (rng.next_u64() as usize) % (dim - 1),
            },
            1 => LayerKind::Lower {
                s: 2 + (rng.next_u64() as usize) % (dim - 1),
            },
            _ => LayerKind::Shear {
                i: 1 + (rng.next_u64() as usize) % dim,
            },
        };
        let act = if rng.next_u64().is_multiple_of(2) {
            Activation::Sigmoid
        } else {
            Activation::Tanh
        };
        let (n_in, n_out) = kind.shift_dims(dim);
        let mut dims = vec![n_in];
        for _ in 0..1 + rng.next_u64() % 2 {
            dims.push(2 + (rng.next_u64() as usize) % 15);
        }
        dims.push(n_out);
        let mlp = Mlp::new(&dims, act, rng.next_u64()).unwrap();
        net.push(Layer::new(dim, kind, mlp).unwrap()).unwrap();
    }
    net
}

fn unit_box(dim: usize) -> BoxDomain {
    BoxDomain::cube(dim, -1.0, 1.0).unwrap()
}

/// Largest round-trip error and `|det J - 1|` over `points`.
fn invariants(net: &MPNet, points: &[Vec<f64>]) -> (f64, f64) {
    let mut rt = 0.0f64;
    let mut det = 0.0f64;
    for x in points {
        rt = rt.max(round_trip_error(net, x).unwrap());
        let d = fd_jacobian_det(|v| net.forward(v), x, DEFAULT_FD_STEP).unwrap();
        det = det.max((d - 1.0).abs());
    }
    (rt, det)
}

#[test]
fn criterion_1_structural_invariants() {
    let started = Instant::now();
    let mut rng = SampleRng::new(1);
    let (mut rt, mut det) = (0.0f64, 0.0f64);
    for k in 0..50 {
        let dim = [2, 3, 4, 6][k % 4];
        let n_layers = 1 + (rng.next_u64() as usize) % 16;
        let net = random_net(&mut rng, dim, n_layers);
        let b = unit_box(dim);
        let points: Vec<Vec<f64>> = (0..100).map(|_| b.sample(&mut rng)).collect();
        let (r, d) = invariants(&net, &points);
        rt = rt.max(r);
        det = det.max(d);
    }
    report(
        1,
        "structural invariants",
        rt < 1e-11 && det < 1e-6,
        format!("max round trip {rt:.3e} (< 1e-11), max |det-1| {det:.3e} (< 1e-6)"),
        started,
    );
}

#[test]
fn criterion_2_gradient_correctness() {
    let started = Instant::now();
    let mut rng = SampleRng::new(2);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..100 {
        let dim = [2, 3, 4, 6][k % 4];
        let n_layers = 1 + (rng.next_u64() as usize) % 6;
        let mut net = random_net(&mut rng, dim, n_layers);
        let x: Vec<f64> = (0..dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let up: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let g = net.backward(&x, &up).unwrap();
        let dot = |n: &MPNet, v: &[f64]| {
            n.forward(v)
                .unwrap()
                .iter()
                .zip(&up)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };

        let mut fd_x = Vec::with_capacity(dim);
        for j in 0..dim {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[j] += h;
            m[j] -= h;
            fd_x.push((dot(&net, &p) - dot(&net, &m)) / (2.0 * h));
        }
        let theta = net.params();
        let mut fd_p = Vec::with_capacity(theta.len());
        for j in 0..theta.len() {
            let mut t = theta.clone();
            t[j] = theta[j] + h;
            net.set_params(&t).unwrap();
            let fp = dot(&net, &x);
            t[j] = theta[j] - h;
            net.set_params(&t).unwrap();
            let fm = dot(&net, &x);
            fd_p.push((fp - fm) / (2.0 * h));
        }
        net.set_params(&theta).unwrap();

        let analytic: Vec<f64> = g.params.iter().chain(&g.input).copied().collect();
        let numeric: Vec<f64> = fd_p.iter().chain(&fd_x).copied().collect();
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        worst = worst.max(sup(&analytic, &numeric) / scale);
    }
    report(
        2,
        "gradient correctness",
        worst < 1e-5,
        format!("max relative error {worst:.3e} over 100 cases (< 1e-5)"),
        started,
    );
}

#[test]
fn criterion_3_feng_shang_reconstruction() {
    let started = Instant::now();
    let lorentz = VectorField::Lorentz4d;
    let cfg = DecomposeConfig::new(BoxDomain::cube(4, -2.0, 2.0).unwrap());
    let dec = decompose(&lorentz, &cfg).unwrap();
    let mut rng = SampleRng::new(3);
    let mut div = 0.0f64;
    for _ in 0..200 {
        let y = lorentz.sample_regular(&cfg.sample_box, &mut rng).unwrap();
        for pair in &dec.pairs {
            div = div.max(pair.divergence_fd(0.0, &y).abs());
        }
    }
    let separable = dec.pairs.iter().all(|p| p.separable() == Separability::Yes);

    let cyclic = VectorField::Linear {
        matrix: vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ],
    };
    let cyc = decompose(&cyclic, &DecomposeConfig::new(unit_box(3))).unwrap();
    let mut cyc_err = 0.0f64;
    for _ in 0..200 {
        let y = unit_box(3).sample(&mut rng);
        let first = [y[1], 0.0, 0.0];
        let second = [0.0, y[2], y[0]];
        cyc_err = cyc_err.max(sup(&cyc.pairs[0].eval(0.0, &y).unwrap(), &first));
        cyc_err = cyc_err.max(sup(&cyc.pairs[1].eval(0.0, &y).unwrap(), &second));
    }

    let pass = dec.pairs.len() == 3
        && dec.samples >= 200
        && dec.residual_max < 1e-9
        && div < 1e-6
        && separable
        && cyc.pairs.len() == 2
        && cyc_err < 1e-9;
    report(
        3,
        "Feng-Shang reconstruction",
        pass,
        format!(
            "lorentz4d: {} pairs, residual {:.3e} over {} samples, max pair divergence {div:.3e}, all separable {separable}; \
             cyclic: max pair error {cyc_err:.3e}",
            dec.pairs.len(),
            dec.residual_max,
            dec.samples
        ),
        started,
    );
}

#[test]
fn criterion_4_compiler_convergence() {
    let started = Instant::now();
    let counts = [10, 20, 40, 80];
    let harmonic_box = unit_box(2);
    let harmonic = convergence_study(
        &VectorField::Harmonic2d,
        0.0,
        1.0,
        &counts,
        &harmonic_box,
        50,
        4,
        &DecomposeConfig::new(harmonic_box.clone()),
    )
    .unwrap();
    let lorentz_box = BoxDomain::new(vec![-0.1, 0.8, 0.9, 0.3], vec![0.3, 1.2, 1.3, 0.7]).unwrap();
    let lorentz = convergence_study(
        &VectorField::Lorentz4d,
        0.0,
        0.2,
        &counts,
        &lorentz_box,
        50,
        4,
        &DecomposeConfig::new(lorentz_box.clone()),
    )
    .unwrap();
    let ok = |r: &mpnet::compiler::ConvergenceReport| {
        r.slope.is_some_and(|s| (0.8..=1.2).contains(&s)) && r.det_max_dev.iter().all(|&d| d < 1e-6)
    };
    let max_dev = |r: &mpnet::compiler::ConvergenceReport| {
        r.det_max_dev.iter().fold(0.0f64, |m, &d| m.max(d))
    };
    report(
        4,
        "compiler order-1 convergence",
        ok(&harmonic) && ok(&lorentz),
        format!(
            "harmonic2d slope {:?}, lorentz4d slope {:?} (in [0.8, 1.2]); max |det-1| {:.3e} / {:.3e}",
            harmonic.slope,
            lorentz.slope,
            max_dev(&harmonic),
            max_dev(&lorentz)
        ),
        started,
    );
}

#[test]
fn criterion_5_canonicalize_r() {
    let started = Instant::now();
    let mut rng = SampleRng::new(5);
    let delta = 1e-3;
    let mut bound_ok = true;
    let (mut lo_ratio, mut hi_ratio) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..20 {
        let dim = 2 + k % 4;
        let width = 1 + (rng.next_u64() as usize) % 8;
        let s = 2 + (rng.next_u64() as usize) % (dim - 1);
        let shear = Layer::shear(
            dim,
            1,
            Mlp::new(&[dim - 1, width, 1], Activation::Sigmoid, rng.next_u64()).unwrap(),
        )
        .unwrap();
        let b = unit_box(dim);
        let mut points: Vec<Vec<f64>> = (0..2000).map(|_| b.sample(&mut rng)).collect();
        // Box corners, where |x_s| is largest.
        for c in 0..1usize << dim {
            points.push(
                (0..dim)
                    .map(|d| if c >> d & 1 == 1 { 1.0 } else { -1.0 })
                    .collect(),
            );
        }
        let measure = |d: f64| {
            let net = canonicalize_r(&shear, s, d).unwrap();
            points
                .iter()
                .map(|x| sup(&net.forward(x).unwrap(), &shear.forward(x).unwrap()))
                .fold(0.0f64, f64::max)
        };
        let err = measure(delta);
        let half = measure(delta / 2.0);
        let bound = canonicalize_error_bound(&shear, s, delta, &b).unwrap();
        bound_ok &= err <= bound && half <= bound / 2.0;
        lo_ratio = lo_ratio.min(half / err);
        hi_ratio = hi_ratio.max(half / err);
    }
    report(
        5,
        "three-map shear construction",
        bound_ok && lo_ratio >= 0.45 && hi_ratio <= 0.55,
        format!("error within bound for all 20 shears: {bound_ok}; halving ratios in [{lo_ratio:.4}, {hi_ratio:.4}]"),
        started,
    );
}

#[test]
fn criterion_6_appendix_rerun() {
    let started = Instant::now();
    let field = VectorField::Lorentz4d;
    let x0 = [0.1, 1.0, 1.1, 0.5];
    let h_data = 0.2;
    // x_0 .. x_200: 199 training pairs, x_200 starts the rollout.
    let traj = data_trajectory(&field, &x0, h_data, 201, 1e-3).unwrap();
    let data = PairDataset::new(
        traj.states[..199].to_vec(),
        traj.states[1..200].to_vec(),
        h_data,
    )
    .unwrap();
    let config = TrainConfig {
        epochs: 50_000,
        log_every: 1000,
        ..TrainConfig::default()
    };
    let (net, metrics) = train(&data, &config).unwrap();
    let loss = mse_loss(&net, &data).unwrap();

    let mut rng = SampleRng::new(6);
    let b = BoxDomain::cube(4, -1.5, 1.5).unwrap();
    let points: Vec<Vec<f64>> = (0..100).map(|_| b.sample(&mut rng)).collect();
    let (rt, det) = invariants(&net, &points);

    let pred = rollout(&net, &traj.states[200], 100, Some(h_data)).unwrap();
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("appendix_rollout.csv");
    mpnet::io::write_trajectory(&pred, std::fs::File::create(&path).unwrap()).unwrap();

    report(
        6,
        "desk-scale training rerun",
        loss < 1e-4 && metrics.final_loss == loss && rt < 1e-11 && det < 1e-6,
        format!(
            "final MSE {loss:.3e} (< 1e-4) after {} epochs; round trip {rt:.3e}, |det-1| {det:.3e}; rollout CSV at {}",
            config.epochs,
            path.display()
        ),
        started,
    );
}

#[test]
fn criterion_7_teacher_student() {
    let started = Instant::now();
    let dim = 3;
    let base = TrainConfig {
        n_layers: 1,
        s: 2,
        width: 4,
        epochs: 20_000,
        log_every: 1000,
        ..TrainConfig::default()
    };
    let mut results = Vec::new();
    for seed in 0..5u64 {
        let teacher = TrainConfig {
            seed: 1000 + seed,
            ..base.clone()
        }
        .build_net(dim)
        .unwrap();
        let mut rng = SampleRng::new(70 + seed);
        let b = unit_box(dim);
        let inputs: Vec<Vec<f64>> = (0..100).map(|_| b.sample(&mut rng)).collect();
        let targets = inputs.iter().map(|x| teacher.forward(x).unwrap()).collect();
        let data = PairDataset::new(inputs, targets, 1.0).unwrap();
        let (_, metrics) = train(
            &data,
            &TrainConfig {
                seed,
                ..base.clone()
            },
        )
        .unwrap();
        results.push(metrics.final_loss);
    }
    let worst = results.iter().fold(0.0f64, |m, &l| m.max(l));
    report(
        7,
        "teacher-student identifiability",
        worst < 1e-6,
        format!(
            "final losses [{}] (all < 1e-6 within 2e4 epochs)",
            results
                .iter()
                .map(|l| format!("{l:.3e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        started,
    );
}

#[test]
fn criterion_8_lp_estimator() {
    let started = Instant::now();
    let b = BoxDomain::cube(2, 0.0, 1.0).unwrap();
    let est = lp_error(
        |x| Ok(x.iter().map(|v| v + 1.0).collect()),
        |x| Ok(x.to_vec()),
        &b,
        1.0,
        100_000,
        8,
    )
    .unwrap();
    let dev = (est.value - 2.0).abs();
    report(
        8,
        "L^p estimator sanity",
        dev <= 3.0 * est.std_error,
        format!(
            "estimate {:.17} with standard error {:.3e}",
            est.value, est.std_error
        ),
        started,
    );
}
