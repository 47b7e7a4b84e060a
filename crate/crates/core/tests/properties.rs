use proptest::prelude::*;

use mpnet::compiler::{canonicalize_error_bound, canonicalize_r, compile_flow};
use mpnet::coupling::verify::{fd_jacobian_det, round_trip_error, DEFAULT_FD_STEP};
use mpnet::dynamics::{divergence_fd, generate_dataset, PairDataset, VectorField};
use mpnet::feng_shang::{decompose, DecomposeConfig};
use mpnet::rng::SampleRng;
use mpnet::trainer::{train, TrainConfig};
use mpnet::{Activation, BoxDomain, Layer, LayerKind, MPNet, Mlp, ShiftFn, ShiftRegistry};

fn activation(k: u8) -> Activation {
    match k % 3 {
        0 => Activation::Sigmoid,
        1 => Activation::Tanh,
        _ => Activation::Relu,
    }
}

fn layer(dim: usize, kind_sel: u8, pos: usize, width: usize, act: Activation, seed: u64) -> Layer {
    let kind = match kind_sel % 3 {
        0 => LayerKind::Upper {
            s: 2 + pos % (dim - 1),
        },
        1 => LayerKind::Lower {
            s: 2 + pos % (dim - 1),
        },
        _ => LayerKind::Shear { i: 1 + pos % dim },
    };
    let (n_in, n_out) = kind.shift_dims(dim);
    Layer::new(
        dim,
        kind,
        Mlp::new(&[n_in, width, n_out], act, seed).unwrap(),
    )
    .unwrap()
}

fn smooth_net(dim: usize, n_layers: usize, seed: u64) -> MPNet {
    let mut rng = SampleRng::new(seed);
    let mut net = MPNet::identity(dim).unwrap();
    for _ in 0..n_layers {
        let sel = (rng.next_u64() % 3) as u8;
        let pos = rng.next_u64() as usize;
        let act = activation((rng.next_u64() % 2) as u8);
        net.push(layer(
            dim,
            sel,
            pos,
            2 + (rng.next_u64() % 10) as usize,
            act,
            rng.next_u64(),
        ))
        .unwrap();
    }
    net
}

fn point(dim: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = SampleRng::new(seed);
    (0..dim).map(|_| rng.uniform_in(-scale, scale)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_layers_preserve_volume_and_invert(
        dim in 2usize..7, sel in 0u8..3, pos in 0usize..64, width in 1usize..12,
        act in 0u8..2, seed in any::<u64>(), xs in any::<u64>(),
    ) {
        let l = layer(dim, sel, pos, width, activation(act), seed);
        let x = point(dim, xs, 2.0);
        let det = fd_jacobian_det(|v| l.forward(v), &x, DEFAULT_FD_STEP).unwrap();
        prop_assert!((det - 1.0).abs() < 1e-6);
        let back = l.inverse(&l.forward(&x).unwrap()).unwrap();
        let err = back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12);
    }

    #[test]
    fn deep_nets_invert(dim in 2usize..7, n_layers in 1usize..65, seed in any::<u64>(), xs in any::<u64>()) {
        let net = smooth_net(dim, n_layers, seed);
        let x = point(dim, xs, 2.0);
        prop_assert!(round_trip_error(&net, &x).unwrap() < 1e-11);
    }

    #[test]
    fn nets_preserve_volume(dim in 2usize..7, n_layers in 1usize..17, seed in any::<u64>(), xs in any::<u64>()) {
        let net = smooth_net(dim, n_layers, seed);
        let x = point(dim, xs, 1.0);
        let det = fd_jacobian_det(|v| net.forward(v), &x, DEFAULT_FD_STEP).unwrap();
        prop_assert!((det - 1.0).abs() < 1e-6);
    }

    #[test]
    fn composition_is_exact(dim in 2usize..6, na in 0usize..6, nb in 0usize..6, seed in any::<u64>(), xs in any::<u64>()) {
        let a = smooth_net(dim, na, seed);
        let b = smooth_net(dim, nb, seed.wrapping_add(1));
        let x = point(dim, xs, 2.0);
        let composed = a.clone().then(&b).unwrap();
        prop_assert_eq!(composed.forward(&x).unwrap(), b.forward(&a.forward(&x).unwrap()).unwrap());
    }

    #[test]
    fn two_constant_layers_translate(dim in 2usize..7, pos in 0usize..64, shift in prop::collection::vec(-10.0f64..10.0, 6), xs in any::<u64>()) {
        let reg = ShiftRegistry::with_builtins();
        let s = 2 + pos % (dim - 1);
        let a = &shift[..dim];
        let net = MPNet::from_layers(dim, vec![
            Layer::upper(dim, s, ShiftFn::Fixed(reg.constant(a[..s - 1].to_vec(), dim - s + 1))).unwrap(),
            Layer::lower(dim, s, ShiftFn::Fixed(reg.constant(a[s - 1..].to_vec(), s - 1))).unwrap(),
        ]).unwrap();
        let x = point(dim, xs, 5.0);
        let expected: Vec<f64> = x.iter().zip(a).map(|(u, v)| u + v).collect();
        prop_assert_eq!(net.forward(&x).unwrap(), expected);
    }

    #[test]
    fn mlp_init_is_deterministic(width in 1usize..20, act in 0u8..3, seed in any::<u64>(), xs in any::<u64>()) {
        let a = Mlp::new(&[3, width, 2], activation(act), seed).unwrap();
        let b = Mlp::new(&[3, width, 2], activation(act), seed).unwrap();
        let x = point(3, xs, 1.0);
        let bits = |v: Vec<f64>| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(a.params()), bits(b.params()));
        prop_assert_eq!(bits(a.forward(&x).unwrap()), bits(b.forward(&x).unwrap()));
    }

    #[test]
    fn sigmoid_mlp_respects_lipschitz_bound(width in 1usize..20, seed in any::<u64>(), xs in any::<u64>(), ys in any::<u64>()) {
        let m = Mlp::new(&[3, width, width, 2], Activation::Sigmoid, seed).unwrap();
        let (x, y) = (point(3, xs, 2.0), point(3, ys, 2.0));
        let fx = m.forward(&x).unwrap();
        let fy = m.forward(&y).unwrap();
        let lhs = fx.iter().zip(&fy).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let rhs = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(lhs <= m.lipschitz_bound() * rhs * (1.0 + 1e-12));
    }

    #[test]
    fn trace_free_linear_fields_decompose(entries in prop::collection::vec(-2.0f64..2.0, 16), dim in 2usize..5, ys in any::<u64>()) {
        let mut matrix: Vec<Vec<f64>> = (0..dim).map(|i| entries[i * dim..(i + 1) * dim].to_vec()).collect();
        let trace: f64 = (0..dim).map(|i| matrix[i][i]).sum();
        matrix[dim - 1][dim - 1] -= trace;
        let field = VectorField::Linear { matrix };
        let cfg = DecomposeConfig::new(BoxDomain::cube(dim, -1.0, 1.0).unwrap());
        let dec = decompose(&field, &cfg).unwrap();
        prop_assert_eq!(dec.pairs.len(), dim - 1);
        let y = point(dim, ys, 1.0);
        prop_assert!(divergence_fd(&field, 0.0, &y, 1e-5).unwrap().abs() < 1e-6);
        let sum = dec.sum(0.0, &y).unwrap();
        let f = field.eval(0.0, &y);
        prop_assert!(sum.iter().zip(&f).all(|(a, b)| (a - b).abs() < 1e-6));
        for pair in &dec.pairs {
            let v = pair.eval(0.0, &y).unwrap();
            for (k, value) in v.iter().enumerate() {
                if k + 1 != pair.d() && k != pair.d() {
                    prop_assert_eq!(value.to_bits(), 0.0f64.to_bits());
                }
            }
            prop_assert!(pair.divergence_fd(0.0, &y).abs() < 1e-6);
        }
    }

    #[test]
    fn dataset_pairs_chain(n_pairs in 1usize..30, h in 0.01f64..0.3) {
        let ds = generate_dataset(&VectorField::Harmonic2d, &[1.0, 0.0], h, n_pairs, 1e-3).unwrap();
        prop_assert_eq!(ds.len(), n_pairs);
        for w in 1..ds.len() {
            prop_assert_eq!(&ds.inputs[w], &ds.targets[w - 1]);
        }
    }

    #[test]
    fn compiled_lorentz_is_volume_preserving(n_steps in 1usize..12, span in 0.01f64..0.5, xs in any::<u64>()) {
        let b = BoxDomain::new(vec![-0.1, 0.8, 0.9, 0.3], vec![0.3, 1.2, 1.3, 0.7]).unwrap();
        let compiled = compile_flow(&VectorField::Lorentz4d, 0.0, span, n_steps, &DecomposeConfig::new(b.clone())).unwrap();
        let x = b.sample(&mut SampleRng::new(xs));
        let det = fd_jacobian_det(|v| compiled.net.forward(v), &x, DEFAULT_FD_STEP).unwrap();
        prop_assert!((det - 1.0).abs() < 1e-6);
        prop_assert!(round_trip_error(&compiled.net, &x).unwrap() < 1e-11);
    }

    #[test]
    fn canonicalize_stays_within_bound(dim in 2usize..6, width in 1usize..6, pos in 0usize..8, delta in 1e-4f64..1e-2, seed in any::<u64>(), xs in any::<u64>()) {
        let s = 2 + pos % (dim - 1);
        let shear = Layer::shear(dim, 1, Mlp::new(&[dim - 1, width, 1], Activation::Sigmoid, seed).unwrap()).unwrap();
        let net = canonicalize_r(&shear, s, delta).unwrap();
        let domain = BoxDomain::cube(dim, -1.0, 1.0).unwrap();
        let bound = canonicalize_error_bound(&shear, s, delta, &domain).unwrap();
        let x = domain.sample(&mut SampleRng::new(xs));
        let a = net.forward(&x).unwrap();
        let b = shear.forward(&x).unwrap();
        let err = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        prop_assert!(err <= bound);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn training_keeps_structure(seed in any::<u64>(), epochs in 1usize..60) {
        let mut rng = SampleRng::new(seed);
        let xs: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[1], -x[0], x[2] + 0.1]).collect();
        let data = PairDataset::new(xs.clone(), ys, 0.1).unwrap();
        let cfg = TrainConfig { n_layers: 3, width: 5, epochs, log_every: 7, seed, lr: 1e-2, ..TrainConfig::default() };
        let (a, _) = train(&data, &cfg).unwrap();
        let (b, metrics) = train(&data, &cfg).unwrap();
        prop_assert_eq!(
            a.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        prop_assert!(metrics.loss_curve.windows(2).all(|w| w[0].0 < w[1].0));
        for x in &xs {
            let det = fd_jacobian_det(|v| a.forward(v), x, DEFAULT_FD_STEP).unwrap();
            prop_assert!((det - 1.0).abs() < 1e-6);
            prop_assert!(round_trip_error(&a, x).unwrap() < 1e-11);
        }
    }
}
