use std::fs::File;
use std::io::BufReader;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use mpnet::compiler::{compile_flow, convergence_study, det_check};
use mpnet::coupling::serial;
use mpnet::coupling::verify::{fd_jacobian_det, lp_error, DEFAULT_FD_STEP};
use mpnet::dynamics::{data_trajectory, rk4_flow, PairDataset};
use mpnet::feng_shang::decompose as decompose_field;
use mpnet::rng::SampleRng;
use mpnet::trainer::{rollout, train as train_net};
use mpnet::{io, numfmt, BoxDomain, Error, MPNet};

use crate::config::{
    CompileConfig, ConvergenceConfig, DecomposeRunConfig, GenDataConfig, PredictConfig,
    TrainRunConfig, VerifyConfig,
};
use crate::{Failure, Outcome, Run};

type Metrics = Result<Map<String, Value>, Failure>;

/// Parses the configuration (or takes defaults), then runs `body` on it.
pub fn execute<C, F>(raw: Option<&[u8]>, run: &Run, body: F) -> Outcome
where
    C: DeserializeOwned + Serialize + Default,
    F: FnOnce(&mut C, &Run) -> Metrics,
{
    let parsed: Result<C, _> = match raw {
        Some(bytes) => serde_json::from_slice(bytes),
        None => Ok(C::default()),
    };
    let mut cfg = match parsed {
        Ok(cfg) => cfg,
        Err(e) => {
            return (
                None,
                Err(Failure::config(format!("invalid configuration: {e}"))),
            )
        }
    };
    let result = body(&mut cfg, run);
    (serde_json::to_value(&cfg).ok(), result)
}

fn metrics(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(map) => map,
        _ => Map::new(),
    }
}

fn to_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    numfmt::to_json_bytes(value).map_err(|e| Failure::from(Error::Numeric(e.to_string())))
}

fn load_model(path: &str) -> Result<MPNet, Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::config(format!("cannot read model {path}: {e}")))?;
    Ok(serial::deserialize(&bytes, &mpnet::default_registry())?)
}

fn check_finite(x: &[f64], what: &str) -> Result<(), Failure> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Failure::from(Error::Numeric(format!(
            "non-finite {what}: {x:?}"
        ))))
    }
}

pub fn gen_data(cfg: &mut GenDataConfig, run: &Run) -> Metrics {
    cfg.field.validate()?;
    if cfg.n_pairs == 0 {
        return Err(Error::Config("n_pairs must be at least 1".into()).into());
    }
    let traj = data_trajectory(&cfg.field, &cfg.x0, cfg.h_data, cfg.n_pairs + 1, cfg.h_ref)?;
    let data = PairDataset::from_trajectory(&traj, cfg.h_data);

    let mut buf = Vec::new();
    io::write_dataset(&data, &mut buf)?;
    run.write("dataset.csv", &buf)?;
    buf.clear();
    io::write_trajectory(&traj, &mut buf)?;
    run.write("trajectory.csv", &buf)?;

    println!(
        "{} pairs, h_data = {}, field = {}",
        data.len(),
        cfg.h_data,
        cfg.field.id()
    );
    Ok(metrics(json!({
        "n_pairs": data.len(),
        "h_data": cfg.h_data,
        "field": cfg.field.id(),
    })))
}

pub fn train(cfg: &mut TrainRunConfig, run: &Run) -> Metrics {
    if let Some(seed) = run.seed {
        cfg.train.seed = seed;
    }
    cfg.train.validate()?;
    let file = File::open(&cfg.dataset)
        .map_err(|e| Failure::config(format!("cannot read dataset {}: {e}", cfg.dataset)))?;
    let data = io::read_dataset(BufReader::new(file), cfg.h_data)?;

    let (net, report) = match train_net(&data, &cfg.train) {
        Ok(done) => done,
        Err(Error::TrainingAborted { epoch, checkpoint }) => {
            run.write("model.checkpoint.json", &serial::serialize(&checkpoint)?)?;
            return Err(Error::TrainingAborted { epoch, checkpoint }.into());
        }
        Err(e) => return Err(e.into()),
    };
    run.write("model.json", &serial::serialize(&net)?)?;
    run.write(
        "metrics.json",
        &to_bytes(&json!({
            "loss_curve": report.loss_curve,
            "det_checks": report.det_checks,
            "final_loss": report.final_loss,
            "seed": cfg.train.seed,
            "config": cfg.train,
        }))?,
    )?;
    let mut buf = Vec::new();
    io::write_loss_curve(&report.loss_curve, &mut buf)?;
    run.write("loss_curve.csv", &buf)?;

    println!(
        "trained {} epochs on {} pairs, final mse = {:e}",
        cfg.train.epochs,
        data.len(),
        report.final_loss
    );
    Ok(metrics(json!({
        "final_loss": report.final_loss,
        "epochs": cfg.train.epochs,
        "n_pairs": data.len(),
        "det_check_max_dev": report.det_checks.iter().map(|c| c.1).fold(0.0f64, f64::max),
    })))
}

pub fn predict(cfg: &mut PredictConfig, run: &Run) -> Metrics {
    let net = load_model(&cfg.model)?;
    if cfg.x0.len() != net.dim() {
        return Err(Failure::config(format!(
            "x0 has {} entries but the model has dimension {}",
            cfg.x0.len(),
            net.dim()
        )));
    }
    check_finite(&cfg.x0, "x0")?;
    let traj = rollout(&net, &cfg.x0, cfg.n_steps, cfg.h_data)?;
    let mut buf = Vec::new();
    io::write_trajectory(&traj, &mut buf)?;
    run.write("prediction.csv", &buf)?;
    println!("{} steps from {:?}", cfg.n_steps, cfg.x0);
    Ok(metrics(json!({
        "n_steps": cfg.n_steps,
        "final_state": traj.states.last(),
    })))
}

pub fn compile(cfg: &mut CompileConfig, run: &Run) -> Metrics {
    if let Some(seed) = run.seed {
        cfg.decompose.seed = seed;
    }
    cfg.field.validate()?;
    cfg.decompose.sample_box.validate()?;
    let compiled = compile_flow(&cfg.field, cfg.tau, cfg.span, cfg.n_steps, &cfg.decompose)?;
    let det_dev = det_check(
        &compiled.net,
        &cfg.decompose.sample_box,
        cfg.det_check_points,
        cfg.decompose.seed,
    )?;
    run.write("model.json", &serial::serialize(&compiled.net)?)?;
    println!(
        "{} layers for {} over [{}, {}], max |det - 1| = {:e}",
        compiled.net.len(),
        cfg.field.id(),
        cfg.tau,
        cfg.tau + cfg.span,
        det_dev
    );
    Ok(metrics(json!({
        "field": cfg.field.id(),
        "tau": cfg.tau,
        "T": cfg.span,
        "n_steps": cfg.n_steps,
        "n_layers": compiled.net.len(),
        "pair_separability": compiled.pair_separability,
        "det_check_max_dev": det_dev,
    })))
}

pub fn decompose(cfg: &mut DecomposeRunConfig, run: &Run) -> Metrics {
    if let Some(seed) = run.seed {
        cfg.decompose.seed = seed;
    }
    cfg.field.validate()?;
    cfg.decompose.sample_box.validate()?;
    let dec = decompose_field(&cfg.field, &cfg.decompose)?;
    let report = dec.report();
    run.write("decomposition.json", &to_bytes(&report)?)?;
    println!(
        "{} pairs, residual {:e} over {} samples",
        report.pairs.len(),
        report.residual_max,
        report.samples
    );
    Ok(metrics(json!({
        "n_pairs": report.pairs.len(),
        "residual_max": report.residual_max,
        "all_separable": dec.all_separable(),
    })))
}

pub fn convergence(cfg: &mut ConvergenceConfig, run: &Run) -> Metrics {
    let seed = run.seed.unwrap_or(cfg.decompose.seed);
    cfg.decompose.seed = seed;
    cfg.field.validate()?;
    cfg.sample_box.validate()?;
    cfg.decompose.sample_box.validate()?;
    let report = convergence_study(
        &cfg.field,
        cfg.tau,
        cfg.span,
        &cfg.step_counts,
        &cfg.sample_box,
        cfg.n_samples,
        seed,
        &cfg.decompose,
    )?;
    run.write("convergence.json", &to_bytes(&report)?)?;
    match report.slope {
        Some(slope) => println!("fitted order {slope}"),
        None => println!("exact: all errors below 1e-12"),
    }
    Ok(metrics(json!({
        "slope": report.slope,
        "exact": report.exact,
        "errors": report.errors,
        "det_max_dev": report.det_max_dev,
    })))
}

#[derive(Debug, Serialize)]
struct Check {
    pass: bool,
    max: f64,
    tol: Option<f64>,
    worst_point: Option<Vec<f64>>,
}

pub fn verify(cfg: &mut VerifyConfig, run: &Run) -> Metrics {
    let net = load_model(&cfg.model)?;
    let dim = net.dim();
    let domain = match &cfg.sample_box {
        Some(b) => {
            b.validate()?;
            if b.dim() != dim {
                return Err(Failure::config(format!(
                    "sample_box has dimension {}, model has {dim}",
                    b.dim()
                )));
            }
            b.clone()
        }
        None => BoxDomain::cube(dim, -1.0, 1.0)?,
    };
    let seed = run.seed.unwrap_or(0);
    let mut rng = SampleRng::new(seed);

    let (mut rt_max, mut rt_at) = (0.0f64, None);
    let (mut det_max, mut det_at) = (0.0f64, None);
    for _ in 0..cfg.n_points {
        let x = domain.sample(&mut rng);
        let y = net.forward(&x)?;
        check_finite(&y, &format!("model output at {x:?}"))?;
        let back = net.inverse(&y)?;
        check_finite(&back, &format!("inverse output at {x:?}"))?;
        let rt = back
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if rt >= rt_max {
            rt_max = rt;
            rt_at = Some(x.clone());
        }
        let det = (fd_jacobian_det(|v| net.forward(v), &x, DEFAULT_FD_STEP)? - 1.0).abs();
        if det >= det_max {
            det_max = det;
            det_at = Some(x);
        }
    }
    let mut checks = Map::new();
    let round_trip = Check {
        pass: rt_max < cfg.round_trip_tol,
        max: rt_max,
        tol: Some(cfg.round_trip_tol),
        worst_point: rt_at,
    };
    let det = Check {
        pass: det_max < cfg.det_tol,
        max: det_max,
        tol: Some(cfg.det_tol),
        worst_point: det_at,
    };
    checks.insert("round_trip".into(), json!(round_trip));
    checks.insert("det".into(), json!(det));

    if let Some(reference) = &cfg.reference {
        reference.field.validate()?;
        if reference.field.dim() != dim {
            return Err(Failure::config(format!(
                "reference field has dimension {}, model has {dim}",
                reference.field.dim()
            )));
        }
        let est = lp_error(
            |x| net.forward(x),
            |x| {
                rk4_flow(
                    &reference.field,
                    reference.tau,
                    reference.span,
                    reference.h_ref,
                    x,
                )
            },
            &domain,
            reference.p,
            reference.n_samples,
            seed,
        )?;
        let pass = reference.max_error.is_none_or(|m| est.value <= m);
        checks.insert(
            "lp_error".into(),
            json!({
                "pass": pass,
                "value": est.value,
                "std_error": est.std_error,
                "p": reference.p,
                "tol": reference.max_error,
            }),
        );
    }

    run.write("verification.json", &to_bytes(&checks)?)?;
    let failing: Vec<String> = checks
        .iter()
        .filter(|(_, v)| v["pass"] == json!(false))
        .map(|(name, v)| match v.get("worst_point") {
            Some(p) if !p.is_null() => format!("{name} at {p}"),
            _ => name.clone(),
        })
        .collect();
    for (name, v) in &checks {
        let verdict = if v["pass"] == json!(true) {
            "pass"
        } else {
            "FAIL"
        };
        println!("{name}: {verdict}");
    }
    if failing.is_empty() {
        Ok(checks)
    } else {
        Err(Failure {
            code: 5,
            message: format!("verification failed: {}", failing.join("; ")),
            metrics: checks,
        })
    }
}
