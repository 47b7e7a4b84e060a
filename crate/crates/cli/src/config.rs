//! JSON run configurations, one per subcommand. Unknown keys are rejected;
//! omitted keys take the defaults below.

use serde::{Deserialize, Serialize};

use mpnet::dynamics::VectorField;
use mpnet::feng_shang::DecomposeConfig;
use mpnet::trainer::TrainConfig;
use mpnet::BoxDomain;

fn lorentz_box() -> BoxDomain {
    BoxDomain {
        lo: vec![-1.5; 4],
        hi: vec![1.5; 4],
    }
}

fn lorentz_decompose() -> DecomposeConfig {
    DecomposeConfig::new(lorentz_box())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub field: VectorField,
    pub x0: Vec<f64>,
    pub h_data: f64,
    pub n_pairs: usize,
    pub h_ref: f64,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            field: VectorField::Lorentz4d,
            x0: vec![0.1, 1.0, 1.1, 0.5],
            h_data: 0.2,
            n_pairs: 199,
            h_ref: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    /// Dataset CSV with header `x1..xD,xp1..xpD`.
    pub dataset: String,
    pub h_data: f64,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            dataset: "dataset.csv".into(),
            h_data: 0.2,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub model: String,
    pub x0: Vec<f64>,
    pub n_steps: usize,
    pub h_data: Option<f64>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            model: "model.json".into(),
            x0: Vec::new(),
            n_steps: 100,
            h_data: Some(0.2),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompileConfig {
    pub field: VectorField,
    pub tau: f64,
    pub span: f64,
    pub n_steps: usize,
    pub decompose: DecomposeConfig,
    /// Points sampled from the decomposition box for the determinant check.
    pub det_check_points: usize,
}

impl Default for CompileConfig {
    fn default() -> Self {
        Self {
            field: VectorField::Lorentz4d,
            tau: 0.0,
            span: 0.2,
            n_steps: 20,
            decompose: lorentz_decompose(),
            det_check_points: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeRunConfig {
    pub field: VectorField,
    pub decompose: DecomposeConfig,
}

impl Default for DecomposeRunConfig {
    fn default() -> Self {
        Self {
            field: VectorField::Lorentz4d,
            decompose: lorentz_decompose(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub field: VectorField,
    pub tau: f64,
    pub span: f64,
    pub step_counts: Vec<usize>,
    pub sample_box: BoxDomain,
    pub n_samples: usize,
    pub decompose: DecomposeConfig,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        let sample_box = BoxDomain {
            lo: vec![-0.1, 0.8, 0.9, 0.3],
            hi: vec![0.3, 1.2, 1.3, 0.7],
        };
        Self {
            field: VectorField::Lorentz4d,
            tau: 0.0,
            span: 0.2,
            step_counts: vec![10, 20, 40, 80],
            decompose: DecomposeConfig::new(sample_box.clone()),
            sample_box,
            n_samples: 50,
        }
    }
}

/// Flow of a reference field to compare a model against in L^p.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceFlow {
    pub field: VectorField,
    #[serde(default)]
    pub tau: f64,
    pub span: f64,
    #[serde(default = "default_h_ref")]
    pub h_ref: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_lp_samples")]
    pub n_samples: usize,
    /// Fails the check when the estimate exceeds this value.
    #[serde(default)]
    pub max_error: Option<f64>,
}

fn default_h_ref() -> f64 {
    1e-3
}
fn default_p() -> f64 {
    2.0
}
fn default_lp_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub model: String,
    /// Defaults to `[-1, 1]^D` for the model's dimension.
    pub sample_box: Option<BoxDomain>,
    pub n_points: usize,
    pub round_trip_tol: f64,
    pub det_tol: f64,
    pub reference: Option<ReferenceFlow>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            model: "model.json".into(),
            sample_box: None,
            n_points: 100,
            round_trip_tol: 1e-11,
            det_tol: 1e-6,
            reference: None,
        }
    }
}
