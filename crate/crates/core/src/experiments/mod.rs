//! Evaluation: ROC/AUC, t-tests, result comparison, hyperparameter search,
//! and the experiment protocol in fully- and semi-supervised modes.

pub mod compare;
pub mod metrics;
pub mod protocol;
pub mod report;
pub mod stats;
pub mod tuning;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compare::{compare, ComparisonRow, ComparisonTable, PairwiseTest};
pub use metrics::{mean_roc, roc_auc, RocCurve};
pub use protocol::{
    dataset_fingerprint, default_iterations, tuned_rf_params, run_experiment, tuning_set, CnnArchChoice, CnnSettings,
    ExperimentConfig,
};
pub use stats::{students_t_test, TTestResult, DEFAULT_ALPHA};
pub use tuning::{random_search_tune, IntRange, SearchSpace, TuneConfig, TuneObjective, TuneReport};

use crate::cnn3d::CnnError;
use crate::fusion::FusionError;
use crate::learners::LearnerError;
use crate::radiomics::RadiomicsError;
use crate::semisup::SemiSupError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Invalid(String),
    #[error("prerequisite missing: {0}")]
    Prerequisite(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    SemiSup(#[from] SemiSupError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("radiomics: {0}")]
    Radiomics(#[from] RadiomicsError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for ExperimentError {
    fn from(e: serde_json::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fully,
    Semi,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fully => "fully",
            Mode::Semi => "semi",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub seed: u64,
    pub auc: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub pseudo_labeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment_id: u8,
    pub mode: Mode,
    pub model: String,
    pub feature_len: Option<usize>,
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
    /// `(fpr, mean tpr)` on a 101-point grid.
    pub mean_roc: Vec<(f64, f64)>,
    pub per_iteration: Vec<IterationRecord>,
    pub config: serde_json::Value,
}

impl ExperimentResult {
    pub fn name(&self) -> String {
        format!("exp{}_{}_{}", self.experiment_id, self.mode, self.model)
    }

    /// A result with only AUC values filled in.
    pub fn from_aucs(experiment_id: u8, mode: Mode, model: &str, aucs: Vec<f64>) -> Self {
        let (mean_auc, std_auc) = mean_std(&aucs);
        Self {
            experiment_id,
            mode,
            model: model.to_string(),
            feature_len: None,
            aucs,
            mean_auc,
            std_auc,
            mean_roc: Vec::new(),
            per_iteration: Vec::new(),
            config: serde_json::Value::Null,
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let s = if x.len() > 1 {
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, s)
}
