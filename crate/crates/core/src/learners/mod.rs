//! Classical learners with probability outputs: logistic regression, a CART
//! random forest, and brute-force KNN.

pub mod forest;
pub mod knn;
pub mod logistic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{rf_predict_proba, rf_train, MaxFeatures, RandomForest, RandomForestParams, Tree, TreeNode};
pub use knn::{knn_classify, sorted_neighbors, KnnModel};
pub use logistic::{lr_loss_and_gradient, lr_predict_proba, lr_train, LogisticRegression, LogisticRegressionParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("degenerate labels: training data must contain both classes")]
    DegenerateLabels,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("labels must be 0 or 1, found {0}")]
    BadLabel(u8),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Checks a training set and returns its feature dimension.
pub(crate) fn check_training(features: &[Vec<f64>], labels: &[u8]) -> Result<usize, LearnerError> {
    if features.len() != labels.len() {
        return Err(LearnerError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    if features.len() < 2 {
        return Err(LearnerError::TooFewSamples {
            needed: 2,
            got: features.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(LearnerError::BadLabel(bad));
    }
    let dim = check_rows(features, None)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(LearnerError::DegenerateLabels);
    }
    Ok(dim)
}

/// Every row has the same (or the expected) width and only finite values.
pub(crate) fn check_rows(features: &[Vec<f64>], expected: Option<usize>) -> Result<usize, LearnerError> {
    let dim = expected.unwrap_or_else(|| features.first().map_or(0, Vec::len));
    for (r, row) in features.iter().enumerate() {
        if row.len() != dim {
            return Err(LearnerError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite { row: r, col: c });
        }
    }
    Ok(dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lr,
    Rf,
    Knn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainedModel {
    LogisticRegression(LogisticRegression),
    RandomForest(RandomForest),
    Knn(KnnModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::LogisticRegression(_) => ModelKind::Lr,
            TrainedModel::RandomForest(_) => ModelKind::Rf,
            TrainedModel::Knn(_) => ModelKind::Knn,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            TrainedModel::LogisticRegression(m) => m.feature_dim,
            TrainedModel::RandomForest(m) => m.feature_dim,
            TrainedModel::Knn(m) => m.feature_dim(),
        }
    }

    pub fn predict_proba(&self, features: &[Vec<f64>]) -> Result<Vec<f64>, LearnerError> {
        match self {
            TrainedModel::LogisticRegression(m) => lr_predict_proba(m, features),
            TrainedModel::RandomForest(m) => rf_predict_proba(m, features),
            TrainedModel::Knn(m) => m.predict_proba(features),
        }
    }
}
