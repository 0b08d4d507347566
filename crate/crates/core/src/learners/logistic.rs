//! L2-regularized logistic regression fitted by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::{check_rows, check_training, LearnerError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticRegressionParams {
    /// Coefficient on ‖w‖²; the bias is not penalized.
    pub l2_strength: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop once the loss improves by less than this between epochs.
    pub tolerance: f64,
    /// Fit on z-scored features (statistics stored in the model).
    pub standardize: bool,
    pub seed: u64,
}

impl Default for LogisticRegressionParams {
    fn default() -> Self {
        Self {
            l2_strength: 1e-4,
            learning_rate: 0.1,
            max_epochs: 5000,
            tolerance: 1e-10,
            standardize: true,
            seed: 0,
        }
    }
}

impl LogisticRegressionParams {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.l2_strength >= 0.0) {
            return Err(LearnerError::InvalidParams("l2_strength must be >= 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LearnerError::InvalidParams("learning_rate must be > 0".into()));
        }
        if self.max_epochs == 0 {
            return Err(LearnerError::InvalidParams("max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub feature_dim: usize,
    pub final_loss: f64,
    pub epochs_run: usize,
    pub params: LogisticRegressionParams,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean binary cross-entropy plus `l2 · ‖w‖²`, and its gradient.
pub fn lr_loss_and_gradient(
    features: &[Vec<f64>],
    labels: &[u8],
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = features.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let z = bias + x.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>();
        let y = y as f64;
        // -[y ln σ(z) + (1 - y) ln(1 - σ(z))] = softplus(z) - y z
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for (g, a) in gw.iter_mut().zip(x) {
            *g += r * a;
        }
        gb += r;
    }
    loss /= n;
    gb /= n;
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + 2.0 * l2 * w;
    }
    loss += l2 * weights.iter().map(|w| w * w).sum::<f64>();
    (loss, gw, gb)
}

fn standardization(features: &[Vec<f64>], dim: usize, enabled: bool) -> (Vec<f64>, Vec<f64>) {
    if !enabled {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in features {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for row in features {
        for ((s, v), m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    (mean, scale)
}

fn transform(row: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(mean)
        .zip(scale)
        .map(|((v, m), s)| (v - m) / s)
        .collect()
}

pub fn lr_train(
    features: &[Vec<f64>],
    labels: &[u8],
    params: &LogisticRegressionParams,
) -> Result<LogisticRegression, LearnerError> {
    params.validate()?;
    let dim = check_training(features, labels)?;
    let (mean, scale) = standardization(features, dim, params.standardize);
    let xs: Vec<Vec<f64>> = features.iter().map(|r| transform(r, &mean, &scale)).collect();

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut prev = f64::INFINITY;
    let mut epochs_run = 0;
    let mut loss = prev;
    for epoch in 0..params.max_epochs {
        let (l, gw, gb) = lr_loss_and_gradient(&xs, labels, &w, b, params.l2_strength);
        loss = l;
        epochs_run = epoch + 1;
        if (prev - l).abs() < params.tolerance {
            break;
        }
        prev = l;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= params.learning_rate * g;
        }
        b -= params.learning_rate * gb;
    }
    Ok(LogisticRegression {
        weights: w,
        bias: b,
        feature_mean: mean,
        feature_scale: scale,
        feature_dim: dim,
        final_loss: loss,
        epochs_run,
        params: *params,
    })
}

pub fn lr_predict_proba(model: &LogisticRegression, features: &[Vec<f64>]) -> Result<Vec<f64>, LearnerError> {
    check_rows(features, Some(model.feature_dim))?;
    Ok(features
        .iter()
        .map(|row| {
            let x = transform(row, &model.feature_mean, &model.feature_scale);
            sigmoid(model.bias + x.iter().zip(&model.weights).map(|(a, w)| a * w).sum::<f64>())
        })
        .collect())
}
