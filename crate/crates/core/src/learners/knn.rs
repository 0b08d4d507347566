//! Brute-force K-nearest-neighbours under Euclidean distance.
//!
//! Distance ties are broken by the lower training index, so results never
//! depend on sort stability or thread scheduling.

use serde::{Deserialize, Serialize};

use super::{check_rows, LearnerError};

/// Training indices ordered by (squared distance, index).
pub fn sorted_neighbors(train: &[Vec<f64>], query: &[f64]) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let dist = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (dist, i)
        })
        .collect();
    d.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

fn check_k(k: usize, n: usize) -> Result<(), LearnerError> {
    if k == 0 || k % 2 == 0 {
        return Err(LearnerError::InvalidParams(format!("k must be odd and positive, got {k}")));
    }
    if k > n {
        return Err(LearnerError::InvalidParams(format!("k = {k} exceeds {n} training samples")));
    }
    Ok(())
}

/// Majority label among the `k` nearest training points.
pub fn knn_classify(
    train_features: &[Vec<f64>],
    train_labels: &[u8],
    query: &[f64],
    k: usize,
) -> Result<u8, LearnerError> {
    if train_features.len() != train_labels.len() {
        return Err(LearnerError::LengthMismatch {
            features: train_features.len(),
            labels: train_labels.len(),
        });
    }
    check_k(k, train_features.len())?;
    let dim = check_rows(train_features, None)?;
    check_rows(std::slice::from_ref(&query.to_vec()), Some(dim))?;
    let ones = sorted_neighbors(train_features, query)
        .iter()
        .take(k)
        .filter(|(_, i)| train_labels[*i] == 1)
        .count();
    Ok((2 * ones > k) as u8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub k: usize,
}

impl KnnModel {
    pub fn fit(features: Vec<Vec<f64>>, labels: Vec<u8>, k: usize) -> Result<Self, LearnerError> {
        if features.len() != labels.len() {
            return Err(LearnerError::LengthMismatch {
                features: features.len(),
                labels: labels.len(),
            });
        }
        check_k(k, features.len())?;
        check_rows(&features, None)?;
        Ok(Self { features, labels, k })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn classify(&self, query: &[f64]) -> Result<u8, LearnerError> {
        knn_classify(&self.features, &self.labels, query, self.k)
    }

    /// Fraction of positive labels among the `k` nearest neighbours.
    pub fn predict_proba(&self, queries: &[Vec<f64>]) -> Result<Vec<f64>, LearnerError> {
        check_rows(queries, Some(self.feature_dim()))?;
        Ok(queries
            .iter()
            .map(|q| {
                let ones = sorted_neighbors(&self.features, q)
                    .iter()
                    .take(self.k)
                    .filter(|(_, i)| self.labels[*i] == 1)
                    .count();
                ones as f64 / self.k as f64
            })
            .collect())
    }
}
