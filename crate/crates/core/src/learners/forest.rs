//! Random forest of CART trees with Gini splits and bootstrap resampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_rows, check_training, LearnerError};
use crate::seeding::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// ⌊√d⌋, at least 1.
    Sqrt,
    /// ⌊log₂ d⌋, at least 1.
    Log2,
    All,
}

impl MaxFeatures {
    pub fn resolve(self, dim: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (dim as f64).sqrt().floor() as usize,
            MaxFeatures::Log2 => (dim as f64).log2().floor() as usize,
            MaxFeatures::All => dim,
        };
        k.clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RandomForestParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 10,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 1,
            min_samples_split: 2,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl RandomForestParams {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::InvalidParams(m.into()));
        if self.n_estimators == 0 {
            return bad("n_estimators must be >= 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be >= 1");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be >= 1");
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be >= 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        /// Fraction of in-bag samples at this leaf with label 1.
        positive_fraction: f64,
        samples: usize,
    },
    Split {
        feature: usize,
        /// Samples with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
    /// Number of draws used to grow the tree (n when bootstrapping).
    pub samples_drawn: usize,
    /// Distinct training rows among those draws.
    pub distinct_samples: usize,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf {
                    positive_fraction, ..
                } => return *positive_fraction,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    pub feature_dim: usize,
    pub params: RandomForestParams,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    params: &'a RandomForestParams,
    n_candidates: usize,
    nodes: Vec<TreeNode>,
}

struct Best {
    feature: usize,
    threshold: f64,
    score: f64,
    split_at: usize,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        self.nodes.push(TreeNode::Leaf {
            positive_fraction: pos as f64 / idx.len() as f64,
            samples: idx.len(),
        });
        self.nodes.len() - 1
    }

    /// Lowest weighted child Gini over up to `n_candidates` non-constant
    /// features, visited in random order. `idx` is left sorted by the winner.
    fn best_split(&self, idx: &mut [usize], rng: &mut ChaCha8Rng) -> Option<Best> {
        let n = idx.len();
        let total_pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        let mut features: Vec<usize> = (0..self.x[0].len()).collect();
        features.shuffle(rng);
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<Best> = None;
        let mut visited = 0;
        for f in features {
            if visited == self.n_candidates {
                break;
            }
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let first = self.x[idx[0]][f];
            let last = self.x[idx[n - 1]][f];
            if first == last {
                continue;
            }
            visited += 1;
            let mut left_pos = 0;
            for s in 1..n {
                left_pos += (self.y[idx[s - 1]] == 1) as usize;
                let (a, b) = (self.x[idx[s - 1]][f], self.x[idx[s]][f]);
                if a == b || s < min_leaf || n - s < min_leaf {
                    continue;
                }
                let score = s as f64 * gini(left_pos, s)
                    + (n - s) as f64 * gini(total_pos - left_pos, n - s);
                if best.as_ref().is_none_or(|bst| score < bst.score) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Best {
                        feature: f,
                        threshold,
                        score,
                        split_at: s,
                    });
                }
            }
        }
        if let Some(b) = &best {
            let f = b.feature;
            idx.sort_by(|&p, &q| self.x[p][f].total_cmp(&self.x[q][f]).then(p.cmp(&q)));
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        if depth >= self.params.max_depth
            || n < self.params.min_samples_split
            || n < 2 * self.params.min_samples_leaf
            || pos == 0
            || pos == n
        {
            return self.leaf(idx);
        }
        let Some(best) = self.best_split(idx, rng) else {
            return self.leaf(idx);
        };
        let slot = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            positive_fraction: 0.0,
            samples: 0,
        });
        let (l, r) = idx.split_at_mut(best.split_at);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[slot] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        slot
    }
}

/// Grows a single CART tree on the given (possibly repeated) row indices.
pub fn fit_tree(
    x: &[Vec<f64>],
    y: &[u8],
    mut sample: Vec<usize>,
    params: &RandomForestParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let dim = x[0].len();
    let drawn = sample.len();
    let mut distinct = sample.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let mut b = Builder {
        x,
        y,
        params,
        n_candidates: params.max_features.resolve(dim),
        nodes: Vec::new(),
    };
    b.grow(&mut sample, 0, rng);
    Tree {
        nodes: b.nodes,
        samples_drawn: drawn,
        distinct_samples: distinct.len(),
    }
}

pub fn bootstrap_sample(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Trains `n_estimators` trees; tree `t` draws from its own stream seeded by
/// `(seed, t)`, so the forest is identical for any thread count.
pub fn rf_train(
    features: &[Vec<f64>],
    labels: &[u8],
    params: &RandomForestParams,
) -> Result<RandomForest, LearnerError> {
    params.validate()?;
    let dim = check_training(features, labels)?;
    let n = features.len();
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from(params.seed, &[t as u64]);
            let sample = if params.bootstrap {
                bootstrap_sample(n, &mut rng)
            } else {
                (0..n).collect()
            };
            fit_tree(features, labels, sample, params, &mut rng)
        })
        .collect();
    Ok(RandomForest {
        trees,
        feature_dim: dim,
        params: *params,
    })
}

/// Mean over trees of the leaf positive fraction.
pub fn rf_predict_proba(model: &RandomForest, features: &[Vec<f64>]) -> Result<Vec<f64>, LearnerError> {
    check_rows(features, Some(model.feature_dim))?;
    let k = model.trees.len() as f64;
    Ok(features
        .iter()
        .map(|row| model.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k)
        .collect())
}
