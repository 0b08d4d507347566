//! Random search over random-forest hyperparameters with k-fold CV.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, roc_auc};
use super::ExperimentError;
use crate::learners::{rf_predict_proba, rf_train, MaxFeatures, RandomForestParams};
use crate::seeding::{derive_seed, rng_from};

/// Inclusive integer range sampled on `min, min + step, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
    pub step: usize,
}

impl IntRange {
    pub fn new(min: usize, max: usize, step: usize) -> Self {
        Self { min, max, step }
    }

    pub fn point(v: usize) -> Self {
        Self::new(v, v, 1)
    }

    pub fn values(&self) -> Vec<usize> {
        if self.step == 0 || self.min > self.max {
            return Vec::new();
        }
        (self.min..=self.max).step_by(self.step).collect()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.values().contains(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub n_estimators: IntRange,
    pub max_depth: IntRange,
    pub min_samples_leaf: IntRange,
    pub min_samples_split: IntRange,
    pub max_features: Vec<MaxFeatures>,
    pub bootstrap: Vec<bool>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_estimators: IntRange::new(100, 1000, 100),
            max_depth: IntRange::new(10, 110, 10),
            min_samples_leaf: IntRange::new(1, 4, 1),
            min_samples_split: IntRange::new(2, 10, 1),
            max_features: vec![MaxFeatures::Sqrt],
            bootstrap: vec![true, false],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let ranges = [
            ("n_estimators", self.n_estimators),
            ("max_depth", self.max_depth),
            ("min_samples_leaf", self.min_samples_leaf),
            ("min_samples_split", self.min_samples_split),
        ];
        for (name, r) in ranges {
            if r.values().is_empty() || r.min == 0 {
                return Err(ExperimentError::Invalid(format!("search range {name} is empty or starts at 0")));
            }
        }
        if self.min_samples_split.min < 2 {
            return Err(ExperimentError::Invalid("min_samples_split must start at 2 or more".into()));
        }
        if self.max_features.is_empty() || self.bootstrap.is_empty() {
            return Err(ExperimentError::Invalid("max_features and bootstrap choices must be nonempty".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &RandomForestParams) -> bool {
        self.n_estimators.contains(p.n_estimators)
            && self.max_depth.contains(p.max_depth)
            && self.min_samples_leaf.contains(p.min_samples_leaf)
            && self.min_samples_split.contains(p.min_samples_split)
            && self.max_features.contains(&p.max_features)
            && self.bootstrap.contains(&p.bootstrap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneObjective {
    Auc,
    Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub folds: usize,
    pub iterations: usize,
    pub objective: TuneObjective,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            folds: 3,
            iterations: 100,
            objective: TuneObjective::Auc,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub params: RandomForestParams,
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub best_params: RandomForestParams,
    pub best_score: f64,
    pub best_index: usize,
    pub config: TuneConfig,
    pub candidates: Vec<Candidate>,
}

/// Shuffled indices dealt into `k` contiguous folds.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed, &[0xf01d]));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos * k / n].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

/// Draws `iterations` configurations uniformly from the space and scores
/// each by mean validation score over the same folds. The first best
/// candidate wins ties.
pub fn random_search_tune(
    features: &[Vec<f64>],
    labels: &[u8],
    space: &SearchSpace,
    cfg: &TuneConfig,
) -> Result<TuneReport, ExperimentError> {
    space.validate()?;
    if cfg.folds < 2 || cfg.iterations == 0 {
        return Err(ExperimentError::Invalid("need at least 2 folds and 1 iteration".into()));
    }
    if features.len() != labels.len() || features.len() < cfg.folds {
        return Err(ExperimentError::Invalid(format!(
            "{} rows and {} labels cannot form {} folds",
            features.len(),
            labels.len(),
            cfg.folds
        )));
    }
    let folds = kfold_indices(features.len(), cfg.folds, cfg.seed);
    for (f, idx) in folds.iter().enumerate() {
        let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
        let train_pos = labels.iter().filter(|&&l| l == 1).count() - pos;
        let train_n = labels.len() - idx.len();
        if pos == 0 || pos == idx.len() || train_pos == 0 || train_pos == train_n {
            return Err(ExperimentError::Invalid(format!("fold {f} does not contain both classes")));
        }
    }

    let mut rng = rng_from(cfg.seed, &[0x5ea7c4]);
    let pick = |r: IntRange, rng: &mut rand_chacha::ChaCha8Rng| *r.values().choose(rng).expect("validated");
    let mut candidates = Vec::with_capacity(cfg.iterations);
    for c in 0..cfg.iterations {
        let params = RandomForestParams {
            n_estimators: pick(space.n_estimators, &mut rng),
            max_depth: pick(space.max_depth, &mut rng),
            min_samples_leaf: pick(space.min_samples_leaf, &mut rng),
            min_samples_split: pick(space.min_samples_split, &mut rng),
            max_features: *space.max_features.choose(&mut rng).expect("validated"),
            bootstrap: *space.bootstrap.choose(&mut rng).expect("validated"),
            seed: derive_seed(cfg.seed, &[c as u64]),
        };
        let mut fold_scores = Vec::with_capacity(cfg.folds);
        for (f, val) in folds.iter().enumerate() {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
            let ty: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
            let vx: Vec<Vec<f64>> = val.iter().map(|&i| features[i].clone()).collect();
            let vy: Vec<u8> = val.iter().map(|&i| labels[i]).collect();
            let fold_params = RandomForestParams {
                seed: derive_seed(params.seed, &[f as u64]),
                ..params
            };
            let model = rf_train(&tx, &ty, &fold_params)?;
            let p = rf_predict_proba(&model, &vx)?;
            fold_scores.push(match cfg.objective {
                TuneObjective::Auc => roc_auc(&p, &vy)?.auc,
                TuneObjective::Accuracy => accuracy(&p, &vy),
            });
        }
        let mean_score = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
        log::debug!("candidate {c}: {mean_score:.4}");
        candidates.push(Candidate {
            params,
            fold_scores,
            mean_score,
        });
    }
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.mean_score > candidates[best].mean_score {
            best = i;
        }
    }
    Ok(TuneReport {
        best_params: candidates[best].params,
        best_score: candidates[best].mean_score,
        best_index: best,
        config: *cfg,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(n: usize, gap: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = y
            .iter()
            .map(|&l| vec![rng.random_range(0.0..1.0) + gap * l as f64, rng.random_range(0.0..1.0)])
            .collect();
        (x, y)
    }

    fn small_space() -> SearchSpace {
        SearchSpace {
            n_estimators: IntRange::new(5, 20, 5),
            max_depth: IntRange::new(1, 5, 1),
            ..Default::default()
        }
    }

    #[test]
    fn folds_partition() {
        let f = kfold_indices(10, 3, 1);
        assert_eq!(f.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3, 3]);
        let mut all: Vec<usize> = f.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn params_stay_in_space_and_best_is_argmax() {
        let (x, y) = blobs(60, 1.2, 1);
        let cfg = TuneConfig {
            iterations: 12,
            seed: 4,
            ..Default::default()
        };
        let space = small_space();
        let r = random_search_tune(&x, &y, &space, &cfg).unwrap();
        assert!(r.candidates.iter().all(|c| space.contains(&c.params)));
        let mut scores: Vec<f64> = r.candidates.iter().map(|c| c.mean_score).collect();
        assert!(scores.iter().all(|&s| s <= r.best_score));
        scores.sort_by(f64::total_cmp);
        assert!(r.best_score >= scores[scores.len() / 2]);
        let first = r.candidates.iter().position(|c| c.mean_score == r.best_score).unwrap();
        assert_eq!(first, r.best_index);
        assert_eq!(random_search_tune(&x, &y, &space, &cfg).unwrap(), r);
    }

    #[test]
    fn point_space_returns_point() {
        let (x, y) = blobs(30, 2.0, 2);
        let space = SearchSpace {
            n_estimators: IntRange::point(7),
            max_depth: IntRange::point(3),
            min_samples_leaf: IntRange::point(2),
            min_samples_split: IntRange::point(4),
            max_features: vec![MaxFeatures::Sqrt],
            bootstrap: vec![false],
        };
        let cfg = TuneConfig {
            iterations: 3,
            ..Default::default()
        };
        let r = random_search_tune(&x, &y, &space, &cfg).unwrap();
        let p = r.best_params;
        assert_eq!(
            (p.n_estimators, p.max_depth, p.min_samples_leaf, p.min_samples_split, p.bootstrap),
            (7, 3, 2, 4, false)
        );
    }

    #[test]
    fn degenerate_folds_rejected() {
        let x: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        let mut y = vec![0u8; 9];
        y[0] = 1;
        let cfg = TuneConfig {
            iterations: 1,
            ..Default::default()
        };
        assert!(random_search_tune(&x, &y, &small_space(), &cfg).is_err());
        let bad = SearchSpace {
            min_samples_split: IntRange::new(1, 3, 1),
            ..small_space()
        };
        assert!(bad.validate().is_err());
    }
}
