//! Dataset construction for the two supervision modes and KNN pseudo-labels
//! for intermediate (malignancy 3) nodules.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{
    Distribution, LabelProvenance, LabeledDataset, LabeledRecord, MalignancyScore, NoduleRecord, SplitRole,
};
use crate::learners::{sorted_neighbors, KnnModel, LearnerError};
use crate::seeding::rng_from;

pub const DEFAULT_K: usize = 21;
pub const MAX_K: usize = 51;
pub const DEFAULT_BESTK_RUNS: usize = 1000;

/// Odd values 1, 3, ..., 51.
pub fn k_grid() -> Vec<usize> {
    (1..=MAX_K).step_by(2).collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemiSupError {
    #[error("cannot split {0} records, need at least 2")]
    TooSmall(usize),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("no annotated (non-intermediate) records to fit the labeler on")]
    NoAnnotated,
    #[error("need at least {needed} training records, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            stratified: false,
        }
    }
}

/// `ceil(fraction · n)`, kept within `1..n` so both sides are nonempty.
pub fn train_size(n: usize, fraction: f64) -> usize {
    let t = (fraction * n as f64 - 1e-9).ceil() as usize;
    t.clamp(1, n.saturating_sub(1).max(1))
}

/// Train and test index sets, each sorted ascending. `labels` is only read
/// when the spec asks for stratification.
pub fn split_indices(n: usize, labels: Option<&[u8]>, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>), SemiSupError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(SemiSupError::BadFraction(spec.train_fraction));
    }
    if n < 2 {
        return Err(SemiSupError::TooSmall(n));
    }
    let mut rng = rng_from(spec.seed, &[0x5e11]);
    let (mut train, mut test) = match (spec.stratified, labels) {
        (true, Some(labels)) => {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for class in [0u8, 1] {
                let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
                idx.shuffle(&mut rng);
                let t = if idx.len() < 2 { idx.len() } else { train_size(idx.len(), spec.train_fraction) };
                test.extend_from_slice(&idx[t..]);
                idx.truncate(t);
                train.extend(idx);
            }
            (train, test)
        }
        _ => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let test = idx.split_off(train_size(n, spec.train_fraction));
            (idx, test)
        }
    };
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// R12 → 0, R45 → 1, R3 dropped.
pub fn make_distribution_a(records: &[NoduleRecord]) -> LabeledDataset {
    LabeledDataset {
        records: records
            .iter()
            .filter_map(|r| {
                r.malignancy.grouped_label().map(|label| LabeledRecord {
                    record: r.clone(),
                    label,
                    provenance: LabelProvenance::Annotated,
                })
            })
            .collect(),
        distribution: Distribution::A,
        split_role: SplitRole::Train,
    }
}

pub fn split(dataset: &LabeledDataset, spec: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset), SemiSupError> {
    let labels = dataset.labels();
    let (tr, te) = split_indices(dataset.len(), Some(&labels), spec)?;
    let pick = |idx: &[usize], role| LabeledDataset {
        records: idx.iter().map(|&i| dataset.records[i].clone()).collect(),
        distribution: dataset.distribution,
        split_role: role,
    };
    Ok((pick(&tr, SplitRole::Train), pick(&te, SplitRole::Test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoLabelConfig {
    pub k: usize,
    /// z-score biomarkers (with statistics of the annotated records) before
    /// measuring distances.
    pub standardize: bool,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            standardize: false,
        }
    }
}

/// Label and provenance for every record: annotated labels for R12/R45,
/// KNN votes over the annotated biomarkers for R3.
pub fn pseudo_labels(
    biomarkers: &[[f64; 8]],
    malignancy: &[MalignancyScore],
    cfg: &PseudoLabelConfig,
) -> Result<Vec<(u8, LabelProvenance)>, SemiSupError> {
    let annotated: Vec<usize> = (0..malignancy.len())
        .filter(|&i| malignancy[i].grouped_label().is_some())
        .collect();
    if annotated.is_empty() {
        return Err(SemiSupError::NoAnnotated);
    }
    let (mean, scale) = if cfg.standardize {
        let rows: Vec<&[f64; 8]> = annotated.iter().map(|&i| &biomarkers[i]).collect();
        column_stats(&rows)
    } else {
        ([0.0; 8], [1.0; 8])
    };
    let prep = |b: &[f64; 8]| -> Vec<f64> { (0..8).map(|j| (b[j] - mean[j]) / scale[j]).collect() };
    let has_r3 = malignancy.iter().any(|m| m.is_intermediate());
    let model = if has_r3 {
        Some(KnnModel::fit(
            annotated.iter().map(|&i| prep(&biomarkers[i])).collect(),
            annotated
                .iter()
                .map(|&i| malignancy[i].grouped_label().expect("annotated"))
                .collect(),
            cfg.k,
        )?)
    } else {
        None
    };
    malignancy
        .iter()
        .zip(biomarkers)
        .map(|(m, b)| match m.grouped_label() {
            Some(l) => Ok((l, LabelProvenance::Annotated)),
            None => {
                let model = model.as_ref().expect("fitted when R3 present");
                Ok((model.classify(&prep(b))?, LabelProvenance::Pseudo))
            }
        })
        .collect()
}

fn column_stats(rows: &[&[f64; 8]]) -> ([f64; 8], [f64; 8]) {
    let n = rows.len() as f64;
    let mut mean = [0.0; 8];
    let mut scale = [0.0; 8];
    for r in rows {
        for j in 0..8 {
            mean[j] += r[j] / n;
        }
    }
    for r in rows {
        for j in 0..8 {
            scale[j] += (r[j] - mean[j]).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    (mean, scale)
}

/// Distribution B training set from raw train records (R3 included).
pub fn pseudo_label_r3(train: &[NoduleRecord], cfg: &PseudoLabelConfig) -> Result<LabeledDataset, SemiSupError> {
    let bio: Vec<[f64; 8]> = train.iter().map(|r| r.biomarkers.to_array()).collect();
    let mal: Vec<MalignancyScore> = train.iter().map(|r| r.malignancy).collect();
    let labels = pseudo_labels(&bio, &mal, cfg)?;
    Ok(LabeledDataset {
        records: train
            .iter()
            .zip(labels)
            .map(|(r, (label, provenance))| LabeledRecord {
                record: r.clone(),
                label,
                provenance,
            })
            .collect(),
        distribution: Distribution::B,
        split_role: SplitRole::Train,
    })
}

/// Drops intermediate records from a test split and labels the rest.
pub fn strip_r3_from_test(test: &[NoduleRecord]) -> LabeledDataset {
    let mut ds = make_distribution_a(test);
    ds.split_role = SplitRole::Test;
    if ds.is_empty() && !test.is_empty() {
        log::warn!("test split held only intermediate nodules and is now empty");
    }
    ds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestKReport {
    pub chosen_k: usize,
    pub k_grid: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    pub split_fraction: f64,
    /// Mean validation accuracy per candidate, aligned with `k_grid`.
    pub mean_accuracy: Vec<f64>,
    /// How often each candidate won a run, aligned with `k_grid`.
    pub win_counts: Vec<usize>,
    /// `accuracy[run][j]` is the validation accuracy of `k_grid[j]`.
    pub accuracy: Vec<Vec<f64>>,
    pub winners: Vec<usize>,
}

/// Repeats a fresh split `runs` times, scoring every candidate K on the
/// validation side. The chosen K has the best mean accuracy; among
/// candidates within 1e-9 of it the most frequent run winner is taken, and
/// any remaining tie goes to the smaller K.
pub fn select_best_k(
    features: &[Vec<f64>],
    labels: &[u8],
    runs: usize,
    grid: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<BestKReport, SemiSupError> {
    if grid.is_empty() || grid.iter().any(|&k| k == 0 || k % 2 == 0) {
        return Err(LearnerError::InvalidParams("K candidates must be odd and positive".into()).into());
    }
    if runs == 0 {
        return Err(SemiSupError::InsufficientData { needed: 1, got: 0 });
    }
    if features.len() != labels.len() {
        return Err(LearnerError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        }
        .into());
    }
    let max_k = *grid.iter().max().expect("nonempty");
    let n_train = if features.len() >= 2 { train_size(features.len(), fraction) } else { 0 };
    if n_train < max_k || features.len() < 2 {
        return Err(SemiSupError::InsufficientData {
            needed: max_k,
            got: n_train,
        });
    }
    let accuracy: Vec<Vec<f64>> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let spec = SplitSpec {
                train_fraction: fraction,
                seed: crate::seeding::derive_seed(seed, &[run as u64]),
                stratified: false,
            };
            let (tr, va) = split_indices(features.len(), None, &spec)?;
            let train_x: Vec<Vec<f64>> = tr.iter().map(|&i| features[i].clone()).collect();
            let mut correct = vec![0usize; grid.len()];
            for &q in &va {
                let nb = sorted_neighbors(&train_x, &features[q]);
                let mut ones = 0;
                let mut taken = 0;
                for (j, &k) in grid.iter().enumerate() {
                    while taken < k {
                        ones += labels[tr[nb[taken].1]] as usize;
                        taken += 1;
                    }
                    if (2 * ones > k) as u8 == labels[q] {
                        correct[j] += 1;
                    }
                }
            }
            Ok(correct.iter().map(|&c| c as f64 / va.len() as f64).collect())
        })
        .collect::<Result<_, SemiSupError>>()?;

    let winners: Vec<usize> = accuracy
        .iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            grid[best]
        })
        .collect();
    let mean_accuracy: Vec<f64> = (0..grid.len())
        .map(|j| accuracy.iter().map(|r| r[j]).sum::<f64>() / runs as f64)
        .collect();
    let win_counts: Vec<usize> = grid.iter().map(|k| winners.iter().filter(|w| *w == k).count()).collect();
    let top = mean_accuracy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut chosen = None::<usize>;
    for j in 0..grid.len() {
        if mean_accuracy[j] < top - 1e-9 {
            continue;
        }
        let better = match chosen {
            None => true,
            Some(c) => win_counts[j] > win_counts[c] || (win_counts[j] == win_counts[c] && grid[j] < grid[c]),
        };
        if better {
            chosen = Some(j);
        }
    }
    Ok(BestKReport {
        chosen_k: grid[chosen.expect("nonempty grid")],
        k_grid: grid.to_vec(),
        runs,
        seed,
        split_fraction: fraction,
        mean_accuracy,
        win_counts,
        accuracy,
        winners,
    })
}

/// Best-K selection on the biomarkers of a Distribution A dataset.
pub fn select_best_k_for(dataset: &LabeledDataset, runs: usize, seed: u64) -> Result<BestKReport, SemiSupError> {
    let x: Vec<Vec<f64>> = dataset
        .records
        .iter()
        .map(|r| r.record.biomarkers.to_array().to_vec())
        .collect();
    select_best_k(&x, &dataset.labels(), runs, &k_grid(), 0.8, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::fixtures::cube_record;
    use crate::data_model::BiomarkerVector;
    use crate::learners::knn_classify;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn rec(m: i64, bio: [f64; 8]) -> NoduleRecord {
        let mut r = cube_record([4, 4, 2], [1.0; 3], m);
        r.biomarkers = BiomarkerVector::from_array(bio);
        r
    }

    #[test]
    fn grid_has_26_odd_candidates() {
        let g = k_grid();
        assert_eq!(g.len(), 26);
        assert_eq!((g[0], g[25]), (1, 51));
        assert!(g.iter().all(|k| k % 2 == 1));
        assert!(g.contains(&DEFAULT_K));
    }

    #[test]
    fn distribution_a_mapping() {
        let recs: Vec<NoduleRecord> = (1..=5).map(|m| rec(m, [1.0; 8])).collect();
        let a = make_distribution_a(&recs);
        assert_eq!(a.labels(), vec![0, 0, 1, 1]);
        assert!(a.check_invariants().is_ok());
        assert!(make_distribution_a(&[]).is_empty());
    }

    #[test]
    fn split_sizes_and_partition() {
        for n in 2..60 {
            let (tr, te) = split_indices(n, None, &SplitSpec { seed: n as u64, ..Default::default() }).unwrap();
            assert_eq!(tr.len(), ((0.8 * n as f64).ceil() as usize).min(n - 1));
            let all: HashSet<usize> = tr.iter().chain(&te).copied().collect();
            assert_eq!(all.len(), n);
        }
        let (tr, te) = split_indices(10, None, &SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split_indices(10, None, &SplitSpec::default()).unwrap(), (tr, te));
        assert_eq!(split_indices(1, None, &SplitSpec::default()), Err(SemiSupError::TooSmall(1)));
        let bad = SplitSpec {
            train_fraction: 1.0,
            ..Default::default()
        };
        assert!(split_indices(10, None, &bad).is_err());
    }

    #[test]
    fn seeds_give_distinct_partitions() {
        let parts: HashSet<Vec<usize>> = (0..100)
            .map(|s| split_indices(20, None, &SplitSpec { seed: s, ..Default::default() }).unwrap().1)
            .collect();
        assert!(parts.len() >= 99);
    }

    #[test]
    fn stratified_split_keeps_class_ratio() {
        let labels: Vec<u8> = (0..50).map(|i| (i < 10) as u8).collect();
        let spec = SplitSpec {
            stratified: true,
            ..Default::default()
        };
        let (tr, te) = split_indices(50, Some(&labels), &spec).unwrap();
        assert_eq!(tr.iter().filter(|&&i| labels[i] == 1).count(), 8);
        assert_eq!(te.iter().filter(|&&i| labels[i] == 1).count(), 2);
    }

    #[test]
    fn r3_inside_benign_cluster_is_benign() {
        let mut train = Vec::new();
        for i in 0..30 {
            let j = i as f64 * 0.01;
            train.push(rec(if i % 2 == 0 { 1 } else { 2 }, [1.0 + j; 8]));
            train.push(rec(if i % 2 == 0 { 4 } else { 5 }, [5.0 - j; 8]));
        }
        train.push(rec(3, [1.1; 8]));
        train.push(rec(3, [4.9; 8]));
        let b = pseudo_label_r3(&train, &PseudoLabelConfig::default()).unwrap();
        assert_eq!(b.records[60].label, 0);
        assert_eq!(b.records[61].label, 1);
        assert_eq!(b.pseudo_count(), 2);
        assert_eq!(b.distribution, Distribution::B);
        // annotated labels are untouched
        let a = make_distribution_a(&train);
        assert_eq!(&b.labels()[..60], &a.labels()[..]);
    }

    #[test]
    fn no_r3_is_identity_and_no_annotated_is_error() {
        let train: Vec<NoduleRecord> = [1, 5, 2, 4].iter().map(|&m| rec(m, [m as f64; 8])).collect();
        let b = pseudo_label_r3(&train, &PseudoLabelConfig { k: 3, standardize: false }).unwrap();
        assert_eq!(b.records, make_distribution_a(&train).records);
        assert_eq!(
            pseudo_label_r3(&[rec(3, [1.0; 8])], &PseudoLabelConfig::default()),
            Err(SemiSupError::NoAnnotated)
        );
    }

    #[test]
    fn pseudo_labels_agree_with_direct_knn() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bio: Vec<[f64; 8]> = (0..80)
            .map(|_| std::array::from_fn(|_| rng.random_range(1..=5) as f64))
            .collect();
        let mal: Vec<MalignancyScore> = (0..80)
            .map(|_| MalignancyScore::new(rng.random_range(1..=5)).unwrap())
            .collect();
        let got = pseudo_labels(&bio, &mal, &PseudoLabelConfig { k: 5, standardize: false }).unwrap();
        let ann: Vec<usize> = (0..80).filter(|&i| !mal[i].is_intermediate()).collect();
        let x: Vec<Vec<f64>> = ann.iter().map(|&i| bio[i].to_vec()).collect();
        let y: Vec<u8> = ann.iter().map(|&i| mal[i].grouped_label().unwrap()).collect();
        for i in 0..80 {
            let want = match mal[i].grouped_label() {
                Some(l) => (l, LabelProvenance::Annotated),
                None => (knn_classify(&x, &y, &bio[i], 5).unwrap(), LabelProvenance::Pseudo),
            };
            assert_eq!(got[i], want);
        }
    }

    #[test]
    fn strip_r3() {
        let test: Vec<NoduleRecord> = [1, 3, 5].iter().map(|&m| rec(m, [1.0; 8])).collect();
        let s = strip_r3_from_test(&test);
        assert_eq!(s.labels(), vec![0, 1]);
        assert_eq!(s.split_role, SplitRole::Test);
        assert!(strip_r3_from_test(&[rec(3, [1.0; 8])]).is_empty());
        let clean = [test[0].clone(), test[2].clone()];
        assert_eq!(strip_r3_from_test(&clean).len(), 2);
    }

    #[test]
    fn separated_clusters_choose_k1() {
        let x: Vec<Vec<f64>> = (0..80).map(|i| vec![if i < 40 { 0.0 } else { 100.0 } + (i % 7) as f64]).collect();
        let y: Vec<u8> = (0..80).map(|i| (i >= 40) as u8).collect();
        let r = select_best_k(&x, &y, 20, &k_grid(), 0.8, 1).unwrap();
        assert!(r.mean_accuracy.iter().all(|&a| a == 1.0));
        assert_eq!(r.chosen_k, 1);
        assert_eq!(r.accuracy.len(), 20);
        assert_eq!(r.win_counts.iter().sum::<usize>(), 20);
        assert_eq!(r, select_best_k(&x, &y, 20, &k_grid(), 0.8, 1).unwrap());
        assert!(matches!(
            select_best_k(&x[..40], &y[..40], 5, &k_grid(), 0.8, 1),
            Err(SemiSupError::InsufficientData { .. })
        ));
    }
}
