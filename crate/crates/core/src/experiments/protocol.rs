//! The experiment protocol.
//!
//! | id | features                         | models             |
//! |----|----------------------------------|--------------------|
//! | 1  | biomarkers (8)                   | LR, RF             |
//! | 2  | image box / deep features (64)   | CNN, RF on features|
//! | 3  | deep ++ tiled biomarkers (128)   | RF                 |
//! | 4  | deep ++ tiled radiomics (127)    | RF                 |
//! | 5  | deep ++ tiled both (130)         | RF                 |
//! | 6  | biomarkers ++ radiomics (11)     | RF                 |
//!
//! Every iteration draws a fresh split of the annotated (R12/R45) records.
//! Intermediate records get their own split from a derived seed; in
//! semi-supervised mode the train side is pseudo-labeled and added to the
//! training set, while both modes score the same annotated test set.
//! Experiment 2 saves each iteration's CNN and split under the cache
//! directory; experiments 3 to 5 load them instead of retraining.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{mean_roc, roc_auc};
use super::{mean_std, ExperimentError, ExperimentResult, IterationRecord, Mode};
use crate::cnn3d::{
    load_checkpoint, prepare_input, save_checkpoint, Cnn3d, CnnArchitecture, IntensityNorm, TrainConfig,
};
use crate::data_model::{BiomarkerVector, Distribution, MalignancyScore, NoduleRecord, DEFAULT_BOX_DIMS};
use crate::fusion::fuse;
use crate::learners::{
    lr_predict_proba, lr_train, rf_predict_proba, rf_train, LogisticRegressionParams, MaxFeatures,
    RandomForestParams,
};
use crate::radiomics::{self, RadiomicVector};
use crate::semisup::{k_grid, pseudo_labels, select_best_k, split_indices, PseudoLabelConfig, SplitSpec};
use crate::seeding::derive_seed;

const TAG_LR: u64 = 1;
const TAG_RF: u64 = 2;
const TAG_CNN: u64 = 3;
const TAG_R3_SPLIT: u64 = 4;
const TAG_BESTK: u64 = 5;

pub fn default_iterations(id: u8) -> usize {
    match id {
        1 | 6 => 1000,
        _ => 30,
    }
}

/// Tuned forest settings per experiment: `(estimators, depth, leaf, split)`
/// for fully supervised (A) and semi-supervised (B) training sets.
const RF_TABLE_A: [(usize, usize, usize, usize); 5] =
    [(1000, 10, 1, 5), (200, 10, 4, 2), (800, 10, 2, 5), (400, 100, 4, 10), (300, 110, 2, 2)];
const RF_TABLE_B: [(usize, usize, usize, usize); 5] =
    [(200, 100, 1, 5), (200, 10, 4, 2), (600, 10, 2, 5), (200, 10, 4, 2), (500, 110, 1, 2)];

/// Forest parameters for an experiment id; id 6 reuses the id-1 row.
pub fn tuned_rf_params(id: u8, distribution: Distribution) -> RandomForestParams {
    let row = match id {
        2..=5 => id as usize - 1,
        _ => 0,
    };
    let (n, d, leaf, split) = match distribution {
        Distribution::A => RF_TABLE_A[row],
        Distribution::B => RF_TABLE_B[row],
    };
    RandomForestParams {
        n_estimators: n,
        max_depth: d,
        max_features: MaxFeatures::Sqrt,
        min_samples_leaf: leaf,
        min_samples_split: split,
        bootstrap: true,
        seed: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CnnArchChoice {
    Reference,
    Compact,
    Small,
}

impl CnnArchChoice {
    pub fn build(self, dims: [usize; 3]) -> CnnArchitecture {
        match self {
            CnnArchChoice::Reference => CnnArchitecture::reference(dims),
            CnnArchChoice::Compact => CnnArchitecture::compact(dims),
            CnnArchChoice::Small => CnnArchitecture::small(dims),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnSettings {
    pub architecture: CnnArchChoice,
    pub input_dims: [usize; 3],
    /// L2 coefficient for dense layers; conv layers always carry 0.01.
    pub dense_l2: f64,
    pub train: TrainConfig,
}

impl Default for CnnSettings {
    fn default() -> Self {
        Self {
            architecture: CnnArchChoice::Reference,
            input_dims: DEFAULT_BOX_DIMS,
            dense_l2: 0.0,
            train: TrainConfig::default(),
        }
    }
}

impl CnnSettings {
    pub fn architecture(&self) -> CnnArchitecture {
        self.architecture.build(self.input_dims).with_dense_l2(self.dense_l2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Defaults to 1000 for ids 1 and 6, 30 otherwise.
    pub iterations: Option<usize>,
    pub master_seed: u64,
    pub train_fraction: f64,
    pub stratified: bool,
    pub pseudo: PseudoLabelConfig,
    /// Re-select K on every iteration's annotated train set with this many
    /// best-K runs instead of using `pseudo.k`.
    pub per_iteration_k_runs: Option<usize>,
    /// Overrides the tuned per-experiment forest settings.
    pub rf: Option<RandomForestParams>,
    pub lr: LogisticRegressionParams,
    pub cnn: CnnSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            iterations: None,
            master_seed: 0,
            train_fraction: 0.8,
            stratified: false,
            pseudo: PseudoLabelConfig::default(),
            per_iteration_k_runs: None,
            rf: None,
            lr: LogisticRegressionParams::default(),
            cnn: CnnSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn iterations_for(&self, id: u8) -> usize {
        self.iterations.unwrap_or_else(|| default_iterations(id))
    }

    fn rf_for(&self, id: u8, mode: Mode) -> RandomForestParams {
        self.rf.unwrap_or_else(|| tuned_rf_params(id, distribution(mode)))
    }
}

fn distribution(mode: Mode) -> Distribution {
    match mode {
        Mode::Fully => Distribution::A,
        Mode::Semi => Distribution::B,
    }
}

/// SHA-256 over every field of every record, in order.
pub fn dataset_fingerprint(records: &[NoduleRecord]) -> String {
    let mut h = Sha256::new();
    h.update((records.len() as u64).to_le_bytes());
    for r in records {
        h.update((r.patient_id.len() as u64).to_le_bytes());
        h.update(r.patient_id.as_bytes());
        h.update([r.malignancy.value()]);
        for b in r.biomarkers.to_array() {
            h.update(b.to_le_bytes());
        }
        for g in [&r.volume, &r.mask] {
            for d in g.dims {
                h.update((d as u64).to_le_bytes());
            }
            for s in g.spacing {
                h.update(s.to_le_bytes());
            }
            for v in &g.data {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

struct Prepared {
    bio: Vec<[f64; 8]>,
    mal: Vec<MalignancyScore>,
    rad: Vec<RadiomicVector>,
    annotated: Vec<usize>,
    intermediate: Vec<usize>,
}

impl Prepared {
    fn new(records: &[NoduleRecord], with_radiomics: bool) -> Result<Self, ExperimentError> {
        let rad = if with_radiomics {
            records
                .par_iter()
                .map(radiomics::extract)
                .collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            bio: records.iter().map(|r| r.biomarkers.to_array()).collect(),
            mal: records.iter().map(|r| r.malignancy).collect(),
            rad,
            annotated: (0..records.len())
                .filter(|&i| !records[i].malignancy.is_intermediate())
                .collect(),
            intermediate: (0..records.len())
                .filter(|&i| records[i].malignancy.is_intermediate())
                .collect(),
        })
    }
}

/// Record indices and labels of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationPlan {
    pub iteration: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    pub train_labels: Vec<u8>,
    pub test: Vec<usize>,
    pub test_labels: Vec<u8>,
    pub pseudo_labeled: usize,
    pub k: usize,
}

fn plan_iteration(prep: &Prepared, it: usize, mode: Mode, cfg: &ExperimentConfig) -> Result<IterationPlan, ExperimentError> {
    let seed = derive_seed(cfg.master_seed, &[it as u64]);
    let a_labels: Vec<u8> = prep
        .annotated
        .iter()
        .map(|&i| prep.mal[i].grouped_label().expect("annotated"))
        .collect();
    let spec = SplitSpec {
        train_fraction: cfg.train_fraction,
        seed,
        stratified: cfg.stratified,
    };
    let (tr, te) = split_indices(prep.annotated.len(), Some(&a_labels), &spec)?;
    let mut train: Vec<usize> = tr.iter().map(|&j| prep.annotated[j]).collect();
    let test: Vec<usize> = te.iter().map(|&j| prep.annotated[j]).collect();
    let test_labels: Vec<u8> = te.iter().map(|&j| a_labels[j]).collect();

    let mut k = cfg.pseudo.k;
    if mode == Mode::Semi && !prep.intermediate.is_empty() {
        if let Some(runs) = cfg.per_iteration_k_runs {
            let x: Vec<Vec<f64>> = train.iter().map(|&i| prep.bio[i].to_vec()).collect();
            let y: Vec<u8> = tr.iter().map(|&j| a_labels[j]).collect();
            k = select_best_k(&x, &y, runs, &k_grid(), cfg.train_fraction, derive_seed(seed, &[TAG_BESTK]))?.chosen_k;
        }
        let n3 = prep.intermediate.len();
        let r3_train: Vec<usize> = if n3 >= 2 {
            let r3_spec = SplitSpec {
                train_fraction: cfg.train_fraction,
                seed: derive_seed(seed, &[TAG_R3_SPLIT]),
                stratified: false,
            };
            split_indices(n3, None, &r3_spec)?
                .0
                .into_iter()
                .map(|j| prep.intermediate[j])
                .collect()
        } else {
            prep.intermediate.clone()
        };
        train.extend(r3_train);
        train.sort_unstable();
    }
    let bio: Vec<[f64; 8]> = train.iter().map(|&i| prep.bio[i]).collect();
    let mal: Vec<MalignancyScore> = train.iter().map(|&i| prep.mal[i]).collect();
    let labels = pseudo_labels(&bio, &mal, &PseudoLabelConfig { k, ..cfg.pseudo })?;
    let pseudo_labeled = labels
        .iter()
        .filter(|(_, p)| *p == crate::data_model::LabelProvenance::Pseudo)
        .count();
    Ok(IterationPlan {
        iteration: it,
        seed,
        train,
        train_labels: labels.into_iter().map(|(l, _)| l).collect(),
        test,
        test_labels,
        pseudo_labeled,
        k,
    })
}

/// What experiment 2 leaves behind for each iteration next to `model.nfc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitArtifact {
    pub mode: Mode,
    pub dataset_fingerprint: String,
    pub norm: IntensityNorm,
    pub input_dims: [usize; 3],
    pub plan: IterationPlan,
    pub loss_history: Vec<f64>,
}

pub fn artifact_dir(cache_dir: &Path, mode: Mode, iteration: usize) -> PathBuf {
    cache_dir
        .join("exp2")
        .join(mode.as_str())
        .join(format!("iter_{iteration:04}"))
}

struct Outcome {
    plan: IterationPlan,
    scores: Vec<Vec<f64>>,
}

fn rows(idx: &[usize], f: impl Fn(usize) -> Vec<f64>) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| f(i)).collect()
}

fn rf_scores(
    train_x: &[Vec<f64>],
    plan: &IterationPlan,
    test_x: &[Vec<f64>],
    params: RandomForestParams,
) -> Result<Vec<f64>, ExperimentError> {
    let params = RandomForestParams {
        seed: derive_seed(plan.seed, &[TAG_RF]),
        ..params
    };
    let model = rf_train(train_x, &plan.train_labels, &params)?;
    Ok(rf_predict_proba(&model, test_x)?)
}

pub fn model_names(id: u8) -> &'static [&'static str] {
    match id {
        1 => &["lr", "rf"],
        2 => &["cnn", "cnn_rf"],
        3 => &["cnn_bio_rf"],
        4 => &["cnn_rad_rf"],
        5 => &["cnn_bio_rad_rf"],
        6 => &["bio_rad_rf"],
        _ => &[],
    }
}

fn feature_lens(id: u8) -> &'static [Option<usize>] {
    match id {
        1 => &[Some(8), Some(8)],
        2 => &[None, Some(64)],
        3 => &[Some(128)],
        4 => &[Some(127)],
        5 => &[Some(130)],
        6 => &[Some(11)],
        _ => &[],
    }
}

fn prepare_inputs(records: &[NoduleRecord], dims: [usize; 3], norm: &IntensityNorm) -> Vec<Vec<f64>> {
    records.par_iter().map(|r| prepare_input(&r.volume, dims, norm)).collect()
}

fn load_artifacts(
    cache_dir: &Path,
    mode: Mode,
    iterations: usize,
    fingerprint: &str,
) -> Result<Vec<SplitArtifact>, ExperimentError> {
    (0..iterations)
        .map(|it| {
            let dir = artifact_dir(cache_dir, mode, it);
            let (model, split) = (dir.join("model.nfc"), dir.join("split.json"));
            if !model.is_file() || !split.is_file() {
                return Err(ExperimentError::Prerequisite(format!(
                    "run experiment 2 first: no saved CNN for mode {mode}, iteration {it} in {}",
                    dir.display()
                )));
            }
            let art: SplitArtifact = serde_json::from_slice(&std::fs::read(&split)?)?;
            if art.dataset_fingerprint != fingerprint || art.mode != mode || art.plan.iteration != it {
                return Err(ExperimentError::Prerequisite(format!(
                    "run experiment 2 first: the CNN in {} was trained on a different dataset",
                    dir.display()
                )));
            }
            Ok(art)
        })
        .collect()
}

/// Deep features of the listed records, fused as experiment `id` requires
/// (2 uses the deep features alone).
fn fused_rows(
    id: u8,
    prep: &Prepared,
    model: &Cnn3d,
    inputs: &[Vec<f64>],
    idx: &[usize],
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    idx.iter()
        .map(|&i| {
            let deep = model.extract_features(&inputs[i])?;
            let bio = BiomarkerVector::from_array(prep.bio[i]);
            let (b, r) = match id {
                2 => return Ok(deep),
                3 => (Some(&bio), None),
                4 => (None, Some(&prep.rad[i])),
                _ => (Some(&bio), Some(&prep.rad[i])),
            };
            Ok(fuse(&deep, b, r)?.values)
        })
        .collect()
}

/// Features and labels of iteration 0's training set for experiment `id`,
/// the data hyperparameter search runs on. Ids 2 to 5 read the CNN saved
/// by experiment 2 for iteration 0.
pub fn tuning_set(
    id: u8,
    mode: Mode,
    records: &[NoduleRecord],
    cfg: &ExperimentConfig,
    cache_dir: &Path,
) -> Result<(Vec<Vec<f64>>, Vec<u8>), ExperimentError> {
    if !(1..=6).contains(&id) {
        return Err(ExperimentError::Invalid(format!("experiment id must be 1..=6, got {id}")));
    }
    let prep = Prepared::new(records, matches!(id, 4..=6))?;
    let (x, plan) = match id {
        1 | 6 => {
            let plan = plan_iteration(&prep, 0, mode, cfg)?;
            let x = rows(&plan.train, |i| {
                let mut v = prep.bio[i].to_vec();
                if id == 6 {
                    v.extend(prep.rad[i].to_array());
                }
                v
            });
            (x, plan)
        }
        _ => {
            let art = load_artifacts(cache_dir, mode, 1, &dataset_fingerprint(records))?.remove(0);
            let model = load_checkpoint(&artifact_dir(cache_dir, mode, 0).join("model.nfc"))?;
            let inputs = prepare_inputs(records, art.input_dims, &art.norm);
            (fused_rows(id, &prep, &model, &inputs, &art.plan.train)?, art.plan)
        }
    };
    Ok((x, plan.train_labels))
}

/// Runs one experiment in one mode and returns a result per model.
pub fn run_experiment(
    id: u8,
    mode: Mode,
    records: &[NoduleRecord],
    cfg: &ExperimentConfig,
    cache_dir: &Path,
) -> Result<Vec<ExperimentResult>, ExperimentError> {
    if !(1..=6).contains(&id) {
        return Err(ExperimentError::Invalid(format!("experiment id must be 1..=6, got {id}")));
    }
    let iterations = cfg.iterations_for(id);
    if iterations == 0 {
        return Err(ExperimentError::Invalid("iterations must be >= 1".into()));
    }
    let prep = Prepared::new(records, matches!(id, 4..=6))?;
    let fingerprint = dataset_fingerprint(records);
    let rf_params = cfg.rf_for(id, mode);
    let t0 = std::time::Instant::now();

    let outcomes: Vec<Outcome> = match id {
        1 | 6 => (0..iterations)
            .into_par_iter()
            .map(|it| {
                let plan = plan_iteration(&prep, it, mode, cfg)?;
                let feat = |i: usize| {
                    let mut v = prep.bio[i].to_vec();
                    if id == 6 {
                        v.extend(prep.rad[i].to_array());
                    }
                    v
                };
                let (tx, vx) = (rows(&plan.train, feat), rows(&plan.test, feat));
                let mut scores = Vec::new();
                if id == 1 {
                    let lr_params = LogisticRegressionParams {
                        seed: derive_seed(plan.seed, &[TAG_LR]),
                        ..cfg.lr
                    };
                    let lr = lr_train(&tx, &plan.train_labels, &lr_params)?;
                    scores.push(lr_predict_proba(&lr, &vx)?);
                }
                scores.push(rf_scores(&tx, &plan, &vx, rf_params)?);
                Ok(Outcome { plan, scores })
            })
            .collect::<Result<_, ExperimentError>>()?,
        2 => {
            let dims = cfg.cnn.input_dims;
            let norm = IntensityNorm::fit(records.iter().map(|r| &r.volume));
            let inputs = prepare_inputs(records, dims, &norm);
            let arch = cfg.cnn.architecture();
            arch.output_shapes()?;
            (0..iterations)
                .into_par_iter()
                .map(|it| {
                    let plan = plan_iteration(&prep, it, mode, cfg)?;
                    let mut model = Cnn3d::build(arch.clone(), derive_seed(plan.seed, &[TAG_CNN]))?;
                    let train_x: Vec<Vec<f64>> = plan.train.iter().map(|&i| inputs[i].clone()).collect();
                    let test_x: Vec<Vec<f64>> = plan.test.iter().map(|&i| inputs[i].clone()).collect();
                    let tc = TrainConfig {
                        seed: derive_seed(plan.seed, &[TAG_CNN, 1]),
                        ..cfg.cnn.train
                    };
                    let report = model.train(&train_x, &plan.train_labels, &tc)?;
                    let dir = artifact_dir(cache_dir, mode, it);
                    save_checkpoint(&model, &dir.join("model.nfc"))?;
                    let art = SplitArtifact {
                        mode,
                        dataset_fingerprint: fingerprint.clone(),
                        norm,
                        input_dims: dims,
                        plan: plan.clone(),
                        loss_history: report.loss_history,
                    };
                    std::fs::write(dir.join("split.json"), serde_json::to_vec_pretty(&art)?)?;
                    let cnn_scores = model.forward(&test_x)?;
                    let ftr = model.extract_features_batch(&train_x)?;
                    let fte = model.extract_features_batch(&test_x)?;
                    let rf = rf_scores(&ftr, &plan, &fte, rf_params)?;
                    log::info!("exp2 {mode} iteration {it} done");
                    Ok(Outcome {
                        plan,
                        scores: vec![cnn_scores, rf],
                    })
                })
                .collect::<Result<_, ExperimentError>>()?
        }
        _ => {
            let arts = load_artifacts(cache_dir, mode, iterations, &fingerprint)?;
            let norm = arts[0].norm;
            let dims = arts[0].input_dims;
            if arts.iter().any(|a| a.norm != norm || a.input_dims != dims) {
                return Err(ExperimentError::Prerequisite(
                    "run experiment 2 first: saved iterations disagree on preprocessing".into(),
                ));
            }
            let inputs = prepare_inputs(records, dims, &norm);
            arts.into_par_iter()
                .map(|art| {
                    let it = art.plan.iteration;
                    let model = load_checkpoint(&artifact_dir(cache_dir, mode, it).join("model.nfc"))?;
                    let plan = art.plan;
                    let tx = fused_rows(id, &prep, &model, &inputs, &plan.train)?;
                    let vx = fused_rows(id, &prep, &model, &inputs, &plan.test)?;
                    let rf = rf_scores(&tx, &plan, &vx, rf_params)?;
                    Ok(Outcome {
                        plan,
                        scores: vec![rf],
                    })
                })
                .collect::<Result<_, ExperimentError>>()?
        }
    };
    log::info!(
        "experiment {id} ({mode}): {iterations} iterations in {:.1}s",
        t0.elapsed().as_secs_f64()
    );

    let snapshot = serde_json::json!({
        "experiment_id": id,
        "mode": mode,
        "iterations": iterations,
        "master_seed": cfg.master_seed,
        "train_fraction": cfg.train_fraction,
        "stratified": cfg.stratified,
        "pseudo": cfg.pseudo,
        "per_iteration_k_runs": cfg.per_iteration_k_runs,
        "rf": rf_params,
        "lr": if id == 1 { serde_json::to_value(cfg.lr)? } else { serde_json::Value::Null },
        "cnn": if (2..=5).contains(&id) { serde_json::to_value(cfg.cnn)? } else { serde_json::Value::Null },
        "dataset_fingerprint": fingerprint,
    });

    let mut results = Vec::new();
    for (m, name) in model_names(id).iter().enumerate() {
        let mut curves = Vec::with_capacity(outcomes.len());
        let mut per_iteration = Vec::with_capacity(outcomes.len());
        for o in &outcomes {
            let c = roc_auc(&o.scores[m], &o.plan.test_labels)?;
            per_iteration.push(IterationRecord {
                iteration: o.plan.iteration,
                seed: o.plan.seed,
                auc: c.auc,
                train_size: o.plan.train.len(),
                test_size: o.plan.test.len(),
                pseudo_labeled: o.plan.pseudo_labeled,
            });
            curves.push(c);
        }
        let aucs: Vec<f64> = per_iteration.iter().map(|r| r.auc).collect();
        let (mean_auc, std_auc) = mean_std(&aucs);
        results.push(ExperimentResult {
            experiment_id: id,
            mode,
            model: name.to_string(),
            feature_len: feature_lens(id)[m],
            aucs,
            mean_auc,
            std_auc,
            mean_roc: mean_roc(&curves),
            per_iteration,
            config: snapshot.clone(),
        });
    }
    Ok(results)
}
