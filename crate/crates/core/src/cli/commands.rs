//! Resolved command plans. A plan carries everything a command needs, so
//! the run manifest can store it and `replay` can run it again.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::{sha256_file, FileDigest};
use super::CliError;
use crate::data_model::{BiomarkerRanges, Distribution, NoduleRecord};
use crate::experiments::report::{write_comparison, write_results};
use crate::experiments::{
    compare, random_search_tune, run_experiment, tuning_set, ExperimentConfig, Mode, SearchSpace, TuneConfig,
    DEFAULT_ALPHA,
};
use crate::ingest::{
    container_fingerprint, generate_synthetic, load_container, parse_annotation_xml, records_from_annotations,
    save_container, SyntheticConfig,
};
use crate::ingest::container::MANIFEST_FILE;
use crate::semisup::{make_distribution_a, select_best_k_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestSource {
    XmlDir(PathBuf),
    Container(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestPlan {
    pub source: IngestSource,
    pub out: PathBuf,
    /// Patient ids to drop.
    pub exclude: Vec<String>,
    pub pixel_spacing: f32,
    pub slice_spacing: f32,
    pub ranges: BiomarkerRanges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPlan {
    pub config: SyntheticConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub container: PathBuf,
    pub ids: Vec<u8>,
    pub modes: Vec<Mode>,
    pub config: ExperimentConfig,
    pub cache_dir: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunePlan {
    pub container: PathBuf,
    pub experiment: u8,
    pub distribution: Distribution,
    pub experiment_config: ExperimentConfig,
    pub space: SearchSpace,
    pub tune: TuneConfig,
    pub cache_dir: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestKPlan {
    pub container: PathBuf,
    pub runs: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum CommandPlan {
    Ingest(IngestPlan),
    Synth(SynthPlan),
    Experiment(ExperimentPlan),
    Tune(TunePlan),
    Bestk(BestKPlan),
}

pub struct Execution {
    pub artifacts: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn load(container: &Path) -> Result<Vec<NoduleRecord>, CliError> {
    load_container(container).map_err(|e| data_err(container, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| data_err(parent, e))?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value).expect("serializable")).map_err(|e| data_err(path, e))?;
    Ok(path.to_path_buf())
}

/// Manifest plus every blob it lists; stale files in the directory are ignored.
fn container_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let m = crate::ingest::read_manifest(dir).map_err(|e| data_err(dir, e))?;
    let mut files = vec![dir.join(MANIFEST_FILE)];
    files.extend(m.records.iter().map(|r| dir.join(&r.blob)));
    Ok(files)
}

fn xml_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")) {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, &mut out).map_err(|e| data_err(dir, e))?;
    out.sort();
    Ok(out)
}

impl CommandPlan {
    pub fn name(&self) -> &'static str {
        match self {
            CommandPlan::Ingest(_) => "ingest",
            CommandPlan::Synth(_) => "synth",
            CommandPlan::Experiment(_) => "experiment",
            CommandPlan::Tune(_) => "tune",
            CommandPlan::Bestk(_) => "bestk",
        }
    }

    pub fn master_seed(&self) -> Option<u64> {
        match self {
            CommandPlan::Ingest(_) => None,
            CommandPlan::Synth(p) => Some(p.config.seed),
            CommandPlan::Experiment(p) => Some(p.config.master_seed),
            CommandPlan::Tune(p) => Some(p.tune.seed),
            CommandPlan::Bestk(p) => Some(p.seed),
        }
    }

    /// Directory that holds every artifact of the run.
    pub fn output_root(&self) -> PathBuf {
        let parent = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_default();
        match self {
            CommandPlan::Ingest(p) => p.out.clone(),
            CommandPlan::Synth(p) => p.out.clone(),
            CommandPlan::Experiment(p) => p.out.clone(),
            CommandPlan::Tune(p) => parent(&p.out),
            CommandPlan::Bestk(p) => parent(&p.out),
        }
    }

    /// The same plan writing under `root` instead.
    pub fn rerooted(&self, root: &Path) -> Self {
        let file = |p: &Path| root.join(p.file_name().unwrap_or_default());
        let mut plan = self.clone();
        match &mut plan {
            CommandPlan::Ingest(p) => p.out = root.to_path_buf(),
            CommandPlan::Synth(p) => p.out = root.to_path_buf(),
            CommandPlan::Experiment(p) => p.out = root.to_path_buf(),
            CommandPlan::Tune(p) => p.out = file(&p.out),
            CommandPlan::Bestk(p) => p.out = file(&p.out),
        }
        plan
    }

    /// Digests of the data the plan reads.
    pub fn input_digests(&self) -> Result<Vec<FileDigest>, CliError> {
        let container = |dir: &Path| -> Result<FileDigest, CliError> {
            Ok(FileDigest {
                path: dir.to_path_buf(),
                sha256: container_fingerprint(dir).map_err(|e| data_err(dir, e))?,
            })
        };
        match self {
            CommandPlan::Synth(_) => Ok(Vec::new()),
            CommandPlan::Ingest(p) => match &p.source {
                IngestSource::Container(dir) => Ok(vec![container(dir)?]),
                IngestSource::XmlDir(dir) => {
                    let mut h = Sha256::new();
                    for f in xml_files(dir)? {
                        h.update(f.strip_prefix(dir).unwrap_or(&f).to_string_lossy().as_bytes());
                        h.update(sha256_file(&f)?.as_bytes());
                    }
                    Ok(vec![FileDigest {
                        path: dir.clone(),
                        sha256: hex::encode(h.finalize()),
                    }])
                }
            },
            CommandPlan::Experiment(p) => Ok(vec![container(&p.container)?]),
            CommandPlan::Tune(p) => Ok(vec![container(&p.container)?]),
            CommandPlan::Bestk(p) => Ok(vec![container(&p.container)?]),
        }
    }

    pub fn execute(&self) -> Result<Execution, CliError> {
        match self {
            CommandPlan::Ingest(p) => ingest(p),
            CommandPlan::Synth(p) => synth(p),
            CommandPlan::Experiment(p) => experiment(p),
            CommandPlan::Tune(p) => tune(p),
            CommandPlan::Bestk(p) => bestk(p),
        }
    }
}

fn ingest(p: &IngestPlan) -> Result<Execution, CliError> {
    let exclude: BTreeSet<&str> = p.exclude.iter().map(String::as_str).collect();
    let mut counts = serde_json::Map::new();
    let records = match &p.source {
        IngestSource::XmlDir(dir) => {
            let files = xml_files(dir)?;
            if files.is_empty() {
                return Err(CliError::Data(format!("{}: no .xml files found", dir.display())));
            }
            let mut annotations = Vec::new();
            let mut skipped = 0;
            for f in &files {
                let bytes = std::fs::read(f).map_err(|e| data_err(f, e))?;
                let outcome = parse_annotation_xml(&bytes).map_err(|e| data_err(f, e))?;
                skipped += outcome.skipped;
                annotations.extend(outcome.annotations);
            }
            let parsed = annotations.len();
            annotations.retain(|a| !exclude.contains(a.patient_id.as_str()));
            let (records, built) =
                records_from_annotations(&annotations, p.pixel_spacing, p.slice_spacing, &p.ranges);
            counts.insert("files".into(), files.len().into());
            counts.insert("parsed".into(), parsed.into());
            counts.insert("skipped".into(), skipped.into());
            counts.insert("excluded".into(), (parsed - annotations.len()).into());
            counts.insert("degenerate".into(), built.degenerate.into());
            counts.insert("invalid".into(), built.invalid.into());
            records
        }
        IngestSource::Container(dir) => {
            let mut records = load(dir)?;
            let loaded = records.len();
            records.retain(|r| !exclude.contains(r.patient_id.as_str()));
            let kept = records.len();
            records.retain(|r| crate::data_model::validate_record(r, &p.ranges).passed());
            counts.insert("parsed".into(), loaded.into());
            counts.insert("skipped".into(), 0.into());
            counts.insert("excluded".into(), (loaded - kept).into());
            counts.insert("invalid".into(), (kept - records.len()).into());
            records
        }
    };
    if records.is_empty() {
        return Err(CliError::Data("no records left to write".into()));
    }
    save_container(&records, &p.out).map_err(|e| data_err(&p.out, e))?;
    counts.insert("written".into(), records.len().into());
    log::info!("ingest: {}", serde_json::Value::Object(counts.clone()));
    Ok(Execution {
        artifacts: container_files(&p.out)?,
        summary: serde_json::Value::Object(counts),
    })
}

fn class_counts(records: &[NoduleRecord]) -> [usize; 5] {
    let mut c = [0; 5];
    for r in records {
        c[r.malignancy.value() as usize - 1] += 1;
    }
    c
}

fn synth(p: &SynthPlan) -> Result<Execution, CliError> {
    let records = generate_synthetic(&p.config).map_err(|e| CliError::Usage(e.to_string()))?;
    save_container(&records, &p.out).map_err(|e| data_err(&p.out, e))?;
    Ok(Execution {
        artifacts: container_files(&p.out)?,
        summary: serde_json::json!({
            "written": records.len(),
            "class_counts": class_counts(&records),
        }),
    })
}

fn experiment(p: &ExperimentPlan) -> Result<Execution, CliError> {
    let records = load(&p.container)?;
    let mut all = Vec::new();
    let mut artifacts = Vec::new();
    let mut ids = p.ids.clone();
    ids.sort_unstable();
    ids.dedup();
    for &id in &ids {
        for &mode in &p.modes {
            let results = run_experiment(id, mode, &records, &p.config, &p.cache_dir)?;
            for r in &results {
                log::info!("{}: mean AUC {:.4} ± {:.4}", r.name(), r.mean_auc, r.std_auc);
            }
            artifacts.extend(write_results(&results, &p.out)?);
            all.extend(results);
        }
    }
    let summary: serde_json::Map<String, serde_json::Value> =
        all.iter().map(|r| (r.name(), r.mean_auc.into())).collect();
    if p.modes.len() > 1 {
        let table = compare(&all, DEFAULT_ALPHA);
        artifacts.push(write_comparison(&table, &p.out.join("comparison.json"))?);
    }
    Ok(Execution {
        artifacts,
        summary: serde_json::json!({ "mean_auc": summary }),
    })
}

fn tune(p: &TunePlan) -> Result<Execution, CliError> {
    let records = load(&p.container)?;
    let mode = match p.distribution {
        Distribution::A => Mode::Fully,
        Distribution::B => Mode::Semi,
    };
    let (x, y) = tuning_set(p.experiment, mode, &records, &p.experiment_config, &p.cache_dir)?;
    let report = random_search_tune(&x, &y, &p.space, &p.tune)?;
    let stem = p.out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let report_path = p.out.with_file_name(format!("{stem}_report.json"));
    let artifacts = vec![write_json(&p.out, &report.best_params)?, write_json(&report_path, &report)?];
    Ok(Execution {
        artifacts,
        summary: serde_json::json!({
            "best_score": report.best_score,
            "best_index": report.best_index,
            "objective": report.config.objective,
            "rows": x.len(),
        }),
    })
}

fn bestk(p: &BestKPlan) -> Result<Execution, CliError> {
    let records = load(&p.container)?;
    let ds = make_distribution_a(&records);
    let report = select_best_k_for(&ds, p.runs, p.seed).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(Execution {
        artifacts: vec![write_json(&p.out, &report)?],
        summary: serde_json::json!({ "chosen_k": report.chosen_k, "runs": report.runs }),
    })
}
