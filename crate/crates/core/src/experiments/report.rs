//! JSON and CSV output of experiment results.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{ComparisonTable, ExperimentError, ExperimentResult};

pub fn auc_csv(results: &[ExperimentResult]) -> String {
    let mut s = String::from("experiment,mode,model,iteration,auc\n");
    for r in results {
        for it in &r.per_iteration {
            let _ = writeln!(s, "{},{},{},{},{}", r.experiment_id, r.mode, r.model, it.iteration, it.auc);
        }
    }
    s
}

pub fn roc_csv(results: &[ExperimentResult]) -> String {
    let mut s = String::from("experiment,mode,model,fpr,mean_tpr\n");
    for r in results {
        for (f, t) in &r.mean_roc {
            let _ = writeln!(s, "{},{},{},{},{}", r.experiment_id, r.mode, r.model, f, t);
        }
    }
    s
}

/// Writes `<name>.json`, `<name>_auc.csv` and `<name>_roc.csv` per result.
pub fn write_results(results: &[ExperimentResult], out_dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for r in results {
        let base = out_dir.join(r.name());
        let json = base.with_extension("json");
        std::fs::write(&json, serde_json::to_vec_pretty(r)?)?;
        let auc = out_dir.join(format!("{}_auc.csv", r.name()));
        std::fs::write(&auc, auc_csv(std::slice::from_ref(r)))?;
        let roc = out_dir.join(format!("{}_roc.csv", r.name()));
        std::fs::write(&roc, roc_csv(std::slice::from_ref(r)))?;
        paths.extend([json, auc, roc]);
    }
    Ok(paths)
}

pub fn write_comparison(table: &ComparisonTable, path: &Path) -> Result<PathBuf, ExperimentError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(table)?)?;
    Ok(path.to_path_buf())
}
