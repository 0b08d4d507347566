//! Ranking of experiment results by mean AUC with pairwise t-tests.

use serde::{Deserialize, Serialize};

use super::stats::{students_t_test, TTestResult};
use super::ExperimentResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub mean_auc: f64,
    pub iterations: usize,
    pub rank: usize,
    /// Rows sharing a group are not significantly different from the
    /// group's best row.
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub test: TTestResult,
    /// False when the AUC samples have different lengths.
    pub equal_iterations: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub alpha: f64,
    pub rows: Vec<ComparisonRow>,
    pub tests: Vec<PairwiseTest>,
}

/// Like [`students_t_test`], but zero-variance samples resolve to p = 1
/// when the means agree and p = 0 otherwise.
fn robust_test(a: &[f64], b: &[f64], alpha: f64) -> (TTestResult, Option<String>) {
    match students_t_test(a, b, alpha) {
        Ok(r) => (r, None),
        Err(e) => {
            let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len().max(1) as f64;
            let (ma, mb) = (mean(a), mean(b));
            let same = ma == mb;
            let t = if same { 0.0 } else { f64::INFINITY.copysign(ma - mb) };
            let p = if same { 1.0 } else { 0.0 };
            let r = TTestResult {
                t_statistic: t,
                degrees_of_freedom: (a.len() + b.len()).saturating_sub(2),
                p_value: p,
                alpha,
                significant: p < alpha,
            };
            (r, Some(e.to_string()))
        }
    }
}

/// Orders results by descending mean AUC, runs every pairwise t-test, and
/// groups each row with the current group leader unless it differs
/// significantly from it.
pub fn compare(results: &[ExperimentResult], alpha: f64) -> ComparisonTable {
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        results[b]
            .mean_auc
            .total_cmp(&results[a].mean_auc)
            .then_with(|| results[a].name().cmp(&results[b].name()))
    });

    let mut tests = Vec::new();
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            let (ra, rb) = (&results[order[i]], &results[order[j]]);
            let equal = ra.aucs.len() == rb.aucs.len();
            if !equal {
                log::warn!(
                    "{} has {} iterations and {} has {}; comparing as unpaired samples",
                    ra.name(),
                    ra.aucs.len(),
                    rb.name(),
                    rb.aucs.len()
                );
            }
            let (test, note) = robust_test(&ra.aucs, &rb.aucs, alpha);
            tests.push(PairwiseTest {
                a: ra.name(),
                b: rb.name(),
                test,
                equal_iterations: equal,
                note,
            });
        }
    }

    let mut rows = Vec::with_capacity(order.len());
    let mut leader = 0usize;
    let mut group = 0usize;
    for (rank, &idx) in order.iter().enumerate() {
        if rank > 0 {
            let (t, _) = robust_test(&results[order[leader]].aucs, &results[idx].aucs, alpha);
            if t.significant {
                group += 1;
                leader = rank;
            }
        }
        rows.push(ComparisonRow {
            name: results[idx].name(),
            mean_auc: results[idx].mean_auc,
            iterations: results[idx].aucs.len(),
            rank: rank + 1,
            group,
        });
    }
    ComparisonTable { alpha, rows, tests }
}
