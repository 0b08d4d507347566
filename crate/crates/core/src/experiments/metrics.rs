//! ROC curves, AUC and vertically averaged ROC.

use serde::{Deserialize, Serialize};

use super::ExperimentError;

/// Number of points on the common FPR grid used for averaging curves.
pub const ROC_GRID_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweeps a threshold down through the distinct scores. Tied scores move
/// the curve diagonally, so the trapezoidal area counts ties as one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocCurve, ExperimentError> {
    if scores.len() != labels.len() {
        return Err(ExperimentError::Invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ExperimentError::Invalid("scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(ExperimentError::Invalid("AUC undefined: labels contain a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // trapezoid in count units, normalized once at the end
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve {
        points,
        auc: auc / (pos * neg) as f64,
    })
}

pub fn fpr_grid() -> Vec<f64> {
    (0..ROC_GRID_POINTS)
        .map(|i| i as f64 / (ROC_GRID_POINTS - 1) as f64)
        .collect()
}

/// TPR of a curve at `fpr`, interpolating linearly along the polyline and
/// taking the highest TPR where the curve is vertical.
pub fn tpr_at(points: &[(f64, f64)], fpr: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if fpr < x0 || fpr > x1 {
            continue;
        }
        let y = if x1 == x0 {
            y0.max(y1)
        } else {
            y0 + (y1 - y0) * (fpr - x0) / (x1 - x0)
        };
        best = best.max(y);
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// Vertical average of several curves on the fixed FPR grid.
pub fn mean_roc(curves: &[RocCurve]) -> Vec<(f64, f64)> {
    fpr_grid()
        .into_iter()
        .map(|f| {
            let m = if curves.is_empty() {
                0.0
            } else {
                curves.iter().map(|c| tpr_at(&c.points, f)).sum::<f64>() / curves.len() as f64
            };
            (f, m)
        })
        .collect()
}

pub fn accuracy(scores: &[f64], labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    scores
        .iter()
        .zip(labels)
        .filter(|(s, &l)| (**s >= 0.5) as u8 == l)
        .count() as f64
        / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pairwise count: P(score_pos > score_neg) + ½ P(equal).
    fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / pairs
    }

    #[test]
    fn fixed_examples() {
        let s = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(roc_auc(&s, &[1, 1, 0, 0]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&s, &[0, 0, 1, 1]).unwrap().auc, 0.0);
        assert_eq!(roc_auc(&[0.9, 0.5, 0.6, 0.4], &[1, 1, 0, 0]).unwrap().auc, 0.75);
        assert!(roc_auc(&s, &[1, 1, 1, 1]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.1], &[1, 0]).is_err());
    }

    #[test]
    fn all_tied_scores_give_half() {
        let c = roc_auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap();
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn mean_roc_of_diagonal_and_perfect() {
        let diag = roc_auc(&[0.5, 0.5], &[1, 0]).unwrap();
        let perfect = roc_auc(&[0.9, 0.1], &[1, 0]).unwrap();
        let m = mean_roc(&[diag, perfect]);
        assert_eq!(m.len(), ROC_GRID_POINTS);
        assert_eq!(m[0], (0.0, 0.5));
        assert!((m[50].1 - 0.75).abs() < 1e-12);
        assert_eq!(m[100], (1.0, 1.0));
    }

    #[test]
    fn accuracy_threshold() {
        assert_eq!(accuracy(&[0.6, 0.4, 0.5], &[1, 0, 0]), 2.0 / 3.0);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..=100).prop_flat_map(|n| {
            (
                prop::collection::vec(prop_oneof![(0u8..10).prop_map(|v| v as f64 / 10.0), 0.0f64..1.0], n),
                prop::collection::vec(0u8..=1, n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn trapezoid_equals_pairwise((s, l) in instance()) {
            let c = roc_auc(&s, &l).unwrap();
            prop_assert!((c.auc - mann_whitney(&s, &l)).abs() <= 1e-9);
            prop_assert_eq!(c.points[0], (0.0, 0.0));
            prop_assert_eq!(*c.points.last().unwrap(), (1.0, 1.0));
            for w in c.points.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }

        #[test]
        fn monotone_transforms_preserve_auc((s, l) in instance(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let base = roc_auc(&s, &l).unwrap().auc;
            let affine: Vec<f64> = s.iter().map(|v| a * v + b).collect();
            let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
            prop_assert_eq!(roc_auc(&affine, &l).unwrap().auc, base);
            prop_assert_eq!(roc_auc(&exp, &l).unwrap().auc, base);
        }
    }
}
