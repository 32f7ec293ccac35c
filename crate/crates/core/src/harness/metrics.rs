use serde::{Deserialize, Serialize};

use super::HarnessError;

fn check_pairs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), HarnessError> {
    if scores.len() != labels.len() {
        return Err(HarnessError::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(HarnessError::Metric(format!("score {s} is not a number")));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(HarnessError::Metric("AUC is undefined with a single class".into()));
    }
    Ok((pos, neg))
}

/// Rank statistic: the probability that a random positive outscores a
/// random negative, ties counting one half. Computed by counting in half
/// units over tie groups, so it equals exhaustive pair counting exactly.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, HarnessError> {
    let (pos, neg) = check_pairs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut negatives_below: u128 = 0;
    let mut halves: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        halves += 2 * p * negatives_below + p * n;
        negatives_below += n;
        i = j;
    }
    Ok(halves as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// ROC staircase from (0, 0) to (1, 1); tied scores move diagonally.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>, HarnessError> {
    let (pos, neg) = check_pairs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        i = j;
    }
    Ok(pts)
}

pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Precision/recall/F1 of the positive class.
    #[default]
    Binary,
    /// Unweighted mean over both classes.
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub auc: f64,
    pub acc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub undefined: Vec<String>,
}

struct Prf {
    precision: f64,
    recall: f64,
    f1: f64,
}

fn prf(tp: usize, fp: usize, fn_: usize, class: &str, undefined: &mut Vec<String>) -> Prf {
    let ratio = |num: usize, den: usize, name: &str, undefined: &mut Vec<String>| {
        if den == 0 {
            undefined.push(format!("{name}[{class}]"));
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp, "precision", undefined);
    let recall = ratio(tp, tp + fn_, "recall", undefined);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf { precision, recall, f1 }
}

/// Confusion-matrix metrics at `score > threshold`, plus AUC.
pub fn classification_report(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
    averaging: Averaging,
) -> Result<ClassificationMetrics, HarnessError> {
    let auc = auc(scores, labels)?;
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (s, l) in scores.iter().zip(labels) {
        match (*s > threshold, *l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let mut undefined = Vec::new();
    let positive = prf(c.tp, c.fp, c.fn_, "positive", &mut undefined);
    let (precision, recall, f1) = match averaging {
        Averaging::Binary => (positive.precision, positive.recall, positive.f1),
        Averaging::Macro => {
            let negative = prf(c.tn, c.fn_, c.fp, "negative", &mut undefined);
            (
                (positive.precision + negative.precision) / 2.0,
                (positive.recall + negative.recall) / 2.0,
                (positive.f1 + negative.f1) / 2.0,
            )
        }
    };
    Ok(ClassificationMetrics {
        auc,
        acc: (c.tp + c.tn) as f64 / scores.len() as f64,
        f1,
        precision,
        recall,
        confusion: c,
        undefined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

/// MAE, RMSE and R² about the mean of `targets`.
pub fn regression_report(preds: &[f64], targets: &[f64]) -> Result<RegressionMetrics, HarnessError> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(HarnessError::Metric(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let n = preds.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let sst: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if sst == 0.0 {
        return Err(HarnessError::Metric("R² is undefined for constant targets".into()));
    }
    let sse: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    let mae = preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    Ok(RegressionMetrics {
        mae,
        rmse: (sse / n).sqrt(),
        r2: 1.0 - sse / sst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;
    use proptest::prelude::*;

    fn brute_auc(s: &[f64], l: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        let l = [false, false, true, true];
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &l).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &l).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &l).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auc_matches_pair_counting() {
        let mut rng = Rng::new(9);
        for case in 0..100 {
            let n = 2 + rng.below(199);
            let levels = if case % 2 == 0 { 4 } else { 1000 };
            let s: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
            let mut l: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.4).collect();
            l[0] = true;
            l[1] = false;
            assert_eq!(auc(&s, &l).unwrap(), brute_auc(&s, &l));
        }
    }

    #[test]
    fn roc_area_matches_auc() {
        let mut rng = Rng::new(10);
        for _ in 0..200 {
            let n = 2 + rng.below(150);
            let s: Vec<f64> = (0..n).map(|_| (rng.below(20) as f64) / 20.0).collect();
            let mut l: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
            l[0] = true;
            l[1] = false;
            let pts = roc_points(&s, &l).unwrap();
            assert!((trapezoid_area(&pts) - auc(&s, &l).unwrap()).abs() < 1e-12);
            assert_eq!(pts.first(), Some(&(0.0, 0.0)));
            assert_eq!(pts.last(), Some(&(1.0, 1.0)));
            assert!(pts.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
            let rev: Vec<f64> = s.iter().map(|v| -v).collect();
            let a = auc(&s, &l).unwrap();
            assert!((trapezoid_area(&roc_points(&rev, &l).unwrap()) - (1.0 - a)).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_roc_hits_corner() {
        let pts = roc_points(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert!(pts.contains(&(0.0, 1.0)));
    }

    #[test]
    fn confusion_arithmetic() {
        // TP=3, FP=1, FN=1, TN=5
        let scores = [0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        let labels = [true, true, true, false, true, false, false, false, false, false];
        let m = classification_report(&scores, &labels, 0.5, Averaging::Binary).unwrap();
        assert_eq!(
            (m.confusion.tp, m.confusion.fp, m.confusion.fn_, m.confusion.tn),
            (3, 1, 1, 5)
        );
        assert_eq!((m.precision, m.recall, m.f1, m.acc), (0.75, 0.75, 0.75, 0.8));
        let f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
        assert_eq!(m.f1, f1);
    }

    #[test]
    fn degenerate_predictor_flags_precision() {
        let m = classification_report(&[0.1; 4], &[true, false, true, false], 0.5, Averaging::Binary).unwrap();
        assert_eq!((m.acc, m.recall, m.precision), (0.5, 0.0, 0.0));
        assert!(m.undefined.iter().any(|u| u.starts_with("precision")));
    }

    #[test]
    fn perfect_classifier() {
        for avg in [Averaging::Binary, Averaging::Macro] {
            let m = classification_report(&[0.9, 0.8, 0.1], &[true, true, false], 0.5, avg).unwrap();
            assert_eq!((m.auc, m.acc, m.f1, m.precision, m.recall), (1.0, 1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn threshold_is_strict() {
        let m = classification_report(&[0.5, 0.7], &[false, true], 0.5, Averaging::Binary).unwrap();
        assert_eq!(m.confusion.tn, 1);
    }

    #[test]
    fn regression_examples() {
        let m = regression_report(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert_eq!(m.mae, 1.5);
        assert!((m.rmse - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.r2, -1.5);
        let t = [1.0, 2.0, 6.0];
        assert_eq!(
            regression_report(&t, &t).unwrap(),
            RegressionMetrics {
                mae: 0.0,
                rmse: 0.0,
                r2: 1.0
            }
        );
        assert_eq!(regression_report(&[3.0; 3], &t).unwrap().r2, 0.0);
        assert!(regression_report(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(regression_report(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn rmse_bounds_mae(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..60)) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(t.iter().any(|v| *v != t[0]));
            let m = regression_report(&p, &t).unwrap();
            prop_assert!(m.rmse + 1e-12 >= m.mae);
            prop_assert!(m.mae >= 0.0);
            prop_assert!(m.r2 <= 1.0);
        }
    }
}
