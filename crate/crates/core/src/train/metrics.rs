//! Micro/macro precision-recall-F1 and exact-match accuracy over label sets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

/// Counts are pooled over (example, label) pairs for the micro scores.
/// Macro F1 averages per-label F1 over every label present in either the
/// gold or the predicted sets. Accuracy is exact set match.
pub fn evaluate_sets(gold: &[BTreeSet<usize>], pred: &[BTreeSet<usize>]) -> Result<MetricReport> {
    if gold.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument {
            op: "evaluate",
            msg: format!("{} gold sets but {} predictions", gold.len(), pred.len()),
        });
    }
    let (mut tp, mut fp, mut fn_, mut exact) = (0, 0, 0, 0);
    let mut per_label: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        exact += usize::from(g == p);
        for &l in g.union(p) {
            let e = per_label.entry(l).or_default();
            match (g.contains(&l), p.contains(&l)) {
                (true, true) => {
                    tp += 1;
                    e.0 += 1;
                }
                (false, true) => {
                    fp += 1;
                    e.1 += 1;
                }
                _ => {
                    fn_ += 1;
                    e.2 += 1;
                }
            }
        }
    }
    let micro_precision = ratio(tp, tp + fp);
    let micro_recall = ratio(tp, tp + fn_);
    let micro_f1 = if micro_precision + micro_recall == 0.0 {
        0.0
    } else {
        2.0 * micro_precision * micro_recall / (micro_precision + micro_recall)
    };
    let macro_f1 = if per_label.is_empty() {
        0.0
    } else {
        per_label.values().map(|&(t, p, n)| f1(t, p, n)).sum::<f64>() / per_label.len() as f64
    };
    Ok(MetricReport {
        micro_precision,
        micro_recall,
        micro_f1,
        macro_f1,
        accuracy: ratio(exact, gold.len()),
    })
}

/// Labels whose logit is positive.
pub fn threshold(logits: &[f64]) -> BTreeSet<usize> {
    logits.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i).collect()
}

/// Singleton set holding the first maximal logit.
pub fn argmax(logits: &[f64]) -> BTreeSet<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in logits.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn worked_example() {
        let r = evaluate_sets(&[set(&[0, 1]), set(&[2])], &[set(&[0]), set(&[2, 3])]).unwrap();
        assert!((r.micro_precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.micro_recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.micro_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.accuracy, 0.0);
        // labels 0,2 perfect-ish: F1(0)=1, F1(1)=0, F1(2)=1, F1(3)=0
        assert!((r.macro_f1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gold = [set(&[1]), set(&[0, 2])];
        let r = evaluate_sets(&gold, &gold).unwrap();
        assert_eq!(
            (r.micro_precision, r.micro_recall, r.micro_f1, r.macro_f1, r.accuracy),
            (1.0, 1.0, 1.0, 1.0, 1.0)
        );
        let r = evaluate_sets(&gold, &[set(&[]), set(&[])]).unwrap();
        assert_eq!((r.micro_recall, r.micro_f1), (0.0, 0.0));
        assert!(evaluate_sets(&[], &[]).is_err());
    }

    #[test]
    fn decision_rules() {
        assert_eq!(threshold(&[0.0, 0.1, -2.0, 3.0]), set(&[1, 3]));
        assert_eq!(argmax(&[0.2, 0.9, 0.9]), set(&[1]));
    }
}
