use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Threshold-free and thresholded metrics for one scored label set.
///
/// The AUC fields are absent, not zero, when either class is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc_pr: Option<f64>,
    pub auc_roc: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl MetricReport {
    pub fn compute(labels: &[bool], scores: &[f64], threshold: f64) -> Result<Self> {
        check_inputs(labels, scores)?;
        let n_pos = labels.iter().filter(|&&l| l).count();
        let n_neg = labels.len() - n_pos;
        let both = n_pos > 0 && n_neg > 0;
        let (f1, accuracy) = if labels.is_empty() {
            (None, None)
        } else {
            let (f, a) = f1_accuracy(labels, scores, threshold)?;
            (Some(f), Some(a))
        };
        Ok(Self {
            auc_pr: if both { Some(auc_pr(labels, scores)?) } else { None },
            auc_roc: if both { Some(auc_roc(labels, scores)?) } else { None },
            f1,
            accuracy,
            threshold,
            n_pos,
            n_neg,
        })
    }
}

fn check_inputs(labels: &[bool], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), actual: scores.len() });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { row: i, col: 0 });
    }
    Ok(())
}

fn require_both_classes(labels: &[bool]) -> Result<usize> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::MissingClass("positive"));
    }
    if n_pos == labels.len() {
        return Err(Error::MissingClass("negative"));
    }
    Ok(n_pos)
}

/// Indices sorted by descending score; ties keep input order.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Average precision. Items with equal scores form one block: precision is
/// taken after the whole block and credited with the block's positives.
pub fn auc_pr(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_inputs(labels, scores)?;
    let n_pos = require_both_classes(labels)? as f64;
    let order = descending(scores);
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0f64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut block_pos = 0usize;
        while i < order.len() && scores[order[i]] == s {
            block_pos += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        tp += block_pos;
        if block_pos > 0 {
            ap += (tp as f64 / seen as f64) * (block_pos as f64 / n_pos);
        }
    }
    Ok(ap)
}

/// Mann-Whitney AUC: P(pos > neg) + P(pos == neg) / 2, by midranks.
pub fn auc_roc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_inputs(labels, scores)?;
    let n_pos = require_both_classes(labels)?;
    let n_neg = labels.len() - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled midranks keeps everything in exact integers.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let start = i;
        let mut block_pos = 0u128;
        while i < order.len() && scores[order[i]] == s {
            block_pos += labels[order[i]] as u128;
            i += 1;
        }
        // ranks start+1 ..= i, doubled midrank = start + 1 + i
        rank_sum2 += block_pos * (start as u128 + 1 + i as u128);
    }
    let p = n_pos as u128;
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// F1 and accuracy after binarizing at `score >= threshold`. F1 is 0 when
/// there are no predicted or no true positives.
pub fn f1_accuracy(labels: &[bool], scores: &[f64], threshold: f64) -> Result<(f64, f64)> {
    check_inputs(labels, scores)?;
    if labels.is_empty() {
        return Err(Error::Empty("label set"));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&l, &s) in labels.iter().zip(scores) {
        match (l, s >= threshold) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64 };
    Ok((f1, (tp + tn) as f64 / labels.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force AP: walk every distinct threshold from high to low and
    /// accumulate precision times recall gained at that threshold.
    fn ap_oracle(labels: &[bool], scores: &[f64]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let n_pos = labels.iter().filter(|&&l| l).count() as f64;
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for t in thresholds {
            let tp = labels.iter().zip(scores).filter(|(&l, &s)| l && s >= t).count() as f64;
            let predicted = scores.iter().filter(|&&s| s >= t).count() as f64;
            let recall = tp / n_pos;
            ap += (tp / predicted) * (recall - prev_recall);
            prev_recall = recall;
        }
        ap
    }

    /// Trapezoidal area under the empirical ROC curve.
    fn roc_trapezoid_oracle(labels: &[bool], scores: &[f64]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let n_pos = labels.iter().filter(|&&l| l).count() as f64;
        let n_neg = labels.len() as f64 - n_pos;
        let (mut px, mut py, mut area) = (0.0, 0.0, 0.0);
        for t in thresholds {
            let tp = labels.iter().zip(scores).filter(|(&l, &s)| l && s >= t).count() as f64;
            let fp = labels.iter().zip(scores).filter(|(&l, &s)| !l && s >= t).count() as f64;
            let (x, y) = (fp / n_neg, tp / n_pos);
            area += (x - px) * (y + py) / 2.0;
            px = x;
            py = y;
        }
        area
    }

    /// Pairwise count oracle for the Mann-Whitney statistic.
    fn roc_pairwise_oracle(labels: &[bool], scores: &[f64]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn worked_ap_example() {
        let ap = auc_pr(&[true, false, true], &[0.9, 0.8, 0.7]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(ap, 1.0 * 0.5 + (2.0 / 3.0) * 0.5);
    }

    #[test]
    fn perfect_and_tied_rankings() {
        let labels = [true, true, false, false, false];
        assert_eq!(auc_pr(&labels, &[0.9, 0.8, 0.3, 0.2, 0.1]).unwrap(), 1.0);
        assert_eq!(auc_roc(&labels, &[0.9, 0.8, 0.3, 0.2, 0.1]).unwrap(), 1.0);
        let flat = [0.5; 5];
        assert!((auc_pr(&labels, &flat).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(auc_roc(&labels, &flat).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(auc_pr(&[true, true], &[0.1, 0.2]), Err(Error::MissingClass("negative"))));
        assert!(matches!(auc_roc(&[false], &[0.1]), Err(Error::MissingClass("positive"))));
        let r = MetricReport::compute(&[false, false], &[0.1, 0.7], 0.5).unwrap();
        assert_eq!(r.auc_pr, None);
        assert_eq!(r.auc_roc, None);
        assert_eq!(r.accuracy, Some(0.5));
    }

    #[test]
    fn random_balanced_roc_is_near_half() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(11);
        let labels: Vec<bool> = (0..10_000).map(|i| i % 2 == 0).collect();
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let auc = auc_roc(&labels, &scores).unwrap();
        assert!((auc - 0.5).abs() < 0.02, "{auc}");
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_accuracy(&[true, false], &[0.9, 0.1], 0.5).unwrap(), (1.0, 1.0));
        assert_eq!(f1_accuracy(&[true, false, true, false], &[0.1; 4], 0.5).unwrap(), (0.0, 0.5));
        // 3 TP, 1 FP, 1 FN, 5 TN
        let labels = [true, true, true, false, true, false, false, false, false, false];
        let scores = [0.9, 0.8, 0.7, 0.6, 0.4, 0.3, 0.2, 0.1, 0.1, 0.0];
        let (f1, acc) = f1_accuracy(&labels, &scores, 0.5).unwrap();
        assert!((f1 - 0.75).abs() < 1e-15);
        assert!((acc - 0.8).abs() < 1e-15);
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(f1_accuracy(&[true], &[0.5], 0.5).unwrap(), (1.0, 1.0));
    }

    fn instance() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
        (2usize..100).prop_flat_map(|n| {
            (
                proptest::collection::vec(any::<bool>(), n),
                // coarse grid so tie blocks are common
                proptest::collection::vec((0u8..12).prop_map(|k| k as f64 / 11.0), n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn ap_and_roc_match_oracles((mut labels, scores) in instance()) {
            labels[0] = true;
            labels[1] = false;
            let ap = auc_pr(&labels, &scores).unwrap();
            prop_assert!((ap - ap_oracle(&labels, &scores)).abs() < 1e-12);
            let roc = auc_roc(&labels, &scores).unwrap();
            prop_assert!((roc - roc_trapezoid_oracle(&labels, &scores)).abs() < 1e-12);
            prop_assert!((roc - roc_pairwise_oracle(&labels, &scores)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }
}
