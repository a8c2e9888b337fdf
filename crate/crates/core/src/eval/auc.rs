//! Rank-based AUC and ROC curves.

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score {s} is not finite")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Param(format!("label {l} is not binary")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half; computed from midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives, kept integral so ties are exact.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share the midrank (i + j + 2) / 2.
        let twice_midrank = (i + j + 2) as u128;
        let positives = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += positives * twice_midrank;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// The `O(P·N)` pairwise definition.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut twice_wins: u128 = 0;
    for (&si, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
        for (&sj, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 0) {
            twice_wins += match si.partial_cmp(&sj) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Ok(twice_wins as f64 / (2 * pos * neg) as f64)
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, tied scores moving together.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn listed_cases() {
        assert_eq!(auc(&[0.1, 0.9], &[0, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.2, 0.6, 0.4], &[1, 0, 0, 1]).unwrap(), 0.75);
        assert_eq!(pairwise_auc(&[0.8, 0.2, 0.6, 0.4], &[1, 0, 0, 1]).unwrap(), 0.75);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auc(&[], &[]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auc(&[0.1, f64::NAN], &[0, 1]), Err(Error::Numeric(_))));
    }

    #[test]
    fn roc_area_matches_auc() {
        let s = [0.9, 0.8, 0.8, 0.3, 0.2, 0.5];
        let l = [1, 0, 1, 1, 0, 0];
        let pts = roc_curve(&s, &l).unwrap();
        let area: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        assert!((area - auc(&s, &l).unwrap()).abs() < 1e-12);
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
    }

    fn case() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..=100).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 20.0), n),
                prop::collection::vec(0u8..=1, n),
            )
        })
    }

    proptest! {
        #[test]
        fn rank_auc_equals_pairwise((s, l) in case()) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            prop_assert_eq!(auc(&s, &l).unwrap(), pairwise_auc(&s, &l).unwrap());
        }

        #[test]
        fn monotone_transform_and_complement((s, l) in case()) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            let a = auc(&s, &l).unwrap();
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auc(&t, &l).unwrap(), a);
            let flipped: Vec<u8> = l.iter().map(|v| 1 - v).collect();
            prop_assert!((auc(&s, &flipped).unwrap() + a - 1.0).abs() < 1e-12);
        }
    }
}
