//! Clustering accuracy under the best cluster-to-label matching, arm
//! consensus and chance level.

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::Serialize;

use crate::data::Dataset;
use crate::diffcore::Tensor;
use crate::error::{domain, Result};
use crate::mixvae::{predict, ArmModel};

/// Largest `K` for which matching enumerates every permutation.
pub const EXHAUSTIVE_MAX_K: usize = 8;

/// `counts[p][t]`: samples predicted as cluster `p` with true label `t`.
pub fn confusion_matrix(pred: &[usize], labels: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if pred.len() != labels.len() {
        return domain(format!("{} predictions for {} labels", pred.len(), labels.len()));
    }
    let mut m = vec![vec![0u64; k]; k];
    for (&p, &t) in pred.iter().zip(labels) {
        if p >= k || t >= k {
            return domain(format!("class index outside 1..={k}"));
        }
        m[p][t] += 1;
    }
    Ok(m)
}

fn check_square(confusion: &[Vec<u64>]) -> Result<usize> {
    let k = confusion.len();
    if k == 0 || confusion.iter().any(|r| r.len() != k) {
        return domain("confusion matrix must be square and nonempty");
    }
    Ok(k)
}

/// Permutation `perm[p] = t` maximizing `Σ_p confusion[p][perm[p]]`, by
/// enumerating all `K!` permutations (Heap's algorithm). Ties keep the first
/// permutation found, starting from the identity.
pub fn matching_exhaustive(confusion: &[Vec<u64>]) -> Result<(Vec<usize>, u64)> {
    let k = check_square(confusion)?;
    let score = |p: &[usize]| -> u64 { p.iter().enumerate().map(|(i, &j)| confusion[i][j]).sum() };
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (perm.clone(), score(&perm));
    let mut c = vec![0usize; k];
    let mut i = 1;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let s = score(&perm);
            if s > best.1 {
                best = (perm.clone(), s);
            }
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}

/// Same optimum as [`matching_exhaustive`] via the Kuhn–Munkres algorithm.
pub fn matching_hungarian(confusion: &[Vec<u64>]) -> Result<(Vec<usize>, u64)> {
    let k = check_square(confusion)?;
    let weights = Matrix::from_rows(confusion.iter().map(|r| r.iter().map(|v| *v as i64).collect::<Vec<_>>()))
        .expect("square rows");
    let (total, perm) = kuhn_munkres(&weights);
    debug_assert_eq!(perm.len(), k);
    Ok((perm, total as u64))
}

/// Optimal matching: exhaustive for `K ≤ 8`, Kuhn–Munkres above.
pub fn best_matching(confusion: &[Vec<u64>]) -> Result<(Vec<usize>, u64)> {
    if check_square(confusion)? <= EXHAUSTIVE_MAX_K {
        matching_exhaustive(confusion)
    } else {
        matching_hungarian(confusion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    /// `permutation[cluster] = label`, zero-based.
    pub permutation: Vec<usize>,
}

/// Accuracy of cluster assignments under the best matching.
pub fn accuracy_from_predictions(pred: &[usize], labels: &[usize], k: usize) -> Result<AccuracyReport> {
    if labels.is_empty() {
        return domain("no labels to score against");
    }
    let confusion = confusion_matrix(pred, labels, k)?;
    let (permutation, matched) = best_matching(&confusion)?;
    Ok(AccuracyReport {
        accuracy: matched as f64 / labels.len() as f64,
        confusion,
        permutation,
    })
}

/// Number of classes to match over: the larger of the model's category count
/// and the label range.
fn match_size(model_k: usize, labels: &[usize]) -> usize {
    model_k.max(labels.iter().max().map_or(0, |m| m + 1))
}

pub fn evaluate_accuracy(model: &ArmModel, dataset: &Dataset) -> Result<AccuracyReport> {
    let Some(labels) = dataset.labels() else {
        return domain("accuracy needs a labeled dataset");
    };
    let pred = predict(model, dataset.x())?;
    accuracy_from_predictions(&pred, labels, match_size(model.dims().n_categories, labels))
}

/// Fraction of rows on which every arm's argmax agrees.
pub fn consensus_from_predictions(preds: &[Vec<usize>]) -> Result<f64> {
    if preds.len() < 2 {
        return domain("consensus needs at least 2 arms");
    }
    let n = preds[0].len();
    if n == 0 || preds.iter().any(|p| p.len() != n) {
        return domain("prediction lists must be nonempty and of equal length");
    }
    let agree = (0..n).filter(|&i| preds.iter().all(|p| p[i] == preds[0][i])).count();
    Ok(agree as f64 / n as f64)
}

pub fn consensus_rate(models: &[ArmModel], x: &Tensor) -> Result<f64> {
    if models.len() < 2 {
        return domain("consensus needs at least 2 arms");
    }
    let preds = models.iter().map(|m| predict(m, x)).collect::<Result<Vec<_>>>()?;
    consensus_from_predictions(&preds)
}

/// Share of the most abundant class.
pub fn chance_level(labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return domain("no labels");
    }
    let k = labels.iter().max().expect("nonempty") + 1;
    let mut counts = vec![0usize; k];
    for l in labels {
        counts[*l] += 1;
    }
    Ok(*counts.iter().max().expect("nonempty") as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_confusion_example() {
        let c = vec![vec![5, 0, 1], vec![0, 6, 0], vec![2, 0, 4]];
        let (perm, matched) = matching_exhaustive(&c).unwrap();
        assert_eq!(perm, vec![0, 1, 2]);
        assert_eq!(matched, 15);
        assert_eq!(matching_hungarian(&c).unwrap().1, 15);
    }

    #[test]
    fn permuted_predictions_score_one() {
        let labels = vec![0, 1, 2, 2, 1, 0, 3];
        let pred: Vec<usize> = labels.iter().map(|l| [2, 0, 3, 1][*l]).collect();
        let r = accuracy_from_predictions(&pred, &labels, 4).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.permutation, vec![1, 3, 0, 2]);
    }

    #[test]
    fn exhaustive_and_hungarian_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 1..=8 {
            for _ in 0..10 {
                let c: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(0..50)).collect()).collect();
                assert_eq!(matching_exhaustive(&c).unwrap().1, matching_hungarian(&c).unwrap().1);
            }
        }
        let big: Vec<Vec<u64>> = (0..12).map(|i| (0..12).map(|j| if (i + 5) % 12 == j { 9 } else { 1 }).collect()).collect();
        let (perm, total) = best_matching(&big).unwrap();
        assert_eq!(total, 108);
        assert!(perm.iter().enumerate().all(|(i, j)| (i + 5) % 12 == *j));
    }

    #[test]
    fn consensus_examples() {
        assert_eq!(consensus_from_predictions(&[vec![0, 1, 2], vec![0, 1, 2]]).unwrap(), 1.0);
        assert_eq!(consensus_from_predictions(&[vec![0; 4], vec![1; 4]]).unwrap(), 0.0);
        assert!(consensus_from_predictions(&[vec![0; 4]]).is_err());
    }

    #[test]
    fn chance_is_majority_share() {
        assert_eq!(chance_level(&[0, 0, 0, 1]).unwrap(), 0.75);
        assert!(chance_level(&[]).is_err());
        assert!(accuracy_from_predictions(&[], &[], 2).is_err());
    }
}
