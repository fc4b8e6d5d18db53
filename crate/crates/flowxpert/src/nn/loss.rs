//! Loss functions and their input gradients.

use crate::cluster::PairLabel;

use super::matrix::Matrix;
use super::Real;

/// Mean softmax cross-entropy over a batch of logit rows. Returns the
/// loss and its gradient with respect to the logits.
pub fn cross_entropy<F: Real>(logits: &Matrix<F>, targets: &[usize]) -> (F, Matrix<F>) {
    let n = logits.rows();
    assert_eq!(targets.len(), n, "one target per row");
    assert!(n > 0, "empty batch");
    let nf = F::from_f64(n as f64);

    let mut loss = F::zero();
    let mut dlogits = Matrix::zeros(n, logits.cols());
    for (i, &target) in targets.iter().enumerate() {
        let row = logits.row(i);
        debug_assert!(target < row.len());
        // Stable log-sum-exp.
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        loss += lse - row[target];

        let drow = dlogits.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            let softmax = (v - lse).exp();
            let indicator = if j == target { F::one() } else { F::zero() };
            drow[j] = (softmax - indicator) / nf;
        }
    }
    (loss / nf, dlogits)
}

/// One embedding pair for the contrastive objective, indexing rows of
/// the embedding batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContrastivePair {
    pub i: usize,
    pub j: usize,
    pub label: PairLabel,
}

/// Margin contrastive loss over embedding rows.
///
/// Positive pairs pay `max(0, E - m)` and negative pairs pay
/// `max(0, 2m - E)` where `E` is the Euclidean distance; each term is
/// averaged over its own pair count. So positives are pulled inside the
/// margin, negatives are pushed beyond twice the margin, and the hinges
/// go silent once a pair is on the right side. The subgradient at a
/// hinge kink is zero, and a zero-distance pair contributes zero
/// gradient (its pull direction is undefined).
///
/// Returns the loss and its gradient with respect to the embeddings.
pub fn contrastive<F: Real>(
    emb: &Matrix<F>,
    pairs: &[ContrastivePair],
    margin: F,
) -> (F, Matrix<F>) {
    let n_pos = pairs.iter().filter(|p| p.label == PairLabel::Positive).count();
    let n_neg = pairs.len() - n_pos;
    let two = F::from_f64(2.0);

    let mut pos_sum = F::zero();
    let mut neg_sum = F::zero();
    let mut demb = Matrix::zeros(emb.rows(), emb.cols());
    for pair in pairs {
        let (a, b) = (pair.i, pair.j);
        let mut dist_sq = F::zero();
        for (x, y) in emb.row(a).iter().zip(emb.row(b)) {
            let d = *x - *y;
            dist_sq += d * d;
        }
        let dist = dist_sq.sqrt();

        // dL/dE for this pair, already divided by its group size.
        let coeff = match pair.label {
            PairLabel::Positive => {
                if dist > margin {
                    pos_sum += dist - margin;
                    F::one() / F::from_f64(n_pos as f64)
                } else {
                    continue;
                }
            }
            PairLabel::Negative => {
                if dist < two * margin {
                    neg_sum += two * margin - dist;
                    if dist == F::zero() {
                        continue; // direction undefined, gradient zero
                    }
                    -(F::one() / F::from_f64(n_neg as f64))
                } else {
                    continue;
                }
            }
        };

        // dE/d(row a) = (a - b) / E.
        let scale = coeff / dist;
        for k in 0..emb.cols() {
            let d = (emb.get(a, k) - emb.get(b, k)) * scale;
            let va = demb.get(a, k) + d;
            demb.set(a, k, va);
            let vb = demb.get(b, k) - d;
            demb.set(b, k, vb);
        }
    }

    let mut loss = F::zero();
    if n_pos > 0 {
        loss += pos_sum / F::from_f64(n_pos as f64);
    }
    if n_neg > 0 {
        loss += neg_sum / F::from_f64(n_neg as f64);
    }
    (loss, demb)
}

/// Loss of a lone (positive, negative) distance pair under the hinges of
/// [`contrastive`]; the separability analysis below is phrased in terms
/// of this.
pub fn pairwise_hinge<F: Real>(pos_dist: F, neg_dist: F, margin: F) -> F {
    let two = F::from_f64(2.0);
    (pos_dist - margin).max(F::zero()) + (two * margin - neg_dist).max(F::zero())
}
