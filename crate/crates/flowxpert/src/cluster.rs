//! Density-based pseudo-labeling.
//!
//! Exact DBSCAN over Euclidean distance: a point is a core point when at
//! least `min_pts` points (itself included) lie within `eps` (inclusive).
//! Clusters are the connected components of core points under
//! eps-reachability; border points join the first cluster that reaches
//! them; everything else is noise. O(n^2) distance evaluation, which is
//! the intended operating point since clustering runs on a small
//! downsampled slice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cluster id for noise points.
pub const NOISE: i32 = -1;

const UNCLASSIFIED: i32 = -2;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("NoisePairRejected: pair labels are undefined for noise points")]
    NoisePairRejected,
}

/// Relation of two clustered points, used to drive the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairLabel {
    /// Same cluster: pulled together.
    Positive,
    /// Different clusters: pushed apart.
    Negative,
}

/// Pseudo-label assignment: `labels[i]` is a cluster id in
/// `0..clusters`, or [`NOISE`]. Ids are contiguous in discovery order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabels {
    pub labels: Vec<i32>,
    pub clusters: usize,
}

impl PseudoLabels {
    pub fn non_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l != NOISE).count()
    }

    /// Member indices per cluster id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            if l != NOISE {
                members[l as usize].push(i);
            }
        }
        members
    }
}

/// Pair relation from two pseudo-labels; noise points form no pairs.
pub fn pair_label(a: i32, b: i32) -> Result<PairLabel, ClusterError> {
    if a == NOISE || b == NOISE {
        return Err(ClusterError::NoisePairRejected);
    }
    Ok(if a == b {
        PairLabel::Positive
    } else {
        PairLabel::Negative
    })
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Exact DBSCAN. Empty input yields an empty labeling.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> PseudoLabels {
    let n = points.len();
    if n == 0 {
        return PseudoLabels {
            labels: Vec::new(),
            clusters: 0,
        };
    }
    let eps_sq = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| dist_sq(&points[i], &points[j]) <= eps_sq)
                .collect()
        })
        .collect();

    let mut labels = vec![UNCLASSIFIED; n];
    let mut next_cluster = 0i32;
    for i in 0..n {
        if labels[i] != UNCLASSIFIED {
            continue;
        }
        if neighbors[i].len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = next_cluster;
        let mut queue: std::collections::VecDeque<usize> = neighbors[i].iter().copied().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                // Border point: reachable but not dense.
                labels[j] = next_cluster;
            }
            if labels[j] != UNCLASSIFIED {
                continue;
            }
            labels[j] = next_cluster;
            if neighbors[j].len() >= min_pts {
                queue.extend(neighbors[j].iter().copied());
            }
        }
        next_cluster += 1;
    }

    PseudoLabels {
        labels,
        clusters: next_cluster as usize,
    }
}

/// Distance from each point to its k-th nearest neighbor (self counts as
/// the first), sorted descending. The elbow of this curve is the usual
/// way to pick `eps` for a given `min_pts = k`.
pub fn k_distance(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut dists: Vec<f64> = (0..n).map(|j| dist_sq(&points[i], &points[j])).collect();
        dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let idx = (k.max(1) - 1).min(n - 1);
        out.push(dists[idx].sqrt());
    }
    out.sort_by(|a, b| b.partial_cmp(a).expect("finite distances"));
    out
}
