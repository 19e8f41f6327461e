//! Internal cluster-validity indices: silhouette, Dunn, Davies-Bouldin, and
//! BetaCV.
//!
//! All four are evaluated in whatever space the caller provides — the
//! pipeline passes standardized features so algorithm comparisons are fair.
//! Three of the indices need the full pairwise distance set, so
//! [`validity_report`] computes one shared [`PairDistances`] matrix. Pair
//! distances are computed row-parallel, but every reduction (sums, means,
//! extrema) runs in ascending index order, so results do not depend on the
//! thread count.
//!
//! Conventions, documented here because the indices have variants:
//! - Dunn uses single-linkage inter-cluster distance and complete-diameter
//!   intra-cluster spread (the original 1974 form).
//! - Points in singleton clusters get silhouette score 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::par;
use crate::Result;

/// The four indices, bundled for export into run metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    /// Mean silhouette score, in [−1, 1]; higher is better.
    pub silhouette: f64,
    /// Min inter-cluster distance over max cluster diameter; higher is better.
    pub dunn: f64,
    /// Mean worst-pair scatter ratio; lower is better.
    pub davies_bouldin: f64,
    /// Mean intra-edge length over mean inter-edge length; lower is better.
    pub beta_cv: f64,
}

/// All pairwise Euclidean distances, packed as the upper triangle of the
/// distance matrix (row-major, `i < j`).
pub struct PairDistances {
    n: usize,
    d: Vec<f64>,
}

impl PairDistances {
    /// Compute every pairwise distance. Rows are computed in parallel; the
    /// packed layout itself fixes the element order.
    pub fn compute(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        let dim = points.first().map_or(0, |p| p.len());
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidInput("points have mixed dimensions".into()));
        }
        let rows: Vec<Vec<f64>> = par::map_range(n, |i| {
            let pi = &points[i];
            (i + 1..n).map(|j| euclidean(pi, &points[j])).collect()
        });
        let mut d = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        for row in rows {
            d.extend_from_slice(&row);
        }
        Ok(PairDistances { n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Distance between points `i` and `j` (0 when `i == j`).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        self.d[lo * (2 * self.n - lo - 1) / 2 + (hi - lo - 1)]
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let diff = x - y;
        sum += diff * diff;
    }
    sum.sqrt()
}

/// Cluster member lists in ascending label order.
fn cluster_members(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, &label) in labels.iter().enumerate() {
        map.entry(label).or_default().push(idx);
    }
    map.into_values().collect()
}

fn check_inputs(points: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no points".into()));
    }
    if points.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    Ok(())
}

fn silhouette_from(d: &PairDistances, members: &[Vec<usize>], labels: &[usize]) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::InvalidInput(
            "silhouette needs at least 2 clusters".into(),
        ));
    }
    let n = labels.len();
    let mut total = 0.0;
    for j in 0..n {
        let mut a = 0.0;
        let mut b = f64::INFINITY;
        let mut singleton = false;
        for cluster in members {
            // Member lists are ascending, so membership is a binary search.
            let is_own = cluster.binary_search(&j).is_ok();
            let mut sum = 0.0;
            for &k in cluster {
                sum += d.get(j, k);
            }
            if is_own {
                if cluster.len() < 2 {
                    singleton = true;
                } else {
                    a = sum / (cluster.len() - 1) as f64;
                }
            } else {
                let mean = sum / cluster.len() as f64;
                if mean < b {
                    b = mean;
                }
            }
        }
        let s = if singleton {
            0.0
        } else {
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        };
        total += s;
    }
    Ok(total / n as f64)
}

fn dunn_from(d: &PairDistances, members: &[Vec<usize>]) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::InvalidInput("dunn needs at least 2 clusters".into()));
    }
    let mut max_diameter = 0.0f64;
    for cluster in members {
        for (a_pos, &a) in cluster.iter().enumerate() {
            for &b in &cluster[a_pos + 1..] {
                let dist = d.get(a, b);
                if dist > max_diameter {
                    max_diameter = dist;
                }
            }
        }
    }
    if max_diameter == 0.0 {
        return Err(Error::InvalidInput(
            "dunn undefined: every cluster has zero diameter".into(),
        ));
    }
    let mut min_inter = f64::INFINITY;
    for (ci, cluster_i) in members.iter().enumerate() {
        for cluster_j in &members[ci + 1..] {
            for &a in cluster_i {
                for &b in cluster_j {
                    let dist = d.get(a, b);
                    if dist < min_inter {
                        min_inter = dist;
                    }
                }
            }
        }
    }
    Ok(min_inter / max_diameter)
}

fn beta_cv_from(d: &PairDistances, members: &[Vec<usize>], labels: &[usize]) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::InvalidInput(
            "beta-cv needs at least 2 clusters".into(),
        ));
    }
    let n = labels.len();
    let mut intra_sum = 0.0;
    let mut intra_count = 0u64;
    let mut inter_sum = 0.0;
    let mut inter_count = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            let dist = d.get(i, j);
            if labels[i] == labels[j] {
                intra_sum += dist;
                intra_count += 1;
            } else {
                inter_sum += dist;
                inter_count += 1;
            }
        }
    }
    if intra_count == 0 {
        return Err(Error::InvalidInput(
            "beta-cv undefined: no intra-cluster pairs (all clusters are singletons)".into(),
        ));
    }
    let mean_intra = intra_sum / intra_count as f64;
    let mean_inter = inter_sum / inter_count as f64;
    Ok(mean_intra / mean_inter)
}

fn davies_bouldin_impl(points: &[Vec<f64>], members: &[Vec<usize>]) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::InvalidInput(
            "davies-bouldin needs at least 2 clusters".into(),
        ));
    }
    let dim = points[0].len();
    let mut centroids = Vec::with_capacity(members.len());
    let mut scatters = Vec::with_capacity(members.len());
    for cluster in members {
        let mut centroid = vec![0.0f64; dim];
        for &idx in cluster {
            for (c, x) in centroid.iter_mut().zip(&points[idx]) {
                *c += x;
            }
        }
        for c in &mut centroid {
            *c /= cluster.len() as f64;
        }
        let mut scatter = 0.0;
        for &idx in cluster {
            scatter += euclidean(&points[idx], &centroid);
        }
        scatter /= cluster.len() as f64;
        centroids.push(centroid);
        scatters.push(scatter);
    }
    let k = members.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i == j {
                continue;
            }
            let sep = euclidean(&centroids[i], &centroids[j]);
            if sep == 0.0 {
                return Err(Error::InvalidInput(
                    "davies-bouldin undefined: coincident cluster centroids".into(),
                ));
            }
            let ratio = (scatters[i] + scatters[j]) / sep;
            if ratio > worst {
                worst = ratio;
            }
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Mean silhouette score over all points.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_inputs(points, labels)?;
    let d = PairDistances::compute(points)?;
    silhouette_from(&d, &cluster_members(labels), labels)
}

/// Dunn index: single-linkage separation over complete diameter.
pub fn dunn(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_inputs(points, labels)?;
    let d = PairDistances::compute(points)?;
    dunn_from(&d, &cluster_members(labels))
}

/// Davies-Bouldin index over cluster centroids.
pub fn davies_bouldin(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_inputs(points, labels)?;
    davies_bouldin_impl(points, &cluster_members(labels))
}

/// BetaCV: mean intra-cluster edge over mean inter-cluster edge.
pub fn beta_cv(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_inputs(points, labels)?;
    let d = PairDistances::compute(points)?;
    beta_cv_from(&d, &cluster_members(labels), labels)
}

/// Compute all four indices, sharing one pairwise-distance matrix.
///
/// Results are identical to calling the four index functions separately.
pub fn validity_report(points: &[Vec<f64>], labels: &[usize]) -> Result<ValidityReport> {
    check_inputs(points, labels)?;
    let members = cluster_members(labels);
    let d = PairDistances::compute(points)?;
    Ok(ValidityReport {
        silhouette: silhouette_from(&d, &members, labels)?,
        dunn: dunn_from(&d, &members)?,
        davies_bouldin: davies_bouldin_impl(points, &members)?,
        beta_cv: beta_cv_from(&d, &members, labels)?,
    })
}
