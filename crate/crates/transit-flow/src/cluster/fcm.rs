//! Fuzzy c-means: soft clustering by alternating minimization of
//!
//! ```text
//! J = sum_j sum_i u_ij^m ||X_j - v_i||^2
//! ```
//!
//! where `u_ij` is point j's degree of membership in cluster i (rows sum
//! to 1), `v_i` the cluster centers, and the fuzzifier `m > 1` controls how
//! soft the boundaries are. The two update steps each minimize J with the
//! other block held fixed, so J is non-increasing across iterations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::par;
use crate::Result;

/// Fit parameters. Defaults match the artifact's two-cluster use.
#[derive(Debug, Clone)]
pub struct FcmOptions {
    /// Number of clusters.
    pub c: usize,
    /// Fuzzifier m (> 1). 2 is the usual choice.
    pub m: f64,
    pub seed: u64,
    pub max_iter: usize,
    /// Convergence requires max |Δu| < tol AND max center shift < tol.
    pub tol: f64,
}

impl Default for FcmOptions {
    fn default() -> Self {
        FcmOptions {
            c: 2,
            m: 2.0,
            seed: 0,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// Result of a fit on raw points (no feature semantics attached).
#[derive(Debug, Clone)]
pub struct FcmFit {
    /// N×C membership matrix; each row sums to 1.
    pub memberships: Vec<Vec<f64>>,
    /// C×p cluster centers.
    pub centers: Vec<Vec<f64>>,
    /// Final cost J.
    pub cost: f64,
    /// J after each iteration (non-increasing).
    pub cost_trace: Vec<f64>,
    pub n_iterations: usize,
}

fn check_dims(points: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = points.first() else {
        return Err(Error::InvalidInput("no points to cluster".into()));
    };
    let dim = first.len();
    if dim == 0 {
        return Err(Error::InvalidInput("zero-dimensional points".into()));
    }
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidInput("points have mixed dimensions".into()));
    }
    Ok(dim)
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Cost J evaluated at a given (memberships, centers) pair.
pub fn fcm_cost(
    points: &[Vec<f64>],
    memberships: &[Vec<f64>],
    centers: &[Vec<f64>],
    m: f64,
) -> Result<f64> {
    let dim = check_dims(points)?;
    if memberships.len() != points.len() {
        return Err(Error::InvalidInput(format!(
            "membership rows ({}) != points ({})",
            memberships.len(),
            points.len()
        )));
    }
    let c = centers.len();
    if c == 0 || memberships.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidInput(
            "membership columns do not match center count".into(),
        ));
    }
    if centers.iter().any(|v| v.len() != dim) {
        return Err(Error::InvalidInput("center dimension mismatch".into()));
    }
    let mut j = 0.0;
    for (x, u_row) in points.iter().zip(memberships) {
        for (u, v) in u_row.iter().zip(centers) {
            j += u.powf(m) * dist_sq(x, v);
        }
    }
    Ok(j)
}

/// Membership update: `u_ij = 1 / sum_k (d_ij / d_kj)^(2/(m-1))`.
///
/// A point at zero distance from one or more centers gets membership 1 split
/// equally among those centers, 0 elsewhere.
pub fn update_memberships(points: &[Vec<f64>], centers: &[Vec<f64>], m: f64) -> Vec<Vec<f64>> {
    let exponent = 2.0 / (m - 1.0);
    par::map_indexed(points, |x| {
        let d: Vec<f64> = centers.iter().map(|v| dist_sq(x, v).sqrt()).collect();
        let zero_hits = d.iter().filter(|&&di| di == 0.0).count();
        if zero_hits > 0 {
            let share = 1.0 / zero_hits as f64;
            return d
                .iter()
                .map(|&di| if di == 0.0 { share } else { 0.0 })
                .collect();
        }
        // Equivalent to the textbook ratio form but computed once per center:
        // u_ij = d_ij^-e / sum_k d_kj^-e.
        let inv: Vec<f64> = d.iter().map(|&di| di.powf(-exponent)).collect();
        let total: f64 = inv.iter().sum();
        inv.iter().map(|&w| w / total).collect()
    })
}

/// Center update: `v_i = sum_j u_ij^m X_j / sum_j u_ij^m`.
///
/// A degenerate cluster (all weights exactly zero) is re-seeded at the data
/// point farthest from the non-degenerate centers (max-min distance, lowest
/// index on ties) so the next membership update can repopulate it.
pub fn update_centers(
    points: &[Vec<f64>],
    memberships: &[Vec<f64>],
    m: f64,
) -> Result<Vec<Vec<f64>>> {
    let dim = check_dims(points)?;
    let c = memberships
        .first()
        .map(|r| r.len())
        .ok_or_else(|| Error::InvalidInput("empty membership matrix".into()))?;
    let mut centers: Vec<Option<Vec<f64>>> = Vec::with_capacity(c);
    for i in 0..c {
        let mut weight_sum = 0.0;
        let mut acc = vec![0.0; dim];
        for (x, u_row) in points.iter().zip(memberships) {
            let w = u_row[i].powf(m);
            weight_sum += w;
            for (a, xv) in acc.iter_mut().zip(x) {
                *a += w * xv;
            }
        }
        if weight_sum == 0.0 {
            centers.push(None);
        } else {
            for a in &mut acc {
                *a /= weight_sum;
            }
            centers.push(Some(acc));
        }
    }

    let live: Vec<Vec<f64>> = centers.iter().flatten().cloned().collect();
    if live.is_empty() {
        return Err(Error::Numeric(
            "all clusters degenerate in center update".into(),
        ));
    }
    let mut out = Vec::with_capacity(c);
    for center in centers {
        match center {
            Some(v) => out.push(v),
            None => {
                let mut best = (0usize, f64::NEG_INFINITY);
                for (j, x) in points.iter().enumerate() {
                    let nearest = live
                        .iter()
                        .map(|v| dist_sq(x, v))
                        .fold(f64::INFINITY, f64::min);
                    if nearest > best.1 {
                        best = (j, nearest);
                    }
                }
                out.push(points[best.0].clone());
            }
        }
    }
    Ok(out)
}

/// Run fuzzy c-means from a seeded random data-point initialization.
///
/// Requires at least `c` distinct points. Deterministic for a fixed seed,
/// bitwise identical with and without the `parallel` feature.
pub fn fit(points: &[Vec<f64>], options: &FcmOptions) -> Result<FcmFit> {
    check_dims(points)?;
    if options.c < 1 {
        return Err(Error::InvalidInput("need at least one cluster".into()));
    }
    if options.m <= 1.0 {
        return Err(Error::InvalidInput(format!(
            "fuzzifier m must be > 1 (got {})",
            options.m
        )));
    }

    // Distinct points in first-occurrence order; initialization samples from
    // these so two clusters can never start coincident.
    let mut distinct: Vec<usize> = Vec::new();
    'outer: for (j, x) in points.iter().enumerate() {
        for &d in &distinct {
            if points[d] == *x {
                continue 'outer;
            }
        }
        distinct.push(j);
    }
    if distinct.len() < options.c {
        return Err(Error::InvalidInput(format!(
            "need at least {} distinct points, found {}",
            options.c,
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let chosen = rand::seq::index::sample(&mut rng, distinct.len(), options.c);
    let mut centers: Vec<Vec<f64>> = chosen
        .iter()
        .map(|k| points[distinct[k]].clone())
        .collect();

    let mut memberships = update_memberships(points, &centers, options.m);
    let mut cost_trace = Vec::new();
    let mut n_iterations = 0;
    for _ in 0..options.max_iter {
        n_iterations += 1;
        let new_centers = update_centers(points, &memberships, options.m)?;
        let new_memberships = update_memberships(points, &new_centers, options.m);
        let cost = fcm_cost(points, &new_memberships, &new_centers, options.m)?;

        let du = max_abs_diff(&memberships, &new_memberships);
        let dv = max_abs_diff(&centers, &new_centers);
        memberships = new_memberships;
        centers = new_centers;
        cost_trace.push(cost);
        if du < options.tol && dv < options.tol {
            break;
        }
    }
    let cost = *cost_trace.last().expect("at least one iteration");
    Ok(FcmFit {
        memberships,
        centers,
        cost,
        cost_trace,
        n_iterations,
    })
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}
