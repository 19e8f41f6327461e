//! Gaussian mixture baseline: EM with diagonal covariances.
//!
//! Serves as the comparison model for fuzzy c-means; responsibilities play
//! the role of memberships. Log-domain E-step (log-sum-exp) keeps small
//! responsibilities finite, and per-dimension variances are floored at
//! [`VARIANCE_FLOOR`] so repeated points cannot collapse a component.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::par;
use crate::Result;

/// Minimum per-dimension variance retained after each M-step.
pub const VARIANCE_FLOOR: f64 = 1e-6;

const LOG_2PI: f64 = 1.8378770664093453;

/// Fit parameters for [`fit`].
#[derive(Debug, Clone)]
pub struct GmmOptions {
    pub c: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Convergence: log-likelihood improvement below this stops EM.
    pub tol: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            c: 2,
            seed: 0,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// Fitted mixture on raw points.
#[derive(Debug, Clone)]
pub struct GmmFit {
    /// N×C responsibilities; each row sums to 1.
    pub responsibilities: Vec<Vec<f64>>,
    /// C×p component means.
    pub means: Vec<Vec<f64>>,
    /// C×p diagonal variances (each >= [`VARIANCE_FLOOR`]).
    pub variances: Vec<Vec<f64>>,
    /// Mixing weights, summing to 1.
    pub weights: Vec<f64>,
    /// Final total log-likelihood.
    pub log_likelihood: f64,
    /// Log-likelihood after each iteration (non-decreasing).
    pub ll_trace: Vec<f64>,
    pub n_iterations: usize,
}

/// Fit a diagonal-covariance Gaussian mixture with EM.
///
/// Initialization: means at `c` distinct data *indices* (values may repeat —
/// the variance floor keeps densities finite), variances at the per-dimension
/// data variance, uniform weights. Deterministic per seed.
pub fn fit(points: &[Vec<f64>], options: &GmmOptions) -> Result<GmmFit> {
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
    let n = points.len();
    let c = options.c;
    if c < 1 {
        return Err(Error::InvalidInput("need at least one component".into()));
    }
    if n < c {
        return Err(Error::InvalidInput(format!(
            "need at least {c} points for {c} components, got {n}"
        )));
    }

    // Per-dimension data variance for the initial spread.
    let mut data_var = vec![0.0f64; dim];
    {
        let mut mean = vec![0.0f64; dim];
        for p in points {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        for p in points {
            for d in 0..dim {
                let diff = p[d] - mean[d];
                data_var[d] += diff * diff;
            }
        }
        // Initial spread is the data variance shrunk well below the
        // between-cluster scale: with the full data variance both components
        // see nearly flat responsibilities and EM can stall on a symmetric
        // plateau before the sampled means drift apart. A sharp initial
        // variance makes the first E-step behave like a nearest-mean
        // assignment, which breaks that symmetry decisively.
        let shrink = (16 * c * c) as f64;
        for v in &mut data_var {
            *v = (*v / n as f64 / shrink).max(VARIANCE_FLOOR);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let chosen = rand::seq::index::sample(&mut rng, n, c);
    let mut means: Vec<Vec<f64>> = chosen.iter().map(|j| points[j].clone()).collect();
    let mut variances: Vec<Vec<f64>> = vec![data_var.clone(); c];
    let mut weights: Vec<f64> = vec![1.0 / c as f64; c];

    let mut responsibilities: Vec<Vec<f64>> = Vec::new();
    let mut ll_trace: Vec<f64> = Vec::new();
    let mut n_iterations = 0;

    for _ in 0..options.max_iter {
        n_iterations += 1;

        // E-step (parallel per point; each row is independent).
        let log_weights: Vec<f64> = weights.iter().map(|w| w.max(1e-300).ln()).collect();
        let e: Vec<(Vec<f64>, f64)> = par::map_indexed(points, |x| {
            let mut logp = vec![0.0f64; c];
            for i in 0..c {
                let mut lp = log_weights[i];
                for d in 0..dim {
                    let var = variances[i][d];
                    let diff = x[d] - means[i][d];
                    lp += -0.5 * (LOG_2PI + var.ln()) - diff * diff / (2.0 * var);
                }
                logp[i] = lp;
            }
            let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for lp in &mut logp {
                *lp = (*lp - max).exp();
                total += *lp;
            }
            let ll = max + total.ln();
            for lp in &mut logp {
                *lp /= total;
            }
            (logp, ll)
        });

        // Total log-likelihood reduced sequentially in point order so results
        // are identical across thread counts.
        let mut ll = 0.0;
        let mut resp = Vec::with_capacity(n);
        for (row, row_ll) in e {
            ll += row_ll;
            resp.push(row);
        }

        // M-step (sequential accumulation, fixed order).
        for i in 0..c {
            let mut nk = 0.0;
            let mut mean_acc = vec![0.0f64; dim];
            for (x, row) in points.iter().zip(&resp) {
                let r = row[i];
                nk += r;
                for (a, xv) in mean_acc.iter_mut().zip(x) {
                    *a += r * xv;
                }
            }
            let nk_safe = nk.max(1e-300);
            for a in &mut mean_acc {
                *a /= nk_safe;
            }
            let mut var_acc = vec![0.0f64; dim];
            for (x, row) in points.iter().zip(&resp) {
                let r = row[i];
                for d in 0..dim {
                    let diff = x[d] - mean_acc[d];
                    var_acc[d] += r * diff * diff;
                }
            }
            for v in &mut var_acc {
                *v = (*v / nk_safe).max(VARIANCE_FLOOR);
            }
            means[i] = mean_acc;
            variances[i] = var_acc;
            weights[i] = nk / n as f64;
        }

        responsibilities = resp;
        let improved = ll_trace.last().map_or(f64::INFINITY, |prev| ll - prev);
        ll_trace.push(ll);
        if improved.abs() < options.tol {
            break;
        }
    }

    let log_likelihood = *ll_trace.last().expect("at least one iteration");
    Ok(GmmFit {
        responsibilities,
        means,
        variances,
        weights,
        log_likelihood,
        ll_trace,
        n_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separates_blobs_across_seeds() {
        // Robustness to initialization: whichever two points seed the means
        // (even two from the same blob), EM must recover the blob structure.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut points = Vec::new();
        for _ in 0..50 {
            points.push(vec![rng.random::<f64>() * 0.2]);
        }
        for _ in 0..50 {
            points.push(vec![10.0 + rng.random::<f64>() * 0.2]);
        }
        for seed in 0..20u64 {
            let fit = fit(&points, &GmmOptions { seed, ..GmmOptions::default() }).unwrap();
            let hard: Vec<usize> = fit
                .responsibilities
                .iter()
                .map(|r| usize::from(r[1] > r[0]))
                .collect();
            let a_uniform = hard[..50].iter().all(|&h| h == hard[0]);
            let b_uniform = hard[50..].iter().all(|&h| h == hard[50]);
            assert!(
                a_uniform && b_uniform && hard[0] != hard[50],
                "seed {seed} failed to separate the blobs"
            );
        }
    }

    #[test]
    fn two_blobs_fully_separate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut points = Vec::new();
        for _ in 0..50 {
            points.push(vec![rng.random::<f64>() * 0.2]);
        }
        for _ in 0..50 {
            points.push(vec![10.0 + rng.random::<f64>() * 0.2]);
        }
        let fit = fit(&points, &GmmOptions { seed: 4, ..GmmOptions::default() }).unwrap();
        let anchor = usize::from(fit.responsibilities[0][1] > fit.responsibilities[0][0]);
        for (j, r) in fit.responsibilities.iter().enumerate() {
            let hard = usize::from(r[1] > r[0]);
            if j < 50 {
                assert_eq!(hard, anchor, "point {j}");
            } else {
                assert_ne!(hard, anchor, "point {j}");
            }
        }
    }

    #[test]
    fn repeated_single_point_stays_finite() {
        let points = vec![vec![3.0, -2.0]; 20];
        let fit = fit(&points, &GmmOptions { seed: 0, ..GmmOptions::default() }).unwrap();
        for row in &fit.responsibilities {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|r| r.is_finite()));
        }
        assert!(fit.log_likelihood.is_finite());
        for comp in &fit.variances {
            assert!(comp.iter().all(|&v| v >= VARIANCE_FLOOR));
        }
    }

    #[test]
    fn log_likelihood_non_decreasing_on_random_data() {
        let mut data_rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..20 {
            let points: Vec<Vec<f64>> = (0..30)
                .map(|_| vec![data_rng.random::<f64>() * 3.0, data_rng.random::<f64>()])
                .collect();
            let fit = fit(&points, &GmmOptions { seed, ..GmmOptions::default() }).unwrap();
            for w in fit.ll_trace.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                    "log-likelihood decreased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let opts = GmmOptions { seed: 12, ..GmmOptions::default() };
        let a = fit(&points, &opts).unwrap();
        let b = fit(&points, &opts).unwrap();
        assert_eq!(a.responsibilities, b.responsibilities);
        assert_eq!(a.ll_trace, b.ll_trace);
    }

    #[test]
    fn rejects_fewer_points_than_components() {
        assert!(fit(&[vec![1.0]], &GmmOptions::default()).is_err());
    }
}
