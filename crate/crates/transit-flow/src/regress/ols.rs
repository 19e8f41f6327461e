//! Ordinary-least-squares baseline.
//!
//! Solves the normal equations with Gaussian elimination (partial pivoting).
//! A rank-deficient design matrix falls back to a tiny ridge penalty
//! (λ = 1e−8 on the diagonal) and flags the model, unless the caller
//! disables the fallback, in which case fitting fails.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

use super::forest::round_count;

const RIDGE_LAMBDA: f64 = 1e-8;
const PIVOT_TOL: f64 = 1e-10;

/// Fit parameters for [`ols_fit`].
#[derive(Debug, Clone)]
pub struct OlsOptions {
    pub ridge_fallback: bool,
}

impl Default for OlsOptions {
    fn default() -> Self {
        OlsOptions { ridge_fallback: true }
    }
}

/// A fitted linear model; `coefficients[0]` is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    pub coefficients: Vec<f64>,
    /// True when the normal equations were singular and the ridge fallback
    /// produced these coefficients.
    pub used_ridge: bool,
}

/// Fit by least squares. Requires at least `p + 1` rows for `p` features
/// (zero-width rows fit an intercept-only model).
pub fn ols_fit(rows: &[Vec<f64>], y: &[f64], options: &OlsOptions) -> Result<OlsModel> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if rows.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows but {} targets",
            rows.len(),
            y.len()
        )));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidInput("rows have mixed widths".into()));
    }
    if rows.iter().any(|r| r.iter().any(|v| !v.is_finite()))
        || y.iter().any(|v| !v.is_finite())
    {
        return Err(Error::InvalidInput(
            "features and targets must be finite".into(),
        ));
    }
    let w = p + 1;
    if rows.len() < w {
        return Err(Error::InvalidInput(format!(
            "need at least {w} rows for {p} features plus intercept, got {}",
            rows.len()
        )));
    }

    // Normal equations A c = b with A = X'X, b = X'y, intercept column first.
    let mut a = vec![vec![0.0f64; w]; w];
    let mut b = vec![0.0f64; w];
    for (row, &target) in rows.iter().zip(y) {
        let mut x = Vec::with_capacity(w);
        x.push(1.0);
        x.extend_from_slice(row);
        for i in 0..w {
            b[i] += x[i] * target;
            for j in 0..w {
                a[i][j] += x[i] * x[j];
            }
        }
    }

    if let Some(coefficients) = solve(a.clone(), b.clone()) {
        return Ok(OlsModel {
            coefficients,
            used_ridge: false,
        });
    }
    if !options.ridge_fallback {
        return Err(Error::Numeric(
            "singular normal equations and ridge fallback disabled".into(),
        ));
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += RIDGE_LAMBDA;
    }
    let coefficients = solve(a, b).ok_or_else(|| {
        Error::Numeric("normal equations singular even with ridge penalty".into())
    })?;
    Ok(OlsModel {
        coefficients,
        used_ridge: true,
    })
}

/// Gaussian elimination with partial pivoting; `None` on (near-)singularity.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let w = b.len();
    for col in 0..w {
        let pivot_row = (col..w)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot_row][col].abs() < PIVOT_TOL {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..w {
            let factor = a[row][col] / a[col][col];
            for k in col..w {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0f64; w];
    for col in (0..w).rev() {
        let mut acc = b[col];
        for k in col + 1..w {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

impl OlsModel {
    /// Linear prediction before clamping and rounding.
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        let mut acc = self.coefficients[0];
        for (c, v) in self.coefficients[1..].iter().zip(x) {
            acc += c * v;
        }
        acc
    }

    /// Count prediction with the same clamp-then-round-half-up rule as the
    /// forest.
    pub fn predict(&self, x: &[f64]) -> u64 {
        round_count(self.predict_raw(x))
    }
}
