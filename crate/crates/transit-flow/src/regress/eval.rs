//! Prediction error metrics: MAE, MSE, and MAPE.
//!
//! MAPE divides by the true value, so pairs with a zero truth are excluded
//! from it (never from MAE/MSE); the exclusion count is always reported, and
//! a MAPE over zero pairs is reported as absent rather than 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

use super::Target;

/// One evaluation of predictions against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mae: f64,
    pub mse: f64,
    /// Mean absolute percentage error, in percent; `None` when every truth
    /// value was zero.
    pub mape: Option<f64>,
    /// Pairs left out of MAPE because the truth was zero.
    pub n_excluded_zero_truth: usize,
}

/// Compute error metrics for paired predictions and truths.
pub fn evaluate(y_hat: &[f64], y_true: &[f64]) -> Result<EvalMetrics> {
    if y_hat.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    if y_hat.len() != y_true.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions but {} truths",
            y_hat.len(),
            y_true.len()
        )));
    }
    if y_hat.iter().chain(y_true).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "predictions and truths must be finite".into(),
        ));
    }
    let n = y_hat.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut pct_n = 0usize;
    let mut excluded = 0usize;
    for (&hat, &truth) in y_hat.iter().zip(y_true) {
        let err = hat - truth;
        abs_sum += err.abs();
        sq_sum += err * err;
        if truth == 0.0 {
            excluded += 1;
        } else {
            pct_sum += (err / truth).abs();
            pct_n += 1;
        }
    }
    let mape = if pct_n == 0 {
        None
    } else {
        Some(100.0 * pct_sum / pct_n as f64)
    };
    Ok(EvalMetrics {
        mae: abs_sum / n,
        mse: sq_sum / n,
        mape,
        n_excluded_zero_truth: excluded,
    })
}

/// One line of the metrics table: which target, which estimation method.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub target: Target,
    pub method: String,
    pub metrics: EvalMetrics,
}

/// Write the comparison table: `target,method,mse,mae,mape,n_excluded`.
/// An absent MAPE becomes an empty cell.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["target", "method", "mse", "mae", "mape", "n_excluded"])
        .map_err(|e| Error::csv(path, e))?;
    for row in rows {
        let mape = row.metrics.mape.map_or(String::new(), |v| v.to_string());
        w.write_record([
            row.target.to_string(),
            row.method.clone(),
            row.metrics.mse.to_string(),
            row.metrics.mae.to_string(),
            mape,
            row.metrics.n_excluded_zero_truth.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a metrics table written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::record(path, 1, format!("missing column `{name}`")))
    };
    let target_i = col("target")?;
    let method_i = col("method")?;
    let mse_i = col("mse")?;
    let mae_i = col("mae")?;
    let mape_i = col("mape")?;
    let excl_i = col("n_excluded")?;
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx as u64 + 2;
        let record = record.map_err(|e| Error::csv(path, e))?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::record(path, line, "short record"))
        };
        let parse_f = |raw: &str, name: &str| -> Result<f64> {
            raw.trim()
                .parse()
                .map_err(|_| Error::record(path, line, format!("bad {name} `{raw}`")))
        };
        let target: Target = field(target_i)?
            .trim()
            .parse()
            .map_err(|e: String| Error::record(path, line, e))?;
        let mape_raw = field(mape_i)?.trim();
        let mape = if mape_raw.is_empty() {
            None
        } else {
            Some(parse_f(mape_raw, "mape")?)
        };
        rows.push(MetricsRow {
            target,
            method: field(method_i)?.trim().to_string(),
            metrics: EvalMetrics {
                mae: parse_f(field(mae_i)?, "mae")?,
                mse: parse_f(field(mse_i)?, "mse")?,
                mape,
                n_excluded_zero_truth: field(excl_i)?
                    .trim()
                    .parse()
                    .map_err(|_| Error::record(path, line, "bad n_excluded"))?,
            },
        });
    }
    Ok(rows)
}
