//! Bootstrap-aggregated regression trees for count estimation.
//!
//! Each of the `n_tree` trees (default 100) trains on a size-N bootstrap
//! resample and samples `max(1, ⌊p/3⌋)` candidate features at every split.
//! Tree `t` runs on its own rng stream seeded `seed + t`, so trees can be
//! fitted in parallel while remaining byte-deterministic; the ensemble mean
//! is reduced in tree order for the same reason.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::par;
use crate::Result;

use super::cart::{self, predict_tree, TreeNode};
use super::Target;

/// Serialized model layout version.
pub const FOREST_FORMAT_VERSION: u32 = 1;

/// Fit parameters for [`rf_fit`].
#[derive(Debug, Clone)]
pub struct ForestOptions {
    pub n_tree: usize,
    pub min_leaf: usize,
    pub seed: u64,
    pub target: Target,
}

impl Default for ForestOptions {
    fn default() -> Self {
        ForestOptions {
            n_tree: 100,
            min_leaf: 1,
            seed: 0,
            target: Target::Onboard,
        }
    }
}

/// A fitted ensemble plus everything needed to reproduce or reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub target: Target,
    pub n_tree: usize,
    pub seed: u64,
    pub min_leaf: usize,
    /// Candidate features per split used during fitting.
    pub max_features: usize,
    /// Smallest / largest training target; every prediction stays inside.
    pub training_min: f64,
    pub training_max: f64,
    pub trees: Vec<TreeNode>,
}

/// Fit a random forest on row-major features and count targets.
pub fn rf_fit(rows: &[Vec<f64>], y: &[f64], options: &ForestOptions) -> Result<ForestModel> {
    cart::validate(rows, y)?;
    if rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 rows to fit a forest, got {}",
            rows.len()
        )));
    }
    if options.n_tree < 1 {
        return Err(Error::InvalidInput("n_tree must be at least 1".into()));
    }
    if options.min_leaf < 1 {
        return Err(Error::InvalidInput("min_leaf must be at least 1".into()));
    }
    let n = rows.len();
    let p = rows[0].len();
    let max_features = (p / 3).max(1);

    let trees: Vec<TreeNode> = par::map_range(options.n_tree, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(t as u64));
        let sample_rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let boot_rows: Vec<Vec<f64>> = sample_rows.iter().map(|&i| rows[i].clone()).collect();
        let boot_y: Vec<f64> = sample_rows.iter().map(|&i| y[i]).collect();
        cart::grow(
            &boot_rows,
            &boot_y,
            (0..n).collect(),
            options.min_leaf,
            Some(max_features),
            &mut rng,
        )
    });

    let mut training_min = f64::INFINITY;
    let mut training_max = f64::NEG_INFINITY;
    for &v in y {
        training_min = training_min.min(v);
        training_max = training_max.max(v);
    }

    Ok(ForestModel {
        format_version: FOREST_FORMAT_VERSION,
        target: options.target,
        n_tree: options.n_tree,
        seed: options.seed,
        min_leaf: options.min_leaf,
        max_features,
        training_min,
        training_max,
        trees,
    })
}

impl ForestModel {
    /// Ensemble mean before clamping and rounding.
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for tree in &self.trees {
            total += predict_tree(tree, x);
        }
        total / self.trees.len() as f64
    }

    /// Count prediction: clamp the mean at zero, then round half-up.
    pub fn predict(&self, x: &[f64]) -> u64 {
        round_count(self.predict_raw(x))
    }

    /// Write the model as a versioned JSON document.
    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    /// Load a model, rejecting unknown layout versions.
    pub fn load_json(path: &std::path::Path) -> Result<ForestModel> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ForestModel = serde_json::from_str(&body)?;
        if model.format_version != FOREST_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format version {} in {} (expected {})",
                model.format_version,
                path.display(),
                FOREST_FORMAT_VERSION
            )));
        }
        if model.trees.len() != model.n_tree || model.trees.is_empty() {
            return Err(Error::InvalidInput(format!(
                "model in {} declares {} trees but contains {}",
                path.display(),
                model.n_tree,
                model.trees.len()
            )));
        }
        Ok(model)
    }
}

/// Clamp at zero and round half-up (counts cannot be negative).
pub fn round_count(raw: f64) -> u64 {
    raw.max(0.0).round() as u64
}
