//! Greedy variance-reduction regression trees.
//!
//! Trees are grown without pruning: recursion stops only when a node is
//! pure, too small to split under `min_leaf`, or no split improves the
//! squared-error cost. Split-gain ties are broken toward the lowest feature
//! index, then the lowest threshold, by scanning candidates in ascending
//! order and keeping the first strict improvement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// A fitted tree: either a prediction leaf or a binary split
/// (`x[feature] <= threshold` goes left).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        /// Mean training target in this leaf.
        value: f64,
        /// Training rows that landed here.
        n: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    /// Number of leaves.
    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

/// Fit parameters for [`cart_fit`].
#[derive(Debug, Clone)]
pub struct CartOptions {
    /// Minimum rows on each side of every split (default 1: fully grown).
    pub min_leaf: usize,
    /// Candidate features per split; `None` considers all of them.
    pub max_features: Option<usize>,
    /// Seeds feature sampling; unused when `max_features` is `None`.
    pub seed: u64,
}

impl Default for CartOptions {
    fn default() -> Self {
        CartOptions {
            min_leaf: 1,
            max_features: None,
            seed: 0,
        }
    }
}

/// Fit a single regression tree on row-major features and targets.
pub fn cart_fit(rows: &[Vec<f64>], y: &[f64], options: &CartOptions) -> Result<TreeNode> {
    validate(rows, y)?;
    if options.min_leaf < 1 {
        return Err(Error::InvalidInput("min_leaf must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let node_rows: Vec<usize> = (0..rows.len()).collect();
    Ok(grow(
        rows,
        y,
        node_rows,
        options.min_leaf,
        options.max_features,
        &mut rng,
    ))
}

pub(crate) fn validate(rows: &[Vec<f64>], y: &[f64]) -> Result<()> {
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
    if p == 0 {
        return Err(Error::InvalidInput("rows have no features".into()));
    }
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
    Ok(())
}

/// Recursive builder shared with the forest (which passes its own rng so
/// per-split feature sampling stays on one deterministic stream per tree).
/// Recursion is depth-first, left child first, so rng draws happen in a
/// fixed order.
pub(crate) fn grow(
    rows: &[Vec<f64>],
    y: &[f64],
    node_rows: Vec<usize>,
    min_leaf: usize,
    max_features: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let n = node_rows.len();
    let mut sum = 0.0;
    for &i in &node_rows {
        sum += y[i];
    }
    let mean = sum / n as f64;
    let leaf = |value: f64| TreeNode::Leaf { value, n };

    let pure = node_rows.iter().all(|&i| y[i] == y[node_rows[0]]);
    if pure || n < 2 * min_leaf {
        return leaf(mean);
    }

    let p = rows[0].len();
    let candidates: Vec<usize> = match max_features {
        Some(m) => {
            let m = m.clamp(1, p);
            let mut sampled: Vec<usize> = rand::seq::index::sample(rng, p, m).into_vec();
            sampled.sort_unstable();
            sampled
        }
        None => (0..p).collect(),
    };

    // Parent squared-error cost, shared across features so candidate gains
    // are compared against one constant.
    let mut sum_sq = 0.0;
    for &i in &node_rows {
        sum_sq += y[i] * y[i];
    }
    let sse_parent = sum_sq - sum * sum / n as f64;

    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &feature in &candidates {
        pairs.clear();
        pairs.extend(node_rows.iter().map(|&i| (rows[i][feature], y[i])));
        pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for k in 1..n {
            let (x_prev, y_prev) = pairs[k - 1];
            left_sum += y_prev;
            left_sq += y_prev * y_prev;
            let x_next = pairs[k].0;
            if x_prev == x_next || k < min_leaf || n - k < min_leaf {
                continue;
            }
            let n_l = k as f64;
            let n_r = (n - k) as f64;
            let right_sum = sum - left_sum;
            let right_sq = sum_sq - left_sq;
            let sse_left = left_sq - left_sum * left_sum / n_l;
            let sse_right = right_sq - right_sum * right_sum / n_r;
            let gain = sse_parent - sse_left - sse_right;
            if gain > 0.0 && best.as_ref().is_none_or(|(g, _, _)| gain > *g) {
                best = Some((gain, feature, (x_prev + x_next) / 2.0));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        return leaf(mean);
    };
    let mut left_rows = Vec::new();
    let mut right_rows = Vec::new();
    for &i in &node_rows {
        if rows[i][feature] <= threshold {
            left_rows.push(i);
        } else {
            right_rows.push(i);
        }
    }
    let left = Box::new(grow(rows, y, left_rows, min_leaf, max_features, rng));
    let right = Box::new(grow(rows, y, right_rows, min_leaf, max_features, rng));
    TreeNode::Split {
        feature,
        threshold,
        left,
        right,
    }
}

/// Evaluate a tree at one feature vector.
pub fn predict_tree(node: &TreeNode, x: &[f64]) -> f64 {
    match node {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            if x[*feature] <= *threshold {
                predict_tree(left, x)
            } else {
                predict_tree(right, x)
            }
        }
    }
}
