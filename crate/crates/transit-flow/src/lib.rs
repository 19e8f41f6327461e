//! Estimate transit ridership flow and origin-destination (O-D) patterns from
//! roadside Wi-Fi / Bluetooth MAC sensing logs and a synchronized GPS trace.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`ingest`] — parse sensing / GPS / station / ground-truth CSVs and join
//!    every detection to its nearest GPS fix.
//! 2. [`features`] — collapse per-detection rows into one feature vector per
//!    device (detection count, dwell, RSSI, distance and speed statistics).
//! 3. [`cluster`] — separate passenger from non-passenger devices with fuzzy
//!    c-means (primary) or a Gaussian mixture (baseline), plus the
//!    rule-of-thumb threshold filters in [`filters`].
//! 4. [`metrics`] — internal cluster validity indices (silhouette, Dunn,
//!    Davies-Bouldin, BetaCV) for comparing partitions without labels.
//! 5. [`ridership`] — map each passenger device to boarding / alighting stops
//!    and build stop-level counts plus the O-D matrix.
//! 6. [`regress`] — calibrate detected counts to true ridership with a random
//!    forest (primary) or ordinary least squares (baseline), scored by
//!    MAE / MSE / MAPE in [`regress::eval`].
//!
//! [`simgen`] generates deterministic synthetic scenarios with known
//! per-device labels and per-stop truth, used for end-to-end validation.
//! [`pipeline`] wires everything into a single reproducible run that writes a
//! report directory.
//!
//! With the default `parallel` feature the per-device and per-tree inner loops
//! run on rayon; the sequential fallback (`--no-default-features`) produces
//! bitwise-identical output.

pub mod cluster;
pub mod error;
pub mod features;
pub mod filters;
pub mod ingest;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod regress;
pub mod ridership;
pub mod simgen;
pub mod types;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
