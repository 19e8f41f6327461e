//! End-to-end orchestration: configuration, stage wiring, and the
//! deterministic report directory.
//!
//! The flow mirrors the three analysis steps — feature extraction per
//! device, passenger/non-passenger separation, and per-stop ridership
//! estimation — and writes every result as CSV/JSON plus presentation-only
//! SVG charts. Identical configuration and seeds produce byte-identical
//! output: nothing in the report depends on wall-clock time, filesystem
//! order, or thread schedule.

pub mod plot;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::cluster::{
    device_label_map, fcm_partition, gmm_partition, feature_matrix, write_labels_csv,
    write_meta_json, DeviceLabel, FcmOptions, GmmOptions, LabelRow, PartitionMeta, Standardizer,
};
use crate::error::Error;
use crate::features::{
    extract_features, write_features_csv, ExtractOptions, ExtractReport, MacFeatureVector,
    DURATION_IDX,
};
use crate::filters::{fm1_run, fm2_run, EndpointDistanceMode, Fm1Config, Fm2Config};
use crate::ingest::{load_trip, LoadOptions, LoadReport, TripDataset};
use crate::metrics::{validity_report, ValidityReport};
use crate::regress::{
    evaluate, ols_fit, rf_fit, train_test_split, write_metrics_csv, ForestModel, ForestOptions,
    MetricsRow, OlsOptions, Target,
};
use crate::ridership::{
    assign_stops, build_od, station_stop_seqs, stop_counts, write_od_csv, write_stop_counts_csv,
    AssignmentOptions, AssignmentReport, OdMatrix, StopRecord,
};
use crate::simgen::{read_class_labels_csv, score_separation, SeparationScores};
use crate::types::{DeviceClass, Protocol};
use crate::Result;

/// On-disk report layout revision.
pub const REPORT_FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Flat key-value configuration files
// ---------------------------------------------------------------------------

/// A parsed flat configuration file: `key = value` lines with dotted section
/// prefixes, `#` comments, and blank lines. Order is preserved for echoing;
/// duplicate keys are rejected rather than silently last-wins.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    pairs: Vec<(String, String)>,
}

impl KvConfig {
    pub fn parse_str(text: &str) -> Result<KvConfig> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    i + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}`",
                    i + 1
                )));
            }
            pairs.push((key.to_string(), value.to_string()));
        }
        Ok(KvConfig { pairs })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<KvConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KvConfig::parse_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "bad value `{other}` for `{key}`: expected `true` or `false`"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Method names
// ---------------------------------------------------------------------------

/// Passenger/non-passenger separation back-ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeparationMethod {
    /// Fuzzy c-means clustering on the standardized feature vectors.
    Fcm,
    /// Two-component Gaussian mixture fit by expectation-maximization.
    Gmm,
    /// Three-rule threshold filter (detection count, duration, endpoint distance).
    Fm1,
    /// Four-rule threshold filter (duration, RSSI percentile, travel distance, density).
    Fm2,
}

impl SeparationMethod {
    pub const ALL: [SeparationMethod; 4] = [
        SeparationMethod::Fcm,
        SeparationMethod::Gmm,
        SeparationMethod::Fm1,
        SeparationMethod::Fm2,
    ];
}

impl fmt::Display for SeparationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeparationMethod::Fcm => "fcm",
            SeparationMethod::Gmm => "gmm",
            SeparationMethod::Fm1 => "fm1",
            SeparationMethod::Fm2 => "fm2",
        })
    }
}

impl FromStr for SeparationMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fcm" => Ok(SeparationMethod::Fcm),
            "gmm" => Ok(SeparationMethod::Gmm),
            "fm1" => Ok(SeparationMethod::Fm1),
            "fm2" => Ok(SeparationMethod::Fm2),
            other => Err(format!(
                "unknown separation method `{other}` (expected fcm, gmm, fm1, or fm2)"
            )),
        }
    }
}

/// Ridership regression back-ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionMethod {
    Rf,
    Ols,
}

impl fmt::Display for RegressionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegressionMethod::Rf => "rf",
            RegressionMethod::Ols => "ols",
        })
    }
}

impl FromStr for RegressionMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rf" => Ok(RegressionMethod::Rf),
            "ols" => Ok(RegressionMethod::Ols),
            other => Err(format!(
                "unknown regression method `{other}` (expected rf or ols)"
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

/// Input files of one run. `truth` enables regression training and error
/// metrics; `labels` (true device classes) enables separation scoring.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InputPaths {
    pub sensing: PathBuf,
    pub gps: PathBuf,
    pub stations: PathBuf,
    pub truth: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

/// Everything a full run needs, assembled from a [`KvConfig`] and defaults.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input: InputPaths,
    pub separation: SeparationMethod,
    pub regression: RegressionMethod,
    pub targets: Vec<Target>,
    pub seed: u64,
    pub test_fraction: f64,
    /// Run the {fcm, fm1, fm2} × {rf, ols} grid instead of the single
    /// configured method pair.
    pub compare: bool,
    pub load: LoadOptions,
    pub extract: ExtractOptions,
    pub fcm: FcmOptions,
    pub gmm: GmmOptions,
    pub fm1: Fm1Config,
    pub fm2: Fm2Config,
    pub forest: ForestOptions,
    pub ols: OlsOptions,
    pub assign: AssignmentOptions,
    /// The raw key-value pairs this configuration was built from, in file
    /// order; echoed into the manifest so a run can be reproduced.
    pub echo: Vec<(String, String)>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: InputPaths::default(),
            separation: SeparationMethod::Fcm,
            regression: RegressionMethod::Rf,
            targets: Target::ALL.to_vec(),
            seed: 0,
            test_fraction: 0.25,
            compare: false,
            load: LoadOptions::default(),
            extract: ExtractOptions::default(),
            fcm: FcmOptions::default(),
            gmm: GmmOptions::default(),
            fm1: Fm1Config::default(),
            fm2: Fm2Config::default(),
            forest: ForestOptions::default(),
            ols: OlsOptions::default(),
            assign: AssignmentOptions::default(),
            echo: Vec::new(),
        }
    }
}

fn parse_targets(key: &str, value: &str) -> Result<Vec<Target>> {
    let mut out: Vec<Target> = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(Error::Config(format!(
                "bad value `{value}` for `{key}`: empty target name"
            )));
        }
        let target: Target = part
            .parse()
            .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))?;
        if out.contains(&target) {
            return Err(Error::Config(format!(
                "bad value `{value}` for `{key}`: duplicate target `{part}`"
            )));
        }
        out.push(target);
    }
    Ok(out)
}

fn parse_endpoint_mode(key: &str, value: &str) -> Result<EndpointDistanceMode> {
    match value {
        "both" => Ok(EndpointDistanceMode::Both),
        "either" => Ok(EndpointDistanceMode::Either),
        other => Err(Error::Config(format!(
            "bad value `{other}` for `{key}`: expected `both` or `either`"
        ))),
    }
}

impl PipelineConfig {
    /// Build from a parsed configuration file; every key must be known.
    pub fn from_kv(kv: &KvConfig) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        for (key, value) in kv.pairs() {
            cfg.apply_kv(key, value)?;
        }
        cfg.echo = kv.pairs().to_vec();
        Ok(cfg)
    }

    /// Apply a single dotted key. Unknown keys are configuration errors.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input.sensing" => self.input.sensing = PathBuf::from(value),
            "input.gps" => self.input.gps = PathBuf::from(value),
            "input.stations" => self.input.stations = PathBuf::from(value),
            "input.truth" => self.input.truth = Some(PathBuf::from(value)),
            "input.labels" => self.input.labels = Some(PathBuf::from(value)),
            "pipeline.separation" => self.separation = parse_value(key, value)?,
            "pipeline.regression" => self.regression = parse_value(key, value)?,
            "pipeline.targets" => self.targets = parse_targets(key, value)?,
            "pipeline.seed" => self.seed = parse_value(key, value)?,
            "pipeline.test_fraction" => self.test_fraction = parse_value(key, value)?,
            "pipeline.compare" => self.compare = parse_bool(key, value)?,
            "ingest.gps_join_tolerance_s" => {
                self.load.gps_join_tolerance_s = parse_value(key, value)?
            }
            "features.speed_cap_mps" => self.extract.speed_cap_mps = parse_value(key, value)?,
            "fcm.m" => self.fcm.m = parse_value(key, value)?,
            "fcm.max_iter" => self.fcm.max_iter = parse_value(key, value)?,
            "fcm.tol" => self.fcm.tol = parse_value(key, value)?,
            "gmm.max_iter" => self.gmm.max_iter = parse_value(key, value)?,
            "gmm.tol" => self.gmm.tol = parse_value(key, value)?,
            "fm1.wifi_min_detections" => self.fm1.wifi_min_detections = parse_value(key, value)?,
            "fm1.bt_min_detections" => self.fm1.bt_min_detections = parse_value(key, value)?,
            "fm1.bt_count_inclusive" => self.fm1.bt_count_inclusive = parse_bool(key, value)?,
            "fm1.min_duration_s" => self.fm1.min_duration_s = parse_value(key, value)?,
            "fm1.wifi_max_endpoint_dist_m" => {
                self.fm1.wifi_max_endpoint_dist_m = parse_value(key, value)?
            }
            "fm1.bt_max_endpoint_dist_m" => {
                self.fm1.bt_max_endpoint_dist_m = parse_value(key, value)?
            }
            "fm1.endpoint_mode" => self.fm1.endpoint_mode = parse_endpoint_mode(key, value)?,
            "fm2.min_duration_s" => self.fm2.min_duration_s = parse_value(key, value)?,
            "fm2.rssi_percentile" => self.fm2.rssi_percentile = parse_value(key, value)?,
            "fm2.min_travel_m" => self.fm2.min_travel_m = parse_value(key, value)?,
            "fm2.min_detections_per_mile" => {
                self.fm2.min_detections_per_mile = parse_value(key, value)?
            }
            "fm2.station_radius_m" => self.fm2.station_radius_m = parse_value(key, value)?,
            "rf.n_tree" => self.forest.n_tree = parse_value(key, value)?,
            "rf.min_leaf" => self.forest.min_leaf = parse_value(key, value)?,
            "ols.ridge_fallback" => self.ols.ridge_fallback = parse_bool(key, value)?,
            "assign.max_station_dist_m" => {
                self.assign.max_station_dist_m = Some(parse_value(key, value)?)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown configuration key `{other}`"
                )))
            }
        }
        Ok(())
    }

    /// Override the base seed (command-line `--seed` beats the file), keeping
    /// the echo consistent so the manifest reproduces the override.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        match self.echo.iter_mut().find(|(k, _)| k == "pipeline.seed") {
            Some(pair) => pair.1 = seed.to_string(),
            None => self.echo.push(("pipeline.seed".to_string(), seed.to_string())),
        }
    }

    /// Check the assembled configuration before running.
    pub fn validate(&self) -> Result<()> {
        for (key, path) in [
            ("input.sensing", &self.input.sensing),
            ("input.gps", &self.input.gps),
            ("input.stations", &self.input.stations),
        ] {
            if path.as_os_str().is_empty() {
                return Err(Error::Config(format!("missing required key `{key}`")));
            }
        }
        if self.targets.is_empty() {
            return Err(Error::Config("pipeline.targets must not be empty".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "pipeline.test_fraction must lie strictly between 0 and 1, got {}",
                self.test_fraction
            )));
        }
        if self.fcm.m <= 1.0 {
            return Err(Error::Config(format!(
                "fcm.m must exceed 1, got {}",
                self.fcm.m
            )));
        }
        for (key, v) in [
            ("fcm.tol", self.fcm.tol),
            ("gmm.tol", self.gmm.tol),
            ("ingest.gps_join_tolerance_s", self.load.gps_join_tolerance_s),
            ("features.speed_cap_mps", self.extract.speed_cap_mps),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        for (key, v) in [
            ("fcm.max_iter", self.fcm.max_iter),
            ("gmm.max_iter", self.gmm.max_iter),
            ("rf.n_tree", self.forest.n_tree),
            ("rf.min_leaf", self.forest.min_leaf),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be at least 1")));
            }
        }
        Ok(())
    }

    /// The separation × regression grid this run covers, in report order.
    pub fn methods(&self) -> (Vec<SeparationMethod>, Vec<RegressionMethod>) {
        if self.compare {
            (
                vec![
                    SeparationMethod::Fcm,
                    SeparationMethod::Fm1,
                    SeparationMethod::Fm2,
                ],
                vec![RegressionMethod::Rf, RegressionMethod::Ols],
            )
        } else {
            (vec![self.separation], vec![self.regression])
        }
    }
}

/// Seeds handed to the individual stages, derived from the base seed so the
/// stages never share a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DerivedSeeds {
    pub clustering: u64,
    pub forest: u64,
    pub split: u64,
}

impl DerivedSeeds {
    pub fn from_base(seed: u64) -> DerivedSeeds {
        DerivedSeeds {
            clustering: seed,
            forest: seed.wrapping_add(1),
            split: seed.wrapping_add(2),
        }
    }
}

// ---------------------------------------------------------------------------
// Stage runners
// ---------------------------------------------------------------------------

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "missing input file: {}",
            path.display()
        )))
    }
}

/// Loaded trip plus per-device feature vectors.
#[derive(Debug, Clone)]
pub struct ExtractStage {
    pub trip: TripDataset,
    pub load_report: LoadReport,
    pub vectors: Vec<MacFeatureVector>,
    pub extract_report: ExtractReport,
}

/// Ingest the input files and compute one feature vector per device.
pub fn run_extract(
    input: &InputPaths,
    load: &LoadOptions,
    extract: &ExtractOptions,
) -> Result<ExtractStage> {
    require_file(&input.sensing)?;
    require_file(&input.gps)?;
    require_file(&input.stations)?;
    if let Some(p) = &input.truth {
        require_file(p)?;
    }
    if let Some(p) = &input.labels {
        require_file(p)?;
    }
    let (trip, load_report) = load_trip(
        &input.sensing,
        &input.gps,
        &input.stations,
        input.truth.as_deref(),
        load,
    )?;
    let (vectors, extract_report) = extract_features(&trip, extract)?;
    Ok(ExtractStage {
        trip,
        load_report,
        vectors,
        extract_report,
    })
}

/// Labels plus quality measures for one separation method.
#[derive(Debug, Clone)]
pub struct SeparationOutcome {
    pub method: SeparationMethod,
    /// One label per feature vector, same order.
    pub labels: Vec<DeviceLabel>,
    /// Present for the clustering methods only.
    pub meta: Option<PartitionMeta>,
    pub validity: Option<ValidityReport>,
    /// Why validity is absent, when it is.
    pub validity_note: Option<String>,
}

/// Internal validity indices of a binary device partition, computed in the
/// same standardized feature space the clustering methods operate in. A
/// degenerate partition (everything in one class) yields `None` plus a note.
pub fn partition_validity(
    vectors: &[MacFeatureVector],
    labels: &[DeviceLabel],
) -> Result<(Option<ValidityReport>, Option<String>)> {
    let assignments: Vec<usize> = labels
        .iter()
        .map(|l| usize::from(l.label != DeviceClass::Passenger))
        .collect();
    let n_passenger = assignments.iter().filter(|&&a| a == 0).count();
    if n_passenger == 0 || n_passenger == assignments.len() {
        return Ok((
            None,
            Some(format!(
                "validity indices undefined: single-class partition ({n_passenger} of {} devices labeled passenger)",
                assignments.len()
            )),
        ));
    }
    let matrix = feature_matrix(vectors);
    let (_, standardized) = Standardizer::fit_transform(&matrix)?;
    match validity_report(&standardized, &assignments) {
        Ok(report) => Ok((Some(report), None)),
        Err(e) => Ok((None, Some(format!("validity indices unavailable: {e}")))),
    }
}

/// Run one separation method over the feature vectors.
pub fn run_separation(
    vectors: &[MacFeatureVector],
    method: SeparationMethod,
    cfg: &PipelineConfig,
    clustering_seed: u64,
) -> Result<SeparationOutcome> {
    let (labels, meta) = match method {
        SeparationMethod::Fcm => {
            let mut options = cfg.fcm.clone();
            options.seed = clustering_seed;
            let partition = fcm_partition(vectors, &options, DURATION_IDX)?;
            (partition.labels, Some(partition.meta))
        }
        SeparationMethod::Gmm => {
            let mut options = cfg.gmm.clone();
            options.seed = clustering_seed;
            let partition = gmm_partition(vectors, &options, DURATION_IDX)?;
            (partition.labels, Some(partition.meta))
        }
        SeparationMethod::Fm1 => (fm1_run(vectors, &cfg.fm1), None),
        SeparationMethod::Fm2 => (fm2_run(vectors, &cfg.fm2)?, None),
    };
    let (validity, validity_note) = partition_validity(vectors, &labels)?;
    Ok(SeparationOutcome {
        method,
        labels,
        meta,
        validity,
        validity_note,
    })
}

/// Stop assignment, O-D matrix, and per-stop MAC counts for one labeling.
#[derive(Debug, Clone)]
pub struct CountsStage {
    pub assignment_report: AssignmentReport,
    pub od: OdMatrix,
    pub records: Vec<StopRecord>,
}

/// Resolve passenger devices to stop pairs and aggregate per-stop counts.
/// Filtering method 2 carries its own station-radius rule; other methods use
/// the configured assignment options unchanged.
pub fn counts_options(method: SeparationMethod, cfg: &PipelineConfig) -> AssignmentOptions {
    if method == SeparationMethod::Fm2 {
        AssignmentOptions {
            max_station_dist_m: Some(cfg.fm2.station_radius_m),
        }
    } else {
        cfg.assign
    }
}

pub fn run_counts(
    trip: &TripDataset,
    labels: &[DeviceLabel],
    options: &AssignmentOptions,
) -> Result<CountsStage> {
    let (assignments, assignment_report) = assign_stops(trip, labels, options)?;
    let stops = station_stop_seqs(&trip.stations)?;
    let od = build_od(&assignments, &stops)?;
    let records = stop_counts(trip, &od)?;
    Ok(CountsStage {
        assignment_report,
        od,
        records,
    })
}

/// One per-stop, per-target model output.
#[derive(Debug, Clone, PartialEq)]
pub struct StopEstimate {
    pub stop_seq: u32,
    pub target: Target,
    pub mac_count: u64,
    pub truth: Option<i64>,
    pub estimate_raw: f64,
    /// Rounded, non-negative count — the deliverable figure.
    pub estimate: u64,
}

/// Everything the regression stage produced for one method pair.
#[derive(Debug, Clone, Default)]
pub struct RegressionOutcome {
    pub estimates: Vec<StopEstimate>,
    pub metrics: Vec<MetricsRow>,
    /// Fitted forests (one per target) when the back-end was `rf`.
    pub forests: Vec<ForestModel>,
    pub n_train: usize,
    pub n_test: usize,
    pub notices: Vec<String>,
}

/// Train per-target models on a seeded stop split and predict every stop.
///
/// Requires ground-truth counts on the records; without truth the outcome
/// carries a notice and no estimates (there is nothing to train on).
pub fn run_regression(
    records: &[StopRecord],
    method_name: &str,
    regression: RegressionMethod,
    targets: &[Target],
    forest_base: &ForestOptions,
    ols_options: &OlsOptions,
    forest_seed: u64,
    split_seed: u64,
    test_fraction: f64,
) -> Result<RegressionOutcome> {
    let mut outcome = RegressionOutcome::default();
    if records.is_empty() {
        outcome
            .notices
            .push(format!("{method_name}: no stops to estimate"));
        return Ok(outcome);
    }
    if records.iter().any(|r| r.truth.is_none()) {
        outcome.notices.push(format!(
            "{method_name}: ground truth absent; regression estimates and error metrics omitted"
        ));
        return Ok(outcome);
    }

    let n = records.len();
    let (train_idx, test_idx) = train_test_split(n, test_fraction, split_seed)?;
    outcome.n_train = train_idx.len();
    outcome.n_test = test_idx.len();
    if test_idx.is_empty() {
        outcome.notices.push(format!(
            "{method_name}: test split empty at test_fraction {test_fraction}; error metrics omitted"
        ));
    }

    for &target in targets {
        let rows: Vec<Vec<f64>> = records
            .iter()
            .map(|r| r.regressors_for(target).features().to_vec())
            .collect();
        let truth: Vec<f64> = records
            .iter()
            .map(|r| r.truth_count(target).expect("checked above") as f64)
            .collect();

        let train_rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| rows[i].clone()).collect();
        let train_y: Vec<f64> = train_idx.iter().map(|&i| truth[i]).collect();

        let predict: Box<dyn Fn(&[f64]) -> (f64, u64)> = match regression {
            RegressionMethod::Rf => {
                let options = ForestOptions {
                    target,
                    seed: forest_seed,
                    ..*forest_base
                };
                let model = rf_fit(&train_rows, &train_y, &options)?;
                outcome.forests.push(model.clone());
                Box::new(move |x| (model.predict_raw(x), model.predict(x)))
            }
            RegressionMethod::Ols => {
                let model = ols_fit(&train_rows, &train_y, ols_options)?;
                Box::new(move |x| (model.predict_raw(x), model.predict(x)))
            }
        };

        if !test_idx.is_empty() {
            let y_hat: Vec<f64> = test_idx.iter().map(|&i| predict(&rows[i]).1 as f64).collect();
            let y_true: Vec<f64> = test_idx.iter().map(|&i| truth[i]).collect();
            outcome.metrics.push(MetricsRow {
                target,
                method: method_name.to_string(),
                metrics: evaluate(&y_hat, &y_true)?,
            });
        }

        for (record, x) in records.iter().zip(&rows) {
            let (raw, rounded) = predict(x);
            outcome.estimates.push(StopEstimate {
                stop_seq: record.stop_seq,
                target,
                mac_count: record.mac_count(target),
                truth: record.truth_count(target),
                estimate_raw: raw,
                estimate: rounded,
            });
        }
    }
    Ok(outcome)
}

/// Predict every stop with already-fitted forests (no training, no split).
/// Error metrics cover all stops when truth is present.
pub fn run_regression_with_models(
    records: &[StopRecord],
    models: &[ForestModel],
    method_name: &str,
) -> Result<RegressionOutcome> {
    let mut outcome = RegressionOutcome::default();
    if models.is_empty() {
        return Err(Error::InvalidInput("no models supplied".into()));
    }
    let has_truth = !records.is_empty() && records.iter().all(|r| r.truth.is_some());
    outcome.n_test = if has_truth { records.len() } else { 0 };
    outcome.notices.push(format!(
        "{method_name}: pretrained models; metrics cover every stop rather than a held-out split"
    ));
    for model in models {
        let target = model.target;
        if has_truth {
            let y_hat: Vec<f64> = records
                .iter()
                .map(|r| model.predict(&r.regressors_for(target).features()) as f64)
                .collect();
            let y_true: Vec<f64> = records
                .iter()
                .map(|r| r.truth_count(target).expect("has_truth") as f64)
                .collect();
            outcome.metrics.push(MetricsRow {
                target,
                method: method_name.to_string(),
                metrics: evaluate(&y_hat, &y_true)?,
            });
        }
        for record in records {
            let x = record.regressors_for(target).features();
            outcome.estimates.push(StopEstimate {
                stop_seq: record.stop_seq,
                target,
                mac_count: record.mac_count(target),
                truth: record.truth_count(target),
                estimate_raw: model.predict_raw(&x),
                estimate: model.predict(&x),
            });
        }
    }
    Ok(outcome)
}

/// Match label-file rows to the devices of a trip. The labels export keys
/// rows by MAC alone; the trip supplies the protocol(s) each MAC was sensed
/// on. A labeled MAC with no detections in the trip is an error.
pub fn labels_for_trip(rows: &[LabelRow], trip: &TripDataset) -> Result<Vec<DeviceLabel>> {
    let mut protocols: BTreeMap<&str, BTreeSet<Protocol>> = BTreeMap::new();
    for record in &trip.records {
        protocols
            .entry(record.mac.as_str())
            .or_default()
            .insert(record.protocol);
    }
    let mut out = Vec::new();
    for row in rows {
        let Some(found) = protocols.get(row.mac.as_str()) else {
            return Err(Error::InvalidInput(format!(
                "labeled device {} has no detections in this trip",
                row.mac
            )));
        };
        for &protocol in found {
            out.push(DeviceLabel {
                mac: row.mac.clone(),
                protocol,
                u_passenger: row.u_passenger,
                u_non_passenger: row.u_non_passenger,
                label: row.label,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

/// Serialize as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write per-stop estimates: `stop_seq,target,mac_count,truth,estimate_raw,estimate`.
/// The truth cell is empty when no ground truth was attached.
pub fn write_estimates_csv(path: &Path, estimates: &[StopEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["stop_seq", "target", "mac_count", "truth", "estimate_raw", "estimate"])
        .map_err(|e| Error::csv(path, e))?;
    for e in estimates {
        w.write_record([
            e.stop_seq.to_string(),
            e.target.to_string(),
            e.mac_count.to_string(),
            e.truth.map_or(String::new(), |t| t.to_string()),
            format!("{:.6}", e.estimate_raw),
            e.estimate.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    format_version: u32,
    tool_version: &'a str,
    command: &'a str,
    seed: u64,
    derived_seeds: DerivedSeeds,
    /// Raw configuration pairs in file order; replaying them against the
    /// same tool version reproduces this run byte for byte.
    config: &'a [(String, String)],
}

/// Per-method section of the run summary.
#[derive(Debug, Clone, Serialize)]
pub struct SeparationSummary {
    pub method: String,
    pub n_passenger: usize,
    pub n_non_passenger: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validity: Option<ValidityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<SeparationScores>,
    pub assignment: AssignmentReport,
    /// Total O-D trips (equals assigned devices).
    pub od_total_trips: u64,
}

/// Per method-pair section of the run summary.
#[derive(Debug, Clone, Serialize)]
pub struct EstimationSummary {
    pub separation: String,
    pub regression: String,
    pub n_train_stops: usize,
    pub n_test_stops: usize,
    pub metrics: Vec<MetricSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricSummary {
    pub target: String,
    pub mse: f64,
    pub mae: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mape_percent: Option<f64>,
    pub n_excluded_zero_truth: usize,
}

/// The machine-readable description of a full run; `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub format_version: u32,
    pub tool_version: String,
    pub trip_id: String,
    pub seed: u64,
    pub derived_seeds: DerivedSeeds,
    /// Configuration echo, sorted by key.
    pub config: BTreeMap<String, String>,
    pub load: LoadReport,
    pub extract: ExtractReport,
    pub n_stops: usize,
    pub n_devices: usize,
    pub separations: Vec<SeparationSummary>,
    pub estimations: Vec<EstimationSummary>,
    pub notices: Vec<String>,
    /// Files written alongside this summary, relative to the report
    /// directory, sorted.
    pub files: Vec<String>,
}

fn metric_summaries(rows: &[MetricsRow]) -> Vec<MetricSummary> {
    rows.iter()
        .map(|row| MetricSummary {
            target: row.target.to_string(),
            mse: row.metrics.mse,
            mae: row.metrics.mae,
            mape_percent: row.metrics.mape,
            n_excluded_zero_truth: row.metrics.n_excluded_zero_truth,
        })
        .collect()
}

const COLOR_TRUTH: &str = "#2a7de1";
const COLOR_MAC: &str = "#888888";
const COLOR_ESTIMATE: &str = "#d1495b";
const TARGET_COLORS: [(&str, &str); 3] = [
    ("onboard", "#d1495b"),
    ("boarding", "#2a9d8f"),
    ("alighting", "#e9a820"),
];

fn onboard_line_svg(
    records: &[StopRecord],
    estimates: &[StopEstimate],
    combo: &str,
) -> String {
    let truth: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| {
            r.truth_count(Target::Onboard)
                .map(|t| (f64::from(r.stop_seq), t as f64))
        })
        .collect();
    let mac: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (f64::from(r.stop_seq), r.mac_count(Target::Onboard) as f64))
        .collect();
    let est: Vec<(f64, f64)> = estimates
        .iter()
        .filter(|e| e.target == Target::Onboard)
        .map(|e| (f64::from(e.stop_seq), e.estimate as f64))
        .collect();
    let mut series = Vec::new();
    if !truth.is_empty() {
        series.push(plot::Series {
            name: "truth",
            color: COLOR_TRUTH,
            points: &truth,
        });
    }
    series.push(plot::Series {
        name: "mac count",
        color: COLOR_MAC,
        points: &mac,
    });
    if !est.is_empty() {
        series.push(plot::Series {
            name: "estimate",
            color: COLOR_ESTIMATE,
            points: &est,
        });
    }
    plot::line_plot(
        &format!("onboard passengers per stop ({combo})"),
        "stop sequence",
        "onboard count",
        &series,
    )
}

fn scatter_svg(estimates: &[StopEstimate], combo: &str) -> Option<String> {
    let mut per_target: Vec<(&str, &str, Vec<(f64, f64)>)> = Vec::new();
    for (name, color) in TARGET_COLORS {
        let points: Vec<(f64, f64)> = estimates
            .iter()
            .filter(|e| e.target.to_string() == name)
            .filter_map(|e| e.truth.map(|t| (t as f64, e.estimate as f64)))
            .collect();
        if !points.is_empty() {
            per_target.push((name, color, points));
        }
    }
    if per_target.is_empty() {
        return None;
    }
    let series: Vec<plot::Series<'_>> = per_target
        .iter()
        .map(|(name, color, points)| plot::Series {
            name,
            color,
            points,
        })
        .collect();
    Some(plot::scatter_plot(
        &format!("truth vs estimate ({combo})"),
        "true count",
        "estimated count",
        &series,
    ))
}

/// The assembled artifacts of a full run.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub summary: PipelineSummary,
    pub summary_path: PathBuf,
}

/// Run the whole pipeline and write the report directory.
///
/// Report contents (per separation method `S` and regression back-end `R`):
/// `features.csv`, `load_report.json`, `labels_S.csv` (+ `labels_S.meta.json`
/// for clustering methods), `validity_S.json`, `separation_scores_S.json`
/// (when true labels were supplied), `stop_counts_S.csv`, `od_matrix_S.csv`,
/// `estimates_S_R.csv`, `metrics.csv`, `plots/*.svg`, `manifest.json`, and
/// `summary.json`.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let stage = run_extract(&cfg.input, &cfg.load, &cfg.extract)?;
    let truth_labels = match &cfg.input.labels {
        Some(path) => Some(read_class_labels_csv(path)?),
        None => None,
    };

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let plots_dir = out_dir.join("plots");
    fs::create_dir_all(&plots_dir).map_err(|e| Error::io(&plots_dir, e))?;

    let seeds = DerivedSeeds::from_base(cfg.seed);
    let mut files: Vec<String> = Vec::new();
    let mut notices: Vec<String> = Vec::new();

    write_features_csv(out_dir.join("features.csv"), &stage.vectors)?;
    files.push("features.csv".to_string());
    write_json(&out_dir.join("load_report.json"), &stage.load_report)?;
    files.push("load_report.json".to_string());

    let (separations, regressions) = cfg.methods();
    let mut separation_summaries: Vec<SeparationSummary> = Vec::new();
    let mut estimation_summaries: Vec<EstimationSummary> = Vec::new();
    let mut all_metrics: Vec<MetricsRow> = Vec::new();

    for &sep in &separations {
        let outcome = run_separation(&stage.vectors, sep, cfg, seeds.clustering)?;
        if let Some(note) = &outcome.validity_note {
            notices.push(format!("{sep}: {note}"));
        }

        let labels_name = format!("labels_{sep}.csv");
        write_labels_csv(
            &out_dir.join(&labels_name),
            &outcome.labels,
            Some(&sep.to_string()),
        )?;
        files.push(labels_name);
        if let Some(meta) = &outcome.meta {
            let meta_name = format!("labels_{sep}.meta.json");
            write_meta_json(&out_dir.join(&meta_name), meta)?;
            files.push(meta_name);
        }
        if let Some(validity) = &outcome.validity {
            let name = format!("validity_{sep}.json");
            write_json(&out_dir.join(&name), validity)?;
            files.push(name);
        }

        let scores = match &truth_labels {
            Some(truth) => {
                let scores = score_separation(&device_label_map(&outcome.labels), truth)?;
                let name = format!("separation_scores_{sep}.json");
                write_json(&out_dir.join(&name), &scores)?;
                files.push(name);
                Some(scores)
            }
            None => None,
        };

        let counts = run_counts(&stage.trip, &outcome.labels, &counts_options(sep, cfg))?;
        let stop_counts_name = format!("stop_counts_{sep}.csv");
        write_stop_counts_csv(out_dir.join(&stop_counts_name), &counts.records)?;
        files.push(stop_counts_name);
        let od_name = format!("od_matrix_{sep}.csv");
        write_od_csv(out_dir.join(&od_name), &counts.od)?;
        files.push(od_name);

        let n_passenger = outcome
            .labels
            .iter()
            .filter(|l| l.label == DeviceClass::Passenger)
            .count();
        separation_summaries.push(SeparationSummary {
            method: sep.to_string(),
            n_passenger,
            n_non_passenger: outcome.labels.len() - n_passenger,
            n_iterations: outcome.meta.as_ref().map(|m| m.n_iterations),
            objective: outcome.meta.as_ref().map(|m| m.objective),
            validity: outcome.validity,
            scores,
            assignment: counts.assignment_report,
            od_total_trips: counts.od.total,
        });

        for &reg in &regressions {
            let combo = format!("{sep}+{reg}");
            let regression_outcome = run_regression(
                &counts.records,
                &combo,
                reg,
                &cfg.targets,
                &cfg.forest,
                &cfg.ols,
                seeds.forest,
                seeds.split,
                cfg.test_fraction,
            )?;
            notices.extend(regression_outcome.notices.iter().cloned());

            if !regression_outcome.estimates.is_empty() {
                let name = format!("estimates_{sep}_{reg}.csv");
                write_estimates_csv(&out_dir.join(&name), &regression_outcome.estimates)?;
                files.push(name);
            }
            if cfg.targets.contains(&Target::Onboard) {
                let name = format!("plots/onboard_{sep}_{reg}.svg");
                let svg = onboard_line_svg(&counts.records, &regression_outcome.estimates, &combo);
                fs::write(out_dir.join(&name), svg)
                    .map_err(|e| Error::io(out_dir.join(&name), e))?;
                files.push(name);
            }
            if let Some(svg) = scatter_svg(&regression_outcome.estimates, &combo) {
                let name = format!("plots/scatter_{sep}_{reg}.svg");
                fs::write(out_dir.join(&name), svg)
                    .map_err(|e| Error::io(out_dir.join(&name), e))?;
                files.push(name);
            }

            estimation_summaries.push(EstimationSummary {
                separation: sep.to_string(),
                regression: reg.to_string(),
                n_train_stops: regression_outcome.n_train,
                n_test_stops: regression_outcome.n_test,
                metrics: metric_summaries(&regression_outcome.metrics),
            });
            all_metrics.extend(regression_outcome.metrics);
        }
    }

    if !all_metrics.is_empty() {
        write_metrics_csv(&out_dir.join("metrics.csv"), &all_metrics)?;
        files.push("metrics.csv".to_string());
    }

    let manifest = Manifest {
        format_version: REPORT_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        command: "pipeline",
        seed: cfg.seed,
        derived_seeds: seeds,
        config: &cfg.echo,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    files.push("manifest.json".to_string());

    files.sort();
    let summary = PipelineSummary {
        format_version: REPORT_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        trip_id: stage.trip.trip_id.clone(),
        seed: cfg.seed,
        derived_seeds: seeds,
        config: cfg.echo.iter().cloned().collect(),
        load: stage.load_report.clone(),
        extract: stage.extract_report.clone(),
        n_stops: stage.trip.stations.len(),
        n_devices: stage.vectors.len(),
        separations: separation_summaries,
        estimations: estimation_summaries,
        notices,
        files,
    };
    let summary_path = out_dir.join("summary.json");
    write_json(&summary_path, &summary)?;

    Ok(PipelineOutcome {
        summary,
        summary_path,
    })
}
