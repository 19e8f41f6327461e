//! Unsupervised passenger / non-passenger separation.
//!
//! Feature vectors are z-scored, partitioned into two soft clusters (fuzzy
//! c-means or a Gaussian mixture), and the cluster whose center has the
//! longer detection duration is designated the passenger cluster. Soft
//! memberships are kept alongside the hardened label so downstream stages can
//! threshold differently if needed.

pub mod fcm;
pub mod gmm;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::features::{MacFeatureVector, FEATURE_NAMES};
use crate::types::{DeviceClass, Protocol};
use crate::Result;

pub use fcm::{FcmFit, FcmOptions};
pub use gmm::{GmmFit, GmmOptions};

/// Column-wise z-score transform fitted on a feature matrix.
///
/// Uses the population standard deviation. Constant columns are flagged and
/// scaled by 1 instead of 0, which maps them to all-zeros rather than NaN.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Scale per column; 1.0 where the column was constant.
    pub sds: Vec<f64>,
    pub zero_variance: Vec<bool>,
}

impl Standardizer {
    /// Fit on a row-major matrix (one row per observation).
    pub fn fit(matrix: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = matrix.first() else {
            return Err(Error::InvalidInput("cannot standardize an empty matrix".into()));
        };
        let dim = first.len();
        if matrix.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("rows have mixed dimensions".into()));
        }
        let n = matrix.len() as f64;
        let mut means = vec![0.0f64; dim];
        for row in matrix {
            for (m, x) in means.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut sds = vec![0.0f64; dim];
        for row in matrix {
            for d in 0..dim {
                let diff = row[d] - means[d];
                sds[d] += diff * diff;
            }
        }
        let mut zero_variance = vec![false; dim];
        for (d, s) in sds.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if *s == 0.0 {
                *s = 1.0;
                zero_variance[d] = true;
            }
        }
        Ok(Standardizer { means, sds, zero_variance })
    }

    /// Apply the fitted transform to a matrix of the same width.
    pub fn transform(&self, matrix: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let dim = self.means.len();
        if matrix.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput(format!(
                "expected rows of width {dim} to match the fitted standardizer"
            )));
        }
        Ok(matrix
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(d, x)| (x - self.means[d]) / self.sds[d])
                    .collect()
            })
            .collect())
    }

    pub fn fit_transform(matrix: &[Vec<f64>]) -> Result<(Self, Vec<Vec<f64>>)> {
        let fitted = Self::fit(matrix)?;
        let transformed = fitted.transform(matrix)?;
        Ok((fitted, transformed))
    }
}

/// One device's soft memberships plus the hardened class.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceLabel {
    pub mac: String,
    pub protocol: Protocol,
    pub u_passenger: f64,
    pub u_non_passenger: f64,
    pub label: DeviceClass,
}

/// Run metadata stored next to a label export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionMeta {
    pub method: String,
    pub seed: u64,
    pub n_iterations: usize,
    /// Final objective: fuzzy c-means cost, or mixture log-likelihood.
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fuzzifier: Option<f64>,
    /// Which raw cluster index was designated "passenger".
    pub passenger_cluster: usize,
    /// Feature names that were constant across devices (scaled by 1).
    pub zero_variance_features: Vec<String>,
    pub n_devices: usize,
    pub n_passenger: usize,
    pub n_non_passenger: usize,
}

/// A completed two-way partition over a device feature set.
#[derive(Debug, Clone)]
pub struct Partition {
    /// One entry per input vector, same order.
    pub labels: Vec<DeviceLabel>,
    pub meta: PartitionMeta,
}

/// Harden a soft membership pair: passenger only on a strict majority.
pub fn harden(u_passenger: f64, u_non_passenger: f64) -> DeviceClass {
    if u_passenger > u_non_passenger {
        DeviceClass::Passenger
    } else {
        DeviceClass::NonPassenger
    }
}

/// Copy feature vectors into a row-major matrix.
pub fn feature_matrix(vectors: &[MacFeatureVector]) -> Vec<Vec<f64>> {
    vectors.iter().map(|v| v.values.to_vec()).collect()
}

fn zero_variance_names(flags: &[bool]) -> Vec<String> {
    flags
        .iter()
        .enumerate()
        .filter(|(_, &z)| z)
        .map(|(d, _)| {
            FEATURE_NAMES
                .get(d)
                .map_or_else(|| format!("feature_{d}"), |n| (*n).to_string())
        })
        .collect()
}

/// Pick the passenger cluster: the one whose center sits higher on
/// `passenger_dim` (detection duration in the standard feature layout).
/// An exact tie falls back to cluster 0.
fn pick_passenger_cluster(centers: &[Vec<f64>], passenger_dim: usize) -> Result<usize> {
    if centers.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "passenger designation needs exactly 2 clusters, got {}",
            centers.len()
        )));
    }
    if centers.iter().any(|c| passenger_dim >= c.len()) {
        return Err(Error::InvalidInput(format!(
            "passenger dimension {passenger_dim} out of range"
        )));
    }
    Ok(if centers[1][passenger_dim] > centers[0][passenger_dim] {
        1
    } else {
        0
    })
}

fn build_partition(
    vectors: &[MacFeatureVector],
    memberships: &[Vec<f64>],
    passenger_cluster: usize,
    meta: PartitionMeta,
) -> Partition {
    let mut labels = Vec::with_capacity(vectors.len());
    let mut n_passenger = 0usize;
    for (v, u) in vectors.iter().zip(memberships) {
        let u_passenger = u[passenger_cluster];
        let u_non_passenger = u[1 - passenger_cluster];
        let label = harden(u_passenger, u_non_passenger);
        if label == DeviceClass::Passenger {
            n_passenger += 1;
        }
        labels.push(DeviceLabel {
            mac: v.mac.clone(),
            protocol: v.protocol,
            u_passenger,
            u_non_passenger,
            label,
        });
    }
    let meta = PartitionMeta {
        n_passenger,
        n_non_passenger: labels.len() - n_passenger,
        ..meta
    };
    Partition { labels, meta }
}

/// Standardize, run fuzzy c-means with `c = 2`, and label devices.
pub fn fcm_partition(
    vectors: &[MacFeatureVector],
    options: &FcmOptions,
    passenger_dim: usize,
) -> Result<Partition> {
    if options.c != 2 {
        return Err(Error::InvalidInput(format!(
            "passenger separation requires c = 2, got {}",
            options.c
        )));
    }
    let matrix = feature_matrix(vectors);
    let (standardizer, z) = Standardizer::fit_transform(&matrix)?;
    let fit = fcm::fit(&z, options)?;
    let passenger_cluster = pick_passenger_cluster(&fit.centers, passenger_dim)?;
    let meta = PartitionMeta {
        method: "fcm".into(),
        seed: options.seed,
        n_iterations: fit.n_iterations,
        objective: fit.cost,
        fuzzifier: Some(options.m),
        passenger_cluster,
        zero_variance_features: zero_variance_names(&standardizer.zero_variance),
        n_devices: vectors.len(),
        n_passenger: 0,
        n_non_passenger: 0,
    };
    Ok(build_partition(vectors, &fit.memberships, passenger_cluster, meta))
}

/// Standardize, fit a 2-component Gaussian mixture, and label devices.
pub fn gmm_partition(
    vectors: &[MacFeatureVector],
    options: &GmmOptions,
    passenger_dim: usize,
) -> Result<Partition> {
    if options.c != 2 {
        return Err(Error::InvalidInput(format!(
            "passenger separation requires c = 2, got {}",
            options.c
        )));
    }
    let matrix = feature_matrix(vectors);
    let (standardizer, z) = Standardizer::fit_transform(&matrix)?;
    let fit = gmm::fit(&z, options)?;
    let passenger_cluster = pick_passenger_cluster(&fit.means, passenger_dim)?;
    let meta = PartitionMeta {
        method: "gmm".into(),
        seed: options.seed,
        n_iterations: fit.n_iterations,
        objective: fit.log_likelihood,
        fuzzifier: None,
        passenger_cluster,
        zero_variance_features: zero_variance_names(&standardizer.zero_variance),
        n_devices: vectors.len(),
        n_passenger: 0,
        n_non_passenger: 0,
    };
    Ok(build_partition(vectors, &fit.responsibilities, passenger_cluster, meta))
}

/// A labels-file row as read back from disk. The export keys rows by MAC
/// only; the in-memory [`DeviceLabel`] additionally tracks protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub mac: String,
    pub u_passenger: f64,
    pub u_non_passenger: f64,
    pub label: DeviceClass,
    pub method: Option<String>,
}

/// Write `mac,u_passenger,u_non_passenger,label` rows, optionally with a
/// trailing `method` column stamped onto every row.
pub fn write_labels_csv(path: &Path, labels: &[DeviceLabel], method: Option<&str>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header: &[&str] = if method.is_some() {
        &["mac", "u_passenger", "u_non_passenger", "label", "method"]
    } else {
        &["mac", "u_passenger", "u_non_passenger", "label"]
    };
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for l in labels {
        let up = l.u_passenger.to_string();
        let un = l.u_non_passenger.to_string();
        let label = l.label.to_string();
        let mut record = vec![l.mac.as_str(), &up, &un, &label];
        if let Some(m) = method {
            record.push(m);
        }
        w.write_record(&record).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a labels export; tolerates files with or without the `method` column.
pub fn read_labels_csv(path: &Path) -> Result<Vec<LabelRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::record(path, 1, format!("missing column `{name}`")))
    };
    let mac_i = col("mac")?;
    let up_i = col("u_passenger")?;
    let un_i = col("u_non_passenger")?;
    let label_i = col("label")?;
    let method_i = headers.iter().position(|h| h == "method");

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx as u64 + 2;
        let record = record.map_err(|e| Error::csv(path, e))?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::record(path, line, "short record"))
        };
        let parse_u = |i: usize, name: &str| -> Result<f64> {
            let raw = field(i)?;
            let v: f64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::record(path, line, format!("bad {name} `{raw}`")))?;
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::record(
                    path,
                    line,
                    format!("{name} {v} outside [0, 1]"),
                ));
            }
            Ok(v)
        };
        let mac = field(mac_i)?.trim().to_string();
        if mac.is_empty() {
            return Err(Error::record(path, line, "empty mac"));
        }
        let u_passenger = parse_u(up_i, "u_passenger")?;
        let u_non_passenger = parse_u(un_i, "u_non_passenger")?;
        let raw_label = field(label_i)?.trim();
        let label: DeviceClass = raw_label
            .parse()
            .map_err(|_| Error::record(path, line, format!("bad label `{raw_label}`")))?;
        let method = match method_i {
            Some(i) => Some(field(i)?.trim().to_string()),
            None => None,
        };
        rows.push(LabelRow {
            mac,
            u_passenger,
            u_non_passenger,
            label,
            method,
        });
    }
    Ok(rows)
}

/// Collapse label rows to a per-MAC class map. A MAC that appears under both
/// classes (e.g. once per protocol) counts as a passenger.
pub fn label_map(rows: &[LabelRow]) -> BTreeMap<String, DeviceClass> {
    let mut map: BTreeMap<String, DeviceClass> = BTreeMap::new();
    for row in rows {
        map.entry(row.mac.clone())
            .and_modify(|existing| {
                if row.label == DeviceClass::Passenger {
                    *existing = DeviceClass::Passenger;
                }
            })
            .or_insert(row.label);
    }
    map
}

/// Same collapse for in-memory labels.
pub fn device_label_map(labels: &[DeviceLabel]) -> BTreeMap<String, DeviceClass> {
    let mut map: BTreeMap<String, DeviceClass> = BTreeMap::new();
    for l in labels {
        map.entry(l.mac.clone())
            .and_modify(|existing| {
                if l.label == DeviceClass::Passenger {
                    *existing = DeviceClass::Passenger;
                }
            })
            .or_insert(l.label);
    }
    map
}

/// Serialize run metadata to a pretty-printed JSON sidecar.
pub fn write_meta_json(path: &Path, meta: &PartitionMeta) -> Result<()> {
    let body = serde_json::to_string_pretty(meta)?;
    std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}
