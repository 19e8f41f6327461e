//! CSV parsing, validation, and the timestamp join of sensing records to GPS
//! fixes.
//!
//! Input schemas (headers required):
//!
//! | file             | columns                                    |
//! |------------------|--------------------------------------------|
//! | sensing.csv      | `protocol,mac,timestamp,rssi`              |
//! | gps.csv          | `timestamp,lat,lon`                        |
//! | stations.csv     | `route_id,stop_seq,stop_id,lat,lon,name`   |
//! | ground_truth.csv | `trip_id,stop_seq,boarding,alighting,onboard` |
//!
//! Timestamps are epoch seconds (decimal) or RFC 3339 strings; both normalize
//! to `f64` epoch seconds internally. The sensing scanner and the GPS unit
//! tick independently, so each detection is joined to the fix with the
//! nearest timestamp (ties toward the earlier fix); detections with no fix
//! within `gps_join_tolerance_s` are dropped and counted in the
//! [`LoadReport`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::types::{GpsFix, JoinedDetection, Protocol, SensingRecord, Station, TruthRow};
use crate::Result;

/// Tunable knobs for [`load_trip`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Maximum |t_record − t_fix| for a join, in seconds. Records farther
    /// from every fix are dropped (counted, not fatal).
    pub gps_join_tolerance_s: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        // Generous against the 0.5 s fix interval of the reference hardware;
        // still tight enough to reject clock-skewed stragglers.
        LoadOptions {
            gps_join_tolerance_s: 5.0,
        }
    }
}

/// One trip's worth of joined, validated input data.
#[derive(Debug, Clone, PartialEq)]
pub struct TripDataset {
    pub trip_id: String,
    /// Canonically sorted by (t, mac, protocol, rssi); every record carries
    /// the vehicle position of its nearest fix.
    pub records: Vec<JoinedDetection>,
    /// Strictly increasing in t.
    pub gps: Vec<GpsFix>,
    /// Sorted by (route_id, stop_seq).
    pub stations: Vec<Station>,
    /// Sorted by stop_seq; present only when a ground-truth file was given.
    pub truth: Option<Vec<TruthRow>>,
}

/// Counters describing what [`load_trip`] read, kept, and dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub sensing_rows_read: u64,
    pub sensing_rows_joined: u64,
    pub sensing_rows_dropped: u64,
    pub gps_fixes_read: u64,
    pub gps_fixes_kept: u64,
    pub gps_duplicate_timestamps_collapsed: u64,
    pub station_count: u64,
    pub truth_rows: u64,
    pub gps_join_tolerance_s: f64,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "sensing: {} read, {} joined, {} dropped (join tolerance {} s)",
            self.sensing_rows_read,
            self.sensing_rows_joined,
            self.sensing_rows_dropped,
            self.gps_join_tolerance_s
        )?;
        writeln!(
            f,
            "gps: {} read, {} kept, {} duplicate timestamps collapsed",
            self.gps_fixes_read, self.gps_fixes_kept, self.gps_duplicate_timestamps_collapsed
        )?;
        write!(
            f,
            "stations: {}, ground-truth rows: {}",
            self.station_count, self.truth_rows
        )
    }
}

/// Parse a timestamp that is either epoch seconds (decimal) or RFC 3339.
pub fn parse_timestamp(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        if v.is_finite() {
            return Ok(v);
        }
        return Err(format!("non-finite timestamp {s:?}"));
    }
    match chrono::DateTime::parse_from_rfc3339(s) {
        Ok(dt) => Ok(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9),
        Err(e) => Err(format!(
            "timestamp {s:?} is neither epoch seconds nor RFC 3339 ({e})"
        )),
    }
}

/// Open a CSV file and resolve the required header columns to indices.
fn open_csv(
    path: &Path,
    required: &[&str],
) -> Result<(csv::Reader<std::fs::File>, Vec<usize>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .clone();
    let mut indices = Vec::with_capacity(required.len());
    for name in required {
        match headers.iter().position(|h| h == *name) {
            Some(i) => indices.push(i),
            None => {
                return Err(Error::record(
                    path,
                    1,
                    format!("missing required column {name:?}"),
                ))
            }
        }
    }
    Ok((reader, indices))
}

fn field<'a>(record: &'a csv::StringRecord, idx: usize, path: &Path, name: &str) -> Result<&'a str> {
    let line = record.position().map_or(0, |p| p.line());
    record
        .get(idx)
        .ok_or_else(|| Error::record(path, line, format!("missing field {name:?}")))
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Read and validate a sensing log. Records are returned in canonical order:
/// (t, mac, protocol, rssi).
pub fn read_sensing(path: impl AsRef<Path>) -> Result<Vec<SensingRecord>> {
    let path = path.as_ref();
    let (mut reader, idx) = open_csv(path, &["protocol", "mac", "timestamp", "rssi"])?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = record_line(&row);
        let protocol: Protocol = field(&row, idx[0], path, "protocol")?
            .parse()
            .map_err(|e| Error::record(path, line, e))?;
        let mac = field(&row, idx[1], path, "mac")?.to_string();
        if mac.is_empty() {
            return Err(Error::record(path, line, "empty mac"));
        }
        let t = parse_timestamp(field(&row, idx[2], path, "timestamp")?)
            .map_err(|e| Error::record(path, line, e))?;
        let rssi_str = field(&row, idx[3], path, "rssi")?;
        let rssi: i32 = rssi_str
            .parse()
            .map_err(|_| Error::record(path, line, format!("invalid rssi {rssi_str:?}")))?;
        if !(-120..=0).contains(&rssi) {
            return Err(Error::record(
                path,
                line,
                format!("rssi {rssi} outside [-120, 0] dBm"),
            ));
        }
        out.push(SensingRecord {
            protocol,
            mac,
            t,
            rssi,
        });
    }
    sort_sensing(&mut out);
    Ok(out)
}

/// Canonical sensing order, so that joins and feature extraction are
/// independent of input row order.
pub fn sort_sensing(records: &mut [SensingRecord]) {
    records.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then_with(|| a.mac.cmp(&b.mac))
            .then_with(|| a.protocol.cmp(&b.protocol))
            .then_with(|| a.rssi.cmp(&b.rssi))
    });
}

/// Read a GPS trace: validated, sorted by time, duplicate timestamps
/// collapsed to the last-seen fix. Returns the fixes plus the number of
/// duplicates collapsed.
pub fn read_gps(path: impl AsRef<Path>) -> Result<(Vec<GpsFix>, u64)> {
    let path = path.as_ref();
    let (mut reader, idx) = open_csv(path, &["timestamp", "lat", "lon"])?;
    let mut fixes = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = record_line(&row);
        let t = parse_timestamp(field(&row, idx[0], path, "timestamp")?)
            .map_err(|e| Error::record(path, line, e))?;
        let lat = parse_coord(field(&row, idx[1], path, "lat")?, 90.0, "lat")
            .map_err(|e| Error::record(path, line, e))?;
        let lon = parse_coord(field(&row, idx[2], path, "lon")?, 180.0, "lon")
            .map_err(|e| Error::record(path, line, e))?;
        fixes.push(GpsFix { t, lat, lon });
    }
    // Stable sort keeps file order within equal timestamps, so "keep the last
    // of each run" below implements the documented last-seen-wins rule for
    // clock-quantized duplicates.
    fixes.sort_by(|a, b| a.t.total_cmp(&b.t));
    let before = fixes.len();
    let mut collapsed: Vec<GpsFix> = Vec::with_capacity(before);
    for fix in fixes {
        match collapsed.last_mut() {
            Some(last) if last.t == fix.t => *last = fix,
            _ => collapsed.push(fix),
        }
    }
    let dups = (before - collapsed.len()) as u64;
    if collapsed.is_empty() {
        return Err(Error::InvalidInput(format!(
            "empty GPS trace in {}",
            path.display()
        )));
    }
    Ok((collapsed, dups))
}

fn parse_coord(s: &str, bound: f64, name: &str) -> std::result::Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|_| format!("invalid {name} {s:?}"))?;
    if !v.is_finite() || v.abs() > bound {
        return Err(format!("{name} {v} outside [-{bound}, {bound}]"));
    }
    Ok(v)
}

/// Read a station table, sorted by (route_id, stop_seq). stop_seq must be a
/// positive integer, unique within its route.
pub fn read_stations(path: impl AsRef<Path>) -> Result<Vec<Station>> {
    let path = path.as_ref();
    let (mut reader, idx) = open_csv(
        path,
        &["route_id", "stop_seq", "stop_id", "lat", "lon", "name"],
    )?;
    let mut out = Vec::new();
    let mut seen: BTreeSet<(String, u32)> = BTreeSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = record_line(&row);
        let route_id = field(&row, idx[0], path, "route_id")?.to_string();
        let seq_str = field(&row, idx[1], path, "stop_seq")?;
        let stop_seq: u32 = seq_str
            .parse()
            .map_err(|_| Error::record(path, line, format!("invalid stop_seq {seq_str:?}")))?;
        if stop_seq == 0 {
            return Err(Error::record(path, line, "stop_seq must be >= 1"));
        }
        if !seen.insert((route_id.clone(), stop_seq)) {
            return Err(Error::record(
                path,
                line,
                format!("duplicate stop_seq {stop_seq} in route {route_id:?}"),
            ));
        }
        let stop_id = field(&row, idx[2], path, "stop_id")?.to_string();
        let lat = parse_coord(field(&row, idx[3], path, "lat")?, 90.0, "lat")
            .map_err(|e| Error::record(path, line, e))?;
        let lon = parse_coord(field(&row, idx[4], path, "lon")?, 180.0, "lon")
            .map_err(|e| Error::record(path, line, e))?;
        let name = field(&row, idx[5], path, "name")?.to_string();
        out.push(Station {
            route_id,
            stop_seq,
            stop_id,
            lat,
            lon,
            name,
        });
    }
    out.sort_by(|a, b| {
        a.route_id
            .cmp(&b.route_id)
            .then_with(|| a.stop_seq.cmp(&b.stop_seq))
    });
    Ok(out)
}

/// Read ground-truth counts and validate the onboard conservation identity
/// per trip: `onboard_k = onboard_{k-1} + boarding_k - alighting_k`, with an
/// empty vehicle before the first stop.
pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRow>> {
    let path = path.as_ref();
    let (mut reader, idx) = open_csv(
        path,
        &["trip_id", "stop_seq", "boarding", "alighting", "onboard"],
    )?;
    let mut rows = Vec::new();
    let mut seen: BTreeSet<(String, u32)> = BTreeSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = record_line(&row);
        let trip_id = field(&row, idx[0], path, "trip_id")?.to_string();
        if trip_id.is_empty() {
            return Err(Error::record(path, line, "empty trip_id"));
        }
        let stop_seq: u32 = field(&row, idx[1], path, "stop_seq")?
            .parse()
            .map_err(|_| Error::record(path, line, "invalid stop_seq"))?;
        if stop_seq == 0 {
            return Err(Error::record(path, line, "stop_seq must be >= 1"));
        }
        if !seen.insert((trip_id.clone(), stop_seq)) {
            return Err(Error::record(
                path,
                line,
                format!("duplicate stop_seq {stop_seq} for trip {trip_id:?}"),
            ));
        }
        let count = |i: usize, name: &str| -> Result<i64> {
            let s = field(&row, idx[i], path, name)?;
            let v: i64 = s
                .parse()
                .map_err(|_| Error::record(path, line, format!("invalid {name} {s:?}")))?;
            if v < 0 {
                return Err(Error::record(path, line, format!("negative {name} {v}")));
            }
            Ok(v)
        };
        rows.push(TruthRow {
            trip_id,
            stop_seq,
            boarding: count(2, "boarding")?,
            alighting: count(3, "alighting")?,
            onboard: count(4, "onboard")?,
        });
    }
    rows.sort_by(|a, b| {
        a.trip_id
            .cmp(&b.trip_id)
            .then_with(|| a.stop_seq.cmp(&b.stop_seq))
    });
    validate_truth_conservation(&rows)?;
    Ok(rows)
}

/// Check the conservation identity on already-sorted truth rows.
pub fn validate_truth_conservation(rows: &[TruthRow]) -> Result<()> {
    let mut by_trip: BTreeMap<&str, Vec<&TruthRow>> = BTreeMap::new();
    for row in rows {
        by_trip.entry(&row.trip_id).or_default().push(row);
    }
    for (trip_id, rows) in by_trip {
        let mut onboard_prev: i64 = 0;
        for row in rows {
            let expected = onboard_prev + row.boarding - row.alighting;
            if row.onboard != expected {
                return Err(Error::InconsistentTruth {
                    trip_id: trip_id.to_string(),
                    stop_seq: row.stop_seq,
                    message: format!(
                        "onboard {} but previous {} + boarding {} - alighting {} = {}",
                        row.onboard, onboard_prev, row.boarding, row.alighting, expected
                    ),
                });
            }
            onboard_prev = row.onboard;
        }
    }
    Ok(())
}

/// Index of the GPS fix nearest in time to `t` (ties toward the earlier
/// fix). `gps` must be sorted and non-empty.
fn nearest_fix(gps: &[GpsFix], t: f64) -> usize {
    let i = gps.partition_point(|f| f.t < t);
    if i == 0 {
        return 0;
    }
    if i == gps.len() {
        return gps.len() - 1;
    }
    let before = t - gps[i - 1].t;
    let after = gps[i].t - t;
    // `before <= after` covers the documented tie-break toward the earlier fix.
    if before <= after {
        i - 1
    } else {
        i
    }
}

/// Join sorted sensing records to their nearest fix, dropping records with no
/// fix within tolerance. Returns joined records plus the drop count.
pub fn join_records(
    records: &[SensingRecord],
    gps: &[GpsFix],
    tolerance_s: f64,
) -> (Vec<JoinedDetection>, u64) {
    let mut joined = Vec::with_capacity(records.len());
    let mut dropped = 0u64;
    for r in records {
        let i = nearest_fix(gps, r.t);
        let gap = (r.t - gps[i].t).abs();
        if gap > tolerance_s {
            dropped += 1;
            continue;
        }
        joined.push(JoinedDetection {
            protocol: r.protocol,
            mac: r.mac.clone(),
            t: r.t,
            rssi: r.rssi,
            lat: gps[i].lat,
            lon: gps[i].lon,
        });
    }
    (joined, dropped)
}

/// Load and join one trip's input files.
///
/// The trip id comes from the ground-truth file when present (which must then
/// contain exactly one trip), otherwise from the station table's route id.
pub fn load_trip(
    sensing_path: impl AsRef<Path>,
    gps_path: impl AsRef<Path>,
    stations_path: impl AsRef<Path>,
    truth_path: Option<&Path>,
    options: &LoadOptions,
) -> Result<(TripDataset, LoadReport)> {
    let sensing = read_sensing(sensing_path)?;
    let (gps, gps_dups) = read_gps(gps_path)?;
    let stations = read_stations(&stations_path)?;
    if stations.is_empty() {
        return Err(Error::InvalidInput(format!(
            "empty station table in {}",
            stations_path.as_ref().display()
        )));
    }
    let truth = match truth_path {
        Some(p) => Some(read_truth(p)?),
        None => None,
    };

    let trip_id = match &truth {
        Some(rows) => {
            let ids: BTreeSet<&str> = rows.iter().map(|r| r.trip_id.as_str()).collect();
            if ids.len() > 1 {
                return Err(Error::InvalidInput(format!(
                    "ground truth contains {} trips; load_trip handles one trip at a time",
                    ids.len()
                )));
            }
            ids.iter()
                .next()
                .map(|s| s.to_string())
                .unwrap_or_else(|| stations[0].route_id.clone())
        }
        None => stations[0].route_id.clone(),
    };

    let (records, dropped) = join_records(&sensing, &gps, options.gps_join_tolerance_s);
    let report = LoadReport {
        sensing_rows_read: sensing.len() as u64,
        sensing_rows_joined: records.len() as u64,
        sensing_rows_dropped: dropped,
        gps_fixes_read: gps.len() as u64 + gps_dups,
        gps_fixes_kept: gps.len() as u64,
        gps_duplicate_timestamps_collapsed: gps_dups,
        station_count: stations.len() as u64,
        truth_rows: truth.as_ref().map_or(0, |t| t.len() as u64),
        gps_join_tolerance_s: options.gps_join_tolerance_s,
    };
    Ok((
        TripDataset {
            trip_id,
            records,
            gps,
            stations,
            truth,
        },
        report,
    ))
}

/// Build an in-memory dataset from already-parsed parts (used by the
/// synthetic generator and tests to skip file IO). Applies the same join and
/// canonical ordering as [`load_trip`].
pub fn assemble_trip(
    trip_id: impl Into<String>,
    mut sensing: Vec<SensingRecord>,
    gps: Vec<GpsFix>,
    stations: Vec<Station>,
    truth: Option<Vec<TruthRow>>,
    options: &LoadOptions,
) -> Result<(TripDataset, u64)> {
    if gps.is_empty() {
        return Err(Error::InvalidInput("empty GPS trace".into()));
    }
    if stations.is_empty() {
        return Err(Error::InvalidInput("empty station table".into()));
    }
    if let Some(rows) = &truth {
        validate_truth_conservation(rows)?;
    }
    sort_sensing(&mut sensing);
    let (records, dropped) = join_records(&sensing, &gps, options.gps_join_tolerance_s);
    Ok((
        TripDataset {
            trip_id: trip_id.into(),
            records,
            gps,
            stations,
            truth,
        },
        dropped,
    ))
}

/// Deterministic, salted, collision-resistant MAC anonymization: the first 12
/// bytes of SHA-256(salt ":" mac), hex-encoded.
pub fn anonymize(mac: &str, salt: &str) -> Result<String> {
    if salt.is_empty() {
        return Err(Error::InvalidInput("anonymization salt must be non-empty".into()));
    }
    let mut hasher = Sha256::new();
    hasher.update(salt.as_bytes());
    hasher.update(b":");
    hasher.update(mac.as_bytes());
    let digest = hasher.finalize();
    Ok(hex::encode(&digest[..12]))
}
