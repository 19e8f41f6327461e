//! Stop assignment for passenger-labeled devices, O-D matrix construction,
//! and per-stop boarding/alighting/onboard MAC counts.
//!
//! A device's boarding stop is the station nearest the vehicle position at
//! its first detection; its alighting stop is the station nearest the last
//! detection. Reversed pairs are swapped (GPS jitter near termini can invert
//! the endpoints); pairs landing on one stop are excluded. Both corrections
//! are counted in the [`AssignmentReport`]. The surviving pairs accumulate
//! into a strictly upper-triangular origin–destination matrix whose marginals
//! yield the per-stop counts: onboard after stop k counts devices with
//! boarding ≤ k < alighting, equivalently the running balance
//! `onboard_k = onboard_{k−1} + boarding_k − alighting_k`.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Timelike};
use serde::{Deserialize, Serialize};

use crate::cluster::DeviceLabel;
use crate::error::Error;
use crate::ingest::TripDataset;
use crate::regress::{StopRegressors, Target};
use crate::types::{haversine_m, DeviceClass, GpsFix, Protocol, Station, TruthRow};
use crate::Result;

/// Controls for [`assign_stops`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AssignmentOptions {
    /// When set, an endpoint may only assign to a station within this many
    /// meters; a device with an endpoint out of range of every station is
    /// excluded. Used by the four-parameter filter's station-radius rule.
    pub max_station_dist_m: Option<f64>,
}

/// A passenger device resolved to a boarding/alighting stop pair.
/// `boarding_seq < alighting_seq` always holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopAssignment {
    pub mac: String,
    pub protocol: Protocol,
    pub boarding_seq: u32,
    pub alighting_seq: u32,
}

/// What [`assign_stops`] did with each passenger-labeled device.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentReport {
    pub n_passenger_devices: u64,
    pub n_assigned: u64,
    /// First detection resolved to a later stop than the last; the pair was
    /// swapped before counting.
    pub n_swapped: u64,
    /// Both endpoints resolved to the same stop; dropped from the O-D matrix.
    pub n_excluded_same_stop: u64,
    /// An endpoint had no station within `max_station_dist_m`.
    pub n_excluded_no_station: u64,
}

/// Stop_seq of the station closest to (lat, lon); the earliest station in
/// route order wins exact ties. `None` when `max_dist_m` is set and no
/// station lies within it.
fn nearest_station(
    stations: &[Station],
    lat: f64,
    lon: f64,
    max_dist_m: Option<f64>,
) -> Option<u32> {
    let mut best: Option<(f64, u32)> = None;
    for s in stations {
        let d = haversine_m(lat, lon, s.lat, s.lon);
        if max_dist_m.is_some_and(|m| d > m) {
            continue;
        }
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, s.stop_seq));
        }
    }
    best.map(|(_, seq)| seq)
}

/// Resolve every passenger-labeled device to a boarding/alighting stop pair
/// from the vehicle position at its first and last detections.
///
/// Non-passenger labels are skipped. A passenger label whose (mac, protocol)
/// never appears in the trip's records is an input inconsistency and errors.
pub fn assign_stops(
    trip: &TripDataset,
    labels: &[DeviceLabel],
    options: &AssignmentOptions,
) -> Result<(Vec<StopAssignment>, AssignmentReport)> {
    if trip.stations.is_empty() {
        return Err(Error::InvalidInput(format!(
            "trip {} has no stations to assign stops against",
            trip.trip_id
        )));
    }
    // First/last record index per device; records are time-sorted, so the
    // first insertion is the earliest detection and the last update the
    // latest.
    let mut span: BTreeMap<(&str, Protocol), (usize, usize)> = BTreeMap::new();
    for (i, r) in trip.records.iter().enumerate() {
        span.entry((r.mac.as_str(), r.protocol))
            .and_modify(|(_, last)| *last = i)
            .or_insert((i, i));
    }

    let mut assignments = Vec::new();
    let mut report = AssignmentReport::default();
    for label in labels {
        if label.label != DeviceClass::Passenger {
            continue;
        }
        report.n_passenger_devices += 1;
        let &(first, last) = span
            .get(&(label.mac.as_str(), label.protocol))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "labeled device {} ({}) has no detections in trip {}",
                    label.mac, label.protocol, trip.trip_id
                ))
            })?;
        let first_rec = &trip.records[first];
        let last_rec = &trip.records[last];
        let board = nearest_station(
            &trip.stations,
            first_rec.lat,
            first_rec.lon,
            options.max_station_dist_m,
        );
        let alight = nearest_station(
            &trip.stations,
            last_rec.lat,
            last_rec.lon,
            options.max_station_dist_m,
        );
        let (Some(b), Some(a)) = (board, alight) else {
            report.n_excluded_no_station += 1;
            continue;
        };
        let (b, a) = match b.cmp(&a) {
            std::cmp::Ordering::Less => (b, a),
            std::cmp::Ordering::Greater => {
                report.n_swapped += 1;
                (a, b)
            }
            std::cmp::Ordering::Equal => {
                report.n_excluded_same_stop += 1;
                continue;
            }
        };
        report.n_assigned += 1;
        assignments.push(StopAssignment {
            mac: label.mac.clone(),
            protocol: label.protocol,
            boarding_seq: b,
            alighting_seq: a,
        });
    }
    Ok((assignments, report))
}

/// Origin–destination counts over one trip's stop sequence.
///
/// `cells[b][a]` counts devices boarding at `stops[b]` and alighting at
/// `stops[a]`. The swap rule upstream makes the matrix strictly upper
/// triangular, so `Σ cells = Σ boarding_totals = Σ alighting_totals`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdMatrix {
    /// Strictly increasing stop_seq values, one per row and column.
    pub stops: Vec<u32>,
    pub cells: Vec<Vec<u64>>,
    /// Row sums: devices boarding at each stop.
    pub boarding_totals: Vec<u64>,
    /// Column sums: devices alighting at each stop.
    pub alighting_totals: Vec<u64>,
    /// Grand total of all cells.
    pub total: u64,
}

/// The stop_seq column of a station list, validated strictly increasing.
/// (Station lists are sorted by (route_id, stop_seq), so a multi-route list
/// fails here rather than producing a nonsense matrix.)
pub fn station_stop_seqs(stations: &[Station]) -> Result<Vec<u32>> {
    if stations.is_empty() {
        return Err(Error::InvalidInput("station list is empty".into()));
    }
    let seqs: Vec<u32> = stations.iter().map(|s| s.stop_seq).collect();
    for w in seqs.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidInput(format!(
                "station stop_seq values not strictly increasing ({} then {}); \
                 one route per trip is required",
                w[0], w[1]
            )));
        }
    }
    Ok(seqs)
}

fn check_stops(stops: &[u32]) -> Result<()> {
    if stops.is_empty() {
        return Err(Error::InvalidInput("stop list is empty".into()));
    }
    for w in stops.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidInput(format!(
                "stop list not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Accumulate assignments into an [`OdMatrix`] over the given stop sequence.
pub fn build_od(assignments: &[StopAssignment], stops: &[u32]) -> Result<OdMatrix> {
    check_stops(stops)?;
    let index: BTreeMap<u32, usize> = stops.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let s = stops.len();
    let mut cells = vec![vec![0u64; s]; s];
    for a in assignments {
        if a.boarding_seq >= a.alighting_seq {
            return Err(Error::InvalidInput(format!(
                "assignment for {} has boarding_seq {} >= alighting_seq {}",
                a.mac, a.boarding_seq, a.alighting_seq
            )));
        }
        let lookup = |seq: u32| {
            index.get(&seq).copied().ok_or_else(|| {
                Error::InvalidInput(format!(
                    "assignment for {} references unknown stop_seq {seq}",
                    a.mac
                ))
            })
        };
        let b = lookup(a.boarding_seq)?;
        let al = lookup(a.alighting_seq)?;
        cells[b][al] += 1;
    }
    let mut boarding_totals = vec![0u64; s];
    let mut alighting_totals = vec![0u64; s];
    let mut total = 0u64;
    for (b, row) in cells.iter().enumerate() {
        for (a, &c) in row.iter().enumerate() {
            boarding_totals[b] += c;
            alighting_totals[a] += c;
            total += c;
        }
    }
    Ok(OdMatrix {
        stops: stops.to_vec(),
        cells,
        boarding_totals,
        alighting_totals,
        total,
    })
}

/// Onboard count after serving each stop: devices with
/// boarding ≤ k < alighting, computed as the running balance of the
/// marginals. Strict upper triangularity keeps the balance non-negative.
pub fn onboard_sequence(od: &OdMatrix) -> Vec<u64> {
    let mut out = Vec::with_capacity(od.stops.len());
    let mut onboard: i64 = 0;
    for k in 0..od.stops.len() {
        onboard += od.boarding_totals[k] as i64 - od.alighting_totals[k] as i64;
        debug_assert!(onboard >= 0, "conservation balance went negative");
        out.push(onboard.max(0) as u64);
    }
    out
}

/// Counts and regressors for one stop of one trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    pub trip_id: String,
    pub stop_seq: u32,
    /// Epoch seconds of the GPS fix nearest the station (closest approach).
    pub stop_time: f64,
    pub mac_boarding: u64,
    pub mac_alighting: u64,
    pub mac_onboard: u64,
    /// Base regressor vector; its `passenger_mac_count` carries the onboard
    /// count. [`StopRecord::regressors_for`] swaps in another target's count.
    pub regressors: StopRegressors,
    pub truth: Option<TruthRow>,
}

impl StopRecord {
    /// Observed MAC count for one estimation target.
    pub fn mac_count(&self, target: Target) -> u64 {
        match target {
            Target::Onboard => self.mac_onboard,
            Target::Boarding => self.mac_boarding,
            Target::Alighting => self.mac_alighting,
        }
    }

    /// Ground-truth count for one estimation target, when truth is attached.
    pub fn truth_count(&self, target: Target) -> Option<i64> {
        self.truth.as_ref().map(|t| match target {
            Target::Onboard => t.onboard,
            Target::Boarding => t.boarding,
            Target::Alighting => t.alighting,
        })
    }

    /// Regressors with `passenger_mac_count` set to the target's own MAC
    /// count: each population model sees the matching device count.
    pub fn regressors_for(&self, target: Target) -> StopRegressors {
        StopRegressors {
            passenger_mac_count: self.mac_count(target),
            ..self.regressors
        }
    }
}

/// Epoch time of the GPS fix with minimum haversine distance to the station;
/// the earliest fix wins exact ties.
fn closest_approach(gps: &[GpsFix], station: &Station) -> f64 {
    let mut best_t = gps[0].t;
    let mut best_d = f64::INFINITY;
    for f in gps {
        let d = haversine_m(f.lat, f.lon, station.lat, station.lon);
        if d < best_d {
            best_d = d;
            best_t = f.t;
        }
    }
    best_t
}

/// Calendar and time-of-day regressors for a stop served at `stop_time`
/// (UTC; day_of_week 0 = Monday).
fn regressors_at(
    stop_time: f64,
    is_last_stop: bool,
    passenger_mac_count: u64,
) -> Result<StopRegressors> {
    let dt = DateTime::from_timestamp(stop_time.floor() as i64, 0).ok_or_else(|| {
        Error::InvalidInput(format!(
            "stop time {stop_time} outside the representable calendar range"
        ))
    })?;
    StopRegressors::new(
        dt.weekday().num_days_from_monday() as u8,
        dt.hour() as u8,
        dt.minute() as u8,
        is_last_stop,
        passenger_mac_count,
    )
}

/// Per-stop counts for a trip from its O-D matrix: boarding/alighting from
/// the marginals, onboard from the conservation balance, stop times from the
/// vehicle's closest approach, and truth rows attached where available.
pub fn stop_counts(trip: &TripDataset, od: &OdMatrix) -> Result<Vec<StopRecord>> {
    let seqs = station_stop_seqs(&trip.stations)?;
    if seqs != od.stops {
        return Err(Error::InvalidInput(format!(
            "O-D stop list does not match the stations of trip {}",
            trip.trip_id
        )));
    }
    if trip.gps.is_empty() {
        return Err(Error::InvalidInput(format!(
            "trip {} has no GPS fixes",
            trip.trip_id
        )));
    }
    let onboard = onboard_sequence(od);
    let truth_by_seq: BTreeMap<u32, &TruthRow> = trip
        .truth
        .as_deref()
        .unwrap_or(&[])
        .iter()
        .map(|t| (t.stop_seq, t))
        .collect();

    let mut out = Vec::with_capacity(trip.stations.len());
    for (k, station) in trip.stations.iter().enumerate() {
        let stop_time = closest_approach(&trip.gps, station);
        let is_last = k + 1 == trip.stations.len();
        let regressors = regressors_at(stop_time, is_last, onboard[k])?;
        out.push(StopRecord {
            trip_id: trip.trip_id.clone(),
            stop_seq: station.stop_seq,
            stop_time,
            mac_boarding: od.boarding_totals[k],
            mac_alighting: od.alighting_totals[k],
            mac_onboard: onboard[k],
            regressors,
            truth: truth_by_seq.get(&station.stop_seq).map(|&t| t.clone()),
        });
    }
    Ok(out)
}

/// Write an O-D matrix as a CSV grid: a header of alighting stop_seq values,
/// one row per boarding stop closing with its row total, and a final row of
/// alighting totals whose last cell is the grand total.
pub fn write_od_csv(path: impl AsRef<Path>, od: &OdMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = String::from("stop_seq");
    for s in &od.stops {
        header.push_str(&format!(",{s}"));
    }
    header.push_str(",total_boarding");
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for (i, s) in od.stops.iter().enumerate() {
        let mut line = s.to_string();
        for c in &od.cells[i] {
            line.push_str(&format!(",{c}"));
        }
        line.push_str(&format!(",{}", od.boarding_totals[i]));
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    let mut last = String::from("total_alighting");
    for a in &od.alighting_totals {
        last.push_str(&format!(",{a}"));
    }
    last.push_str(&format!(",{}", od.total));
    writeln!(w, "{last}").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One row of `stop_counts.csv` as read back from disk. Truth columns are
/// absent or empty when the trip carried no ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopCountRow {
    pub trip_id: String,
    pub stop_seq: u32,
    pub mac_boarding: u64,
    pub mac_alighting: u64,
    pub mac_onboard: u64,
    pub truth_boarding: Option<i64>,
    pub truth_alighting: Option<i64>,
    pub truth_onboard: Option<i64>,
}

/// Write per-stop counts as `stop_counts.csv`. The three truth columns
/// appear only when at least one record carries truth; rows without truth
/// then leave them empty.
pub fn write_stop_counts_csv(path: impl AsRef<Path>, records: &[StopRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let with_truth = records.iter().any(|r| r.truth.is_some());
    let mut header = String::from("trip_id,stop_seq,mac_boarding,mac_alighting,mac_onboard");
    if with_truth {
        header.push_str(",truth_boarding,truth_alighting,truth_onboard");
    }
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for r in records {
        let mut line = format!(
            "{},{},{},{},{}",
            r.trip_id, r.stop_seq, r.mac_boarding, r.mac_alighting, r.mac_onboard
        );
        if with_truth {
            match &r.truth {
                Some(t) => {
                    line.push_str(&format!(",{},{},{}", t.boarding, t.alighting, t.onboard))
                }
                None => line.push_str(",,,"),
            }
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a `stop_counts.csv` written by [`write_stop_counts_csv`] (truth
/// columns optional).
pub fn read_stop_counts_csv(path: impl AsRef<Path>) -> Result<Vec<StopCountRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| Error::record(path, 1, format!("missing column {name:?}")))
    };
    let trip_i = need("trip_id")?;
    let seq_i = need("stop_seq")?;
    let board_i = need("mac_boarding")?;
    let alight_i = need("mac_alighting")?;
    let onboard_i = need("mac_onboard")?;
    let truth_i = [
        col("truth_boarding"),
        col("truth_alighting"),
        col("truth_onboard"),
    ];

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |i: usize| -> Result<&str> {
            row.get(i)
                .ok_or_else(|| Error::record(path, line, "short row"))
        };
        let parse_u64 = |i: usize, what: &str| -> Result<u64> {
            let s = get(i)?;
            s.parse()
                .map_err(|_| Error::record(path, line, format!("invalid {what} {s:?}")))
        };
        let parse_truth = |slot: Option<usize>, what: &str| -> Result<Option<i64>> {
            match slot {
                Some(i) => {
                    let s = row.get(i).unwrap_or("");
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse().map(Some).map_err(|_| {
                            Error::record(path, line, format!("invalid {what} {s:?}"))
                        })
                    }
                }
                None => Ok(None),
            }
        };
        out.push(StopCountRow {
            trip_id: get(trip_i)?.to_string(),
            stop_seq: u32::from_str(get(seq_i)?)
                .map_err(|_| Error::record(path, line, "invalid stop_seq"))?,
            mac_boarding: parse_u64(board_i, "mac_boarding")?,
            mac_alighting: parse_u64(alight_i, "mac_alighting")?,
            mac_onboard: parse_u64(onboard_i, "mac_onboard")?,
            truth_boarding: parse_truth(truth_i[0], "truth_boarding")?,
            truth_alighting: parse_truth(truth_i[1], "truth_alighting")?,
            truth_onboard: parse_truth(truth_i[2], "truth_onboard")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{assemble_trip, LoadOptions};
    use crate::types::{SensingRecord, EARTH_RADIUS_M};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FIXTURE: &str = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/data/od_pairs_15stop.csv"
    );

    /// The 19 boarding/alighting pairs of the published 15-stop example trip.
    fn fixture_assignments() -> Vec<StopAssignment> {
        let mut reader = csv::Reader::from_path(FIXTURE).expect("fixture present");
        reader
            .records()
            .map(|row| {
                let row = row.expect("fixture row");
                StopAssignment {
                    mac: row[0].to_string(),
                    protocol: Protocol::Wifi,
                    boarding_seq: row[1].parse().expect("boarding_seq"),
                    alighting_seq: row[2].parse().expect("alighting_seq"),
                }
            })
            .collect()
    }

    fn fixture_od() -> OdMatrix {
        let stops: Vec<u32> = (1..=15).collect();
        build_od(&fixture_assignments(), &stops).expect("fixture builds")
    }

    /// Degrees of latitude spanning `meters` on the reference sphere.
    fn lat_deg(meters: f64) -> f64 {
        meters / (EARTH_RADIUS_M * std::f64::consts::PI / 180.0)
    }

    fn station(seq: u32, lat: f64, lon: f64) -> Station {
        Station {
            route_id: "r1".into(),
            stop_seq: seq,
            stop_id: format!("s{seq}"),
            lat,
            lon,
            name: format!("Stop {seq}"),
        }
    }

    fn passenger(mac: &str) -> DeviceLabel {
        DeviceLabel {
            mac: mac.into(),
            protocol: Protocol::Wifi,
            u_passenger: 0.9,
            u_non_passenger: 0.1,
            label: DeviceClass::Passenger,
        }
    }

    /// Four stations 500 m apart along a meridian; the vehicle passes each at
    /// t = base, base+100, base+200, base+300 with intermediate fixes.
    fn four_stop_trip(base_t: f64, sensing: Vec<SensingRecord>) -> TripDataset {
        let stations: Vec<Station> = (0..4)
            .map(|k| station(k as u32 + 1, lat_deg(500.0 * k as f64), 0.0))
            .collect();
        let mut gps = Vec::new();
        for step in 0..=30 {
            gps.push(GpsFix {
                t: base_t + 10.0 * step as f64,
                lat: lat_deg(50.0 * step as f64),
                lon: 0.0,
            });
        }
        let (trip, _) = assemble_trip(
            "t1",
            sensing,
            gps,
            stations,
            None,
            &LoadOptions::default(),
        )
        .expect("assembles");
        trip
    }

    fn wifi(mac: &str, t: f64) -> SensingRecord {
        SensingRecord {
            protocol: Protocol::Wifi,
            mac: mac.into(),
            t,
            rssi: -60,
        }
    }

    #[test]
    fn fixture_reproduces_published_marginals() {
        let od = fixture_od();
        assert_eq!(
            od.boarding_totals,
            vec![2, 1, 2, 1, 1, 1, 4, 0, 2, 2, 1, 1, 1, 0, 0]
        );
        assert_eq!(
            od.alighting_totals,
            vec![0, 0, 0, 1, 0, 2, 1, 3, 1, 1, 1, 2, 2, 3, 2]
        );
        assert_eq!(od.total, 19);
        let cell_sum: u64 = od.cells.iter().flatten().sum();
        assert_eq!(cell_sum, 19);
    }

    #[test]
    fn fixture_matrix_is_strictly_upper_triangular() {
        let od = fixture_od();
        for (b, row) in od.cells.iter().enumerate() {
            for (a, &c) in row.iter().enumerate() {
                if a <= b {
                    assert_eq!(c, 0, "cell ({b}, {a}) below or on the diagonal");
                }
            }
        }
    }

    #[test]
    fn fixture_reproduces_published_onboard_sequence() {
        let od = fixture_od();
        assert_eq!(
            onboard_sequence(&od),
            vec![2, 3, 5, 5, 6, 5, 8, 5, 6, 7, 7, 6, 5, 2, 0]
        );
    }

    #[test]
    fn onboard_matches_conservation_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let s = rng.random_range(2..12usize);
            let stops: Vec<u32> = (1..=s as u32).collect();
            let n = rng.random_range(0..200usize);
            let assignments: Vec<StopAssignment> = (0..n)
                .map(|i| {
                    let b = rng.random_range(1..s as u32);
                    let a = rng.random_range(b + 1..=s as u32);
                    StopAssignment {
                        mac: format!("d{i}"),
                        protocol: Protocol::Wifi,
                        boarding_seq: b,
                        alighting_seq: a,
                    }
                })
                .collect();
            let od = build_od(&assignments, &stops).unwrap();
            assert_eq!(od.total, n as u64);
            assert_eq!(od.boarding_totals.iter().sum::<u64>(), n as u64);
            assert_eq!(od.alighting_totals.iter().sum::<u64>(), n as u64);
            let onboard = onboard_sequence(&od);
            let mut prev = 0i64;
            for k in 0..s {
                let expect =
                    prev + od.boarding_totals[k] as i64 - od.alighting_totals[k] as i64;
                assert_eq!(onboard[k] as i64, expect, "conservation at stop {}", k + 1);
                prev = expect;
            }
            assert_eq!(onboard[s - 1], 0, "everyone alights by the last stop");
        }
    }

    #[test]
    fn empty_assignments_give_zero_matrix() {
        let od = build_od(&[], &[1, 2, 3]).unwrap();
        assert_eq!(od.total, 0);
        assert_eq!(od.boarding_totals, vec![0, 0, 0]);
        assert_eq!(od.alighting_totals, vec![0, 0, 0]);
        assert!(od.cells.iter().flatten().all(|&c| c == 0));
    }

    #[test]
    fn single_pair_fills_one_cell() {
        let one = StopAssignment {
            mac: "d1".into(),
            protocol: Protocol::Wifi,
            boarding_seq: 2,
            alighting_seq: 5,
        };
        let od = build_od(std::slice::from_ref(&one), &(1..=6).collect::<Vec<_>>()).unwrap();
        assert_eq!(od.cells[1][4], 1);
        assert_eq!(od.total, 1);
        assert_eq!(od.boarding_totals, vec![0, 1, 0, 0, 0, 0]);
        assert_eq!(od.alighting_totals, vec![0, 0, 0, 0, 1, 0]);
    }

    #[test]
    fn single_rider_onboard_until_alighting_stop() {
        let one = StopAssignment {
            mac: "d1".into(),
            protocol: Protocol::Wifi,
            boarding_seq: 1,
            alighting_seq: 3,
        };
        let od = build_od(std::slice::from_ref(&one), &[1, 2, 3]).unwrap();
        assert_eq!(onboard_sequence(&od), vec![1, 1, 0]);
    }

    #[test]
    fn build_od_rejects_bad_inputs() {
        let pair = |b, a| StopAssignment {
            mac: "d".into(),
            protocol: Protocol::Wifi,
            boarding_seq: b,
            alighting_seq: a,
        };
        assert!(build_od(&[], &[]).is_err());
        assert!(build_od(&[], &[1, 3, 2]).is_err());
        assert!(build_od(&[pair(2, 2)], &[1, 2, 3]).is_err());
        assert!(build_od(&[pair(3, 1)], &[1, 2, 3]).is_err());
        assert!(build_od(&[pair(1, 9)], &[1, 2, 3]).is_err());
    }

    #[test]
    fn assign_stops_reads_endpoints_and_excludes_same_stop_pairs() {
        // d1 rides stop 1 -> 3; d2 rides stop 3 -> 4; d3 is seen only around
        // stop 2; d4 is labeled non-passenger and must be ignored.
        let sensing = vec![
            wifi("d1", 0.0),
            wifi("d1", 200.0),
            wifi("d2", 210.0),
            wifi("d2", 290.0),
            wifi("d3", 100.0),
            wifi("d3", 110.0),
            wifi("d4", 0.0),
            wifi("d4", 300.0),
        ];
        let trip = four_stop_trip(0.0, sensing);
        let mut labels: Vec<DeviceLabel> = ["d1", "d2", "d3", "d4"]
            .iter()
            .map(|m| passenger(m))
            .collect();
        labels[3].label = DeviceClass::NonPassenger;
        labels[3].u_passenger = 0.1;
        labels[3].u_non_passenger = 0.9;

        let (got, report) =
            assign_stops(&trip, &labels, &AssignmentOptions::default()).unwrap();
        // d1: t=0 -> stop 1, t=200 -> stop 3.
        // d2: t=210 nearest stop 3 (1050 m along), t=290 nearest stop 4.
        // d3: both endpoints nearest stop 2 -> excluded.
        assert_eq!(
            got,
            vec![
                StopAssignment {
                    mac: "d1".into(),
                    protocol: Protocol::Wifi,
                    boarding_seq: 1,
                    alighting_seq: 3,
                },
                StopAssignment {
                    mac: "d2".into(),
                    protocol: Protocol::Wifi,
                    boarding_seq: 3,
                    alighting_seq: 4,
                },
            ]
        );
        assert_eq!(report.n_passenger_devices, 3);
        assert_eq!(report.n_assigned, 2);
        assert_eq!(report.n_swapped, 0);
        assert_eq!(report.n_excluded_same_stop, 1);
        assert_eq!(report.n_excluded_no_station, 0);
    }

    #[test]
    fn assign_stops_swaps_reversed_endpoints() {
        // Endpoints resolve in reverse stop order when the vehicle position
        // at the first detection is already past the position at the last
        // (here: the track runs south past earlier stops).
        let stations: Vec<Station> = (0..3)
            .map(|k| station(k as u32 + 1, lat_deg(500.0 * k as f64), 0.0))
            .collect();
        // Track starts at stop 3 and drives down to stop 1.
        let gps: Vec<GpsFix> = (0..=20)
            .map(|step| GpsFix {
                t: 10.0 * step as f64,
                lat: lat_deg(1000.0 - 50.0 * step as f64),
                lon: 0.0,
            })
            .collect();
        let sensing = vec![wifi("d1", 0.0), wifi("d1", 200.0)];
        let (trip, _) = assemble_trip(
            "t2",
            sensing,
            gps,
            stations,
            None,
            &LoadOptions::default(),
        )
        .unwrap();
        let labels = vec![passenger("d1")];
        let (got, report) =
            assign_stops(&trip, &labels, &AssignmentOptions::default()).unwrap();
        assert_eq!(got[0].boarding_seq, 1);
        assert_eq!(got[0].alighting_seq, 3);
        assert_eq!(report.n_swapped, 1);
        assert_eq!(report.n_assigned, 1);
    }

    #[test]
    fn assign_stops_enforces_station_radius_when_configured() {
        // d1's last detection joins a fix 1750 m up-track, 250 m past the
        // final stop: with no radius it still assigns to stop 4, but with a
        // 60.96 m radius that endpoint has no station and the device is
        // excluded.
        let stations: Vec<Station> = (0..4)
            .map(|k| station(k as u32 + 1, lat_deg(500.0 * k as f64), 0.0))
            .collect();
        let gps: Vec<GpsFix> = (0..=35)
            .map(|step| GpsFix {
                t: 10.0 * step as f64,
                lat: lat_deg(50.0 * step as f64),
                lon: 0.0,
            })
            .collect();
        let sensing = vec![wifi("d1", 0.0), wifi("d1", 350.0)];
        let (trip, _) = assemble_trip(
            "t3",
            sensing,
            gps,
            stations,
            None,
            &LoadOptions::default(),
        )
        .unwrap();
        let labels = vec![passenger("d1")];
        let open = AssignmentOptions::default();
        let (got, _) = assign_stops(&trip, &labels, &open).unwrap();
        assert_eq!(got[0].alighting_seq, 4);
        let tight = AssignmentOptions {
            max_station_dist_m: Some(60.96),
        };
        let (got, report) = assign_stops(&trip, &labels, &tight).unwrap();
        assert!(got.is_empty());
        assert_eq!(report.n_excluded_no_station, 1);
        assert_eq!(report.n_assigned, 0);
    }

    #[test]
    fn assign_stops_errors_on_unseen_device() {
        let trip = four_stop_trip(0.0, vec![wifi("d1", 0.0), wifi("d1", 200.0)]);
        let labels = vec![passenger("ghost")];
        let err = assign_stops(&trip, &labels, &AssignmentOptions::default());
        assert!(err.is_err());
        let msg = err.unwrap_err().to_string();
        assert!(msg.contains("ghost"), "message names the device: {msg}");
    }

    #[test]
    fn stop_counts_carry_conservation_and_calendar_regressors() {
        // 2021-03-02 (a Tuesday) 14:30:00 UTC.
        let base = 1_614_695_400.0;
        let sensing = vec![
            wifi("d1", 0.0 + base),
            wifi("d1", 200.0 + base),
            wifi("d2", 100.0 + base),
            wifi("d2", 300.0 + base),
            wifi("d3", 0.0 + base),
            wifi("d3", 300.0 + base),
        ];
        let trip = four_stop_trip(base, sensing);
        let labels: Vec<DeviceLabel> =
            ["d1", "d2", "d3"].iter().map(|m| passenger(m)).collect();
        let (assignments, _) =
            assign_stops(&trip, &labels, &AssignmentOptions::default()).unwrap();
        let od = build_od(&assignments, &station_stop_seqs(&trip.stations).unwrap()).unwrap();
        let records = stop_counts(&trip, &od).unwrap();

        assert_eq!(records.len(), 4);
        let boarding: Vec<u64> = records.iter().map(|r| r.mac_boarding).collect();
        let alighting: Vec<u64> = records.iter().map(|r| r.mac_alighting).collect();
        let onboard: Vec<u64> = records.iter().map(|r| r.mac_onboard).collect();
        assert_eq!(boarding, vec![2, 1, 0, 0]);
        assert_eq!(alighting, vec![0, 0, 1, 2]);
        assert_eq!(onboard, vec![2, 3, 2, 0]);
        for (k, r) in records.iter().enumerate() {
            assert_eq!(r.trip_id, "t1");
            assert_eq!(r.stop_seq, k as u32 + 1);
            // Stops sit at 0/500/1000/1500 m; closest approach every 100 s.
            assert_eq!(r.stop_time, base + 100.0 * k as f64);
            assert_eq!(r.regressors.day_of_week, 1, "Tuesday");
            assert_eq!(r.regressors.hour_of_day, 14);
            assert_eq!(r.regressors.minute_of_hour as usize, 30 + (100 * k) / 60);
            assert_eq!(r.regressors.is_last_stop, k == 3);
            assert_eq!(r.regressors.passenger_mac_count, r.mac_onboard);
            assert_eq!(
                r.regressors_for(Target::Boarding).passenger_mac_count,
                r.mac_boarding
            );
            assert_eq!(
                r.regressors_for(Target::Alighting).passenger_mac_count,
                r.mac_alighting
            );
            assert!(r.truth.is_none());
        }
    }

    #[test]
    fn stop_counts_attach_truth_rows() {
        let base = 1_614_695_400.0;
        let sensing = vec![wifi("d1", base), wifi("d1", base + 200.0)];
        let stations: Vec<Station> = (0..4)
            .map(|k| station(k as u32 + 1, lat_deg(500.0 * k as f64), 0.0))
            .collect();
        let gps: Vec<GpsFix> = (0..=30)
            .map(|step| GpsFix {
                t: base + 10.0 * step as f64,
                lat: lat_deg(50.0 * step as f64),
                lon: 0.0,
            })
            .collect();
        // Conservation-consistent: onboard = running boarding − alighting.
        let truth_boarding = [3i64, 1, 0, 0];
        let truth_alighting = [0i64, 0, 2, 2];
        let truth_onboard = [3i64, 4, 2, 0];
        let truth: Vec<TruthRow> = (0..4)
            .map(|k| TruthRow {
                trip_id: "t1".into(),
                stop_seq: k as u32 + 1,
                boarding: truth_boarding[k],
                alighting: truth_alighting[k],
                onboard: truth_onboard[k],
            })
            .collect();
        let (trip, _) = assemble_trip(
            "t1",
            sensing,
            gps,
            stations,
            Some(truth),
            &LoadOptions::default(),
        )
        .unwrap();
        let (assignments, _) =
            assign_stops(&trip, &[passenger("d1")], &AssignmentOptions::default()).unwrap();
        let od = build_od(&assignments, &station_stop_seqs(&trip.stations).unwrap()).unwrap();
        let records = stop_counts(&trip, &od).unwrap();
        for (k, r) in records.iter().enumerate() {
            let t = r.truth.as_ref().expect("truth attached");
            assert_eq!(t.stop_seq, k as u32 + 1);
            assert_eq!(r.truth_count(Target::Boarding), Some(truth_boarding[k]));
            assert_eq!(r.truth_count(Target::Alighting), Some(truth_alighting[k]));
            assert_eq!(r.truth_count(Target::Onboard), Some(truth_onboard[k]));
        }
    }

    #[test]
    fn od_csv_matches_published_grid_layout() {
        let pairs = [(1u32, 2u32), (1, 3), (2, 3), (2, 3)];
        let assignments: Vec<StopAssignment> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(b, a))| StopAssignment {
                mac: format!("d{i}"),
                protocol: Protocol::Wifi,
                boarding_seq: b,
                alighting_seq: a,
            })
            .collect();
        let od = build_od(&assignments, &[1, 2, 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("od_matrix.csv");
        write_od_csv(&path, &od).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "stop_seq,1,2,3,total_boarding\n\
             1,0,1,1,2\n\
             2,0,0,2,2\n\
             3,0,0,0,0\n\
             total_alighting,0,1,3,4\n"
        );
    }

    #[test]
    fn stop_counts_csv_round_trips_with_truth() {
        let base = 1_614_695_400.0;
        let regressors = regressors_at(base, false, 5).unwrap();
        let records = vec![
            StopRecord {
                trip_id: "t1".into(),
                stop_seq: 1,
                stop_time: base,
                mac_boarding: 5,
                mac_alighting: 0,
                mac_onboard: 5,
                regressors,
                truth: Some(TruthRow {
                    trip_id: "t1".into(),
                    stop_seq: 1,
                    boarding: 12,
                    alighting: 0,
                    onboard: 12,
                }),
            },
            StopRecord {
                trip_id: "t1".into(),
                stop_seq: 2,
                stop_time: base + 60.0,
                mac_boarding: 0,
                mac_alighting: 5,
                mac_onboard: 0,
                regressors,
                truth: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stop_counts.csv");
        write_stop_counts_csv(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "trip_id,stop_seq,mac_boarding,mac_alighting,mac_onboard,\
             truth_boarding,truth_alighting,truth_onboard"
        );
        let rows = read_stop_counts_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].mac_boarding, 5);
        assert_eq!(rows[0].truth_boarding, Some(12));
        assert_eq!(rows[0].truth_onboard, Some(12));
        assert_eq!(rows[1].mac_alighting, 5);
        assert_eq!(rows[1].truth_boarding, None);
    }

    #[test]
    fn stop_counts_csv_omits_truth_columns_when_absent() {
        let regressors = regressors_at(1_614_695_400.0, true, 0).unwrap();
        let records = vec![StopRecord {
            trip_id: "t9".into(),
            stop_seq: 7,
            stop_time: 1_614_695_400.0,
            mac_boarding: 1,
            mac_alighting: 2,
            mac_onboard: 3,
            regressors,
            truth: None,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stop_counts.csv");
        write_stop_counts_csv(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "trip_id,stop_seq,mac_boarding,mac_alighting,mac_onboard\nt9,7,1,2,3\n"
        );
        let rows = read_stop_counts_csv(&path).unwrap();
        assert_eq!(rows[0].truth_boarding, None);
        assert_eq!(rows[0].mac_onboard, 3);
    }

    #[test]
    fn station_stop_seqs_validates_ordering() {
        let good = vec![station(1, 0.0, 0.0), station(2, 0.1, 0.0)];
        assert_eq!(station_stop_seqs(&good).unwrap(), vec![1, 2]);
        let mut bad = good.clone();
        bad[1].stop_seq = 1;
        assert!(station_stop_seqs(&bad).is_err());
        assert!(station_stop_seqs(&[]).is_err());
    }

    #[test]
    fn no_passengers_give_all_zero_counts() {
        let trip = four_stop_trip(1_614_695_400.0, vec![wifi("d1", 1_614_695_400.0)]);
        let (assignments, report) =
            assign_stops(&trip, &[], &AssignmentOptions::default()).unwrap();
        assert!(assignments.is_empty());
        assert_eq!(report.n_passenger_devices, 0);
        let od = build_od(&assignments, &station_stop_seqs(&trip.stations).unwrap()).unwrap();
        let records = stop_counts(&trip, &od).unwrap();
        assert!(records
            .iter()
            .all(|r| r.mac_boarding == 0 && r.mac_alighting == 0 && r.mac_onboard == 0));
    }
}
