//! Per-device feature extraction: collapse a trip's joined detections into
//! one nine-feature vector per unique (mac, protocol).
//!
//! Feature order (also the CSV column order after `mac,protocol`):
//!
//! | idx | name                | meaning                                          |
//! |-----|---------------------|--------------------------------------------------|
//! | 0   | `n_detections`      | times the device was seen                        |
//! | 1   | `duration_s`        | t_last − t_first over its detections             |
//! | 2   | `avg_rssi`          | mean RSSI (dBm, arithmetic mean)                 |
//! | 3   | `max_rssi`          | strongest RSSI (dBm)                             |
//! | 4   | `least_dist_start_m`| vehicle-to-nearest-station distance at first sight |
//! | 5   | `least_dist_end_m`  | same at last sight                               |
//! | 6   | `travel_dist_m`     | vehicle path length within the detection window  |
//! | 7   | `avg_speed_mps`     | travel_dist / duration                           |
//! | 8   | `max_speed_mps`     | max per-GPS-segment speed within the window      |
//!
//! Long-dwell, high-RSSI, long-travel vectors are the signature of devices
//! riding the vehicle; short-blip vectors belong to roadside noise. The
//! clustering and filter stages both consume these vectors unchanged.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::ingest::TripDataset;
use crate::par;
use crate::types::{haversine_m, DeviceClass, GpsFix, Protocol};
use crate::Result;

/// Number of features per device.
pub const N_FEATURES: usize = 9;

/// Canonical feature names, in vector order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "n_detections",
    "duration_s",
    "avg_rssi",
    "max_rssi",
    "least_dist_start_m",
    "least_dist_end_m",
    "travel_dist_m",
    "avg_speed_mps",
    "max_speed_mps",
];

/// Index of `duration_s`, the feature used to designate the passenger
/// cluster after clustering (on-vehicle devices dwell far longer than
/// passers-by).
pub const DURATION_IDX: usize = 1;

/// One device's extracted features, plus an optional truth label carried
/// through from synthetic or annotated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacFeatureVector {
    pub mac: String,
    pub protocol: Protocol,
    pub values: [f64; N_FEATURES],
    pub label: Option<DeviceClass>,
}

impl MacFeatureVector {
    pub fn n_detections(&self) -> f64 {
        self.values[0]
    }
    pub fn duration_s(&self) -> f64 {
        self.values[1]
    }
    pub fn avg_rssi(&self) -> f64 {
        self.values[2]
    }
    pub fn max_rssi(&self) -> f64 {
        self.values[3]
    }
    pub fn least_dist_start_m(&self) -> f64 {
        self.values[4]
    }
    pub fn least_dist_end_m(&self) -> f64 {
        self.values[5]
    }
    pub fn travel_dist_m(&self) -> f64 {
        self.values[6]
    }
    pub fn avg_speed_mps(&self) -> f64 {
        self.values[7]
    }
    pub fn max_speed_mps(&self) -> f64 {
        self.values[8]
    }
}

/// Knobs for [`extract_features`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractOptions {
    /// Per-segment speeds above this are clamped (GPS glitches produce
    /// physically impossible segment speeds). Both speed features are capped;
    /// occurrences are counted in the report.
    pub speed_cap_mps: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions { speed_cap_mps: 45.0 }
    }
}

/// Side counters from an extraction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub unique_devices: u64,
    /// Number of speed values (segment max or window average) clamped at the
    /// cap.
    pub speed_cap_events: u64,
}

/// Compute one feature vector per unique (mac, protocol) in the trip.
///
/// Output is sorted by (mac, protocol) so results are independent of input
/// order and parallel schedule.
pub fn extract_features(
    trip: &TripDataset,
    options: &ExtractOptions,
) -> Result<(Vec<MacFeatureVector>, ExtractReport)> {
    if trip.records.is_empty() {
        return Err(Error::InvalidInput(
            "cannot extract features from a trip with no joined detections".into(),
        ));
    }
    if trip.stations.is_empty() {
        return Err(Error::InvalidInput("empty station table".into()));
    }

    // Records are canonically time-sorted, so each group's detection list is
    // already in chronological order.
    let mut groups: BTreeMap<(&str, Protocol), Vec<usize>> = BTreeMap::new();
    for (i, r) in trip.records.iter().enumerate() {
        groups.entry((r.mac.as_str(), r.protocol)).or_default().push(i);
    }
    let groups: Vec<((&str, Protocol), Vec<usize>)> = groups.into_iter().collect();

    let results = par::map_indexed(&groups, |((mac, protocol), indices)| {
        let (values, cap_events) = featurize_group(trip, indices, options);
        (
            MacFeatureVector {
                mac: (*mac).to_string(),
                protocol: *protocol,
                values,
                label: None,
            },
            cap_events,
        )
    });

    let mut vectors = Vec::with_capacity(results.len());
    let mut speed_cap_events = 0u64;
    for (v, cap) in results {
        speed_cap_events += cap;
        vectors.push(v);
    }
    let report = ExtractReport {
        unique_devices: vectors.len() as u64,
        speed_cap_events,
    };
    Ok((vectors, report))
}

fn featurize_group(
    trip: &TripDataset,
    indices: &[usize],
    options: &ExtractOptions,
) -> ([f64; N_FEATURES], u64) {
    let first = &trip.records[indices[0]];
    let last = &trip.records[indices[indices.len() - 1]];
    let n = indices.len() as f64;
    let duration = last.t - first.t;

    let mut rssi_sum = 0.0;
    let mut rssi_max = f64::NEG_INFINITY;
    for &i in indices {
        let r = f64::from(trip.records[i].rssi);
        rssi_sum += r;
        rssi_max = rssi_max.max(r);
    }

    let least_start = nearest_station_dist(trip, first.lat, first.lon);
    let least_end = nearest_station_dist(trip, last.lat, last.lon);

    let (travel, max_speed_raw) = window_travel(&trip.gps, first.t, last.t);
    let mut cap_events = 0u64;
    let mut max_speed = max_speed_raw;
    if max_speed > options.speed_cap_mps {
        max_speed = options.speed_cap_mps;
        cap_events += 1;
    }
    let mut avg_speed = if duration > 0.0 { travel / duration } else { 0.0 };
    if avg_speed > options.speed_cap_mps {
        avg_speed = options.speed_cap_mps;
        cap_events += 1;
    }

    (
        [
            n,
            duration,
            rssi_sum / n,
            rssi_max,
            least_start,
            least_end,
            travel,
            avg_speed,
            max_speed,
        ],
        cap_events,
    )
}

fn nearest_station_dist(trip: &TripDataset, lat: f64, lon: f64) -> f64 {
    trip.stations
        .iter()
        .map(|s| haversine_m(lat, lon, s.lat, s.lon))
        .fold(f64::INFINITY, f64::min)
}

/// Path length and max per-segment speed over the GPS fixes inside
/// [t_first, t_last]. Returns (0, 0) when fewer than two fixes fall in the
/// window.
fn window_travel(gps: &[GpsFix], t_first: f64, t_last: f64) -> (f64, f64) {
    let start = gps.partition_point(|f| f.t < t_first);
    let end = gps.partition_point(|f| f.t <= t_last);
    let window = &gps[start..end];
    if window.len() < 2 {
        return (0.0, 0.0);
    }
    let mut travel = 0.0;
    let mut max_speed = 0.0f64;
    for pair in window.windows(2) {
        let d = haversine_m(pair[0].lat, pair[0].lon, pair[1].lat, pair[1].lon);
        travel += d;
        let dt = pair[1].t - pair[0].t;
        if dt > 0.0 {
            max_speed = max_speed.max(d / dt);
        }
    }
    (travel, max_speed)
}

/// Per-feature min/max/mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Summary over a (possibly label-filtered) set of feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub count: usize,
    pub stats: [FeatureStats; N_FEATURES],
}

/// Summarize features, optionally restricted to vectors carrying the given
/// truth label. Errors when the (filtered) set is empty.
pub fn summarize_features(
    vectors: &[MacFeatureVector],
    label: Option<DeviceClass>,
) -> Result<FeatureSummary> {
    let selected: Vec<&MacFeatureVector> = vectors
        .iter()
        .filter(|v| label.is_none() || v.label == label)
        .collect();
    if selected.is_empty() {
        return Err(Error::InvalidInput(
            "cannot summarize an empty feature set".into(),
        ));
    }
    let n = selected.len() as f64;
    let mut stats = [FeatureStats {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        mean: 0.0,
        sd: 0.0,
    }; N_FEATURES];
    for f in 0..N_FEATURES {
        let mut sum = 0.0;
        for v in &selected {
            let x = v.values[f];
            stats[f].min = stats[f].min.min(x);
            stats[f].max = stats[f].max.max(x);
            sum += x;
        }
        let mean = sum / n;
        let mut ss = 0.0;
        for v in &selected {
            let d = v.values[f] - mean;
            ss += d * d;
        }
        stats[f].mean = mean;
        // Population convention: divide by n, not n-1.
        stats[f].sd = (ss / n).sqrt();
    }
    Ok(FeatureSummary {
        count: selected.len(),
        stats,
    })
}

/// Write vectors as `features.csv`. The `label` column appears only when at
/// least one vector is labeled; unlabeled rows then leave it empty.
pub fn write_features_csv(path: impl AsRef<Path>, vectors: &[MacFeatureVector]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let with_label = vectors.iter().any(|v| v.label.is_some());
    let mut header = format!("mac,protocol,{}", FEATURE_NAMES.join(","));
    if with_label {
        header.push_str(",label");
    }
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for v in vectors {
        let mut line = format!("{},{}", v.mac, v.protocol);
        for (i, x) in v.values.iter().enumerate() {
            if i == 0 {
                // Detection counts are integral; print them as such.
                line.push_str(&format!(",{}", *x as u64));
            } else {
                line.push_str(&format!(",{x}"));
            }
        }
        if with_label {
            match v.label {
                Some(l) => line.push_str(&format!(",{l}")),
                None => line.push(','),
            }
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a `features.csv` written by [`write_features_csv`] (label column
/// optional).
pub fn read_features_csv(path: impl AsRef<Path>) -> Result<Vec<MacFeatureVector>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mac_i = col("mac").ok_or_else(|| Error::record(path, 1, "missing column \"mac\""))?;
    let proto_i =
        col("protocol").ok_or_else(|| Error::record(path, 1, "missing column \"protocol\""))?;
    let mut feat_i = [0usize; N_FEATURES];
    for (k, name) in FEATURE_NAMES.iter().enumerate() {
        feat_i[k] =
            col(name).ok_or_else(|| Error::record(path, 1, format!("missing column {name:?}")))?;
    }
    let label_i = col("label");

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |i: usize| -> Result<&str> {
            row.get(i)
                .ok_or_else(|| Error::record(path, line, "short row"))
        };
        let mut values = [0.0; N_FEATURES];
        for (k, &i) in feat_i.iter().enumerate() {
            let s = get(i)?;
            values[k] = s.parse().map_err(|_| {
                Error::record(path, line, format!("invalid {} {s:?}", FEATURE_NAMES[k]))
            })?;
        }
        let label = match label_i {
            Some(i) => {
                let s = get(i)?;
                if s.is_empty() {
                    None
                } else {
                    Some(
                        DeviceClass::from_str(s)
                            .map_err(|e| Error::record(path, line, e))?,
                    )
                }
            }
            None => None,
        };
        out.push(MacFeatureVector {
            mac: get(mac_i)?.to_string(),
            protocol: Protocol::from_str(get(proto_i)?)
                .map_err(|e| Error::record(path, line, e))?,
            values,
            label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{assemble_trip, LoadOptions};
    use crate::types::{SensingRecord, Station, EARTH_RADIUS_M};
    use approx::assert_relative_eq;

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

    fn rec(mac: &str, t: f64, rssi: i32) -> SensingRecord {
        SensingRecord {
            protocol: Protocol::Wifi,
            mac: mac.into(),
            t,
            rssi,
        }
    }

    fn stationary_trip(records: Vec<SensingRecord>) -> TripDataset {
        let gps = (0..41)
            .map(|i| GpsFix {
                t: f64::from(i) * 0.5,
                lat: 47.6,
                lon: -122.3,
            })
            .collect();
        let stations = vec![station(1, 47.6, -122.3)];
        assemble_trip("t", records, gps, stations, None, &LoadOptions::default())
            .unwrap()
            .0
    }

    #[test]
    fn single_detection_degenerate_case() {
        let trip = stationary_trip(vec![rec("aa", 5.0, -60)]);
        let (vectors, report) = extract_features(&trip, &ExtractOptions::default()).unwrap();
        assert_eq!(vectors.len(), 1);
        let v = &vectors[0];
        assert_eq!(v.n_detections(), 1.0);
        assert_eq!(v.duration_s(), 0.0);
        assert_eq!(v.avg_rssi(), -60.0);
        assert_eq!(v.max_rssi(), -60.0);
        assert_eq!(v.travel_dist_m(), 0.0);
        assert_eq!(v.avg_speed_mps(), 0.0);
        assert_eq!(v.max_speed_mps(), 0.0);
        assert_eq!(report.unique_devices, 1);
    }

    #[test]
    fn stationary_two_detection_arithmetic() {
        let trip = stationary_trip(vec![rec("aa", 0.0, -60), rec("aa", 10.0, -50)]);
        let (vectors, _) = extract_features(&trip, &ExtractOptions::default()).unwrap();
        let v = &vectors[0];
        assert_eq!(v.n_detections(), 2.0);
        assert_eq!(v.duration_s(), 10.0);
        assert_eq!(v.avg_rssi(), -55.0);
        assert_eq!(v.max_rssi(), -50.0);
        assert_eq!(v.travel_dist_m(), 0.0);
        assert_eq!(v.avg_speed_mps(), 0.0);
        assert_eq!(v.max_speed_mps(), 0.0);
    }

    #[test]
    fn linear_motion_travel_and_speeds() {
        // Vehicle moves 100 m north over 10 s, fixes every 0.5 s.
        let gps: Vec<GpsFix> = (0..=20)
            .map(|i| GpsFix {
                t: f64::from(i) * 0.5,
                lat: 47.6 + lat_deg(f64::from(i) * 5.0),
                lon: -122.3,
            })
            .collect();
        let stations = vec![station(1, 47.6, -122.3)];
        let records = vec![rec("aa", 0.0, -60), rec("aa", 10.0, -50)];
        let trip = assemble_trip("t", records, gps, stations, None, &LoadOptions::default())
            .unwrap()
            .0;
        let (vectors, _) = extract_features(&trip, &ExtractOptions::default()).unwrap();
        let v = &vectors[0];
        assert_relative_eq!(v.travel_dist_m(), 100.0, max_relative = 0.01);
        assert_relative_eq!(v.avg_speed_mps(), 10.0, max_relative = 0.01);
        assert_relative_eq!(v.max_speed_mps(), 10.0, max_relative = 0.01);
        assert!(v.max_speed_mps() >= v.avg_speed_mps());
    }

    #[test]
    fn speed_cap_clamps_and_counts() {
        // A 5000 m jump in one 0.5 s segment: 10,000 m/s, clearly a glitch.
        let gps = vec![
            GpsFix {
                t: 0.0,
                lat: 47.6,
                lon: -122.3,
            },
            GpsFix {
                t: 0.5,
                lat: 47.6 + lat_deg(5000.0),
                lon: -122.3,
            },
        ];
        let stations = vec![station(1, 47.6, -122.3)];
        let records = vec![rec("aa", 0.0, -60), rec("aa", 0.5, -50)];
        let trip = assemble_trip("t", records, gps, stations, None, &LoadOptions::default())
            .unwrap()
            .0;
        let (vectors, report) = extract_features(&trip, &ExtractOptions::default()).unwrap();
        let v = &vectors[0];
        assert_eq!(v.max_speed_mps(), 45.0);
        assert_eq!(v.avg_speed_mps(), 45.0);
        assert!(v.max_speed_mps() >= v.avg_speed_mps());
        assert_eq!(report.speed_cap_events, 2);
    }

    #[test]
    fn permutation_of_input_rows_changes_nothing() {
        let records = vec![
            rec("aa", 0.0, -60),
            rec("aa", 10.0, -50),
            rec("bb", 3.0, -70),
            rec("bb", 4.0, -80),
        ];
        let mut shuffled = records.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        let (a, _) = extract_features(&stationary_trip(records), &ExtractOptions::default())
            .unwrap();
        let (b, _) = extract_features(&stationary_trip(shuffled), &ExtractOptions::default())
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adding_a_detection_is_monotone() {
        let base = vec![rec("aa", 2.0, -60), rec("aa", 8.0, -62)];
        let mut more = base.clone();
        more.push(rec("aa", 9.5, -64));
        let (va, _) = extract_features(&stationary_trip(base), &ExtractOptions::default())
            .unwrap();
        let (vb, _) = extract_features(&stationary_trip(more), &ExtractOptions::default())
            .unwrap();
        assert!(vb[0].n_detections() > va[0].n_detections());
        assert!(vb[0].duration_s() >= va[0].duration_s());
    }

    #[test]
    fn least_dist_is_a_true_minimum_over_stations() {
        let stations = vec![
            station(1, 47.6, -122.3),
            station(2, 47.61, -122.3),
            station(3, 47.62, -122.3),
        ];
        let gps = vec![GpsFix {
            t: 0.0,
            lat: 47.605,
            lon: -122.3,
        }];
        let records = vec![rec("aa", 0.0, -60)];
        let trip = assemble_trip(
            "t",
            records,
            gps,
            stations.clone(),
            None,
            &LoadOptions::default(),
        )
        .unwrap()
        .0;
        let (vectors, _) = extract_features(&trip, &ExtractOptions::default()).unwrap();
        let v = &vectors[0];
        for s in &stations {
            let d = haversine_m(47.605, -122.3, s.lat, s.lon);
            assert!(v.least_dist_start_m() <= d + 1e-9);
            assert!(v.least_dist_end_m() <= d + 1e-9);
        }
    }

    #[test]
    fn max_rssi_at_least_avg_rssi() {
        let trip = stationary_trip(vec![
            rec("aa", 0.0, -80),
            rec("aa", 1.0, -60),
            rec("aa", 2.0, -75),
        ]);
        let (vectors, _) = extract_features(&trip, &ExtractOptions::default()).unwrap();
        assert!(vectors[0].max_rssi() >= vectors[0].avg_rssi());
    }

    #[test]
    fn wifi_and_bt_records_of_same_mac_stay_separate() {
        let mut records = vec![rec("aa", 0.0, -60), rec("aa", 5.0, -61)];
        records.push(SensingRecord {
            protocol: Protocol::Bluetooth,
            mac: "aa".into(),
            t: 2.0,
            rssi: -70,
        });
        let trip = stationary_trip(records);
        let (vectors, _) = extract_features(&trip, &ExtractOptions::default()).unwrap();
        assert_eq!(vectors.len(), 2);
        assert_eq!(vectors[0].protocol, Protocol::Wifi);
        assert_eq!(vectors[1].protocol, Protocol::Bluetooth);
        assert_eq!(vectors[0].n_detections(), 2.0);
        assert_eq!(vectors[1].n_detections(), 1.0);
    }

    #[test]
    fn summarize_matches_hand_arithmetic() {
        let mk = |n: f64| MacFeatureVector {
            mac: format!("m{n}"),
            protocol: Protocol::Wifi,
            values: [n, 0.0, -60.0, -55.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            label: None,
        };
        let one = summarize_features(&[mk(3.0)], None).unwrap();
        assert_eq!(one.stats[0].min, 3.0);
        assert_eq!(one.stats[0].max, 3.0);
        assert_eq!(one.stats[0].mean, 3.0);
        assert_eq!(one.stats[0].sd, 0.0);

        let two = summarize_features(&[mk(2.0), mk(4.0)], None).unwrap();
        assert_eq!(two.stats[0].mean, 3.0);
        assert_eq!(two.stats[0].sd, 1.0);
    }

    #[test]
    fn summarize_by_label_filters() {
        let mut a = MacFeatureVector {
            mac: "a".into(),
            protocol: Protocol::Wifi,
            values: [10.0; N_FEATURES],
            label: Some(DeviceClass::Passenger),
        };
        a.values[0] = 10.0;
        let b = MacFeatureVector {
            mac: "b".into(),
            protocol: Protocol::Wifi,
            values: [2.0; N_FEATURES],
            label: Some(DeviceClass::NonPassenger),
        };
        let vectors = vec![a, b];
        let p = summarize_features(&vectors, Some(DeviceClass::Passenger)).unwrap();
        assert_eq!(p.count, 1);
        assert_eq!(p.stats[0].mean, 10.0);
        assert!(summarize_features(&[], None).is_err());
    }

    #[test]
    fn features_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        let vectors = vec![
            MacFeatureVector {
                mac: "aa:bb".into(),
                protocol: Protocol::Wifi,
                values: [5.0, 123.5, -60.25, -50.0, 12.5, 30.0, 900.125, 7.5, 12.25],
                label: Some(DeviceClass::Passenger),
            },
            MacFeatureVector {
                mac: "cc:dd".into(),
                protocol: Protocol::Bluetooth,
                values: [1.0, 0.0, -80.0, -80.0, 200.0, 200.0, 0.0, 0.0, 0.0],
                label: None,
            },
        ];
        write_features_csv(&path, &vectors).unwrap();
        let back = read_features_csv(&path).unwrap();
        assert_eq!(back, vectors);
    }
}
