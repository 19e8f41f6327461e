//! Threshold-rule baselines for passenger / non-passenger separation.
//!
//! Two published filter designs, kept at their fixed thresholds (imperial
//! figures converted at exactly 0.3048 m/ft):
//!
//! - Method 1: minimum detection count (per protocol), minimum detection
//!   duration, and a maximum first/last distance-to-nearest-stop rule.
//! - Method 2: minimum duration, a per-trip max-RSSI percentile floor,
//!   minimum travel distance, and a minimum detections-per-mile density;
//!   its stop assignment additionally restricts candidate stations to a
//!   200 ft radius (carried in the config for the ridership stage).
//!
//! Both are deterministic and order-independent; labels come out in input
//! order with crisp 0/1 memberships so they export in the same format as the
//! clustering methods.

use crate::cluster::DeviceLabel;
use crate::error::Error;
use crate::features::MacFeatureVector;
use crate::types::{DeviceClass, Protocol};
use crate::Result;

/// Exact imperial-to-metric conversion factors.
pub const METERS_PER_FOOT: f64 = 0.3048;
pub const METERS_PER_MILE: f64 = 1609.344;

/// How Method 1's endpoint-distance condition combines the first- and
/// last-detection distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EndpointDistanceMode {
    /// Non-passenger only when *both* distances exceed the threshold
    /// (default reading of the published rule).
    #[default]
    Both,
    /// Non-passenger when *either* distance exceeds the threshold.
    Either,
}

/// Thresholds for filtering method 1.
#[derive(Debug, Clone)]
pub struct Fm1Config {
    /// Wi-Fi devices need at least this many detections.
    pub wifi_min_detections: f64,
    /// Bluetooth devices need at least this many detections. The published
    /// figure is 1, which a literal "fewer than 1" reading never triggers
    /// for a detected device.
    pub bt_min_detections: f64,
    /// Alternate reading of the Bluetooth count rule: treat the bound as
    /// inclusive ("1 or fewer"), which does trigger at one detection.
    pub bt_count_inclusive: bool,
    /// Minimum detection duration, seconds.
    pub min_duration_s: f64,
    /// Endpoint distance ceiling for Wi-Fi (600 ft).
    pub wifi_max_endpoint_dist_m: f64,
    /// Endpoint distance ceiling for Bluetooth (300 ft).
    pub bt_max_endpoint_dist_m: f64,
    pub endpoint_mode: EndpointDistanceMode,
}

impl Default for Fm1Config {
    fn default() -> Self {
        Fm1Config {
            wifi_min_detections: 3.0,
            bt_min_detections: 1.0,
            bt_count_inclusive: false,
            min_duration_s: 60.0,
            wifi_max_endpoint_dist_m: 600.0 * METERS_PER_FOOT,
            bt_max_endpoint_dist_m: 300.0 * METERS_PER_FOOT,
            endpoint_mode: EndpointDistanceMode::Both,
        }
    }
}

/// Thresholds for filtering method 2.
#[derive(Debug, Clone)]
pub struct Fm2Config {
    /// Minimum detection duration, seconds (3 minutes).
    pub min_duration_s: f64,
    /// Devices whose max RSSI falls strictly below this percentile of the
    /// trip's per-device max-RSSI distribution are non-passengers.
    pub rssi_percentile: f64,
    /// Minimum travel distance while detected (900 ft).
    pub min_travel_m: f64,
    /// Minimum detection density over the travelled distance.
    pub min_detections_per_mile: f64,
    /// Candidate-station radius for this method's stop assignment (200 ft);
    /// consumed by the ridership stage, not by labeling.
    pub station_radius_m: f64,
}

impl Default for Fm2Config {
    fn default() -> Self {
        Fm2Config {
            min_duration_s: 180.0,
            rssi_percentile: 20.0,
            min_travel_m: 900.0 * METERS_PER_FOOT,
            min_detections_per_mile: 10.0,
            station_radius_m: 200.0 * METERS_PER_FOOT,
        }
    }
}

fn crisp_label(v: &MacFeatureVector, class: DeviceClass) -> DeviceLabel {
    let passenger = class == DeviceClass::Passenger;
    DeviceLabel {
        mac: v.mac.clone(),
        protocol: v.protocol,
        u_passenger: if passenger { 1.0 } else { 0.0 },
        u_non_passenger: if passenger { 0.0 } else { 1.0 },
        label: class,
    }
}

/// Classify one device under method 1.
pub fn fm1_label(v: &MacFeatureVector, config: &Fm1Config) -> DeviceClass {
    let n = v.n_detections();
    let too_few = match v.protocol {
        Protocol::Wifi => n < config.wifi_min_detections,
        Protocol::Bluetooth => {
            if config.bt_count_inclusive {
                n <= config.bt_min_detections
            } else {
                n < config.bt_min_detections
            }
        }
    };
    let too_short = v.duration_s() < config.min_duration_s;
    let dist_ceiling = match v.protocol {
        Protocol::Wifi => config.wifi_max_endpoint_dist_m,
        Protocol::Bluetooth => config.bt_max_endpoint_dist_m,
    };
    let start_far = v.least_dist_start_m() > dist_ceiling;
    let end_far = v.least_dist_end_m() > dist_ceiling;
    let too_far = match config.endpoint_mode {
        EndpointDistanceMode::Both => start_far && end_far,
        EndpointDistanceMode::Either => start_far || end_far,
    };
    if too_few || too_short || too_far {
        DeviceClass::NonPassenger
    } else {
        DeviceClass::Passenger
    }
}

/// Run method 1 over a featurized trip.
pub fn fm1_run(vectors: &[MacFeatureVector], config: &Fm1Config) -> Vec<DeviceLabel> {
    vectors
        .iter()
        .map(|v| crisp_label(v, fm1_label(v, config)))
        .collect()
}

/// Nearest-rank percentile: the value at 1-based rank `⌈p/100 · n⌉` of the
/// ascending-sorted input (rank floored at 1).
pub fn nearest_rank_percentile(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput(
            "percentile of an empty value set".into(),
        ));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidInput(format!(
            "percentile {percentile} outside [0, 100]"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in percentile".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// Run method 2 over a featurized trip. The RSSI floor is the configured
/// percentile of this trip's pooled per-device max-RSSI values, so the whole
/// trip must be labeled in one call.
pub fn fm2_run(vectors: &[MacFeatureVector], config: &Fm2Config) -> Result<Vec<DeviceLabel>> {
    let max_rssi: Vec<f64> = vectors.iter().map(|v| v.max_rssi()).collect();
    let rssi_floor = nearest_rank_percentile(&max_rssi, config.rssi_percentile)?;
    Ok(vectors
        .iter()
        .map(|v| {
            let too_short = v.duration_s() < config.min_duration_s;
            let too_weak = v.max_rssi() < rssi_floor;
            let travel = v.travel_dist_m();
            let too_static = travel < config.min_travel_m;
            let too_sparse = if travel == 0.0 {
                true
            } else {
                v.n_detections() / (travel / METERS_PER_MILE) < config.min_detections_per_mile
            };
            let class = if too_short || too_weak || too_static || too_sparse {
                DeviceClass::NonPassenger
            } else {
                DeviceClass::Passenger
            };
            crisp_label(v, class)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::N_FEATURES;

    /// Build a vector with the feature slots the filters read.
    fn vector(
        protocol: Protocol,
        n: f64,
        duration: f64,
        max_rssi: f64,
        d_start: f64,
        d_end: f64,
        travel: f64,
    ) -> MacFeatureVector {
        let mut values = [0.0f64; N_FEATURES];
        values[0] = n;
        values[1] = duration;
        values[2] = max_rssi - 5.0; // avg below max, unused by filters
        values[3] = max_rssi;
        values[4] = d_start;
        values[5] = d_end;
        values[6] = travel;
        MacFeatureVector {
            mac: "aa:bb:cc:dd:ee:ff".into(),
            protocol,
            values,
            label: None,
        }
    }

    fn passing_wifi() -> MacFeatureVector {
        vector(Protocol::Wifi, 5.0, 120.0, -55.0, 30.0, 40.0, 500.0)
    }

    // ---- method 1 ----

    #[test]
    fn fm1_baseline_passes() {
        assert_eq!(
            fm1_label(&passing_wifi(), &Fm1Config::default()),
            DeviceClass::Passenger
        );
    }

    #[test]
    fn fm1_wifi_count_flip() {
        let mut v = passing_wifi();
        v.values[0] = 2.0;
        assert_eq!(fm1_label(&v, &Fm1Config::default()), DeviceClass::NonPassenger);
        v.values[0] = 3.0; // exactly at the bound passes ("lower than 3")
        assert_eq!(fm1_label(&v, &Fm1Config::default()), DeviceClass::Passenger);
    }

    #[test]
    fn fm1_duration_flip() {
        let mut v = passing_wifi();
        v.values[1] = 59.0;
        assert_eq!(fm1_label(&v, &Fm1Config::default()), DeviceClass::NonPassenger);
        v.values[1] = 60.0;
        assert_eq!(fm1_label(&v, &Fm1Config::default()), DeviceClass::Passenger);
    }

    #[test]
    fn fm1_endpoint_distance_needs_both_by_default() {
        let config = Fm1Config::default();
        let mut v = passing_wifi();
        v.values[4] = 200.0; // start beyond 182.88, end still near
        assert_eq!(fm1_label(&v, &config), DeviceClass::Passenger);
        v.values[5] = 190.0; // now both beyond
        assert_eq!(fm1_label(&v, &config), DeviceClass::NonPassenger);
    }

    #[test]
    fn fm1_either_mode_flips_on_one_far_endpoint() {
        let config = Fm1Config {
            endpoint_mode: EndpointDistanceMode::Either,
            ..Fm1Config::default()
        };
        let mut v = passing_wifi();
        v.values[4] = 200.0;
        assert_eq!(fm1_label(&v, &config), DeviceClass::NonPassenger);
    }

    #[test]
    fn fm1_bluetooth_thresholds() {
        let config = Fm1Config::default();
        // One detection passes the literal "fewer than 1" count rule.
        let v = vector(Protocol::Bluetooth, 1.0, 120.0, -60.0, 30.0, 40.0, 500.0);
        assert_eq!(fm1_label(&v, &config), DeviceClass::Passenger);
        // The inclusive reading rejects it.
        let inclusive = Fm1Config {
            bt_count_inclusive: true,
            ..Fm1Config::default()
        };
        assert_eq!(fm1_label(&v, &inclusive), DeviceClass::NonPassenger);
        // Bluetooth's distance ceiling is 300 ft: 100 m endpoints fail for
        // BT but would pass for Wi-Fi.
        let far_bt = vector(Protocol::Bluetooth, 4.0, 120.0, -60.0, 100.0, 100.0, 500.0);
        assert_eq!(fm1_label(&far_bt, &config), DeviceClass::NonPassenger);
        let far_wifi = vector(Protocol::Wifi, 4.0, 120.0, -60.0, 100.0, 100.0, 500.0);
        assert_eq!(fm1_label(&far_wifi, &config), DeviceClass::Passenger);
    }

    #[test]
    fn fm1_monotone_in_duration() {
        let config = Fm1Config::default();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let proto = if rng.random::<bool>() {
                Protocol::Wifi
            } else {
                Protocol::Bluetooth
            };
            let base = vector(
                proto,
                f64::from(rng.random_range(0..8i32)),
                rng.random::<f64>() * 300.0,
                -80.0 + rng.random::<f64>() * 40.0,
                rng.random::<f64>() * 250.0,
                rng.random::<f64>() * 250.0,
                rng.random::<f64>() * 2000.0,
            );
            let mut longer = base.clone();
            longer.values[1] += rng.random::<f64>() * 400.0;
            if fm1_label(&base, &config) == DeviceClass::Passenger {
                assert_eq!(fm1_label(&longer, &config), DeviceClass::Passenger);
            }
        }
    }

    // ---- method 2 ----

    /// Ten devices whose max RSSI ascends −90, −85, …, −45; the 20th
    /// percentile (nearest rank 2) is −85.
    fn fm2_population() -> Vec<MacFeatureVector> {
        (0..10)
            .map(|i| {
                let mut v = vector(
                    Protocol::Wifi,
                    60.0,
                    400.0,
                    -90.0 + 5.0 * i as f64,
                    20.0,
                    20.0,
                    METERS_PER_MILE,
                );
                v.mac = format!("aa:bb:cc:dd:ee:{i:02x}");
                v
            })
            .collect()
    }

    #[test]
    fn fm2_baseline_population_labels() {
        let labels = fm2_run(&fm2_population(), &Fm2Config::default()).unwrap();
        // Only the weakest device sits strictly below the −85 floor.
        assert_eq!(labels[0].label, DeviceClass::NonPassenger);
        for l in &labels[1..] {
            assert_eq!(l.label, DeviceClass::Passenger, "{}", l.mac);
        }
    }

    #[test]
    fn fm2_duration_flip() {
        let mut pop = fm2_population();
        pop[5].values[1] = 179.0;
        let labels = fm2_run(&pop, &Fm2Config::default()).unwrap();
        assert_eq!(labels[5].label, DeviceClass::NonPassenger);
        pop[5].values[1] = 180.0;
        let labels = fm2_run(&pop, &Fm2Config::default()).unwrap();
        assert_eq!(labels[5].label, DeviceClass::Passenger);
    }

    #[test]
    fn fm2_travel_distance_flip() {
        let mut pop = fm2_population();
        pop[5].values[6] = 200.0 * METERS_PER_FOOT; // 200 ft < 900 ft
        let labels = fm2_run(&pop, &Fm2Config::default()).unwrap();
        assert_eq!(labels[5].label, DeviceClass::NonPassenger);
    }

    #[test]
    fn fm2_density_flip() {
        let mut pop = fm2_population();
        // Two miles travelled with only 10 detections: 5 per mile.
        pop[5].values[0] = 10.0;
        pop[5].values[6] = 2.0 * METERS_PER_MILE;
        let labels = fm2_run(&pop, &Fm2Config::default()).unwrap();
        assert_eq!(labels[5].label, DeviceClass::NonPassenger);
        // 70 detections over the same distance: 35 per mile.
        pop[5].values[0] = 70.0;
        let labels = fm2_run(&pop, &Fm2Config::default()).unwrap();
        assert_eq!(labels[5].label, DeviceClass::Passenger);
    }

    #[test]
    fn fm2_zero_travel_is_non_passenger() {
        let mut pop = fm2_population();
        pop[5].values[6] = 0.0;
        let labels = fm2_run(&pop, &Fm2Config::default()).unwrap();
        assert_eq!(labels[5].label, DeviceClass::NonPassenger);
    }

    #[test]
    fn fm2_rssi_exactly_at_floor_passes() {
        let pop = fm2_population();
        let labels = fm2_run(&pop, &Fm2Config::default()).unwrap();
        // Device 1 is exactly the 20th-percentile value (−85): "below" is
        // strict, so it stays a passenger.
        assert_eq!(labels[1].label, DeviceClass::Passenger);
    }

    #[test]
    fn fm2_empty_trip_errors() {
        assert!(fm2_run(&[], &Fm2Config::default()).is_err());
    }

    #[test]
    fn labels_are_order_independent() {
        let pop = fm2_population();
        let mut reversed = pop.clone();
        reversed.reverse();
        let forward = fm2_run(&pop, &Fm2Config::default()).unwrap();
        let backward = fm2_run(&reversed, &Fm2Config::default()).unwrap();
        for l in &forward {
            let twin = backward.iter().find(|b| b.mac == l.mac).unwrap();
            assert_eq!(l.label, twin.label);
        }
        let fw1 = fm1_run(&pop, &Fm1Config::default());
        let bw1 = fm1_run(&reversed, &Fm1Config::default());
        for l in &fw1 {
            let twin = bw1.iter().find(|b| b.mac == l.mac).unwrap();
            assert_eq!(l.label, twin.label);
        }
    }

    #[test]
    fn percentile_nearest_rank_hand_checks() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank_percentile(&values, 20.0).unwrap(), 2.0);
        assert_eq!(nearest_rank_percentile(&values, 25.0).unwrap(), 3.0);
        assert_eq!(nearest_rank_percentile(&values, 100.0).unwrap(), 10.0);
        assert_eq!(nearest_rank_percentile(&values, 0.0).unwrap(), 1.0);
        assert_eq!(nearest_rank_percentile(&[7.5], 50.0).unwrap(), 7.5);
        assert!(nearest_rank_percentile(&[], 50.0).is_err());
        assert!(nearest_rank_percentile(&[1.0], 101.0).is_err());
    }

    #[test]
    fn crisp_memberships_round_trip_format() {
        let labels = fm1_run(&[passing_wifi()], &Fm1Config::default());
        assert_eq!(labels[0].u_passenger, 1.0);
        assert_eq!(labels[0].u_non_passenger, 0.0);
    }
}
