//! Deterministic synthetic-trip generator: sensing logs, GPS traces, station
//! tables, ground-truth counts, and per-MAC class labels from one seeded
//! scenario. The generated trip is the oracle for validating the full
//! pipeline at desk scale.
//!
//! The vehicle drives a straight route north, dwelling at evenly spaced
//! stops. Passenger devices ride between their boarding and alighting stops
//! and emit with protocol-specific exponential gaps. Four kinds of
//! non-passenger device surround the route — fixed roadside electronics,
//! people waiting at stations, a device co-traveling in a parallel vehicle,
//! and pedestrians walking the street — each emitting only while inside its
//! protocol's detection radius. RSSI follows a log-distance path-loss model
//! with Gaussian noise. One seeded generator stream drives every draw, so
//! identical configs produce byte-identical files.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::ingest::{assemble_trip, LoadOptions, TripDataset};
use crate::types::{DeviceClass, GpsFix, Protocol, SensingRecord, Station, TruthRow};
use crate::Result;

/// RSSI values are clamped into this closed range (dBm) after noise.
pub const RSSI_CLAMP_DBM: (f64, f64) = (-120.0, -17.0);

/// Wi-Fi detection radius in meters (about 200 ft of usable scanner range).
pub const WIFI_RADIUS_M: f64 = 60.96;

/// Bluetooth detection radius in meters (about 60 ft).
pub const BT_RADIUS_M: f64 = 18.288;

/// Full description of one synthetic trip.
///
/// `Default` is the reference validation scenario: a 12-stop route, 30
/// passengers riding at least half the route, and 60 noise devices split
/// across the four non-passenger situations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_stops: u32,
    pub stop_spacing_m: f64,
    /// Dwell at each stop, seconds.
    pub dwell_s: f64,
    pub cruise_speed_mps: f64,
    /// Epoch seconds of the arrival at stop 1.
    pub start_time: f64,
    pub n_passengers: u32,
    /// Minimum number of stops between boarding and alighting.
    pub min_ride_stops: u32,
    /// Probability that a passenger carries a discoverable device.
    pub device_discoverable_prob: f64,
    /// Fraction of discoverable devices responding on Bluetooth rather than
    /// emitting Wi-Fi probes.
    pub bt_device_fraction: f64,
    /// Mean of the exponential gap between Wi-Fi probe emissions, seconds.
    pub wifi_probe_interval_s: f64,
    /// Mean of the exponential gap between Bluetooth responses, seconds.
    pub bt_response_interval_s: f64,
    /// Path-loss intercept: RSSI at 1 m, dBm.
    pub rssi_intercept_dbm: f64,
    /// Path-loss slope, dB per decade of distance.
    pub rssi_slope_db_per_decade: f64,
    /// Standard deviation of per-emission Gaussian RSSI noise, dB.
    pub rssi_noise_sd_db: f64,
    /// Fixed devices in roadside buildings.
    pub n_roadside: u32,
    /// People waiting at stations who never board.
    pub n_station_waiters: u32,
    /// Devices co-traveling in vehicles alongside the bus.
    pub n_parallel_vehicle: u32,
    /// Longest co-travel span, in stops; each parallel device draws a span
    /// from 1 up to this.
    pub parallel_span_stops: u32,
    /// Pedestrians walking along the street.
    pub n_pedestrians: u32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 7,
            n_stops: 12,
            stop_spacing_m: 400.0,
            dwell_s: 20.0,
            cruise_speed_mps: 8.0,
            // 2021-03-02 08:00:00 UTC, a Tuesday morning.
            start_time: 1_614_672_000.0,
            n_passengers: 30,
            min_ride_stops: 6,
            device_discoverable_prob: 0.7,
            bt_device_fraction: 0.15,
            wifi_probe_interval_s: 6.0,
            bt_response_interval_s: 40.0,
            rssi_intercept_dbm: -40.0,
            rssi_slope_db_per_decade: 20.0,
            rssi_noise_sd_db: 4.0,
            n_roadside: 18,
            n_station_waiters: 12,
            n_parallel_vehicle: 10,
            parallel_span_stops: 2,
            n_pedestrians: 20,
        }
    }
}

impl ScenarioConfig {
    /// A larger scenario sized for throughput checks: on the order of 5,000
    /// sensed MACs and 18,000 sensing rows.
    pub fn desk_scale(seed: u64) -> Self {
        ScenarioConfig {
            seed,
            n_stops: 30,
            stop_spacing_m: 300.0,
            n_passengers: 200,
            min_ride_stops: 3,
            wifi_probe_interval_s: 12.0,
            n_roadside: 2500,
            n_station_waiters: 700,
            n_parallel_vehicle: 100,
            n_pedestrians: 5000,
            ..ScenarioConfig::default()
        }
    }

    /// Trip id derived from the seed.
    pub fn trip_id(&self) -> String {
        format!("sim-{}", self.seed)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.n_stops < 2 {
            return bad(format!("n_stops {} < 2", self.n_stops));
        }
        if self.min_ride_stops == 0 || self.min_ride_stops >= self.n_stops {
            return bad(format!(
                "min_ride_stops {} leaves no feasible boarding/alighting pair on {} stops",
                self.min_ride_stops, self.n_stops
            ));
        }
        if self.parallel_span_stops == 0 || self.parallel_span_stops >= self.n_stops {
            return bad(format!(
                "parallel_span_stops {} not in 1..{}",
                self.parallel_span_stops, self.n_stops
            ));
        }
        for (name, v) in [
            ("stop_spacing_m", self.stop_spacing_m),
            ("dwell_s", self.dwell_s),
            ("cruise_speed_mps", self.cruise_speed_mps),
            ("wifi_probe_interval_s", self.wifi_probe_interval_s),
            ("bt_response_interval_s", self.bt_response_interval_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        for (name, p) in [
            ("device_discoverable_prob", self.device_discoverable_prob),
            ("bt_device_fraction", self.bt_device_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(self.rssi_noise_sd_db >= 0.0 && self.rssi_noise_sd_db.is_finite()) {
            return bad(format!(
                "rssi_noise_sd_db must be non-negative, got {}",
                self.rssi_noise_sd_db
            ));
        }
        if !self.start_time.is_finite() {
            return bad(format!("start_time {} not finite", self.start_time));
        }
        Ok(())
    }

    /// Flat key/value echo of every field, in declaration order, for the
    /// `scenario.conf` file written next to the generated data.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("simgen.seed", self.seed.to_string()),
            ("simgen.n_stops", self.n_stops.to_string()),
            ("simgen.stop_spacing_m", self.stop_spacing_m.to_string()),
            ("simgen.dwell_s", self.dwell_s.to_string()),
            ("simgen.cruise_speed_mps", self.cruise_speed_mps.to_string()),
            ("simgen.start_time", self.start_time.to_string()),
            ("simgen.n_passengers", self.n_passengers.to_string()),
            ("simgen.min_ride_stops", self.min_ride_stops.to_string()),
            (
                "simgen.device_discoverable_prob",
                self.device_discoverable_prob.to_string(),
            ),
            (
                "simgen.bt_device_fraction",
                self.bt_device_fraction.to_string(),
            ),
            (
                "simgen.wifi_probe_interval_s",
                self.wifi_probe_interval_s.to_string(),
            ),
            (
                "simgen.bt_response_interval_s",
                self.bt_response_interval_s.to_string(),
            ),
            (
                "simgen.rssi_intercept_dbm",
                self.rssi_intercept_dbm.to_string(),
            ),
            (
                "simgen.rssi_slope_db_per_decade",
                self.rssi_slope_db_per_decade.to_string(),
            ),
            ("simgen.rssi_noise_sd_db", self.rssi_noise_sd_db.to_string()),
            ("simgen.n_roadside", self.n_roadside.to_string()),
            (
                "simgen.n_station_waiters",
                self.n_station_waiters.to_string(),
            ),
            (
                "simgen.n_parallel_vehicle",
                self.n_parallel_vehicle.to_string(),
            ),
            (
                "simgen.parallel_span_stops",
                self.parallel_span_stops.to_string(),
            ),
            ("simgen.n_pedestrians", self.n_pedestrians.to_string()),
        ]
    }

    /// Set one field from its `scenario.conf` key (with or without the
    /// `simgen.` prefix). Unknown keys and unparseable values error.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let short = key.strip_prefix("simgen.").unwrap_or(key);
        let parse_err =
            |what: &str| Error::Config(format!("invalid value {value:?} for {what}"));
        match short {
            "seed" => self.seed = value.parse().map_err(|_| parse_err(key))?,
            "n_stops" => self.n_stops = value.parse().map_err(|_| parse_err(key))?,
            "stop_spacing_m" => {
                self.stop_spacing_m = value.parse().map_err(|_| parse_err(key))?
            }
            "dwell_s" => self.dwell_s = value.parse().map_err(|_| parse_err(key))?,
            "cruise_speed_mps" => {
                self.cruise_speed_mps = value.parse().map_err(|_| parse_err(key))?
            }
            "start_time" => self.start_time = value.parse().map_err(|_| parse_err(key))?,
            "n_passengers" => self.n_passengers = value.parse().map_err(|_| parse_err(key))?,
            "min_ride_stops" => {
                self.min_ride_stops = value.parse().map_err(|_| parse_err(key))?
            }
            "device_discoverable_prob" => {
                self.device_discoverable_prob = value.parse().map_err(|_| parse_err(key))?
            }
            "bt_device_fraction" => {
                self.bt_device_fraction = value.parse().map_err(|_| parse_err(key))?
            }
            "wifi_probe_interval_s" => {
                self.wifi_probe_interval_s = value.parse().map_err(|_| parse_err(key))?
            }
            "bt_response_interval_s" => {
                self.bt_response_interval_s = value.parse().map_err(|_| parse_err(key))?
            }
            "rssi_intercept_dbm" => {
                self.rssi_intercept_dbm = value.parse().map_err(|_| parse_err(key))?
            }
            "rssi_slope_db_per_decade" => {
                self.rssi_slope_db_per_decade = value.parse().map_err(|_| parse_err(key))?
            }
            "rssi_noise_sd_db" => {
                self.rssi_noise_sd_db = value.parse().map_err(|_| parse_err(key))?
            }
            "n_roadside" => self.n_roadside = value.parse().map_err(|_| parse_err(key))?,
            "n_station_waiters" => {
                self.n_station_waiters = value.parse().map_err(|_| parse_err(key))?
            }
            "n_parallel_vehicle" => {
                self.n_parallel_vehicle = value.parse().map_err(|_| parse_err(key))?
            }
            "parallel_span_stops" => {
                self.parallel_span_stops = value.parse().map_err(|_| parse_err(key))?
            }
            "n_pedestrians" => {
                self.n_pedestrians = value.parse().map_err(|_| parse_err(key))?
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown scenario key \"{other}\""
                )))
            }
        }
        Ok(())
    }
}

/// A generated trip: the four ingest-format tables plus the true class of
/// every sensed MAC and an echo of the scenario that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrip {
    pub trip_id: String,
    pub sensing: Vec<SensingRecord>,
    pub gps: Vec<GpsFix>,
    pub stations: Vec<Station>,
    pub truth: Vec<TruthRow>,
    /// True class per sensed MAC. Exactly the MACs appearing in `sensing`.
    pub labels: BTreeMap<String, DeviceClass>,
    pub config: ScenarioConfig,
}

/// Where [`SyntheticTrip::write_dir`] put each file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTripPaths {
    pub sensing: PathBuf,
    pub gps: PathBuf,
    pub stations: PathBuf,
    pub truth: PathBuf,
    pub labels: PathBuf,
    pub scenario: PathBuf,
}

/// Route origin; the route runs due north from here.
const BASE_LAT: f64 = 47.6000000;
const BASE_LON: f64 = -122.3000000;

/// Degrees of latitude per meter of northing on the reference sphere.
fn lat_per_m() -> f64 {
    180.0 / (crate::types::EARTH_RADIUS_M * std::f64::consts::PI)
}

/// Vehicle timetable: arrival/departure epoch seconds per stop.
struct Timetable {
    arrive: Vec<f64>,
    depart: Vec<f64>,
    spacing_m: f64,
    cruise_mps: f64,
}

impl Timetable {
    fn new(c: &ScenarioConfig) -> Timetable {
        let seg_time_s = c.stop_spacing_m / c.cruise_speed_mps;
        let mut arrive = Vec::with_capacity(c.n_stops as usize);
        let mut depart = Vec::with_capacity(c.n_stops as usize);
        for k in 0..c.n_stops as usize {
            let a = c.start_time + k as f64 * (c.dwell_s + seg_time_s);
            arrive.push(a);
            depart.push(a + c.dwell_s);
        }
        Timetable {
            arrive,
            depart,
            spacing_m: c.stop_spacing_m,
            cruise_mps: c.cruise_speed_mps,
        }
    }

    fn end_time(&self) -> f64 {
        *self.depart.last().expect("at least one stop")
    }

    /// Vehicle position in meters along the route at time `t`.
    fn position_m(&self, t: f64) -> f64 {
        if t <= self.arrive[0] {
            return 0.0;
        }
        for k in 0..self.arrive.len() {
            if t <= self.depart[k] {
                return k as f64 * self.spacing_m;
            }
            if k + 1 < self.arrive.len() && t < self.arrive[k + 1] {
                return k as f64 * self.spacing_m + (t - self.depart[k]) * self.cruise_mps;
            }
        }
        (self.arrive.len() - 1) as f64 * self.spacing_m
    }
}

/// Where a device sits relative to the vehicle over time, in route-aligned
/// coordinates (meters along the route, lateral meters off it).
enum Placement {
    /// Onboard at a fixed seat distance from the scanner.
    Onboard { seat_m: f64 },
    /// Fixed at a point beside the route.
    Fixed { along_m: f64, lateral_m: f64 },
    /// Matches the vehicle's along-route position at a lateral offset.
    CoMoving { lateral_m: f64 },
    /// Walks the street at constant signed speed.
    Walking {
        start_m: f64,
        speed_mps: f64,
        lateral_m: f64,
    },
}

struct Device {
    mac: String,
    protocol: Protocol,
    class: DeviceClass,
    /// Emission window (epoch seconds).
    active: (f64, f64),
    /// Emit exactly at the window endpoints (passengers board and alight).
    forced_endpoints: bool,
    placement: Placement,
}

impl Device {
    /// Distance to the scanner at time `t`, given the vehicle's along-route
    /// position.
    fn distance_m(&self, t: f64, vehicle_m: f64, t0: f64) -> f64 {
        match self.placement {
            Placement::Onboard { seat_m } => seat_m,
            Placement::Fixed { along_m, lateral_m } => {
                ((vehicle_m - along_m).powi(2) + lateral_m.powi(2)).sqrt()
            }
            Placement::CoMoving { lateral_m } => lateral_m,
            Placement::Walking {
                start_m,
                speed_mps,
                lateral_m,
            } => {
                let ped_m = start_m + speed_mps * (t - t0);
                ((vehicle_m - ped_m).powi(2) + lateral_m.powi(2)).sqrt()
            }
        }
    }

    fn radius_m(&self) -> f64 {
        match self.protocol {
            Protocol::Wifi => WIFI_RADIUS_M,
            Protocol::Bluetooth => BT_RADIUS_M,
        }
    }

    fn gap_mean_s(&self, c: &ScenarioConfig) -> f64 {
        match self.protocol {
            Protocol::Wifi => c.wifi_probe_interval_s,
            Protocol::Bluetooth => c.bt_response_interval_s,
        }
    }
}

/// Generate one synthetic trip. Byte-identical output for identical configs.
pub fn generate(config: &ScenarioConfig) -> Result<SyntheticTrip> {
    config.validate()?;
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let tt = Timetable::new(c);
    let n_stops = c.n_stops as usize;
    let route_len_m = (n_stops - 1) as f64 * c.stop_spacing_m;
    let t0 = c.start_time;
    let t_end = tt.end_time();

    // Stations due north along the meridian.
    let stations: Vec<Station> = (0..n_stops)
        .map(|k| Station {
            route_id: "r1".into(),
            stop_seq: k as u32 + 1,
            stop_id: format!("s{:02}", k + 1),
            lat: BASE_LAT + k as f64 * c.stop_spacing_m * lat_per_m(),
            lon: BASE_LON,
            name: format!("Stop {:02}", k + 1),
        })
        .collect();

    // GPS at 2 Hz over the whole trip.
    let n_fixes = ((t_end - t0) / 0.5).floor() as usize + 1;
    let gps: Vec<GpsFix> = (0..n_fixes)
        .map(|i| {
            let t = t0 + 0.5 * i as f64;
            GpsFix {
                t,
                lat: BASE_LAT + tt.position_m(t) * lat_per_m(),
                lon: BASE_LON,
            }
        })
        .collect();

    let draw_protocol = |rng: &mut ChaCha8Rng| {
        if rng.random::<f64>() < c.bt_device_fraction {
            Protocol::Bluetooth
        } else {
            Protocol::Wifi
        }
    };

    // Passengers: every one counts in ground truth; only discoverable
    // devices emit.
    let mut boarding = vec![0i64; n_stops];
    let mut alighting = vec![0i64; n_stops];
    let mut devices: Vec<Device> = Vec::new();
    for i in 0..c.n_passengers {
        let b = rng.random_range(0..n_stops - c.min_ride_stops as usize);
        let a = rng.random_range(b + c.min_ride_stops as usize..n_stops);
        boarding[b] += 1;
        alighting[a] += 1;
        let discoverable = rng.random::<f64>() < c.device_discoverable_prob;
        let protocol = draw_protocol(&mut rng);
        let t_board = tt.arrive[b] + rng.random_range(0.0..c.dwell_s);
        let t_alight = tt.arrive[a] + rng.random_range(0.0..c.dwell_s);
        let seat_m = rng.random_range(0.5..3.0);
        if discoverable {
            devices.push(Device {
                mac: format!("pax{i:04}"),
                protocol,
                class: DeviceClass::Passenger,
                active: (t_board, t_alight),
                forced_endpoints: true,
                placement: Placement::Onboard { seat_m },
            });
        }
    }

    // Fixed devices in roadside buildings.
    for i in 0..c.n_roadside {
        let along = rng.random_range(0.0..route_len_m.max(1.0));
        let lateral = rng.random_range(5.0..80.0);
        let protocol = draw_protocol(&mut rng);
        devices.push(Device {
            mac: format!("road{i:04}"),
            protocol,
            class: DeviceClass::NonPassenger,
            active: (t0, t_end),
            forced_endpoints: false,
            placement: Placement::Fixed {
                along_m: along,
                lateral_m: lateral,
            },
        });
    }

    // People waiting at stations who never board.
    for i in 0..c.n_station_waiters {
        let stop = rng.random_range(0..n_stops);
        let lateral = rng.random_range(2.0..15.0);
        let protocol = draw_protocol(&mut rng);
        devices.push(Device {
            mac: format!("wait{i:04}"),
            protocol,
            class: DeviceClass::NonPassenger,
            active: (t0, t_end),
            forced_endpoints: false,
            placement: Placement::Fixed {
                along_m: stop as f64 * c.stop_spacing_m,
                lateral_m: lateral,
            },
        });
    }

    // Devices in vehicles traveling alongside for a short stop-span. Their
    // windows start and end during dwells, so their endpoint geometry looks
    // exactly like a passenger's — the published three-rule filter cannot
    // remove them.
    for i in 0..c.n_parallel_vehicle {
        let span = rng.random_range(1..=c.parallel_span_stops) as usize;
        let s = rng.random_range(0..n_stops - span);
        let t_on = tt.arrive[s] + rng.random_range(0.0..c.dwell_s);
        let t_off = tt.arrive[s + span] + rng.random_range(0.0..c.dwell_s);
        let lateral = rng.random_range(6.0..15.0);
        let protocol = draw_protocol(&mut rng);
        devices.push(Device {
            mac: format!("pveh{i:04}"),
            protocol,
            class: DeviceClass::NonPassenger,
            active: (t_on, t_off),
            forced_endpoints: true,
            placement: Placement::CoMoving { lateral_m: lateral },
        });
    }

    // Pedestrians walking the street in either direction.
    for i in 0..c.n_pedestrians {
        let start = rng.random_range(-200.0..route_len_m + 200.0);
        let speed = rng.random_range(0.8..1.8) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let lateral = rng.random_range(2.0..12.0);
        let protocol = draw_protocol(&mut rng);
        devices.push(Device {
            mac: format!("pede{i:04}"),
            protocol,
            class: DeviceClass::NonPassenger,
            active: (t0, t_end),
            forced_endpoints: false,
            placement: Placement::Walking {
                start_m: start,
                speed_mps: speed,
                lateral_m: lateral,
            },
        });
    }

    // Emissions: exponential gaps inside the active window, recorded only
    // within the protocol's detection radius.
    let noise = if c.rssi_noise_sd_db > 0.0 {
        Some(Normal::new(0.0, c.rssi_noise_sd_db).expect("validated sd"))
    } else {
        None
    };
    let mut sensing: Vec<SensingRecord> = Vec::new();
    let mut labels: BTreeMap<String, DeviceClass> = BTreeMap::new();
    for d in &devices {
        let gap = Exp::new(1.0 / d.gap_mean_s(c)).expect("positive rate");
        let (w0, w1) = d.active;
        let mut times: Vec<f64> = Vec::new();
        if d.forced_endpoints {
            times.push(w0);
        }
        let mut t = w0 + gap.sample(&mut rng);
        while t < w1 {
            times.push(t);
            t += gap.sample(&mut rng);
        }
        if d.forced_endpoints {
            times.push(w1);
        }
        let mut emitted = false;
        for &t in &times {
            let dist = d.distance_m(t, tt.position_m(t), t0);
            if !d.forced_endpoints && dist > d.radius_m() {
                continue;
            }
            let mut rssi = c.rssi_intercept_dbm
                - c.rssi_slope_db_per_decade * dist.max(1.0).log10();
            if let Some(n) = &noise {
                rssi += n.sample(&mut rng);
            }
            let rssi = rssi.round().clamp(RSSI_CLAMP_DBM.0, RSSI_CLAMP_DBM.1) as i32;
            sensing.push(SensingRecord {
                protocol: d.protocol,
                mac: d.mac.clone(),
                t,
                rssi,
            });
            emitted = true;
        }
        if emitted {
            labels.insert(d.mac.clone(), d.class);
        }
    }
    sensing.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .expect("finite times")
            .then_with(|| a.mac.cmp(&b.mac))
            .then_with(|| a.protocol.cmp(&b.protocol))
            .then_with(|| a.rssi.cmp(&b.rssi))
    });

    // Ground truth over the whole passenger population.
    let trip_id = c.trip_id();
    let mut onboard = 0i64;
    let truth: Vec<TruthRow> = (0..n_stops)
        .map(|k| {
            onboard += boarding[k] - alighting[k];
            TruthRow {
                trip_id: trip_id.clone(),
                stop_seq: k as u32 + 1,
                boarding: boarding[k],
                alighting: alighting[k],
                onboard,
            }
        })
        .collect();

    Ok(SyntheticTrip {
        trip_id,
        sensing,
        gps,
        stations,
        truth,
        labels,
        config: c.clone(),
    })
}

impl SyntheticTrip {
    /// Assemble the in-memory tables into a joined [`TripDataset`] without
    /// touching disk.
    pub fn assemble(&self) -> Result<TripDataset> {
        let (trip, _) = assemble_trip(
            self.trip_id.clone(),
            self.sensing.clone(),
            self.gps.clone(),
            self.stations.clone(),
            Some(self.truth.clone()),
            &LoadOptions::default(),
        )?;
        Ok(trip)
    }

    /// Write the scenario as loadable files: `sensing.csv`, `gps.csv`,
    /// `stations.csv`, `ground_truth.csv`, `labels.csv`, and `scenario.conf`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<SyntheticTripPaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SyntheticTripPaths {
            sensing: dir.join("sensing.csv"),
            gps: dir.join("gps.csv"),
            stations: dir.join("stations.csv"),
            truth: dir.join("ground_truth.csv"),
            labels: dir.join("labels.csv"),
            scenario: dir.join("scenario.conf"),
        };

        let mut w = file_writer(&paths.sensing)?;
        wln(&paths.sensing, &mut w, "protocol,mac,timestamp,rssi")?;
        for r in &self.sensing {
            wln(
                &paths.sensing,
                &mut w,
                &format!("{},{},{:.3},{}", r.protocol, r.mac, r.t, r.rssi),
            )?;
        }
        finish(&paths.sensing, w)?;

        let mut w = file_writer(&paths.gps)?;
        wln(&paths.gps, &mut w, "timestamp,lat,lon")?;
        for f in &self.gps {
            wln(
                &paths.gps,
                &mut w,
                &format!("{:.3},{:.7},{:.7}", f.t, f.lat, f.lon),
            )?;
        }
        finish(&paths.gps, w)?;

        let mut w = file_writer(&paths.stations)?;
        wln(&paths.stations, &mut w, "route_id,stop_seq,stop_id,lat,lon,name")?;
        for s in &self.stations {
            wln(
                &paths.stations,
                &mut w,
                &format!(
                    "{},{},{},{:.7},{:.7},{}",
                    s.route_id, s.stop_seq, s.stop_id, s.lat, s.lon, s.name
                ),
            )?;
        }
        finish(&paths.stations, w)?;

        let mut w = file_writer(&paths.truth)?;
        wln(
            &paths.truth,
            &mut w,
            "trip_id,stop_seq,boarding,alighting,onboard",
        )?;
        for t in &self.truth {
            wln(
                &paths.truth,
                &mut w,
                &format!(
                    "{},{},{},{},{}",
                    t.trip_id, t.stop_seq, t.boarding, t.alighting, t.onboard
                ),
            )?;
        }
        finish(&paths.truth, w)?;

        write_class_labels_csv(&paths.labels, &self.labels)?;

        let mut w = file_writer(&paths.scenario)?;
        for (k, v) in self.config.to_kv() {
            wln(&paths.scenario, &mut w, &format!("{k} = {v}"))?;
        }
        finish(&paths.scenario, w)?;

        Ok(paths)
    }
}

fn file_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(file))
}

fn wln(path: &Path, w: &mut impl std::io::Write, line: &str) -> Result<()> {
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: std::io::BufWriter<std::fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write a `mac,label` table (the ground-truth device classes), sorted by
/// MAC.
pub fn write_class_labels_csv(
    path: impl AsRef<Path>,
    labels: &BTreeMap<String, DeviceClass>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = file_writer(path)?;
    wln(path, &mut w, "mac,label")?;
    for (mac, class) in labels {
        wln(path, &mut w, &format!("{mac},{class}"))?;
    }
    finish(path, w)
}

/// Read a `mac,label` table written by [`write_class_labels_csv`].
pub fn read_class_labels_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, DeviceClass>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::record(path, 1, format!("missing column {name:?}")))
    };
    let mac_i = col("mac")?;
    let label_i = col("label")?;
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let mac = row
            .get(mac_i)
            .ok_or_else(|| Error::record(path, line, "short row"))?
            .to_string();
        let label = row
            .get(label_i)
            .ok_or_else(|| Error::record(path, line, "short row"))?;
        let class =
            DeviceClass::from_str(label).map_err(|e| Error::record(path, line, e))?;
        if out.insert(mac.clone(), class).is_some() {
            return Err(Error::record(path, line, format!("duplicate mac {mac:?}")));
        }
    }
    Ok(out)
}

/// Confusion-matrix scores of a predicted passenger/non-passenger labeling
/// against ground truth, on the passenger class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
}

/// Score predicted labels against true labels. The MAC sets must match
/// exactly; degenerate ratios (no predicted or no true passengers) score 0
/// rather than erroring.
pub fn score_separation(
    predicted: &BTreeMap<String, DeviceClass>,
    truth: &BTreeMap<String, DeviceClass>,
) -> Result<SeparationScores> {
    if predicted.is_empty() {
        return Err(Error::InvalidInput("no predicted labels to score".into()));
    }
    if predicted.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "label sets differ: {} predicted MACs vs {} true MACs",
            predicted.len(),
            truth.len()
        )));
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    let mut tn = 0u64;
    for (mac, pred) in predicted {
        let actual = truth.get(mac).ok_or_else(|| {
            Error::InvalidInput(format!("predicted MAC {mac:?} missing from true labels"))
        })?;
        match (pred, actual) {
            (DeviceClass::Passenger, DeviceClass::Passenger) => tp += 1,
            (DeviceClass::Passenger, DeviceClass::NonPassenger) => fp += 1,
            (DeviceClass::NonPassenger, DeviceClass::Passenger) => fn_ += 1,
            (DeviceClass::NonPassenger, DeviceClass::NonPassenger) => tn += 1,
        }
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SeparationScores {
        accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
    })
}
