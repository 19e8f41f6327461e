//! Shared record types and small geometry helpers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters, used by [`haversine_m`].
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Radio protocol a detection arrived on. The two differ sharply in range
/// (Wi-Fi probe requests carry roughly 3x farther than discoverable
/// Bluetooth), so several downstream thresholds are protocol-specific.
///
/// CSV token: `wifi` or `bt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "wifi")]
    Wifi,
    #[serde(rename = "bt")]
    Bluetooth,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Wifi => write!(f, "wifi"),
            Protocol::Bluetooth => write!(f, "bt"),
        }
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wifi" => Ok(Protocol::Wifi),
            // "bluetooth" accepted leniently; the canonical token is "bt".
            "bt" | "bluetooth" => Ok(Protocol::Bluetooth),
            other => Err(format!(
                "unknown protocol {other:?} (expected \"wifi\" or \"bt\")"
            )),
        }
    }
}

/// One row of the sensing log: a device seen by the onboard scanner.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingRecord {
    pub protocol: Protocol,
    /// Opaque device identifier (typically a MAC address, possibly already
    /// anonymized). Never interpreted, only grouped on.
    pub mac: String,
    /// Seconds since the Unix epoch.
    pub t: f64,
    /// Received signal strength in dBm. Valid range [-120, 0].
    pub rssi: i32,
}

/// One GPS fix of the instrumented vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFix {
    /// Seconds since the Unix epoch.
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
}

/// A sensing record joined to the vehicle position at detection time.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinedDetection {
    pub protocol: Protocol,
    pub mac: String,
    pub t: f64,
    pub rssi: i32,
    /// Vehicle latitude at the nearest GPS fix.
    pub lat: f64,
    /// Vehicle longitude at the nearest GPS fix.
    pub lon: f64,
}

/// A transit stop on a route, ordered by `stop_seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub route_id: String,
    /// 1-based position of the stop along the route.
    pub stop_seq: u32,
    pub stop_id: String,
    pub lat: f64,
    pub lon: f64,
    pub name: String,
}

/// Ground-truth ridership counts at one stop of one trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub trip_id: String,
    pub stop_seq: u32,
    pub boarding: i64,
    pub alighting: i64,
    /// Passengers on the vehicle after serving this stop.
    pub onboard: i64,
}

/// Binary device classification produced by clustering or filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceClass {
    Passenger,
    NonPassenger,
}

impl fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceClass::Passenger => write!(f, "passenger"),
            DeviceClass::NonPassenger => write!(f, "non_passenger"),
        }
    }
}

impl FromStr for DeviceClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "passenger" => Ok(DeviceClass::Passenger),
            "non_passenger" => Ok(DeviceClass::NonPassenger),
            other => Err(format!(
                "unknown label {other:?} (expected \"passenger\" or \"non_passenger\")"
            )),
        }
    }
}

/// Great-circle distance in meters between two (lat, lon) points, both in
/// degrees, on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().asin()
}
