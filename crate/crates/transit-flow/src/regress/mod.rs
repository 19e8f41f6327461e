//! Per-stop count estimation: regression trees, a random forest, an
//! ordinary-least-squares baseline, and the error metrics used to compare
//! them.
//!
//! Estimators consume numeric row vectors; [`StopRegressors`] defines the
//! five-variable layout the pipeline feeds them (time-of-service fields, a
//! last-stop dummy, and the passenger MAC count observed at the stop).

pub mod cart;
pub mod eval;
pub mod forest;
pub mod ols;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

pub use cart::{cart_fit, predict_tree, CartOptions, TreeNode};
pub use eval::{evaluate, write_metrics_csv, EvalMetrics, MetricsRow};
pub use forest::{rf_fit, ForestModel, ForestOptions};
pub use ols::{ols_fit, OlsModel, OlsOptions};

/// Which population count a model estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Onboard,
    Boarding,
    Alighting,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Onboard, Target::Boarding, Target::Alighting];
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Onboard => "onboard",
            Target::Boarding => "boarding",
            Target::Alighting => "alighting",
        })
    }
}

impl FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "onboard" => Ok(Target::Onboard),
            "boarding" => Ok(Target::Boarding),
            "alighting" => Ok(Target::Alighting),
            other => Err(format!("unknown target `{other}`")),
        }
    }
}

/// Number of regressor variables.
pub const N_REGRESSORS: usize = 5;

/// Column names in feature-vector order.
pub const REGRESSOR_NAMES: [&str; N_REGRESSORS] = [
    "day_of_week",
    "hour_of_day",
    "minute_of_hour",
    "is_last_stop",
    "passenger_mac_count",
];

/// The regressor variables observed for one stop of one trip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRegressors {
    /// 0 = Monday … 6 = Sunday.
    pub day_of_week: u8,
    pub hour_of_day: u8,
    pub minute_of_hour: u8,
    pub is_last_stop: bool,
    pub passenger_mac_count: u64,
}

impl StopRegressors {
    pub fn new(
        day_of_week: u8,
        hour_of_day: u8,
        minute_of_hour: u8,
        is_last_stop: bool,
        passenger_mac_count: u64,
    ) -> Result<Self> {
        if day_of_week > 6 {
            return Err(Error::InvalidInput(format!(
                "day_of_week {day_of_week} outside 0..=6"
            )));
        }
        if hour_of_day > 23 {
            return Err(Error::InvalidInput(format!(
                "hour_of_day {hour_of_day} outside 0..=23"
            )));
        }
        if minute_of_hour > 59 {
            return Err(Error::InvalidInput(format!(
                "minute_of_hour {minute_of_hour} outside 0..=59"
            )));
        }
        Ok(StopRegressors {
            day_of_week,
            hour_of_day,
            minute_of_hour,
            is_last_stop,
            passenger_mac_count,
        })
    }

    /// Numeric feature vector in [`REGRESSOR_NAMES`] order.
    pub fn features(&self) -> [f64; N_REGRESSORS] {
        [
            f64::from(self.day_of_week),
            f64::from(self.hour_of_day),
            f64::from(self.minute_of_hour),
            f64::from(u8::from(self.is_last_stop)),
            self.passenger_mac_count as f64,
        ]
    }
}

/// Seeded shuffle split over row indices. The training side gets
/// `⌈(1 − test_fraction)·n⌉` rows; both sides keep the shuffled order.
///
/// Degenerate fractions can leave one side empty; callers that need both
/// sides populated must check.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 rows to split, got {n}"
        )));
    }
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidInput(format!(
            "test_fraction {test_fraction} outside [0, 1]"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n_train = ((1.0 - test_fraction) * n as f64).ceil() as usize;
    let test = indices.split_off(n_train.min(n));
    Ok((indices, test))
}

/// Group-aware variant: whole trips are held out together so within-trip
/// correlation cannot leak across the split. Trip count is split with the
/// same ceiling rule as [`train_test_split`]; row indices are returned in
/// shuffled-trip order, ascending within each trip.
pub fn split_by_trip(
    trip_ids: &[String],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if trip_ids.is_empty() {
        return Err(Error::InvalidInput("no rows to split".into()));
    }
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidInput(format!(
            "test_fraction {test_fraction} outside [0, 1]"
        )));
    }
    let mut trips: Vec<&String> = Vec::new();
    for id in trip_ids {
        if !trips.contains(&id) {
            trips.push(id);
        }
    }
    if trips.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 distinct trips to split by trip, got {}",
            trips.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    trips.shuffle(&mut rng);
    let n_train_trips = ((1.0 - test_fraction) * trips.len() as f64).ceil() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (pos, trip) in trips.iter().enumerate() {
        let side = if pos < n_train_trips { &mut train } else { &mut test };
        for (row, id) in trip_ids.iter().enumerate() {
            if id == *trip {
                side.push(row);
            }
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regressor_ranges_enforced() {
        assert!(StopRegressors::new(7, 0, 0, false, 0).is_err());
        assert!(StopRegressors::new(0, 24, 0, false, 0).is_err());
        assert!(StopRegressors::new(0, 0, 60, false, 0).is_err());
        let r = StopRegressors::new(6, 23, 59, true, 12).unwrap();
        assert_eq!(r.features(), [6.0, 23.0, 59.0, 1.0, 12.0]);
    }

    #[test]
    fn split_ten_rows_is_seven_three() {
        let (train, test) = train_test_split(10, 0.3, 1).unwrap();
        assert_eq!(train.len(), 7);
        assert_eq!(test.len(), 3);
    }

    #[test]
    fn split_is_seeded_and_partitions_input() {
        let (a_train, a_test) = train_test_split(25, 0.3, 9).unwrap();
        let (b_train, b_test) = train_test_split(25, 0.3, 9).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);
        let (c_train, _) = train_test_split(25, 0.3, 10).unwrap();
        assert_ne!(a_train, c_train);
        let mut all: Vec<usize> = a_train.iter().chain(a_test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_bad_inputs() {
        assert!(train_test_split(1, 0.3, 0).is_err());
        assert!(train_test_split(10, 1.5, 0).is_err());
        assert!(train_test_split(10, -0.1, 0).is_err());
    }

    #[test]
    fn by_trip_split_keeps_trips_whole() {
        let trip_ids: Vec<String> = ["a", "a", "b", "b", "b", "c", "d", "d"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (train, test) = split_by_trip(&trip_ids, 0.3, 3).unwrap();
        assert_eq!(train.len() + test.len(), trip_ids.len());
        let train_trips: std::collections::BTreeSet<&String> =
            train.iter().map(|&i| &trip_ids[i]).collect();
        let test_trips: std::collections::BTreeSet<&String> =
            test.iter().map(|&i| &trip_ids[i]).collect();
        assert!(train_trips.is_disjoint(&test_trips));
        // 4 trips, fraction 0.3 → ceil(2.8) = 3 train trips, 1 test trip.
        assert_eq!(train_trips.len(), 3);
        assert_eq!(test_trips.len(), 1);
    }

    #[test]
    fn target_round_trip() {
        for t in Target::ALL {
            assert_eq!(t.to_string().parse::<Target>().unwrap(), t);
        }
        assert!("passengers".parse::<Target>().is_err());
    }
}
