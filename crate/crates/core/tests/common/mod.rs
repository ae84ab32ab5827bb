#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{TimeZone, Utc};
use scenario_forge::data_model::{hours, CandidateScenario, Product, ScenarioSet, Timestamp};
use scenario_forge::forecast_io::QuantileForecast;
use scenario_forge::wcdtw::QuantileTrajectory;

pub fn t0() -> Timestamp {
    Utc.with_ymd_and_hms(2023, 7, 3, 0, 0, 0).unwrap()
}

pub fn at(h: i64) -> Timestamp {
    t0() + hours(h)
}

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn candidate(anchor: Timestamp, trajectories: &[(&str, Vec<f64>)]) -> CandidateScenario {
    CandidateScenario {
        anchor,
        trajectories: trajectories
            .iter()
            .map(|(p, v)| (Product::new(*p), v.clone()))
            .collect(),
    }
}

pub fn single_product_set(
    product: &str,
    trajectories: &[Vec<f64>],
    probabilities: &[f64],
) -> ScenarioSet {
    let scenarios = trajectories
        .iter()
        .enumerate()
        .map(|(k, t)| candidate(at(k as i64), &[(product, t.clone())]))
        .collect();
    ScenarioSet::new(scenarios, probabilities.to_vec(), trajectories[0].len()).unwrap()
}

pub fn forecast(product: &str, levels: &[f64], rows: Vec<Vec<f64>>) -> (Product, QuantileForecast) {
    let p = Product::new(product);
    let f = QuantileForecast {
        issue_time: at(10_000),
        product: p.clone(),
        trajectory: QuantileTrajectory::new(levels.to_vec(), rows).unwrap(),
    };
    (p, f)
}

pub fn forecasts(items: Vec<(Product, QuantileForecast)>) -> BTreeMap<Product, QuantileForecast> {
    items.into_iter().collect()
}

/// Point forecast: every level equals `median`.
pub fn point_forecast(
    product: &str,
    levels: &[f64],
    median: &[f64],
) -> (Product, QuantileForecast) {
    forecast(
        product,
        levels,
        median.iter().map(|v| vec![*v; levels.len()]).collect(),
    )
}
