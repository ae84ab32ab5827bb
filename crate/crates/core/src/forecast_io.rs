//! Quantile forecast files and the analog-quantile baseline forecaster.
//!
//! The forecast file is the single contract between forecast producers and
//! the selection engine. Layout (UTF-8 CSV, header required, column order
//! fixed):
//!
//! ```text
//! issue_time,product,step,level,value
//! 2023-07-25T00:00:00Z,ENERGY_RT,0,0.1,21.5
//! ```
//!
//! One row per (issue_time, product, step, level). Steps run `0..H` with no
//! gaps; every step of one forecast carries the same set of levels, each in
//! (0, 1). Values at a step must be non-decreasing in level.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::data_model::{format_timestamp, parse_timestamp, CandidateScenario, Product, Timestamp};
use crate::wcdtw::{QuantileTrajectory, WcdtwError};

pub const DEFAULT_LEVELS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];
pub const HEADER: [&str; 5] = ["issue_time", "product", "step", "level", "value"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("quantile crossing in {product} issued {issue_time} at step {step}: level {lower} exceeds level {upper}")]
    QuantileCrossing {
        issue_time: Timestamp,
        product: Product,
        step: usize,
        lower: f64,
        upper: f64,
    },
    #[error("forecast horizon {found} does not match engine horizon {expected}")]
    HorizonMismatch { expected: usize, found: usize },
    #[error("baseline forecast needs at least 2 members, got {0}")]
    InsufficientMembers(usize),
    #[error("member {0} lacks a full trajectory for the product")]
    MemberTrajectory(Timestamp),
    #[error("invalid quantile levels: {0}")]
    Levels(WcdtwError),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ForecastError {
    fn from(e: std::io::Error) -> Self {
        ForecastError::Io(e.to_string())
    }
}

impl From<csv::Error> for ForecastError {
    fn from(e: csv::Error) -> Self {
        ForecastError::SchemaViolation(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    pub issue_time: Timestamp,
    pub product: Product,
    pub trajectory: QuantileTrajectory,
}

impl QuantileForecast {
    pub fn horizon(&self) -> usize {
        self.trajectory.horizon()
    }

    pub fn median(&self) -> Option<Vec<f64>> {
        self.trajectory.level_series(0.5)
    }
}

type Grid = BTreeMap<usize, Vec<(f64, f64)>>;

pub fn load_forecast_file(
    path: &Path,
    expected_horizon: Option<usize>,
) -> Result<Vec<QuantileForecast>, ForecastError> {
    let file = std::fs::File::open(path)?;
    read_forecasts(file, expected_horizon)
}

pub fn read_forecasts<R: Read>(
    reader: R,
    expected_horizon: Option<usize>,
) -> Result<Vec<QuantileForecast>, ForecastError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        return Err(ForecastError::SchemaViolation(format!(
            "header must be `{}`",
            HEADER.join(",")
        )));
    }

    let mut groups: BTreeMap<(DateTime<Utc>, Product), Grid> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |what: &str| ForecastError::SchemaViolation(format!("line {line}: {what}"));
        let issue = parse_timestamp(&record[0]).ok_or_else(|| bad("issue_time"))?;
        if record[1].is_empty() {
            return Err(bad("empty product"));
        }
        let step: usize = record[2].parse().map_err(|_| bad("step"))?;
        let level: f64 = record[3].parse().map_err(|_| bad("level"))?;
        let value: f64 = record[4].parse().map_err(|_| bad("value"))?;
        if !(level > 0.0 && level < 1.0) {
            return Err(bad("level outside (0, 1)"));
        }
        if !value.is_finite() {
            return Err(bad("non-finite value"));
        }
        groups
            .entry((issue, Product::new(&record[1])))
            .or_default()
            .entry(step)
            .or_default()
            .push((level, value));
    }

    groups
        .into_iter()
        .map(|((issue_time, product), grid)| assemble(issue_time, product, grid, expected_horizon))
        .collect()
}

fn assemble(
    issue_time: Timestamp,
    product: Product,
    grid: Grid,
    expected_horizon: Option<usize>,
) -> Result<QuantileForecast, ForecastError> {
    let horizon = grid.len();
    if let Some((last, _)) = grid.last_key_value() {
        if *last + 1 != horizon {
            return Err(ForecastError::SchemaViolation(format!(
                "{product} issued {issue_time}: steps are not contiguous from 0"
            )));
        }
    }
    if let Some(expected) = expected_horizon {
        if expected != horizon {
            return Err(ForecastError::HorizonMismatch {
                expected,
                found: horizon,
            });
        }
    }

    let mut levels: Option<Vec<f64>> = None;
    let mut rows = Vec::with_capacity(horizon);
    for (step, mut cells) in grid {
        cells.sort_by(|a, b| a.0.total_cmp(&b.0));
        if cells.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(ForecastError::SchemaViolation(format!(
                "{product} issued {issue_time}: duplicate level at step {step}"
            )));
        }
        let step_levels: Vec<f64> = cells.iter().map(|c| c.0).collect();
        match &levels {
            Some(l) if *l != step_levels => {
                return Err(ForecastError::SchemaViolation(format!(
                    "{product} issued {issue_time}: step {step} has levels {step_levels:?}, expected {l:?}"
                )))
            }
            None => levels = Some(step_levels),
            _ => {}
        }
        rows.push(cells.into_iter().map(|c| c.1).collect());
    }

    let trajectory =
        QuantileTrajectory::new(levels.unwrap_or_default(), rows).map_err(|e| match e {
            WcdtwError::QuantileCrossing { step, lower, upper } => {
                ForecastError::QuantileCrossing {
                    issue_time,
                    product: product.clone(),
                    step,
                    lower,
                    upper,
                }
            }
            other => ForecastError::Levels(other),
        })?;
    Ok(QuantileForecast {
        issue_time,
        product,
        trajectory,
    })
}

pub fn write_forecasts<W: Write>(
    writer: W,
    forecasts: &[QuantileForecast],
) -> Result<(), ForecastError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for f in forecasts {
        let issue = format_timestamp(&f.issue_time);
        for (step, row) in f.trajectory.rows().iter().enumerate() {
            for (level, value) in f.trajectory.levels().iter().zip(row) {
                w.write_record([
                    issue.as_str(),
                    f.product.as_str(),
                    &step.to_string(),
                    &level.to_string(),
                    &value.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Type-7 empirical quantile of sorted data: linear interpolation between
/// order statistics at position `(n - 1) * q`.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-step empirical quantiles of the members' trajectories for `product`.
pub fn baseline_analog_forecast(
    members: &[CandidateScenario],
    product: &Product,
    levels: &[f64],
    issue_time: Timestamp,
) -> Result<QuantileForecast, ForecastError> {
    if members.len() < 2 {
        return Err(ForecastError::InsufficientMembers(members.len()));
    }
    let trajectories = members
        .iter()
        .map(|m| {
            m.trajectory(product)
                .ok_or(ForecastError::MemberTrajectory(m.anchor))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let horizon = trajectories[0].len();
    if let Some(bad) = members
        .iter()
        .zip(&trajectories)
        .find(|(_, t)| t.len() != horizon || t.is_empty())
    {
        return Err(ForecastError::MemberTrajectory(bad.0.anchor));
    }

    let mut column = vec![0.0; members.len()];
    let rows = (0..horizon)
        .map(|t| {
            for (c, traj) in column.iter_mut().zip(&trajectories) {
                *c = traj[t];
            }
            column.sort_by(f64::total_cmp);
            // Interpolation can produce tiny crossings; a running max keeps
            // the row monotone.
            let mut row: Vec<f64> = levels
                .iter()
                .map(|&q| empirical_quantile(&column, q))
                .collect();
            for k in 1..row.len() {
                row[k] = row[k].max(row[k - 1]);
            }
            row
        })
        .collect();
    let trajectory =
        QuantileTrajectory::new(levels.to_vec(), rows).map_err(ForecastError::Levels)?;
    Ok(QuantileForecast {
        issue_time,
        product: product.clone(),
        trajectory,
    })
}
