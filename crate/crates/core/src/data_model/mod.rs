//! Core market-data types shared by every stage of the pipeline.
//!
//! All timestamps are hour-aligned UTC. Series are contiguous: one value per
//! consecutive hour, no gaps, no missing values.

mod features;
mod ingest;

pub use features::{
    build_features, trajectory_stats, Calendar, FeatureSpec, FeatureVector, Lag, Standardizer,
};
pub use ingest::{
    format_timestamp, ingest_market_csv, parse_timestamp, read_market_csv, write_market_csv,
    ColumnMapping,
};

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("gap in series {product}: first missing hour {missing}")]
    GapInSeries {
        product: Product,
        missing: Timestamp,
    },
    #[error("duplicate hour {hour} for product {product}")]
    DuplicateHour { product: Product, hour: Timestamp },
    #[error("unparseable value on line {line}: {detail}")]
    UnparseableValue { line: u64, detail: String },
    #[error("timestamp {0} is not hour-aligned")]
    MisalignedTimestamp(String),
    #[error("empty product identifier on line {0}")]
    EmptyProduct(u64),
    #[error("duplicate product {0} in dataset")]
    DuplicateProduct(Product),
    #[error("series for {0} is empty")]
    EmptySeries(Product),
    #[error("non-finite value in series {0}")]
    NonFinite(Product),
    #[error("product {0} not present in dataset")]
    MissingProduct(Product),
    #[error("insufficient history for {product}: needs hour {needed}")]
    InsufficientHistory { product: Product, needed: Timestamp },
    #[error("insufficient data for {product}: {horizon} hours from {anchor}")]
    InsufficientData {
        product: Product,
        anchor: Timestamp,
        horizon: usize,
    },
    #[error("invalid scenario set: {0}")]
    InvalidScenarioSet(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        DataError::Csv(e.to_string())
    }
}

/// Market product identifier such as `ENERGY_RT` or `REG_UP`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Product(String);

impl Product {
    pub fn new(id: impl Into<String>) -> Self {
        Product(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Product {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Product {
    fn from(s: &str) -> Self {
        Product::new(s)
    }
}

pub fn is_hour_aligned(ts: &Timestamp) -> bool {
    ts.minute() == 0 && ts.second() == 0 && ts.nanosecond() == 0
}

pub fn hours(n: i64) -> Duration {
    Duration::hours(n)
}

/// One product's contiguous hourly record.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    product: Product,
    start: Timestamp,
    values: Vec<f64>,
}

impl HourlySeries {
    pub fn new(product: Product, start: Timestamp, values: Vec<f64>) -> Result<Self, DataError> {
        if product.as_str().is_empty() {
            return Err(DataError::EmptyProduct(0));
        }
        if values.is_empty() {
            return Err(DataError::EmptySeries(product));
        }
        if !is_hour_aligned(&start) {
            return Err(DataError::MisalignedTimestamp(start.to_rfc3339()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite(product));
        }
        Ok(HourlySeries {
            product,
            start,
            values,
        })
    }

    pub fn product(&self) -> &Product {
        &self.product
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    /// First hour after the last value.
    pub fn end(&self) -> Timestamp {
        self.start + hours(self.values.len() as i64)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index_of(&self, ts: Timestamp) -> Option<usize> {
        if !is_hour_aligned(&ts) || ts < self.start {
            return None;
        }
        let idx = (ts - self.start).num_hours() as usize;
        (idx < self.values.len()).then_some(idx)
    }

    pub fn value_at(&self, ts: Timestamp) -> Option<f64> {
        self.index_of(ts).map(|i| self.values[i])
    }

    /// `len` consecutive values starting at `ts`, if fully covered.
    pub fn window(&self, ts: Timestamp, len: usize) -> Option<&[f64]> {
        let i = self.index_of(ts)?;
        self.values.get(i..i + len)
    }
}

/// All products of one market record, keyed by product.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarketData {
    series: BTreeMap<Product, HourlySeries>,
}

impl MarketData {
    pub fn new(series: Vec<HourlySeries>) -> Result<Self, DataError> {
        let mut map = BTreeMap::new();
        for s in series {
            let p = s.product().clone();
            if map.insert(p.clone(), s).is_some() {
                return Err(DataError::DuplicateProduct(p));
            }
        }
        Ok(MarketData { series: map })
    }

    pub fn get(&self, product: &Product) -> Result<&HourlySeries, DataError> {
        self.series
            .get(product)
            .ok_or_else(|| DataError::MissingProduct(product.clone()))
    }

    pub fn products(&self) -> impl Iterator<Item = &Product> {
        self.series.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HourlySeries> {
        self.series.values()
    }

    pub fn into_series(self) -> Vec<HourlySeries> {
        self.series.into_values().collect()
    }

    /// Latest start and earliest end across all products.
    pub fn common_span(&self) -> Option<(Timestamp, Timestamp)> {
        let start = self.series.values().map(|s| s.start()).max()?;
        let end = self.series.values().map(|s| s.end()).min()?;
        (start < end).then_some((start, end))
    }
}

/// Historical per-product trajectories over `H` hours starting at `anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScenario {
    pub anchor: Timestamp,
    pub trajectories: BTreeMap<Product, Vec<f64>>,
}

impl CandidateScenario {
    pub fn trajectory(&self, product: &Product) -> Option<&[f64]> {
        self.trajectories.get(product).map(Vec::as_slice)
    }
}

/// Slice the record into an `horizon`-hour window per product.
pub fn extract_candidate(
    data: &MarketData,
    anchor: Timestamp,
    products: &[Product],
    horizon: usize,
) -> Result<CandidateScenario, DataError> {
    let mut trajectories = BTreeMap::new();
    for p in products {
        let series = data.get(p)?;
        let window = series
            .window(anchor, horizon)
            .ok_or_else(|| DataError::InsufficientData {
                product: p.clone(),
                anchor,
                horizon,
            })?;
        trajectories.insert(p.clone(), window.to_vec());
    }
    Ok(CandidateScenario {
        anchor,
        trajectories,
    })
}

/// Selected scenarios and their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    scenarios: Vec<CandidateScenario>,
    probabilities: Vec<f64>,
    horizon: usize,
}

pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

impl ScenarioSet {
    pub fn new(
        scenarios: Vec<CandidateScenario>,
        probabilities: Vec<f64>,
        horizon: usize,
    ) -> Result<Self, DataError> {
        if scenarios.is_empty() {
            return Err(DataError::InvalidScenarioSet("no scenarios".into()));
        }
        if scenarios.len() != probabilities.len() {
            return Err(DataError::InvalidScenarioSet(format!(
                "{} scenarios but {} probabilities",
                scenarios.len(),
                probabilities.len()
            )));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DataError::InvalidScenarioSet(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(DataError::InvalidScenarioSet(format!(
                "probabilities sum to {total}"
            )));
        }
        for s in &scenarios {
            if let Some((p, t)) = s.trajectories.iter().find(|(_, t)| t.len() != horizon) {
                return Err(DataError::InvalidScenarioSet(format!(
                    "trajectory {p} at {} has length {} (horizon {horizon})",
                    s.anchor,
                    t.len()
                )));
            }
        }
        Ok(ScenarioSet {
            scenarios,
            probabilities,
            horizon,
        })
    }

    pub fn scenarios(&self) -> &[CandidateScenario] {
        &self.scenarios
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CandidateScenario, f64)> {
        self.scenarios
            .iter()
            .zip(self.probabilities.iter().copied())
    }
}
