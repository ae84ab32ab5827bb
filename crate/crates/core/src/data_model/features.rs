use std::f64::consts::TAU;

use chrono::{Datelike, Timelike};
use serde::{Deserialize, Serialize};

use super::{hours, DataError, MarketData, Product, Timestamp};

/// A lagged price feature: value of `product` taken `hours` before the anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lag {
    pub product: Product,
    pub hours: u32,
}

impl Lag {
    pub fn new(product: impl Into<String>, hours: u32) -> Self {
        Lag {
            product: Product::new(product),
            hours,
        }
    }
}

/// Which series feed a [`FeatureVector`].
///
/// Load and renewable forecast products are optional; when set they are read
/// at the hour just before the anchor, like every other input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    #[serde(default = "FeatureSpec::default_lags")]
    pub lags: Vec<Lag>,
    #[serde(default)]
    pub load_product: Option<Product>,
    #[serde(default)]
    pub renewable_product: Option<Product>,
}

impl FeatureSpec {
    fn default_lags() -> Vec<Lag> {
        vec![
            Lag::new("ENERGY_DA", 24),
            Lag::new("ENERGY_DA", 168),
            Lag::new("ENERGY_RT", 24),
            Lag::new("ENERGY_RT", 168),
        ]
    }

    /// Largest number of hours of history any feature reaches back.
    pub fn max_lookback(&self) -> u32 {
        let lag = self.lags.iter().map(|l| l.hours).max().unwrap_or(0);
        let fcst = u32::from(self.load_product.is_some() || self.renewable_product.is_some());
        lag.max(fcst)
    }
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            lags: Self::default_lags(),
            load_product: None,
            renewable_product: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub hour: u32,
    /// 0 = Monday.
    pub day_of_week: u32,
    pub month: u32,
    pub weekend: bool,
}

impl Calendar {
    pub fn of(ts: Timestamp) -> Self {
        let dow = ts.weekday().num_days_from_monday();
        Calendar {
            hour: ts.hour(),
            day_of_week: dow,
            month: ts.month(),
            weekend: dow >= 5,
        }
    }
}

/// Market-condition description of one hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub anchor: Timestamp,
    pub calendar: Calendar,
    pub load_forecast: Option<f64>,
    pub renewable_forecast: Option<f64>,
    pub lagged_prices: Vec<f64>,
    /// Optional statistics of the target trajectory appended for clustering.
    #[serde(default)]
    pub target_stats: Vec<f64>,
}

impl FeatureVector {
    /// Numeric encoding used for distances. Cyclic calendar fields become
    /// sine/cosine pairs so 23:00 sits next to 00:00.
    pub fn numeric(&self) -> Vec<f64> {
        let cyc = |v: u32, period: f64| {
            let a = TAU * f64::from(v) / period;
            [a.sin(), a.cos()]
        };
        let mut out = Vec::with_capacity(7 + self.lagged_prices.len() + self.target_stats.len());
        out.extend(cyc(self.calendar.hour, 24.0));
        out.extend(cyc(self.calendar.day_of_week, 7.0));
        out.extend(cyc(self.calendar.month - 1, 12.0));
        out.push(if self.calendar.weekend { 1.0 } else { 0.0 });
        out.extend(self.load_forecast);
        out.extend(self.renewable_forecast);
        out.extend(&self.lagged_prices);
        out.extend(&self.target_stats);
        out
    }

    pub fn with_target_stats(mut self, stats: Vec<f64>) -> Self {
        self.target_stats = stats;
        self
    }

    pub fn without_target_stats(&self) -> Self {
        FeatureVector {
            target_stats: Vec::new(),
            ..self.clone()
        }
    }
}

/// Mean, max and population standard deviation of a trajectory.
pub fn trajectory_stats(values: &[f64]) -> [f64; 3] {
    if values.is_empty() {
        return [0.0; 3];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    [mean, max, var.sqrt()]
}

fn value_before(
    data: &MarketData,
    product: &Product,
    anchor: Timestamp,
    lag: u32,
) -> Result<f64, DataError> {
    let needed = anchor - hours(i64::from(lag));
    let series = data.get(product)?;
    series
        .value_at(needed)
        .ok_or_else(|| DataError::InsufficientHistory {
            product: product.clone(),
            needed,
        })
}

/// Build the feature vector for `anchor` from data strictly before it.
pub fn build_features(
    data: &MarketData,
    anchor: Timestamp,
    spec: &FeatureSpec,
) -> Result<FeatureVector, DataError> {
    let load_forecast = spec
        .load_product
        .as_ref()
        .map(|p| value_before(data, p, anchor, 1))
        .transpose()?;
    let renewable_forecast = spec
        .renewable_product
        .as_ref()
        .map(|p| value_before(data, p, anchor, 1))
        .transpose()?;
    let lagged_prices = spec
        .lags
        .iter()
        .map(|l| value_before(data, &l.product, anchor, l.hours.max(1)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureVector {
        anchor,
        calendar: Calendar::of(anchor),
        load_forecast,
        renewable_forecast,
        lagged_prices,
        target_stats: Vec::new(),
    })
}

/// Per-feature z-score parameters. Features with zero spread on the fitting
/// window are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
    pub keep: Vec<bool>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let stdev: Vec<f64> = var.into_iter().map(|s| (s / n).sqrt()).collect();
        let keep = stdev.iter().map(|s| *s > 1e-12).collect();
        Standardizer { mean, stdev, keep }
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.stdev)
            .zip(&self.keep)
            .filter(|(_, k)| **k)
            .map(|(((v, m), s), _)| (v - m) / s)
            .collect()
    }
}
