//! Weighted constrained dynamic time warping.
//!
//! A historical trajectory `x` (length n) is aligned against a probabilistic
//! forecast `y` given as an m × Q matrix of quantile values. The local cost
//! of pairing `x_i` with forecast step `j` is the quantile-weighted absolute
//! deviation
//!
//! ```text
//! w(i, j) = Σ_q  w^q · |x_i − y_j^q|
//! ```
//!
//! and the accumulated cost follows the usual DTW recursion restricted to a
//! Sakoe-Chiba band of half-width `W` (1-based, as documented):
//!
//! ```text
//! D(i, j) = +inf                                            if |i − j| > W
//! D(i, j) = w(i, j) + min{ D(i−1, j), D(i−1, j−1), D(i, j−1) }   otherwise
//! D(1, 1) = w(1, 1)
//! ```
//!
//! Out-of-range predecessors are treated as `+inf`, so the first row and
//! column accumulate along their only predecessor. The result is the raw
//! accumulated cost `D(n, m)`; there is no path-length normalization.
//! When no band-feasible path exists the result is [`Distance::Infeasible`].

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WcdtwError {
    #[error("row has {found} values but {expected} quantile levels are configured")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("forecast quantile levels {found:?} do not match configured levels {expected:?}")]
    LevelMismatch { expected: Vec<f64>, found: Vec<f64> },
    #[error("quantile levels must be strictly increasing and inside (0, 1)")]
    InvalidLevels,
    #[error("quantile weights must be non-negative, finite, and sum to a positive value")]
    InvalidWeights,
    #[error("quantile crossing at step {step}: level {lower} exceeds level {upper}")]
    QuantileCrossing { step: usize, lower: f64, upper: f64 },
    #[error("non-finite forecast value at step {0}")]
    NonFinite(usize),
    #[error("empty series")]
    EmptySeries,
    #[error("instance too large for enumeration (n + m = {0} > {MAX_BRUTE_FORCE})")]
    InstanceTooLarge(usize),
}

/// Largest `n + m` accepted by [`brute_force_dtw`].
pub const MAX_BRUTE_FORCE: usize = 14;

/// Accumulated alignment cost, or the absence of any band-feasible path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Distance {
    Finite(f64),
    Infeasible,
}

impl Distance {
    pub fn value(self) -> Option<f64> {
        match self {
            Distance::Finite(v) => Some(v),
            Distance::Infeasible => None,
        }
    }

    pub fn is_feasible(self) -> bool {
        matches!(self, Distance::Finite(_))
    }

    fn from_raw(v: f64) -> Self {
        if v.is_finite() {
            Distance::Finite(v)
        } else {
            Distance::Infeasible
        }
    }

    /// Total order with `Infeasible` above every finite value.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Distance::Finite(a), Distance::Finite(b)) => a.total_cmp(b),
            (Distance::Finite(_), Distance::Infeasible) => Ordering::Less,
            (Distance::Infeasible, Distance::Finite(_)) => Ordering::Greater,
            (Distance::Infeasible, Distance::Infeasible) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::Finite(v) => write!(f, "{v}"),
            Distance::Infeasible => f.write_str("inf"),
        }
    }
}

fn check_levels(levels: &[f64]) -> Result<(), WcdtwError> {
    let in_range = levels.iter().all(|q| *q > 0.0 && *q < 1.0);
    let increasing = levels.windows(2).all(|w| w[0] < w[1]);
    if levels.is_empty() || !in_range || !increasing {
        return Err(WcdtwError::InvalidLevels);
    }
    Ok(())
}

/// Quantile levels with their weights, normalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct QuantileWeights {
    levels: Vec<f64>,
    weights: Vec<f64>,
}

impl QuantileWeights {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self, WcdtwError> {
        let (levels, raw): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        check_levels(&levels)?;
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(WcdtwError::InvalidWeights);
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(WcdtwError::InvalidWeights);
        }
        let weights = raw.into_iter().map(|w| w / total).collect();
        Ok(QuantileWeights { levels, weights })
    }

    /// Weights proportional to the standard normal density at the probit of
    /// each level: central quantiles dominate, the tails taper off.
    pub fn normal(levels: &[f64]) -> Result<Self, WcdtwError> {
        check_levels(levels)?;
        let n = Normal::standard();
        let pairs = levels
            .iter()
            .map(|&q| (q, n.pdf(n.inverse_cdf(q))))
            .collect();
        Self::new(pairs)
    }

    /// A single level carrying all the weight.
    pub fn single(level: f64) -> Result<Self, WcdtwError> {
        Self::new(vec![(level, 1.0)])
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Same levels with every weight multiplied by `c`; used to check that
    /// normalization makes the metric invariant to weight scale.
    pub fn scaled(&self, c: f64) -> Result<Self, WcdtwError> {
        Self::new(
            self.levels
                .iter()
                .zip(&self.weights)
                .map(|(q, w)| (*q, w * c))
                .collect(),
        )
    }
}

impl TryFrom<Vec<(f64, f64)>> for QuantileWeights {
    type Error = WcdtwError;

    fn try_from(pairs: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        Self::new(pairs)
    }
}

impl From<QuantileWeights> for Vec<(f64, f64)> {
    fn from(w: QuantileWeights) -> Self {
        w.levels.into_iter().zip(w.weights).collect()
    }
}

/// Band half-width plus quantile weights. `window: None` leaves the band
/// unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WcdtwConfig {
    pub window: Option<usize>,
    pub quantile_weights: QuantileWeights,
}

impl WcdtwConfig {
    pub fn new(window: Option<usize>, quantile_weights: QuantileWeights) -> Self {
        WcdtwConfig {
            window,
            quantile_weights,
        }
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        self.window.is_none_or(|w| i.abs_diff(j) <= w)
    }
}

/// Forecast values: row `j` is horizon step `j`, column `q` the quantile level.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTrajectory {
    levels: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl QuantileTrajectory {
    pub fn new(levels: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self, WcdtwError> {
        check_levels(&levels)?;
        if rows.is_empty() {
            return Err(WcdtwError::EmptySeries);
        }
        for (step, row) in rows.iter().enumerate() {
            if row.len() != levels.len() {
                return Err(WcdtwError::DimensionMismatch {
                    expected: levels.len(),
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(WcdtwError::NonFinite(step));
            }
            if let Some(k) = (1..row.len()).find(|&k| row[k - 1] > row[k]) {
                return Err(WcdtwError::QuantileCrossing {
                    step,
                    lower: levels[k - 1],
                    upper: levels[k],
                });
            }
        }
        Ok(QuantileTrajectory { levels, rows })
    }

    /// A degenerate forecast whose every quantile equals `values`.
    pub fn point(levels: Vec<f64>, values: &[f64]) -> Result<Self, WcdtwError> {
        let q = levels.len();
        Self::new(levels, values.iter().map(|v| vec![*v; q]).collect())
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    /// Values at one level across the horizon, if the level is present.
    pub fn level_series(&self, level: f64) -> Option<Vec<f64>> {
        let k = self.levels.iter().position(|q| (q - level).abs() < 1e-12)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Quantile-weighted absolute deviation between `x` and one forecast row.
pub fn local_cost(x: f64, row: &[f64], cfg: &WcdtwConfig) -> Result<f64, WcdtwError> {
    let weights = cfg.quantile_weights.weights();
    if row.len() != weights.len() {
        return Err(WcdtwError::DimensionMismatch {
            expected: weights.len(),
            found: row.len(),
        });
    }
    Ok(weighted_abs(x, row, weights))
}

#[inline]
fn weighted_abs(x: f64, row: &[f64], weights: &[f64]) -> f64 {
    row.iter()
        .zip(weights)
        .map(|(y, w)| w * (x - y).abs())
        .sum()
}

fn check_inputs(x: &[f64], y: &QuantileTrajectory, cfg: &WcdtwConfig) -> Result<(), WcdtwError> {
    if x.is_empty() {
        return Err(WcdtwError::EmptySeries);
    }
    if y.levels() != cfg.quantile_weights.levels() {
        return Err(WcdtwError::LevelMismatch {
            expected: cfg.quantile_weights.levels().to_vec(),
            found: y.levels().to_vec(),
        });
    }
    Ok(())
}

/// Banded DP over a two-row rolling buffer.
pub fn wcdtw_distance(
    x: &[f64],
    y: &QuantileTrajectory,
    cfg: &WcdtwConfig,
) -> Result<Distance, WcdtwError> {
    check_inputs(x, y, cfg)?;
    let m = y.horizon();
    let weights = cfg.quantile_weights.weights();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];

    for (i, &xi) in x.iter().enumerate() {
        cur.fill(f64::INFINITY);
        let (lo, hi) = match cfg.window {
            Some(w) => (i.saturating_sub(w), (i.saturating_add(w)).min(m - 1)),
            None => (0, m - 1),
        };
        if lo > hi {
            std::mem::swap(&mut prev, &mut cur);
            continue;
        }
        for j in lo..=hi {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 {
                    prev[j - 1]
                } else {
                    f64::INFINITY
                };
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                up.min(diag).min(left)
            };
            if best.is_finite() {
                cur[j] = best + weighted_abs(xi, &y.rows()[j], weights);
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(Distance::from_raw(prev[m - 1]))
}

/// Exhaustive minimum over every monotone, contiguous, band-respecting
/// warping path. Reference implementation for small instances.
pub fn brute_force_dtw(
    x: &[f64],
    y: &QuantileTrajectory,
    cfg: &WcdtwConfig,
) -> Result<Distance, WcdtwError> {
    check_inputs(x, y, cfg)?;
    let (n, m) = (x.len(), y.horizon());
    if n + m > MAX_BRUTE_FORCE {
        return Err(WcdtwError::InstanceTooLarge(n + m));
    }
    let weights = cfg.quantile_weights.weights();
    let cost = |i: usize, j: usize| weighted_abs(x[i], &y.rows()[j], weights);

    #[allow(clippy::too_many_arguments)]
    fn walk(
        i: usize,
        j: usize,
        acc: f64,
        n: usize,
        m: usize,
        cfg: &WcdtwConfig,
        cost: &dyn Fn(usize, usize) -> f64,
        best: &mut f64,
    ) {
        if i == n - 1 && j == m - 1 {
            *best = best.min(acc);
            return;
        }
        for (di, dj) in [(1, 0), (1, 1), (0, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < n && nj < m && cfg.in_band(ni, nj) {
                walk(ni, nj, acc + cost(ni, nj), n, m, cfg, cost, best);
            }
        }
    }

    let mut best = f64::INFINITY;
    if cfg.in_band(0, 0) {
        walk(0, 0, 0.0 + cost(0, 0), n, m, cfg, &cost, &mut best);
    }
    Ok(Distance::from_raw(best))
}
