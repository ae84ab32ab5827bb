//! Scenario selection from a pool of historical analogs.
//!
//! The forecast-guided selector scores each candidate by its distance
//! coefficient
//!
//! ```text
//! D_c = Σ_p  wcDTW_p(n, m) · wf_p
//! ```
//!
//! keeps the `N` lowest, and assigns probabilities inversely proportional to
//! `max(D_c, ε)`, renormalized over the delivered set. The benchmark
//! selector ranks the same pool by Euclidean distance in standardized
//! market-condition space and uses the same probability rule.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{
    format_timestamp, parse_timestamp, CandidateScenario, DataError, FeatureVector, Product,
    ScenarioSet, Standardizer, Timestamp,
};
use crate::forecast_io::QuantileForecast;
use crate::wcdtw::{wcdtw_distance, Distance, WcdtwConfig, WcdtwError};

pub const DEFAULT_N_SCENARIOS: usize = 10;
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("product {0} has weight > 0 but no trajectory or forecast")]
    MissingProduct(Product),
    #[error("pool has {available} feasible candidates, {needed} required")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error("wcdtw: {0}")]
    Wcdtw(#[from] WcdtwError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("scenario file: {0}")]
    ScenarioFile(String),
}

impl From<csv::Error> for SelectionError {
    fn from(e: csv::Error) -> Self {
        SelectionError::ScenarioFile(e.to_string())
    }
}

impl From<std::io::Error> for SelectionError {
    fn from(e: std::io::Error) -> Self {
        SelectionError::ScenarioFile(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub product_weights: BTreeMap<Product, f64>,
    pub n_scenarios: usize,
    pub wcdtw: WcdtwConfig,
    pub epsilon: f64,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: &str| Err(SelectionError::InvalidConfig(m.to_string()));
        if self
            .product_weights
            .values()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return bad("product weights must be finite and non-negative");
        }
        if !self.product_weights.values().any(|w| *w > 0.0) {
            return bad("at least one product weight must be positive");
        }
        if self.n_scenarios == 0 {
            return bad("n_scenarios must be at least 1");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }

    /// Products that take part in scoring (weight > 0), in key order.
    pub fn active_products(&self) -> impl Iterator<Item = (&Product, f64)> {
        self.product_weights
            .iter()
            .filter(|(_, w)| **w > 0.0)
            .map(|(p, w)| (p, *w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub candidate: CandidateScenario,
    pub per_product_distance: BTreeMap<Product, Distance>,
    pub d_c: Distance,
}

/// Weighted sum of per-product wcDTW distances. Products with zero weight are
/// skipped entirely.
pub fn score_candidate(
    candidate: &CandidateScenario,
    forecasts: &BTreeMap<Product, QuantileForecast>,
    cfg: &SelectionConfig,
) -> Result<ScoredCandidate, SelectionError> {
    let mut per_product = BTreeMap::new();
    let mut total = 0.0;
    let mut feasible = true;
    for (product, weight) in cfg.active_products() {
        let x = candidate
            .trajectory(product)
            .ok_or_else(|| SelectionError::MissingProduct(product.clone()))?;
        let forecast = forecasts
            .get(product)
            .ok_or_else(|| SelectionError::MissingProduct(product.clone()))?;
        let d = wcdtw_distance(x, &forecast.trajectory, &cfg.wcdtw)?;
        match d {
            Distance::Finite(v) => total += v * weight,
            Distance::Infeasible => feasible = false,
        }
        per_product.insert(product.clone(), d);
    }
    Ok(ScoredCandidate {
        candidate: candidate.clone(),
        per_product_distance: per_product,
        d_c: if feasible {
            Distance::Finite(total)
        } else {
            Distance::Infeasible
        },
    })
}

/// `p_k = (1 / max(d_k, ε)) / Σ_j (1 / max(d_j, ε))`.
pub fn inverse_distance_probabilities(distances: &[f64], epsilon: f64) -> Vec<f64> {
    let inv: Vec<f64> = distances.iter().map(|d| 1.0 / d.max(epsilon)).collect();
    let total: f64 = inv.iter().sum();
    inv.into_iter().map(|v| v / total).collect()
}

fn trajectory_len(c: &CandidateScenario) -> usize {
    c.trajectories.values().next().map_or(0, Vec::len)
}

fn build_set(
    ranked: Vec<(CandidateScenario, f64)>,
    epsilon: f64,
) -> Result<ScenarioSet, SelectionError> {
    let distances: Vec<f64> = ranked.iter().map(|(_, d)| *d).collect();
    let probabilities = inverse_distance_probabilities(&distances, epsilon);
    let horizon = ranked.first().map_or(0, |(c, _)| trajectory_len(c));
    let scenarios = ranked.into_iter().map(|(c, _)| c).collect();
    Ok(ScenarioSet::new(scenarios, probabilities, horizon)?)
}

/// Score every pool member and return the feasible ones ranked by `D_c`,
/// ties broken by earlier anchor.
pub fn rank_pool(
    pool: &[CandidateScenario],
    forecasts: &BTreeMap<Product, QuantileForecast>,
    cfg: &SelectionConfig,
) -> Result<Vec<ScoredCandidate>, SelectionError> {
    cfg.validate()?;
    let scored = pool
        .par_iter()
        .map(|c| score_candidate(c, forecasts, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut feasible: Vec<ScoredCandidate> =
        scored.into_iter().filter(|s| s.d_c.is_feasible()).collect();
    feasible.sort_by(|a, b| {
        a.d_c
            .total_cmp(&b.d_c)
            .then(a.candidate.anchor.cmp(&b.candidate.anchor))
    });
    Ok(feasible)
}

pub fn select_scenarios(
    pool: &[CandidateScenario],
    forecasts: &BTreeMap<Product, QuantileForecast>,
    cfg: &SelectionConfig,
) -> Result<ScenarioSet, SelectionError> {
    let ranked = rank_pool(pool, forecasts, cfg)?;
    if ranked.len() < cfg.n_scenarios {
        return Err(SelectionError::PoolTooSmall {
            needed: cfg.n_scenarios,
            available: ranked.len(),
        });
    }
    let top = ranked
        .into_iter()
        .take(cfg.n_scenarios)
        .map(|s| {
            let d = s.d_c.value().unwrap_or(f64::INFINITY);
            (s.candidate, d)
        })
        .collect();
    build_set(top, cfg.epsilon)
}

/// A pool member together with its market-condition features.
#[derive(Debug, Clone, PartialEq)]
pub struct Analog {
    pub scenario: CandidateScenario,
    pub features: FeatureVector,
}

/// Nearest `n` analogs by Euclidean distance in standardized feature space.
pub fn select_benchmark(
    pool: &[Analog],
    current: &FeatureVector,
    standardizer: &Standardizer,
    n: usize,
    epsilon: f64,
) -> Result<ScenarioSet, SelectionError> {
    if n == 0 {
        return Err(SelectionError::InvalidConfig("n must be at least 1".into()));
    }
    if pool.len() < n {
        return Err(SelectionError::PoolTooSmall {
            needed: n,
            available: pool.len(),
        });
    }
    let target = standardizer.transform(&current.numeric());
    let mut ranked: Vec<(&Analog, f64)> = pool
        .iter()
        .map(|a| {
            let z = standardizer.transform(&a.features.numeric());
            let d2: f64 = z.iter().zip(&target).map(|(x, y)| (x - y).powi(2)).sum();
            (a, d2.sqrt())
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.1.total_cmp(&b.1)
            .then(a.0.scenario.anchor.cmp(&b.0.scenario.anchor))
    });
    let top = ranked
        .into_iter()
        .take(n)
        .map(|(a, d)| (a.scenario.clone(), d))
        .collect();
    build_set(top, epsilon)
}

pub const SCENARIO_HEADER: [&str; 6] =
    ["rank", "anchor", "probability", "product", "step", "value"];

/// Long-form scenario set: `rank,anchor,probability,product,step,value`,
/// rank starting at 1, products in key order.
pub fn write_scenario_set<W: Write>(writer: W, set: &ScenarioSet) -> Result<(), SelectionError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SCENARIO_HEADER)?;
    for (rank, (s, p)) in set.iter().enumerate() {
        let anchor = format_timestamp(&s.anchor);
        for (product, traj) in &s.trajectories {
            for (step, v) in traj.iter().enumerate() {
                w.write_record([
                    (rank + 1).to_string().as_str(),
                    &anchor,
                    &p.to_string(),
                    product.as_str(),
                    &step.to_string(),
                    &v.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_scenario_set`].
pub fn read_scenario_set<R: Read>(reader: R) -> Result<ScenarioSet, SelectionError> {
    let bad = |m: String| SelectionError::ScenarioFile(m);
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    if rdr.headers()?.iter().ne(SCENARIO_HEADER.iter().copied()) {
        return Err(bad(format!(
            "header must be `{}`",
            SCENARIO_HEADER.join(",")
        )));
    }
    type Row = (Timestamp, f64, BTreeMap<Product, Vec<f64>>);
    let mut by_rank: BTreeMap<usize, Row> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| {
            field(k).parse::<f64>().map_err(|_| {
                bad(format!(
                    "line {line}: bad {} `{}`",
                    SCENARIO_HEADER[k],
                    field(k)
                ))
            })
        };
        let rank: usize = field(0)
            .parse()
            .map_err(|_| bad(format!("line {line}: bad rank `{}`", field(0))))?;
        let anchor = parse_timestamp(field(1))
            .ok_or_else(|| bad(format!("line {line}: bad anchor `{}`", field(1))))?;
        let prob = num(2)?;
        let step: usize = field(4)
            .parse()
            .map_err(|_| bad(format!("line {line}: bad step `{}`", field(4))))?;
        let value = num(5)?;
        let entry = by_rank
            .entry(rank)
            .or_insert_with(|| (anchor, prob, BTreeMap::new()));
        if entry.0 != anchor || entry.1 != prob {
            return Err(bad(format!(
                "line {line}: rank {rank} changes anchor or probability"
            )));
        }
        let traj = entry.2.entry(Product::new(field(3))).or_default();
        if traj.len() != step {
            return Err(bad(format!("line {line}: steps must be contiguous from 0")));
        }
        traj.push(value);
    }
    let horizon = by_rank
        .values()
        .flat_map(|(_, _, t)| t.values())
        .map(Vec::len)
        .next()
        .ok_or_else(|| bad("no scenarios".into()))?;
    let mut scenarios = Vec::with_capacity(by_rank.len());
    let mut probabilities = Vec::with_capacity(by_rank.len());
    for (anchor, p, trajectories) in by_rank.into_values() {
        scenarios.push(CandidateScenario {
            anchor,
            trajectories,
        });
        probabilities.push(p);
    }
    Ok(ScenarioSet::new(scenarios, probabilities, horizon)?)
}
