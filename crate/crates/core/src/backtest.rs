//! Rolling-horizon backtest: every decision hour builds features, picks a
//! cluster of historical analogs, selects a scenario set, solves the
//! two-stage dispatch, commits the first hour and settles it against the
//! realized price.
//!
//! The analog pool and both cluster models are fitted once, on anchors whose
//! full horizon is realized before the first decision hour. Scenario sets do
//! not depend on the battery state, so they are built in parallel; dispatch
//! then runs sequentially because SoC is carried from hour to hour.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{fit_rows, pick_cluster, ClusterError, ClusterModel};
use crate::data_model::{
    build_features, extract_candidate, format_timestamp, hours, trajectory_stats,
    CandidateScenario, DataError, FeatureSpec, MarketData, Product, ScenarioSet, Timestamp,
};
use crate::dispatch::{
    optimal_first_action, BatteryParams, DiscreteBattery, DispatchDecision, DispatchError,
    DispatchGrid,
};
use crate::evaluation::{stoch_metric, EvalError, SmReport};
use crate::forecast_io::{baseline_analog_forecast, ForecastError, QuantileForecast};
use crate::selection::{
    select_benchmark, select_scenarios, Analog, SelectionConfig, SelectionError,
};
use crate::wcdtw::QuantileWeights;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("data gap at {hour}: {detail}")]
    DataGap { hour: Timestamp, detail: String },
    #[error("no forecast for {product} issued at {hour}")]
    MissingForecast { hour: Timestamp, product: Product },
    #[error("empty period: start {start} is not before end {end}")]
    EmptyPeriod { start: Timestamp, end: Timestamp },
    #[error("only {0} historical anchors available before the period")]
    NoHistory(usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorKind {
    Proposed,
    Benchmark,
}

impl SelectorKind {
    pub fn label(self) -> &'static str {
        match self {
            SelectorKind::Proposed => "proposed",
            SelectorKind::Benchmark => "benchmark",
        }
    }
}

/// Decision hours `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Period {
    pub fn hours(&self) -> Vec<Timestamp> {
        let n = (self.end - self.start).num_hours().max(0);
        (0..n).map(|h| self.start + hours(h)).collect()
    }
}

/// Built-in analog-quantile forecaster settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineForecastConfig {
    /// Historical anchors whose preceding `match_hours` best match the
    /// current ones; their realized trajectories form the quantiles.
    pub analog_members: usize,
    pub match_hours: usize,
}

impl Default for BaselineForecastConfig {
    fn default() -> Self {
        BaselineForecastConfig {
            analog_members: 20,
            match_hours: 24,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ForecastSource {
    Baseline(BaselineForecastConfig),
    /// Forecasts keyed by (issue time, product).
    Files(BTreeMap<(Timestamp, Product), QuantileForecast>),
}

#[derive(Debug, Clone)]
pub struct BacktestConfig {
    pub horizon: usize,
    /// Product settled in dispatch and scored by the stoch metric.
    pub target_product: Product,
    pub selection: SelectionConfig,
    pub features: FeatureSpec,
    pub k: usize,
    pub seed: u64,
    /// Append realized (history) or forecast (query) trajectory statistics of
    /// the weighted products to the proposed selector's clustering features.
    pub augment_target_stats: bool,
    pub forecast: ForecastSource,
    pub battery: BatteryParams,
    pub grid: DispatchGrid,
}

impl BacktestConfig {
    fn scenario_products(&self) -> Vec<Product> {
        let mut ps: Vec<Product> = self
            .selection
            .active_products()
            .map(|(p, _)| p.clone())
            .collect();
        if !ps.contains(&self.target_product) {
            ps.push(self.target_product.clone());
        }
        ps.sort();
        ps
    }

    pub fn levels(&self) -> &[f64] {
        self.selection.wcdtw.quantile_weights.levels()
    }
}

struct HistoryEntry {
    analog: Analog,
    stats: Vec<f64>,
}

/// Everything that stays fixed across the decision hours of one period.
pub struct Backtester<'a> {
    data: &'a MarketData,
    cfg: BacktestConfig,
    period: Period,
    history: Vec<HistoryEntry>,
    proposed_model: ClusterModel,
    benchmark_model: ClusterModel,
}

/// Per-decision output of scenario selection.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub hour: Timestamp,
    pub set: ScenarioSet,
    pub target: Vec<f64>,
    pub report: SmReport,
    pub forecasts: BTreeMap<Product, QuantileForecast>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestRow {
    pub hour: Timestamp,
    pub action_mw: f64,
    pub realized_price: f64,
    pub revenue: f64,
    pub soc: f64,
    pub sm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RevenueSummary {
    pub discharge_revenue: f64,
    pub discharge_mwh: f64,
    pub charge_cost: f64,
    pub charge_mwh: f64,
    pub throughput_cost: f64,
}

impl RevenueSummary {
    pub fn total(&self) -> f64 {
        self.discharge_revenue + self.charge_cost
    }
}

#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub selector: SelectorKind,
    pub product: Product,
    pub energy_capacity: f64,
    pub decisions: Vec<DispatchDecision>,
    pub rows: Vec<BacktestRow>,
    pub realized: RevenueSummary,
    pub sm_trace: Vec<SmReport>,
}

impl BacktestResult {
    pub fn mean_sm(&self) -> f64 {
        if self.sm_trace.is_empty() {
            return 0.0;
        }
        self.sm_trace.iter().map(|r| r.sm).sum::<f64>() / self.sm_trace.len() as f64
    }

    /// `hour,action_mw,realized_price,revenue,soc,sm`
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "hour,action_mw,realized_price,revenue,soc,sm")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                format_timestamp(&r.hour),
                r.action_mw,
                r.realized_price,
                r.revenue,
                r.soc,
                r.sm
            )?;
        }
        Ok(())
    }

    /// Revenue split by dispatch direction. `usd_per_mwh_capacity` divides by
    /// the battery's energy capacity.
    pub fn write_summary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let s = &self.realized;
        let cap = self.energy_capacity;
        writeln!(
            w,
            "product,dispatch,revenue_usd,energy_mwh,usd_per_mwh_capacity"
        )?;
        writeln!(
            w,
            "{},discharge,{},{},{}",
            self.product,
            s.discharge_revenue,
            s.discharge_mwh,
            s.discharge_revenue / cap
        )?;
        writeln!(
            w,
            "{},charge,{},{},{}",
            self.product,
            s.charge_cost,
            s.charge_mwh,
            s.charge_cost / cap
        )?;
        writeln!(
            w,
            "{},total,{},{},{}",
            self.product,
            s.total(),
            s.discharge_mwh + s.charge_mwh,
            s.total() / cap
        )?;
        Ok(())
    }
}

fn target_stats_of(products: &[Product], trajectories: &BTreeMap<Product, Vec<f64>>) -> Vec<f64> {
    products
        .iter()
        .filter_map(|p| trajectories.get(p))
        .flat_map(|t| trajectory_stats(t))
        .collect()
}

/// Central trajectory of a forecast: the 0.5 level, else the middle level.
fn central(f: &QuantileForecast) -> Vec<f64> {
    f.median().unwrap_or_else(|| {
        let mid = f.trajectory.levels().len() / 2;
        f.trajectory.rows().iter().map(|r| r[mid]).collect()
    })
}

impl<'a> Backtester<'a> {
    pub fn new(
        data: &'a MarketData,
        cfg: BacktestConfig,
        period: Period,
    ) -> Result<Self, BacktestError> {
        if period.start >= period.end {
            return Err(BacktestError::EmptyPeriod {
                start: period.start,
                end: period.end,
            });
        }
        cfg.selection.validate()?;
        cfg.battery.validate()?;
        DiscreteBattery::new(&cfg.battery, cfg.grid)?;

        let products = cfg.scenario_products();
        let weighted: Vec<Product> = cfg
            .selection
            .active_products()
            .map(|(p, _)| p.clone())
            .collect();
        let (span_start, _) = data.common_span().ok_or(BacktestError::NoHistory(0))?;
        let last_anchor = period.start - hours(cfg.horizon as i64);
        let mut history = Vec::new();
        let mut anchor = span_start;
        while anchor <= last_anchor {
            if let (Ok(features), Ok(scenario)) = (
                build_features(data, anchor, &cfg.features),
                extract_candidate(data, anchor, &products, cfg.horizon),
            ) {
                let stats = target_stats_of(&weighted, &scenario.trajectories);
                history.push(HistoryEntry {
                    analog: Analog { scenario, features },
                    stats,
                });
            }
            anchor += hours(1);
        }
        if history.len() < cfg.k.max(1) {
            return Err(BacktestError::NoHistory(history.len()));
        }

        let anchors: Vec<Timestamp> = history.iter().map(|h| h.analog.scenario.anchor).collect();
        let base_rows: Vec<Vec<f64>> = history
            .iter()
            .map(|h| h.analog.features.numeric())
            .collect();
        let benchmark_model = fit_rows(&anchors, &base_rows, cfg.k, cfg.seed)?;
        let proposed_model = if cfg.augment_target_stats {
            let rows: Vec<Vec<f64>> = history
                .iter()
                .zip(base_rows)
                .map(|(h, mut r)| {
                    r.extend(&h.stats);
                    r
                })
                .collect();
            fit_rows(&anchors, &rows, cfg.k, cfg.seed)?
        } else {
            benchmark_model.clone()
        };

        Ok(Backtester {
            data,
            cfg,
            period,
            history,
            proposed_model,
            benchmark_model,
        })
    }

    pub fn config(&self) -> &BacktestConfig {
        &self.cfg
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn proposed_model(&self) -> &ClusterModel {
        &self.proposed_model
    }

    pub fn benchmark_model(&self) -> &ClusterModel {
        &self.benchmark_model
    }

    fn gap(hour: Timestamp, e: impl std::fmt::Display) -> BacktestError {
        BacktestError::DataGap {
            hour,
            detail: e.to_string(),
        }
    }

    fn analog_forecast(
        &self,
        hour: Timestamp,
        product: &Product,
        settings: &BaselineForecastConfig,
    ) -> Result<QuantileForecast, BacktestError> {
        let series = self.data.get(product)?;
        let len = settings.match_hours;
        let recent = series
            .window(hour - hours(len as i64), len)
            .ok_or_else(|| Self::gap(hour, format!("{len}h of {product} before hour")))?;
        let mut scored: Vec<(f64, &CandidateScenario)> = self
            .history
            .iter()
            .filter_map(|h| {
                let a = h.analog.scenario.anchor;
                let past = series.window(a - hours(len as i64), len)?;
                let d: f64 = past.iter().zip(recent).map(|(x, y)| (x - y).powi(2)).sum();
                Some((d, &h.analog.scenario))
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.anchor.cmp(&b.1.anchor)));
        let members: Vec<CandidateScenario> = scored
            .into_iter()
            .take(settings.analog_members)
            .map(|(_, c)| c.clone())
            .collect();
        Ok(baseline_analog_forecast(
            &members,
            product,
            self.cfg.levels(),
            hour,
        )?)
    }

    pub fn forecasts_at(
        &self,
        hour: Timestamp,
    ) -> Result<BTreeMap<Product, QuantileForecast>, BacktestError> {
        let mut out = BTreeMap::new();
        for (product, _) in self.cfg.selection.active_products() {
            let f = match &self.cfg.forecast {
                ForecastSource::Baseline(settings) => {
                    self.analog_forecast(hour, product, settings)?
                }
                ForecastSource::Files(map) => map
                    .get(&(hour, product.clone()))
                    .cloned()
                    .ok_or_else(|| BacktestError::MissingForecast {
                        hour,
                        product: product.clone(),
                    })?,
            };
            if f.horizon() != self.cfg.horizon {
                return Err(ForecastError::HorizonMismatch {
                    expected: self.cfg.horizon,
                    found: f.horizon(),
                }
                .into());
            }
            out.insert(product.clone(), f);
        }
        Ok(out)
    }

    fn members_of(&self, model: &ClusterModel, cluster: usize) -> Vec<&Analog> {
        self.history
            .iter()
            .filter(|h| model.assignments.get(&h.analog.scenario.anchor) == Some(&cluster))
            .map(|h| &h.analog)
            .collect()
    }

    /// Select a scenario set for `hour` and score it against the realized
    /// target trajectory.
    pub fn select_at(
        &self,
        hour: Timestamp,
        selector: SelectorKind,
    ) -> Result<SelectionOutcome, BacktestError> {
        let features =
            build_features(self.data, hour, &self.cfg.features).map_err(|e| Self::gap(hour, e))?;
        let target = self
            .data
            .get(&self.cfg.target_product)?
            .window(hour, self.cfg.horizon)
            .ok_or_else(|| Self::gap(hour, "realized target horizon not covered"))?
            .to_vec();

        let (set, forecasts) = match selector {
            SelectorKind::Proposed => {
                let forecasts = self.forecasts_at(hour)?;
                let query = if self.cfg.augment_target_stats {
                    let centrals: BTreeMap<Product, Vec<f64>> = forecasts
                        .iter()
                        .map(|(p, f)| (p.clone(), central(f)))
                        .collect();
                    let weighted: Vec<Product> = centrals.keys().cloned().collect();
                    features.with_target_stats(target_stats_of(&weighted, &centrals))
                } else {
                    features
                };
                let pick = pick_cluster(&self.proposed_model, &query)?;
                let pool: Vec<CandidateScenario> = self
                    .members_of(&self.proposed_model, pick.cluster)
                    .into_iter()
                    .map(|a| a.scenario.clone())
                    .collect();
                (
                    select_scenarios(&pool, &forecasts, &self.cfg.selection)?,
                    forecasts,
                )
            }
            SelectorKind::Benchmark => {
                let pick = pick_cluster(&self.benchmark_model, &features)?;
                let pool: Vec<Analog> = self
                    .members_of(&self.benchmark_model, pick.cluster)
                    .into_iter()
                    .cloned()
                    .collect();
                let set = select_benchmark(
                    &pool,
                    &features,
                    &self.benchmark_model.standardizer,
                    self.cfg.selection.n_scenarios,
                    self.cfg.selection.epsilon,
                )?;
                (set, BTreeMap::new())
            }
        };
        let report = stoch_metric(&set, &target, &self.cfg.target_product)?;
        Ok(SelectionOutcome {
            hour,
            set,
            target,
            report,
            forecasts,
        })
    }

    /// Scenario selection and SM for every hour of the period, no dispatch.
    pub fn evaluate(&self, selector: SelectorKind) -> Result<Vec<SelectionOutcome>, BacktestError> {
        self.period
            .hours()
            .into_par_iter()
            .map(|h| self.select_at(h, selector))
            .collect()
    }

    pub fn run(&self, selector: SelectorKind) -> Result<BacktestResult, BacktestError> {
        let outcomes = self.evaluate(selector)?;
        let bat = DiscreteBattery::new(&self.cfg.battery, self.cfg.grid)?;
        let prices = self.data.get(&self.cfg.target_product)?;
        let mut soc_index = bat.soc_index(self.cfg.battery.initial_soc)?;
        let mut realized = RevenueSummary::default();
        let mut decisions = Vec::with_capacity(outcomes.len());
        let mut rows = Vec::with_capacity(outcomes.len());
        let mut sm_trace = Vec::with_capacity(outcomes.len());

        for out in outcomes {
            let decision = optimal_first_action(
                &out.set,
                &self.cfg.target_product,
                &self.cfg.battery,
                self.cfg.grid,
                bat.soc(soc_index),
                out.hour,
            )?;
            let price = prices
                .value_at(out.hour)
                .ok_or_else(|| Self::gap(out.hour, "no realized price"))?;
            let mv = (decision.soc_delta / bat.step).round() as i64;
            soc_index = (soc_index as i64 + mv) as usize;
            let revenue = price * decision.action_mw;
            if decision.action_mw > 0.0 {
                realized.discharge_revenue += revenue;
                realized.discharge_mwh += decision.action_mw;
            } else if decision.action_mw < 0.0 {
                realized.charge_cost += revenue;
                realized.charge_mwh += -decision.action_mw;
            }
            realized.throughput_cost += self.cfg.battery.throughput_cost * decision.soc_delta.abs();
            rows.push(BacktestRow {
                hour: out.hour,
                action_mw: decision.action_mw,
                realized_price: price,
                revenue,
                soc: bat.soc(soc_index),
                sm: out.report.sm,
            });
            decisions.push(decision);
            sm_trace.push(out.report);
        }

        Ok(BacktestResult {
            selector,
            product: self.cfg.target_product.clone(),
            energy_capacity: self.cfg.battery.energy_capacity,
            decisions,
            rows,
            realized,
            sm_trace,
        })
    }
}

pub fn run_backtest(
    data: &MarketData,
    selector: SelectorKind,
    cfg: &BacktestConfig,
    period: Period,
) -> Result<BacktestResult, BacktestError> {
    Backtester::new(data, cfg.clone(), period)?.run(selector)
}

/// One entry of a weight grid: product weights and quantile weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightCandidate {
    pub label: String,
    pub product_weights: BTreeMap<Product, f64>,
    pub quantile_weights: QuantileWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    pub label: String,
    pub mean_sm: f64,
    pub decisions: usize,
}

/// Grid search over user-listed weight sets, scored by the proposed
/// selector's mean SM on `period`. Sorted best first; ties keep input order.
pub fn tune_weights(
    data: &MarketData,
    base: &BacktestConfig,
    period: Period,
    candidates: &[WeightCandidate],
) -> Result<Vec<TuneResult>, BacktestError> {
    let mut results = Vec::with_capacity(candidates.len());
    for c in candidates {
        let mut cfg = base.clone();
        cfg.selection.product_weights = c.product_weights.clone();
        cfg.selection.wcdtw.quantile_weights = c.quantile_weights.clone();
        let outcomes = Backtester::new(data, cfg, period)?.evaluate(SelectorKind::Proposed)?;
        let mean_sm =
            outcomes.iter().map(|o| o.report.sm).sum::<f64>() / outcomes.len().max(1) as f64;
        results.push(TuneResult {
            label: c.label.clone(),
            mean_sm,
            decisions: outcomes.len(),
        });
    }
    results.sort_by(|a, b| a.mean_sm.total_cmp(&b.mean_sm));
    Ok(results)
}

/// Forecast-file lookup keyed by (issue time, product).
pub fn index_forecasts(
    forecasts: Vec<QuantileForecast>,
) -> BTreeMap<(Timestamp, Product), QuantileForecast> {
    forecasts
        .into_iter()
        .map(|f| ((f.issue_time, f.product.clone()), f))
        .collect()
}
