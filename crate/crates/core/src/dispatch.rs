//! Two-stage stochastic battery dispatch over a scenario set.
//!
//! The first-hour action is shared by every scenario; from hour two onward
//! each scenario follows its own optimal recourse, computed by backward
//! dynamic programming over a discretized state-of-charge grid. The terminal
//! value at the end of the horizon is zero.
//!
//! Actions are moves between SoC grid points, so every reachable SoC lies
//! exactly on the grid. A move of `e` MWh into the battery draws `e / η_c`
//! from the grid; a move of `e` MWh out of it delivers `e · η_d`. Hourly
//! value at price `π` is
//!
//! ```text
//! π · e_dis · η_d − π · e_chg / η_c − throughput_cost · |e|
//! ```
//!
//! Grid-side power limits bound the moves: `e_chg / η_c ≤ max_charge`,
//! `e_dis · η_d ≤ max_discharge`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{Product, ScenarioSet, Timestamp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispatchError {
    #[error("invalid battery parameters: {0}")]
    InvalidBattery(String),
    #[error("SoC grid cannot represent {0}")]
    InfeasibleDiscretization(String),
    #[error("scenario {0} has no {1} trajectory")]
    MissingTrajectory(usize, Product),
    #[error("scenario trajectories must have length {expected}, found {found}")]
    HorizonMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryParams {
    /// MWh
    pub energy_capacity: f64,
    /// MW drawn from the grid
    pub max_charge: f64,
    /// MW delivered to the grid
    pub max_discharge: f64,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub initial_soc: f64,
    /// $/MWh of energy moved in or out of storage
    pub throughput_cost: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        BatteryParams {
            energy_capacity: 4.0,
            max_charge: 1.0,
            max_discharge: 1.0,
            charge_efficiency: 0.95,
            discharge_efficiency: 0.95,
            soc_min: 0.4,
            soc_max: 4.0,
            initial_soc: 2.0,
            throughput_cost: 0.0,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<(), DispatchError> {
        let bad = |m: &str| Err(DispatchError::InvalidBattery(m.to_string()));
        let all = [
            self.energy_capacity,
            self.max_charge,
            self.max_discharge,
            self.charge_efficiency,
            self.discharge_efficiency,
            self.soc_min,
            self.soc_max,
            self.initial_soc,
            self.throughput_cost,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if self.energy_capacity <= 0.0 || self.max_charge <= 0.0 || self.max_discharge <= 0.0 {
            return bad("capacity and power limits must be positive");
        }
        let eff = 0.0..=1.0;
        if !eff.contains(&self.charge_efficiency)
            || !eff.contains(&self.discharge_efficiency)
            || self.charge_efficiency == 0.0
            || self.discharge_efficiency == 0.0
        {
            return bad("efficiencies must lie in (0, 1]");
        }
        if !(0.0 <= self.soc_min
            && self.soc_min <= self.initial_soc
            && self.initial_soc <= self.soc_max
            && self.soc_max <= self.energy_capacity)
        {
            return bad("need 0 <= soc_min <= initial_soc <= soc_max <= energy_capacity");
        }
        if self.throughput_cost < 0.0 {
            return bad("throughput_cost must be non-negative");
        }
        Ok(())
    }
}

/// SoC discretization: the capacity is split into `soc_steps` equal steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispatchGrid {
    pub soc_steps: usize,
}

impl Default for DispatchGrid {
    fn default() -> Self {
        DispatchGrid { soc_steps: 20 }
    }
}

const GRID_TOL: f64 = 1e-9;

/// Battery and grid resolved into integer SoC indices and admissible moves.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBattery {
    pub step: f64,
    pub min_index: usize,
    pub max_index: usize,
    /// Largest upward move (charge) in grid steps.
    pub max_up: usize,
    /// Largest downward move (discharge) in grid steps.
    pub max_down: usize,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    pub throughput_cost: f64,
}

impl DiscreteBattery {
    pub fn new(battery: &BatteryParams, grid: DispatchGrid) -> Result<Self, DispatchError> {
        battery.validate()?;
        if grid.soc_steps == 0 {
            return Err(DispatchError::InfeasibleDiscretization(
                "a grid with zero steps".into(),
            ));
        }
        let step = battery.energy_capacity / grid.soc_steps as f64;
        let min_index = Self::index_of(battery.soc_min, step, "soc_min")?;
        let max_index = Self::index_of(battery.soc_max, step, "soc_max")?;
        Self::index_of(battery.initial_soc, step, "initial_soc")?;
        let max_up =
            (battery.max_charge * battery.charge_efficiency / step + GRID_TOL).floor() as usize;
        let max_down = (battery.max_discharge / battery.discharge_efficiency / step + GRID_TOL)
            .floor() as usize;
        Ok(DiscreteBattery {
            step,
            min_index,
            max_index,
            max_up,
            max_down,
            charge_efficiency: battery.charge_efficiency,
            discharge_efficiency: battery.discharge_efficiency,
            throughput_cost: battery.throughput_cost,
        })
    }

    fn index_of(soc: f64, step: f64, what: &str) -> Result<usize, DispatchError> {
        let idx = (soc / step).round();
        if (idx * step - soc).abs() > GRID_TOL * step.max(1.0) {
            return Err(DispatchError::InfeasibleDiscretization(format!(
                "{what} = {soc} with step {step}"
            )));
        }
        Ok(idx as usize)
    }

    /// Grid index nearest to `soc`, or an error when off-grid.
    pub fn soc_index(&self, soc: f64) -> Result<usize, DispatchError> {
        let i = Self::index_of(soc, self.step, "soc")?;
        if i < self.min_index || i > self.max_index {
            return Err(DispatchError::InfeasibleDiscretization(format!(
                "soc {soc} outside [{}, {}]",
                self.min_index as f64 * self.step,
                self.max_index as f64 * self.step
            )));
        }
        Ok(i)
    }

    pub fn soc(&self, index: usize) -> f64 {
        index as f64 * self.step
    }

    /// Admissible moves (positive = charge) from state `index`.
    pub fn moves(&self, index: usize) -> impl Iterator<Item = i64> {
        let lo = -(self.max_down.min(index - self.min_index) as i64);
        let hi = self.max_up.min(self.max_index - index) as i64;
        lo..=hi
    }

    /// Signed grid-side power in MW for a move (positive = discharge).
    pub fn action_mw(&self, mv: i64) -> f64 {
        let e = mv.unsigned_abs() as f64 * self.step;
        match mv.signum() {
            1 => -(e / self.charge_efficiency),
            -1 => e * self.discharge_efficiency,
            _ => 0.0,
        }
    }

    /// Hourly value of a move at `price`.
    pub fn reward(&self, price: f64, mv: i64) -> f64 {
        let e = mv.unsigned_abs() as f64 * self.step;
        match mv.signum() {
            1 => -(price * e / self.charge_efficiency) - self.throughput_cost * e,
            -1 => price * e * self.discharge_efficiency - self.throughput_cost * e,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchDecision {
    pub hour: Timestamp,
    /// MW; positive = discharge, negative = charge.
    pub action_mw: f64,
    /// Change in stored energy, MWh.
    pub soc_delta: f64,
    /// Probability-weighted value over the lookahead, $.
    pub expected_value: f64,
}

/// Optimal continuation values: `values[t][i]` is the best value obtainable
/// from hour `t` (0-based) onward starting at SoC index `i`.
fn value_table(prices: &[f64], bat: &DiscreteBattery) -> Vec<Vec<f64>> {
    let states = bat.max_index + 1;
    let mut values = vec![vec![0.0; states]; prices.len() + 1];
    for t in (0..prices.len()).rev() {
        for i in bat.min_index..=bat.max_index {
            let mut best = f64::NEG_INFINITY;
            for mv in bat.moves(i) {
                let next = (i as i64 + mv) as usize;
                let v = bat.reward(prices[t], mv) + values[t + 1][next];
                if v > best {
                    best = v;
                }
            }
            values[t][i] = best;
        }
    }
    values
}

/// Preference among exactly tied actions: hold, then discharge, then the
/// smaller move.
fn tie_rank(mv: i64) -> (bool, bool, u64) {
    (mv != 0, mv > 0, mv.unsigned_abs())
}

/// Choose the first-hour action maximizing expected value across scenarios.
pub fn optimal_first_action(
    set: &ScenarioSet,
    product: &Product,
    battery: &BatteryParams,
    grid: DispatchGrid,
    soc: f64,
    hour: Timestamp,
) -> Result<DispatchDecision, DispatchError> {
    let bat = DiscreteBattery::new(battery, grid)?;
    let start = bat.soc_index(soc)?;
    let horizon = set.horizon();
    let mut first_prices = Vec::with_capacity(set.len());
    let mut continuation = Vec::with_capacity(set.len());
    for (k, scenario) in set.scenarios().iter().enumerate() {
        let prices = scenario
            .trajectory(product)
            .ok_or_else(|| DispatchError::MissingTrajectory(k, product.clone()))?;
        if prices.len() != horizon || horizon == 0 {
            return Err(DispatchError::HorizonMismatch {
                expected: horizon.max(1),
                found: prices.len(),
            });
        }
        first_prices.push(prices[0]);
        continuation.push(value_table(&prices[1..], &bat).swap_remove(0));
    }

    let mut best: Option<(i64, f64)> = None;
    for mv in bat.moves(start) {
        let next = (start as i64 + mv) as usize;
        let mut ev = 0.0;
        for ((p, price), cont) in set
            .probabilities()
            .iter()
            .zip(&first_prices)
            .zip(&continuation)
        {
            ev += p * (bat.reward(*price, mv) + cont[next]);
        }
        best = match best {
            None => Some((mv, ev)),
            Some((bm, bv)) if ev > bv || (ev == bv && tie_rank(mv) < tie_rank(bm)) => {
                Some((mv, ev))
            }
            keep => keep,
        };
    }
    let (mv, expected_value) = best.expect("hold is always admissible");
    Ok(DispatchDecision {
        hour,
        action_mw: bat.action_mw(mv),
        soc_delta: mv as f64 * bat.step,
        expected_value,
    })
}

/// Optimal per-scenario SoC path (indices) starting from `start` under the
/// given prices. Used to check bounds on recourse trajectories.
pub fn optimal_path(prices: &[f64], bat: &DiscreteBattery, start: usize) -> Vec<usize> {
    let values = value_table(prices, bat);
    let mut path = vec![start];
    let mut i = start;
    for (t, price) in prices.iter().enumerate() {
        let mut best: Option<(i64, f64)> = None;
        for mv in bat.moves(i) {
            let next = (i as i64 + mv) as usize;
            let v = bat.reward(*price, mv) + values[t + 1][next];
            if best.is_none_or(|(bm, bv)| v > bv || (v == bv && tie_rank(mv) < tie_rank(bm))) {
                best = Some((mv, v));
            }
        }
        i = (i as i64 + best.map_or(0, |b| b.0)) as usize;
        path.push(i);
    }
    path
}
