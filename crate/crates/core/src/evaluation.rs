//! Scenario-set quality scoring and selector comparison.
//!
//! For a scenario set `F_k` with weights `W_k` and realized target `T`, each
//! horizon step `t` contributes
//!
//! ```text
//! mu_error_t = | T_t − Σ_k W_k F_k,t / Σ_k W_k |
//! U_t        = max(T_t − max_k F_k,t, 0)
//! L_t        = max(min_k F_k,t − T_t, 0)
//! ```
//!
//! and the stoch metric is the mean over the horizon:
//! `SM = (1/H) Σ_t (mu_error_t + U_t + L_t)`.
//!
//! The outer average runs over time steps, while the inner sums run over
//! scenarios. This is the only reading under which the per-term penalties
//! vary across the sum.

use std::io::Write;

use thiserror::Error;

use crate::data_model::{Product, ScenarioSet};
use crate::forecast_io::QuantileForecast;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("horizon mismatch: expected {expected}, got {found}")]
    HorizonMismatch { expected: usize, found: usize },
    #[error("scenario {0} has no trajectory for {1}")]
    MissingTrajectory(usize, Product),
    #[error("forecast has no 0.5 level")]
    MissingMedian,
    #[error("run `{0}` has no decisions")]
    EmptyRun(String),
    #[error("no runs to compare")]
    NoRuns,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepError {
    pub mu_error: f64,
    pub upper: f64,
    pub lower: f64,
}

impl StepError {
    pub fn total(&self) -> f64 {
        self.mu_error + self.upper + self.lower
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmReport {
    pub product: Product,
    pub per_step: Vec<StepError>,
    pub sm: f64,
    pub horizon: usize,
}

pub fn stoch_metric(
    set: &ScenarioSet,
    target: &[f64],
    product: &Product,
) -> Result<SmReport, EvalError> {
    let horizon = target.len();
    let trajectories = set
        .scenarios()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let t = s
                .trajectory(product)
                .ok_or_else(|| EvalError::MissingTrajectory(k, product.clone()))?;
            if t.len() != horizon {
                return Err(EvalError::HorizonMismatch {
                    expected: horizon,
                    found: t.len(),
                });
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let weights = set.probabilities();
    let weight_total: f64 = weights.iter().sum();

    let per_step: Vec<StepError> = target
        .iter()
        .enumerate()
        .map(|(t, &truth)| {
            let mut weighted = 0.0;
            let mut hi = f64::NEG_INFINITY;
            let mut lo = f64::INFINITY;
            for (traj, w) in trajectories.iter().zip(weights) {
                weighted += w * traj[t];
                hi = hi.max(traj[t]);
                lo = lo.min(traj[t]);
            }
            // A convex combination lies inside the envelope; clamping removes
            // rounding drift so identical scenarios give an exact mean.
            let mean = (weighted / weight_total).clamp(lo, hi);
            StepError {
                mu_error: (truth - mean).abs(),
                upper: (truth - hi).max(0.0),
                lower: (lo - truth).max(0.0),
            }
        })
        .collect();
    let sm = if horizon == 0 {
        0.0
    } else {
        per_step.iter().map(StepError::total).sum::<f64>() / horizon as f64
    };
    Ok(SmReport {
        product: product.clone(),
        per_step,
        sm,
        horizon,
    })
}

/// Mean absolute error of the median trajectory.
pub fn forecast_mae(forecast: &QuantileForecast, target: &[f64]) -> Result<f64, EvalError> {
    let median = forecast.median().ok_or(EvalError::MissingMedian)?;
    if median.len() != target.len() {
        return Err(EvalError::HorizonMismatch {
            expected: target.len(),
            found: median.len(),
        });
    }
    if target.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = median.iter().zip(target).map(|(m, t)| (m - t).abs()).sum();
    Ok(total / target.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorRun {
    pub label: String,
    pub reports: Vec<SmReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub decisions: usize,
    pub mean_sm: f64,
    /// Relative SM reduction against the first run, in percent. `None` when
    /// the reference mean is zero and this one is not.
    pub improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub runs: Vec<SelectorRun>,
}

/// Mean SM per label and improvement relative to the first run.
pub fn compare_selectors(runs: &[SelectorRun]) -> Result<Comparison, EvalError> {
    let Some(first) = runs.first() else {
        return Err(EvalError::NoRuns);
    };
    if let Some(empty) = runs.iter().find(|r| r.reports.is_empty()) {
        return Err(EvalError::EmptyRun(empty.label.clone()));
    }
    let mean =
        |r: &SelectorRun| r.reports.iter().map(|s| s.sm).sum::<f64>() / r.reports.len() as f64;
    let reference = mean(first);
    let rows = runs
        .iter()
        .map(|r| {
            let m = mean(r);
            let improvement_pct = if reference != 0.0 {
                Some((reference - m) / reference * 100.0)
            } else if m == 0.0 {
                Some(0.0)
            } else {
                None
            };
            ComparisonRow {
                label: r.label.clone(),
                decisions: r.reports.len(),
                mean_sm: m,
                improvement_pct,
            }
        })
        .collect();
    Ok(Comparison {
        rows,
        runs: runs.to_vec(),
    })
}

impl Comparison {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), EvalError> {
        writeln!(w, "label,decisions,mean_sm,improvement_pct")?;
        for r in &self.rows {
            let imp = r.improvement_pct.map_or(String::new(), |v| v.to_string());
            writeln!(w, "{},{},{},{}", r.label, r.decisions, r.mean_sm, imp)?;
        }
        Ok(())
    }

    pub fn write_per_decision_csv<W: Write>(&self, mut w: W) -> Result<(), EvalError> {
        writeln!(w, "label,decision,sm,mu_error,upper,lower")?;
        for run in &self.runs {
            for (i, rep) in run.reports.iter().enumerate() {
                let h = rep.horizon.max(1) as f64;
                let sum = |f: fn(&StepError) -> f64| rep.per_step.iter().map(f).sum::<f64>() / h;
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    run.label,
                    i,
                    rep.sm,
                    sum(|s| s.mu_error),
                    sum(|s| s.upper),
                    sum(|s| s.lower)
                )?;
            }
        }
        Ok(())
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<(), EvalError> {
        writeln!(
            w,
            "{:<16} {:>10} {:>12} {:>14}",
            "selector", "decisions", "mean SM", "improvement"
        )?;
        for r in &self.rows {
            let imp = r
                .improvement_pct
                .map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}%"));
            writeln!(
                w,
                "{:<16} {:>10} {:>12.4} {:>14}",
                r.label, r.decisions, r.mean_sm, imp
            )?;
        }
        Ok(())
    }
}

/// Target and scenario trajectories in long form for external plotting:
/// `series,step,value,probability`.
pub fn write_plot_data<W: Write>(
    mut w: W,
    set: &ScenarioSet,
    target: &[f64],
    product: &Product,
) -> Result<(), EvalError> {
    writeln!(w, "series,step,value,probability")?;
    for (t, v) in target.iter().enumerate() {
        writeln!(w, "target,{t},{v},")?;
    }
    for (k, (s, p)) in set.iter().enumerate() {
        let traj = s
            .trajectory(product)
            .ok_or_else(|| EvalError::MissingTrajectory(k, product.clone()))?;
        for (t, v) in traj.iter().enumerate() {
            writeln!(w, "scenario_{k},{t},{v},{p}")?;
        }
    }
    Ok(())
}
