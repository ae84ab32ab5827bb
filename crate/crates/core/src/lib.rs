//! Forecast-guided analog scenario selection for battery dispatch.
//!
//! Historical analog hours are clustered by market conditions, scored against
//! a probabilistic price forecast with a quantile-weighted constrained DTW,
//! and handed with inverse-distance probabilities to a two-stage stochastic
//! battery dispatch. A rolling-horizon backtest compares this selector with a
//! market-condition-only benchmark.

pub mod backtest;
pub mod cli;
pub mod clustering;
pub mod config;
pub mod data_model;
pub mod dispatch;
pub mod evaluation;
pub mod forecast_io;
pub mod selection;
pub mod synth;
pub mod wcdtw;
