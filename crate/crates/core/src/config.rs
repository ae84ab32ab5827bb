//! Run configuration: one JSON document driving every CLI subcommand.
//!
//! Relative paths resolve against the directory holding the config file.
//! Every default is materialized when the config is loaded so the emitted
//! `resolved_config.json` records exactly what ran.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{
    index_forecasts, BacktestConfig, BaselineForecastConfig, ForecastSource, Period, SelectorKind,
};
use crate::clustering::DEFAULT_K;
use crate::data_model::{parse_timestamp, FeatureSpec, Product};
use crate::dispatch::{BatteryParams, DispatchGrid};
use crate::forecast_io::{load_forecast_file, ForecastError, DEFAULT_LEVELS};
use crate::selection::{SelectionConfig, DEFAULT_EPSILON, DEFAULT_N_SCENARIOS};
use crate::wcdtw::{QuantileWeights, WcdtwConfig};

pub const DEFAULT_HORIZON: usize = 16;
pub const DEFAULT_WINDOW: usize = 2;
pub const DEFAULT_TARGET: &str = "ENERGY_RT";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

/// A config problem located by its dotted field path, e.g. `paths.market_csv`.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn at(field: &str, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default)]
    pub market_csv: Option<PathBuf>,
    /// Forecast CSVs for the proposed selector. Empty means the built-in
    /// analog forecaster is used.
    #[serde(default)]
    pub forecast_files: Vec<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub product_weights: BTreeMap<Product, f64>,
    pub n_scenarios: usize,
    pub epsilon: f64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            product_weights: BTreeMap::from([(Product::new(DEFAULT_TARGET), 1.0)]),
            n_scenarios: DEFAULT_N_SCENARIOS,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// `window: null` leaves the band unconstrained. `weights` defaults to the
/// normal-density profile over `levels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WcdtwSection {
    pub window: Option<usize>,
    pub levels: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl Default for WcdtwSection {
    fn default() -> Self {
        WcdtwSection {
            window: Some(DEFAULT_WINDOW),
            levels: DEFAULT_LEVELS.to_vec(),
            weights: None,
        }
    }
}

impl WcdtwSection {
    pub fn quantile_weights(&self) -> Result<QuantileWeights, ConfigError> {
        let qw = match &self.weights {
            None => QuantileWeights::normal(&self.levels),
            Some(w) if w.len() != self.levels.len() => {
                return Err(ConfigError::at(
                    "wcdtw.weights",
                    format!("{} weights for {} levels", w.len(), self.levels.len()),
                ))
            }
            Some(w) => {
                QuantileWeights::new(self.levels.iter().copied().zip(w.iter().copied()).collect())
            }
        };
        qw.map_err(|e| ConfigError::at("wcdtw.levels", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSection {
    pub k: usize,
    /// Add trajectory statistics of the weighted products to the proposed
    /// selector's clustering features.
    pub augment_target_stats: bool,
    pub features: FeatureSpec,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        ClusteringSection {
            k: DEFAULT_K,
            augment_target_stats: true,
            features: FeatureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodSection {
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorChoice {
    Proposed,
    Benchmark,
    #[default]
    Both,
}

impl SelectorChoice {
    pub fn kinds(self) -> Vec<SelectorKind> {
        match self {
            SelectorChoice::Proposed => vec![SelectorKind::Proposed],
            SelectorChoice::Benchmark => vec![SelectorKind::Benchmark],
            SelectorChoice::Both => vec![SelectorKind::Proposed, SelectorKind::Benchmark],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_target")]
    pub target_product: Product,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub wcdtw: WcdtwSection,
    #[serde(default)]
    pub forecast: BaselineForecastConfig,
    #[serde(default)]
    pub clustering: ClusteringSection,
    #[serde(default)]
    pub battery: BatteryParams,
    #[serde(default)]
    pub dispatch: DispatchGrid,
    #[serde(default)]
    pub period: Option<PeriodSection>,
    #[serde(default)]
    pub selector: SelectorChoice,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn default_target() -> Product {
    Product::new(DEFAULT_TARGET)
}

/// A validated config together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub period: Period,
    pub seed: u64,
    pub quantile_weights: QuantileWeights,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { String::new() } else { path };
            ConfigError::at(&field, e.into_inner().to_string())
        })
    }

    /// Check semantic constraints and materialize defaults.
    pub fn resolve(mut self, base_dir: &Path) -> Result<LoadedConfig, ConfigError> {
        let market = self
            .paths
            .market_csv
            .as_ref()
            .ok_or_else(|| ConfigError::at("paths.market_csv", "required"))?;
        if !base_dir.join(market).is_file() {
            return Err(ConfigError::at(
                "paths.market_csv",
                format!("file not found: {}", market.display()),
            ));
        }
        for (i, f) in self.paths.forecast_files.iter().enumerate() {
            if !base_dir.join(f).is_file() {
                return Err(ConfigError::at(
                    &format!("paths.forecast_files[{i}]"),
                    format!("file not found: {}", f.display()),
                ));
            }
        }
        if self.horizon == 0 {
            return Err(ConfigError::at("horizon", "must be at least 1"));
        }
        let seed = self
            .seed
            .ok_or_else(|| ConfigError::at("seed", "required"))?;
        let period = self
            .period
            .as_ref()
            .ok_or_else(|| ConfigError::at("period", "required"))?;
        let parse = |field: &str, raw: &str| {
            parse_timestamp(raw)
                .ok_or_else(|| ConfigError::at(field, format!("unparseable timestamp `{raw}`")))
        };
        let period = Period {
            start: parse("period.start", &period.start)?,
            end: parse("period.end", &period.end)?,
        };
        if period.start >= period.end {
            return Err(ConfigError::at("period.end", "must be after period.start"));
        }
        let quantile_weights = self.wcdtw.quantile_weights()?;
        self.wcdtw.levels = quantile_weights.levels().to_vec();
        self.wcdtw.weights = Some(quantile_weights.weights().to_vec());

        let loaded = LoadedConfig {
            config: self,
            base_dir: base_dir.to_path_buf(),
            period,
            seed,
            quantile_weights,
        };
        loaded
            .selection()
            .validate()
            .map_err(|e| ConfigError::at("selection", e.to_string()))?;
        if loaded.config.clustering.k == 0 {
            return Err(ConfigError::at("clustering.k", "must be at least 1"));
        }
        loaded
            .config
            .battery
            .validate()
            .map_err(|e| ConfigError::at("battery", e.to_string()))?;
        Ok(loaded)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at("", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text)?.resolve(base)
    }
}

impl LoadedConfig {
    fn resolve_path(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn market_csv(&self) -> PathBuf {
        let p = self
            .config
            .paths
            .market_csv
            .as_ref()
            .expect("validated on load");
        self.resolve_path(p)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve_path(&self.config.paths.output_dir)
    }

    pub fn forecast_files(&self) -> Vec<PathBuf> {
        self.config
            .paths
            .forecast_files
            .iter()
            .map(|p| self.resolve_path(p))
            .collect()
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            product_weights: self.config.selection.product_weights.clone(),
            n_scenarios: self.config.selection.n_scenarios,
            wcdtw: WcdtwConfig::new(self.config.wcdtw.window, self.quantile_weights.clone()),
            epsilon: self.config.selection.epsilon,
        }
    }

    /// Forecast files when listed, otherwise the built-in analog forecaster.
    pub fn forecast_source(&self) -> Result<ForecastSource, ForecastError> {
        let files = self.forecast_files();
        if files.is_empty() {
            return Ok(ForecastSource::Baseline(self.config.forecast.clone()));
        }
        let mut all = Vec::new();
        for f in files {
            all.extend(load_forecast_file(&f, Some(self.config.horizon))?);
        }
        Ok(ForecastSource::Files(index_forecasts(all)))
    }

    pub fn backtest_config(&self) -> Result<BacktestConfig, ForecastError> {
        let c = &self.config;
        Ok(BacktestConfig {
            horizon: c.horizon,
            target_product: c.target_product.clone(),
            selection: self.selection(),
            features: c.clustering.features.clone(),
            k: c.clustering.k,
            seed: self.seed,
            augment_target_stats: c.clustering.augment_target_stats,
            forecast: self.forecast_source()?,
            battery: c.battery.clone(),
            grid: c.dispatch,
        })
    }

    /// Pretty JSON of the config with every default filled in.
    pub fn resolved_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.config).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_market(json: &str) -> (tempfile::TempDir, String) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("m.csv"), "timestamp,product,value\n").unwrap();
        (dir, json.to_string())
    }

    const MINIMAL: &str = r#"{
        "paths": {"market_csv": "m.csv"},
        "period": {"start": "2023-03-01T00:00:00Z", "end": "2023-03-02T00:00:00Z"},
        "seed": 5
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let (dir, json) = with_market(MINIMAL);
        let c = RunConfig::from_json(&json)
            .unwrap()
            .resolve(dir.path())
            .unwrap();
        assert_eq!(c.config.horizon, 16);
        assert_eq!(c.config.wcdtw.window, Some(2));
        assert_eq!(c.config.clustering.k, 8);
        assert_eq!(c.config.selector, SelectorChoice::Both);
        assert_eq!(c.seed, 5);
        assert_eq!(c.config.wcdtw.weights.as_ref().unwrap().len(), 5);
        assert_eq!(c.period.hours().len(), 24);
        assert_eq!(c.market_csv(), dir.path().join("m.csv"));
    }

    #[test]
    fn resolved_json_round_trips() {
        let (dir, json) = with_market(MINIMAL);
        let c = RunConfig::from_json(&json)
            .unwrap()
            .resolve(dir.path())
            .unwrap();
        let again = RunConfig::from_json(&c.resolved_json())
            .unwrap()
            .resolve(dir.path())
            .unwrap();
        assert_eq!(again.config, c.config);
    }

    #[test]
    fn explicit_null_window_is_unbounded() {
        let (dir, _) = with_market(MINIMAL);
        let json = MINIMAL.replace("\"seed\": 5", "\"seed\": 5, \"wcdtw\": {\"window\": null}");
        let c = RunConfig::from_json(&json)
            .unwrap()
            .resolve(dir.path())
            .unwrap();
        assert_eq!(c.config.wcdtw.window, None);
    }

    #[test]
    fn missing_market_csv_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let e = RunConfig::from_json(MINIMAL)
            .unwrap()
            .resolve(dir.path())
            .unwrap_err();
        assert_eq!(e.field, "paths.market_csv");
        let json = MINIMAL.replace("\"market_csv\": \"m.csv\"", "");
        let e = RunConfig::from_json(&json)
            .unwrap()
            .resolve(dir.path())
            .unwrap_err();
        assert_eq!(e.field, "paths.market_csv");
    }

    #[test]
    fn schema_errors_carry_field_paths() {
        let json = MINIMAL.replace(
            "\"seed\": 5",
            "\"seed\": 5, \"battery\": {\"energy_capacity\": \"big\"}",
        );
        assert_eq!(
            RunConfig::from_json(&json).unwrap_err().field,
            "battery.energy_capacity"
        );
        let json = MINIMAL.replace("\"seed\": 5", "\"seed\": 5, \"clustering\": {\"kk\": 3}");
        assert!(RunConfig::from_json(&json)
            .unwrap_err()
            .field
            .starts_with("clustering"));
    }

    #[test]
    fn seed_is_required() {
        let (dir, _) = with_market(MINIMAL);
        let json = MINIMAL.replace(",\n        \"seed\": 5", "");
        let e = RunConfig::from_json(&json)
            .unwrap()
            .resolve(dir.path())
            .unwrap_err();
        assert_eq!(e.field, "seed");
    }

    #[test]
    fn weight_count_must_match_levels() {
        let (dir, _) = with_market(MINIMAL);
        let json = MINIMAL.replace(
            "\"seed\": 5",
            "\"seed\": 5, \"wcdtw\": {\"weights\": [1, 2]}",
        );
        let e = RunConfig::from_json(&json)
            .unwrap()
            .resolve(dir.path())
            .unwrap_err();
        assert_eq!(e.field, "wcdtw.weights");
    }
}
