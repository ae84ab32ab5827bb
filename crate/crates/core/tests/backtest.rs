mod common;

use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use scenario_forge::backtest::{
    index_forecasts, BacktestConfig, BacktestError, Backtester, BaselineForecastConfig,
    ForecastSource, Period, SelectorKind,
};
use scenario_forge::data_model::{hours, FeatureSpec, HourlySeries, MarketData, Product};
use scenario_forge::dispatch::{BatteryParams, DispatchGrid};
use scenario_forge::forecast_io::{read_forecasts, write_forecasts, DEFAULT_LEVELS};
use scenario_forge::selection::SelectionConfig;
use scenario_forge::synth::{end_of, generate, SynthConfig, LOAD, RENEW, RT};
use scenario_forge::wcdtw::{QuantileWeights, WcdtwConfig};

fn synth() -> SynthConfig {
    SynthConfig::new(Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap(), 40, 21)
}

fn config() -> BacktestConfig {
    BacktestConfig {
        horizon: 16,
        target_product: Product::new(RT),
        selection: SelectionConfig {
            product_weights: BTreeMap::from([(Product::new(RT), 1.0)]),
            n_scenarios: 10,
            wcdtw: WcdtwConfig::new(Some(2), QuantileWeights::normal(&DEFAULT_LEVELS).unwrap()),
            epsilon: 1e-6,
        },
        features: FeatureSpec {
            load_product: Some(Product::new(LOAD)),
            renewable_product: Some(Product::new(RENEW)),
            ..FeatureSpec::default()
        },
        k: 4,
        seed: 3,
        augment_target_stats: true,
        forecast: ForecastSource::Baseline(BaselineForecastConfig::default()),
        battery: BatteryParams::default(),
        grid: DispatchGrid::default(),
    }
}

fn period() -> Period {
    let end = end_of(&synth()) - hours(24);
    Period {
        start: end - hours(36),
        end,
    }
}

#[test]
fn rows_are_consistent_with_battery_physics() {
    let data = generate(&synth());
    let cfg = config();
    let bt = Backtester::new(&data, cfg.clone(), period()).unwrap();
    for kind in [SelectorKind::Proposed, SelectorKind::Benchmark] {
        let r = bt.run(kind).unwrap();
        assert_eq!(r.rows.len(), 36);
        let b = &cfg.battery;
        let mut soc = b.initial_soc;
        let (mut dis, mut chg) = (0.0, 0.0);
        for row in &r.rows {
            let (charge, discharge) = if row.action_mw < 0.0 {
                (-row.action_mw, 0.0)
            } else {
                (0.0, row.action_mw)
            };
            soc += charge * b.charge_efficiency - discharge / b.discharge_efficiency;
            assert!((row.soc - soc).abs() < 1e-9);
            assert!(row.soc >= b.soc_min - 1e-9 && row.soc <= b.soc_max + 1e-9);
            assert_eq!(row.revenue, row.realized_price * row.action_mw);
            if row.action_mw > 0.0 {
                dis += row.revenue;
            } else if row.action_mw < 0.0 {
                chg += row.revenue;
            }
        }
        assert_eq!(
            (r.realized.discharge_revenue, r.realized.charge_cost),
            (dis, chg)
        );
        assert_eq!(r.realized.total(), dis + chg);
        assert_eq!(r.sm_trace.len(), 36);
    }
}

#[test]
fn repeated_runs_and_thread_counts_agree() {
    let data = generate(&synth());
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let bt = Backtester::new(&data, config(), period()).unwrap();
                let r = bt.run(SelectorKind::Proposed).unwrap();
                let mut out = Vec::new();
                r.write_csv(&mut out).unwrap();
                r.write_summary(&mut out).unwrap();
                out
            })
    };
    let one = run(1);
    assert_eq!(one, run(1));
    assert_eq!(one, run(4));
}

#[test]
fn flat_zero_prices_never_trade() {
    let data = generate(&synth());
    let series = data
        .into_series()
        .into_iter()
        .map(|s| {
            if s.product().as_str() == RT {
                HourlySeries::new(s.product().clone(), s.start(), vec![0.0; s.len()]).unwrap()
            } else {
                s
            }
        })
        .collect();
    let data = MarketData::new(series).unwrap();
    let mut cfg = config();
    cfg.battery.throughput_cost = 1.0;
    let bt = Backtester::new(&data, cfg, period()).unwrap();
    for kind in [SelectorKind::Proposed, SelectorKind::Benchmark] {
        let r = bt.run(kind).unwrap();
        assert!(r
            .rows
            .iter()
            .all(|row| row.action_mw == 0.0 && row.revenue == 0.0));
    }
}

#[test]
fn forecast_files_reproduce_the_built_in_forecaster() {
    let data = generate(&synth());
    let bt = Backtester::new(&data, config(), period()).unwrap();
    let mut all = Vec::new();
    for h in period().hours() {
        all.extend(bt.forecasts_at(h).unwrap().into_values());
    }
    let mut buf = Vec::new();
    write_forecasts(&mut buf, &all).unwrap();
    let loaded = read_forecasts(buf.as_slice(), Some(16)).unwrap();

    let mut cfg = config();
    cfg.forecast = ForecastSource::Files(index_forecasts(loaded));
    let from_files = Backtester::new(&data, cfg, period())
        .unwrap()
        .run(SelectorKind::Proposed)
        .unwrap();
    let built_in = bt.run(SelectorKind::Proposed).unwrap();
    assert_eq!(from_files.rows, built_in.rows);
}

#[test]
fn missing_forecast_is_reported() {
    let data = generate(&synth());
    let mut cfg = config();
    cfg.forecast = ForecastSource::Files(BTreeMap::new());
    let bt = Backtester::new(&data, cfg, period()).unwrap();
    assert!(matches!(
        bt.run(SelectorKind::Proposed),
        Err(BacktestError::MissingForecast { .. })
    ));
    // The benchmark needs no forecast.
    assert!(bt.run(SelectorKind::Benchmark).is_ok());
}

#[test]
fn history_ends_before_the_first_decision() {
    let data = generate(&synth());
    let cfg = config();
    let bt = Backtester::new(&data, cfg.clone(), period()).unwrap();
    let last = *bt.proposed_model().assignments.keys().last().unwrap();
    assert!(last + hours(cfg.horizon as i64) <= period().start);
}

#[test]
fn period_past_the_data_is_a_gap() {
    let data = generate(&synth());
    let end = end_of(&synth());
    let bt = Backtester::new(
        &data,
        config(),
        Period {
            start: end - hours(4),
            end,
        },
    )
    .unwrap();
    assert!(matches!(
        bt.run(SelectorKind::Benchmark),
        Err(BacktestError::DataGap { .. })
    ));
}
