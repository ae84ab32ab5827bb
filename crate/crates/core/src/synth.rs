//! Seeded synthetic market with a two-state price regime.
//!
//! The daily regime (calm / stressed) follows a persistent Markov chain and
//! shifts the load forecast, so it is visible in market-condition features.
//! On top of it the real-time price carries components that features do not
//! see directly: a slowly drifting daily fuel level, a persistent shift of
//! the evening peak, hourly AR(1) noise and occasional spikes in stressed
//! days. Recent price history reveals those, which is what a forecast can
//! exploit.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data_model::{hours, HourlySeries, MarketData, Product, Timestamp};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub start: Timestamp,
    pub days: usize,
    pub seed: u64,
    /// Probability of keeping yesterday's regime.
    pub regime_persistence: f64,
    pub spike_probability: f64,
}

impl SynthConfig {
    pub fn new(start: Timestamp, days: usize, seed: u64) -> Self {
        SynthConfig {
            start,
            days,
            seed,
            regime_persistence: 0.85,
            spike_probability: 0.03,
        }
    }
}

pub const RT: &str = "ENERGY_RT";
pub const DA: &str = "ENERGY_DA";
pub const LOAD: &str = "LOAD_FCST";
pub const RENEW: &str = "RENEW_FCST";
pub const REG_UP: &str = "REG_UP";

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    let d = (hour - center).rem_euclid(24.0);
    let d = d.min(24.0 - d);
    (-0.5 * (d / width).powi(2)).exp()
}

pub fn generate(cfg: &SynthConfig) -> MarketData {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n = cfg.days * 24;
    let (mut rt, mut da, mut load, mut renew, mut reg) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );

    let mut stressed = false;
    let mut fuel = 0.0_f64;
    let mut peak_shift = 0.0_f64;
    let mut cloud = 0.7_f64;
    let mut noise = 0.0_f64;
    for _day in 0..cfg.days {
        if rng.random::<f64>() > cfg.regime_persistence {
            stressed = !stressed;
        }
        fuel = 0.85 * fuel + 4.0 * unit.sample(&mut rng);
        peak_shift = (0.7 * peak_shift + 1.2 * unit.sample(&mut rng)).clamp(-4.0, 4.0);
        cloud = (0.6 * cloud + 0.4 * rng.random::<f64>()).clamp(0.1, 1.0);
        let regime = if stressed { 1.0 } else { 0.0 };

        for h in 0..24 {
            let hf = f64::from(h);
            let daily_load = 0.55 + 0.25 * bump(hf, 9.0, 3.0) + 0.45 * bump(hf, 18.0, 3.0);
            let l = 900.0 + 500.0 * daily_load + 300.0 * regime + 15.0 * unit.sample(&mut rng);
            let solar = if (6..=18).contains(&h) {
                (PI * (hf - 6.0) / 12.0).sin()
            } else {
                0.0
            };
            let r = 350.0 * solar * cloud + 5.0 * unit.sample(&mut rng).abs();

            let peak = bump(hf, 18.0 + peak_shift, 2.0);
            let morning = bump(hf, 8.0, 2.0);
            let expected =
                28.0 + fuel + 20.0 * regime + (18.0 + 30.0 * regime) * peak + 8.0 * morning
                    - 0.02 * r;
            noise = 0.7 * noise + 3.0 * unit.sample(&mut rng);
            let spike = if stressed && rng.random::<f64>() < cfg.spike_probability {
                40.0 + 80.0 * rng.random::<f64>()
            } else {
                0.0
            };
            let price = expected + noise + spike;
            rt.push(round2(price));
            da.push(round2(expected + 2.0 * unit.sample(&mut rng)));
            load.push(round2(l.max(0.0)));
            renew.push(round2(r.max(0.0)));
            reg.push(round2(
                (6.0 + 0.15 * expected + 1.5 * unit.sample(&mut rng)).max(0.0),
            ));
        }
    }

    let series = |p: &str, v: Vec<f64>| {
        HourlySeries::new(Product::new(p), cfg.start, v).expect("generated series is valid")
    };
    MarketData::new(vec![
        series(RT, rt),
        series(DA, da),
        series(LOAD, load),
        series(RENEW, renew),
        series(REG_UP, reg),
    ])
    .expect("distinct products")
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// First hour after the generated record.
pub fn end_of(cfg: &SynthConfig) -> Timestamp {
    cfg.start + hours((cfg.days * 24) as i64)
}
