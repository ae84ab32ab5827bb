//! Regenerate the bundled synthetic market:
//! `cargo run --example gen_fixture -- fixtures/synthetic_market.csv [seed] [days]`

use std::fs::File;
use std::io::BufWriter;

use anyhow::{Context, Result};
use chrono::{TimeZone, Utc};
use scenario_forge::data_model::write_market_csv;
use scenario_forge::synth::{generate, SynthConfig};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args
        .first()
        .context("usage: gen_fixture <out.csv> [seed] [days]")?;
    let seed = args.get(1).map_or(Ok(7), |s| s.parse()).context("seed")?;
    let days = args.get(2).map_or(Ok(110), |s| s.parse()).context("days")?;
    let start = Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap();
    let data = generate(&SynthConfig::new(start, days, seed));
    let out = BufWriter::new(File::create(path).with_context(|| format!("create {path}"))?);
    write_market_csv(out, &data.into_series())?;
    Ok(())
}
