//! Command-line entry point. Every subcommand reads the same run config;
//! failures print one `ERROR:<code>:<detail>` line on stderr and exit 2.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backtest::{
    tune_weights, BacktestError, Backtester, Period, SelectionOutcome, SelectorKind,
    WeightCandidate,
};
use crate::clustering::ClusterError;
use crate::config::{ConfigError, LoadedConfig, RunConfig, RESOLVED_CONFIG_FILE};
use crate::data_model::{
    hours, ingest_market_csv, parse_timestamp, write_market_csv, ColumnMapping, DataError,
    MarketData, Timestamp,
};
use crate::dispatch::DispatchError;
use crate::evaluation::{compare_selectors, stoch_metric, write_plot_data, EvalError, SelectorRun};
use crate::forecast_io::{load_forecast_file, write_forecasts, ForecastError};
use crate::selection::{read_scenario_set, write_scenario_set, SelectionError};

pub const THREADS_ENV: &str = "SCENARIO_FORGE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "scenario-forge",
    version,
    about = "Forecast-guided scenario selection and battery dispatch backtests"
)]
pub struct Cli {
    /// Cap on worker threads for parallel scoring.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a market CSV; print one summary line per product.
    Ingest(IngestArgs),
    /// Fit the proposed and benchmark cluster models on the history before the period.
    Cluster(ConfigArg),
    /// Check a quantile forecast file against the forecast CSV schema.
    ValidateForecast(ValidateForecastArgs),
    /// Select a scenario set for one decision hour.
    Select(SelectArgs),
    /// Score a scenario-set file against the realized target trajectory.
    Evaluate(EvaluateArgs),
    /// Run the rolling-horizon dispatch backtest over the configured period.
    Backtest(ConfigArg),
    /// Compare selectors by mean stoch metric and emit plot data.
    Report(ReportArgs),
    /// Grid-search product and quantile weights by mean stoch metric.
    TuneWeights(TuneArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Run config (JSON).
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Market CSV in long format.
    pub input: PathBuf,
    /// Write the normalized CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "timestamp")]
    pub timestamp_col: String,
    #[arg(long, default_value = "product")]
    pub product_col: String,
    #[arg(long, default_value = "value")]
    pub value_col: String,
}

#[derive(Debug, Args)]
pub struct ValidateForecastArgs {
    pub path: PathBuf,
    /// Required horizon of every forecast.
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SelectorArg {
    Proposed,
    Benchmark,
}

impl From<SelectorArg> for SelectorKind {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::Proposed => SelectorKind::Proposed,
            SelectorArg::Benchmark => SelectorKind::Benchmark,
        }
    }
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Decision hour (ISO-8601).
    #[arg(long)]
    pub at: String,
    #[arg(long, value_enum, default_value = "proposed")]
    pub selector: SelectorArg,
    /// Scenario-set output path; defaults to a file in the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Scenario-set file written by `select`.
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Decision hour the scenarios were selected for.
    #[arg(long)]
    pub at: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Decisions per selector to emit plot data for.
    #[arg(long, default_value_t = 3)]
    pub plots: usize,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// JSON array of `{label, product_weights, quantile_weights}`.
    #[arg(long)]
    pub grid: PathBuf,
}

/// A failure with its machine-readable code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: &'static str,
    pub detail: String,
}

impl CliError {
    fn new(code: &'static str, detail: impl std::fmt::Display) -> Self {
        CliError {
            code,
            detail: detail.to_string(),
        }
    }

    /// `ERROR:<code>:<detail>` on one line.
    pub fn line(&self) -> String {
        let detail = self.detail.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("ERROR:{}:{}", self.code, detail)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new("CONFIG", format!("{}: {}", e.field, e.message))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("IO", e)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match &e {
            DataError::MissingColumn(_) => "MISSING_COLUMN",
            DataError::GapInSeries { .. } => "GAP_IN_SERIES",
            DataError::DuplicateHour { .. } => "DUPLICATE_HOUR",
            DataError::UnparseableValue { .. } => "UNPARSEABLE_VALUE",
            DataError::MisalignedTimestamp(_) => "MISALIGNED_TIMESTAMP",
            DataError::MissingProduct(_) => "MISSING_PRODUCT",
            DataError::InsufficientHistory { .. } => "INSUFFICIENT_HISTORY",
            _ => "DATA",
        };
        CliError::new(code, e)
    }
}

impl From<ForecastError> for CliError {
    fn from(e: ForecastError) -> Self {
        let code = match &e {
            ForecastError::SchemaViolation(_) => "SCHEMA_VIOLATION",
            ForecastError::QuantileCrossing { .. } => "QUANTILE_CROSSING",
            ForecastError::HorizonMismatch { .. } => "HORIZON_MISMATCH",
            ForecastError::Io(_) => "IO",
            _ => "FORECAST",
        };
        CliError::new(code, e)
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::PoolTooSmall { .. } => CliError::new("POOL_TOO_SMALL", e),
            SelectionError::MissingProduct(_) => CliError::new("MISSING_PRODUCT", e),
            SelectionError::InvalidConfig(_) => CliError::new("CONFIG", e),
            SelectionError::ScenarioFile(_) => CliError::new("SCENARIO_FILE", e),
            SelectionError::Data(d) => d.into(),
            SelectionError::Wcdtw(_) => CliError::new("SELECTION", e),
        }
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        CliError::new("CLUSTER", e)
    }
}

impl From<DispatchError> for CliError {
    fn from(e: DispatchError) -> Self {
        let code = match &e {
            DispatchError::InfeasibleDiscretization(_) => "INFEASIBLE_DISCRETIZATION",
            DispatchError::InvalidBattery(_) => "CONFIG",
            _ => "DISPATCH",
        };
        CliError::new(code, e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(io) => io.into(),
            other => CliError::new("EVALUATION", other),
        }
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::DataGap { .. } => CliError::new("DATA_GAP", e),
            BacktestError::MissingForecast { .. } => CliError::new("MISSING_FORECAST", e),
            BacktestError::EmptyPeriod { .. } => CliError::new("CONFIG", e),
            BacktestError::NoHistory(_) => CliError::new("NO_HISTORY", e),
            BacktestError::Data(e) => e.into(),
            BacktestError::Cluster(e) => e.into(),
            BacktestError::Selection(e) => e.into(),
            BacktestError::Forecast(e) => e.into(),
            BacktestError::Dispatch(e) => e.into(),
            BacktestError::Eval(e) => e.into(),
            BacktestError::Io(e) => e.into(),
        }
    }
}

type CliResult = Result<(), CliError>;

/// Parse `argv`, run the subcommand and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(std::io::stdout(), "{e}");
                return 0;
            }
            let first = e.to_string();
            let first = first
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::new("USAGE", first).line());
            return 2;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("{}", e.line());
            2
        }
    }
}

pub fn execute<W: Write>(cli: Cli, out: &mut W) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::new("USAGE", "--threads must be at least 1"));
        }
        // A pool built earlier in the same process keeps its size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Ingest(a) => ingest(a, out),
        Command::Cluster(a) => cluster(&a.config, out),
        Command::ValidateForecast(a) => validate_forecast(a, out),
        Command::Select(a) => select(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Backtest(a) => backtest(&a.config, out),
        Command::Report(a) => report(a, out),
        Command::TuneWeights(a) => tune(a, out),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn finish(w: BufWriter<File>) -> CliResult {
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(())
}

fn parse_hour(raw: &str) -> Result<Timestamp, CliError> {
    parse_timestamp(raw)
        .ok_or_else(|| CliError::new("USAGE", format!("unparseable timestamp `{raw}`")))
}

fn stamp(ts: &Timestamp) -> String {
    ts.format("%Y%m%dT%H").to_string()
}

/// Load the config and market data and record the resolved config.
fn prepare(config: &Path) -> Result<(LoadedConfig, MarketData), CliError> {
    let cfg = RunConfig::load(config)?;
    let data = ingest_market_csv(&cfg.market_csv(), &ColumnMapping::default())?;
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(RESOLVED_CONFIG_FILE), cfg.resolved_json())?;
    Ok((cfg, data))
}

fn backtester<'a>(
    cfg: &LoadedConfig,
    data: &'a MarketData,
    period: Period,
) -> Result<Backtester<'a>, CliError> {
    Ok(Backtester::new(data, cfg.backtest_config()?, period)?)
}

fn ingest<W: Write>(a: IngestArgs, out: &mut W) -> CliResult {
    let schema = ColumnMapping {
        timestamp: a.timestamp_col,
        product: a.product_col,
        value: a.value_col,
    };
    let data = ingest_market_csv(&a.input, &schema)?;
    writeln!(out, "product,start,end,hours")?;
    for s in data.iter() {
        writeln!(
            out,
            "{},{},{},{}",
            s.product(),
            crate::data_model::format_timestamp(&s.start()),
            crate::data_model::format_timestamp(&s.end()),
            s.len()
        )?;
    }
    if let Some(path) = a.out {
        let mut w = create(&path)?;
        let series: Vec<_> = data.into_series();
        write_market_csv(&mut w, &series)?;
        finish(w)?;
    }
    Ok(())
}

fn cluster<W: Write>(config: &Path, out: &mut W) -> CliResult {
    let (cfg, data) = prepare(config)?;
    let bt = backtester(&cfg, &data, cfg.period)?;
    let dir = cfg.output_dir();
    bt.proposed_model()
        .save(&dir.join("cluster_model_proposed.json"))?;
    bt.benchmark_model()
        .save(&dir.join("cluster_model_benchmark.json"))?;
    let mut w = create(&dir.join("clusters.csv"))?;
    writeln!(w, "model,cluster,size")?;
    for (label, model) in [
        ("proposed", bt.proposed_model()),
        ("benchmark", bt.benchmark_model()),
    ] {
        for c in 0..model.k {
            writeln!(w, "{label},{c},{}", model.members(c).len())?;
        }
    }
    finish(w)?;
    writeln!(
        out,
        "fitted k={} on {} historical anchors; models written to {}",
        bt.proposed_model().k,
        bt.history_len(),
        dir.display()
    )?;
    Ok(())
}

fn validate_forecast<W: Write>(a: ValidateForecastArgs, out: &mut W) -> CliResult {
    let forecasts = load_forecast_file(&a.path, a.horizon)?;
    writeln!(out, "OK {} forecasts", forecasts.len())?;
    Ok(())
}

fn select<W: Write>(a: SelectArgs, out: &mut W) -> CliResult {
    let (cfg, data) = prepare(&a.config)?;
    let at = parse_hour(&a.at)?;
    let selector = SelectorKind::from(a.selector);
    let bt = backtester(
        &cfg,
        &data,
        Period {
            start: at,
            end: at + hours(1),
        },
    )?;
    let outcome = bt.select_at(at, selector)?;
    let dir = cfg.output_dir();
    let path = a
        .out
        .unwrap_or_else(|| dir.join(format!("scenarios_{}_{}.csv", selector.label(), stamp(&at))));
    let mut w = create(&path)?;
    write_scenario_set(&mut w, &outcome.set)?;
    finish(w)?;
    if !outcome.forecasts.is_empty() {
        let mut w = create(&dir.join(format!("forecasts_{}.csv", stamp(&at))))?;
        let fs: Vec<_> = outcome.forecasts.values().cloned().collect();
        write_forecasts(&mut w, &fs)?;
        finish(w)?;
    }
    writeln!(
        out,
        "{} scenarios for {} ({}), SM {}; written to {}",
        outcome.set.len(),
        crate::data_model::format_timestamp(&at),
        selector.label(),
        outcome.report.sm,
        path.display()
    )?;
    Ok(())
}

fn evaluate<W: Write>(a: EvaluateArgs, out: &mut W) -> CliResult {
    let (cfg, data) = prepare(&a.config)?;
    let at = parse_hour(&a.at)?;
    let set = read_scenario_set(File::open(&a.scenarios)?)?;
    let product = &cfg.config.target_product;
    let target = data
        .get(product)?
        .window(at, set.horizon())
        .ok_or_else(|| {
            CliError::new(
                "DATA_GAP",
                format!("realized {product} not covered at {}", a.at),
            )
        })?
        .to_vec();
    let report = stoch_metric(&set, &target, product)?;
    let dir = cfg.output_dir();
    let mut w = create(&dir.join(format!("evaluation_{}.csv", stamp(&at))))?;
    writeln!(w, "step,mu_error,upper,lower")?;
    for (t, s) in report.per_step.iter().enumerate() {
        writeln!(w, "{t},{},{},{}", s.mu_error, s.upper, s.lower)?;
    }
    finish(w)?;
    let mut w = create(&dir.join(format!("plot_{}.csv", stamp(&at))))?;
    write_plot_data(&mut w, &set, &target, product)?;
    finish(w)?;
    writeln!(out, "SM {} over {} steps", report.sm, report.horizon)?;
    Ok(())
}

fn backtest<W: Write>(config: &Path, out: &mut W) -> CliResult {
    let (cfg, data) = prepare(config)?;
    let bt = backtester(&cfg, &data, cfg.period)?;
    let dir = cfg.output_dir();
    let mut summary = create(&dir.join("backtest_report.csv"))?;
    writeln!(
        summary,
        "selector,decisions,mean_sm,revenue_usd,usd_per_mwh_capacity"
    )?;
    for kind in cfg.config.selector.kinds() {
        let r = bt.run(kind)?;
        let label = kind.label();
        let mut w = create(&dir.join(format!("backtest_{label}.csv")))?;
        r.write_csv(&mut w)?;
        finish(w)?;
        let mut w = create(&dir.join(format!("revenue_{label}.csv")))?;
        r.write_summary(&mut w)?;
        finish(w)?;
        let total = r.realized.total();
        writeln!(
            summary,
            "{label},{},{},{},{}",
            r.rows.len(),
            r.mean_sm(),
            total,
            total / r.energy_capacity
        )?;
        writeln!(
            out,
            "{label}: {} decisions, mean SM {:.4}, revenue ${:.2}",
            r.rows.len(),
            r.mean_sm(),
            total
        )?;
    }
    finish(summary)?;
    Ok(())
}

fn report<W: Write>(a: ReportArgs, out: &mut W) -> CliResult {
    let (cfg, data) = prepare(&a.config)?;
    let bt = backtester(&cfg, &data, cfg.period)?;
    let dir = cfg.output_dir();
    // The benchmark goes first so improvements are relative to it.
    let mut kinds = cfg.config.selector.kinds();
    kinds.sort_by_key(|k| *k != SelectorKind::Benchmark);
    let mut runs = Vec::new();
    for kind in kinds {
        let outcomes: Vec<SelectionOutcome> = bt.evaluate(kind)?;
        for o in outcomes.iter().take(a.plots) {
            let path = dir
                .join("plots")
                .join(format!("{}_{}.csv", kind.label(), stamp(&o.hour)));
            let mut w = create(&path)?;
            write_plot_data(&mut w, &o.set, &o.target, &cfg.config.target_product)?;
            finish(w)?;
        }
        runs.push(SelectorRun {
            label: kind.label().to_string(),
            reports: outcomes.into_iter().map(|o| o.report).collect(),
        });
    }
    let cmp = compare_selectors(&runs)?;
    let mut w = create(&dir.join("comparison.csv"))?;
    cmp.write_csv(&mut w)?;
    finish(w)?;
    let mut w = create(&dir.join("per_decision.csv"))?;
    cmp.write_per_decision_csv(&mut w)?;
    finish(w)?;
    let mut text = Vec::new();
    cmp.write_text(&mut text)?;
    std::fs::write(dir.join("comparison.txt"), &text)?;
    out.write_all(&text)?;
    Ok(())
}

fn tune<W: Write>(a: TuneArgs, out: &mut W) -> CliResult {
    let (cfg, data) = prepare(&a.config)?;
    let text = std::fs::read_to_string(&a.grid)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let grid: Vec<WeightCandidate> = serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::new("CONFIG", format!("grid {}: {}", e.path(), e.inner())))?;
    if grid.is_empty() {
        return Err(CliError::new(
            "CONFIG",
            "grid: at least one candidate required",
        ));
    }
    let results = tune_weights(&data, &cfg.backtest_config()?, cfg.period, &grid)?;
    let mut w = create(&cfg.output_dir().join("tune_weights.csv"))?;
    writeln!(w, "rank,label,mean_sm,decisions")?;
    for (i, r) in results.iter().enumerate() {
        writeln!(w, "{},{},{},{}", i + 1, r.label, r.mean_sm, r.decisions)?;
    }
    finish(w)?;
    let best = &results[0];
    writeln!(out, "best: {} (mean SM {:.4})", best.label, best.mean_sm)?;
    Ok(())
}
