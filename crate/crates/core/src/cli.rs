//! Command-line front end.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::de::DeserializeOwned;

use crate::breaks::{chow_test, wilcoxon_at, write_break_table, BreakRow};
use crate::config::{parse_band, write_atomic, write_metadata, BandSpec, InputKind, LagMode, RunConfig, RunMetadata};
use crate::connectedness::{TciDenominator, TOTAL_BAND};
use crate::error::{Error, Result};
use crate::export::{network, read_theta_table, write_measures_csv, write_npdc_csv, write_theta_csv};
use crate::frequency::frequency_connectedness;
use crate::panel::{clean, format_date, load_csv, log_returns, CsvSchema, DatedSeries, PricePanel, ReturnPanel};
use crate::portfolio::{backtest, write_cumulative, write_performance_table, write_weight_summary, Backtest, Strategy};
use crate::qvar::{fit_qvar_with, select_lag_bic, BicVariant, CovarianceKind, QvarOptions};
use crate::rolling::{read_long_series, relative_tail_dependence, rolling_connectedness, ALL_SERIES};
use crate::simulate::{common_shock_panel, prices_from_returns, simulate_var, Innovations};
use crate::stats::{correlation_matrix, summarize};

#[derive(Debug, Parser)]
#[command(name = "qconnect", version, about = "Quantile VAR connectedness toolkit")]
pub struct Cli {
    /// TOML file with run settings; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean a price file and write aligned prices and log returns.
    Ingest,
    /// Summary statistics, unit-root tests and Kendall correlations.
    Stats,
    /// Full-sample connectedness tables per quantile and band.
    Connectedness,
    /// Rolling-window connectedness in long format.
    Rolling {
        /// Use the surface quantile grid instead of `taus`.
        #[arg(long)]
        surface: bool,
    },
    /// Backtest minimum variance, correlation and connectedness portfolios.
    Portfolio,
    /// Chow and Wilcoxon tests on rolling measures around `break_date`.
    Breaks {
        /// Long-format measure file (default: <output_dir>/rolling.csv).
        #[arg(long)]
        measures: Option<PathBuf>,
        #[arg(long, default_value = ALL_SERIES)]
        target: String,
        #[arg(long, default_value = "TCI")]
        measure: String,
    },
    /// Spillover network edge and node lists.
    ExportNetwork {
        /// Share file written by `connectedness` (default: <output_dir>/theta.csv).
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, default_value = TOTAL_BAND)]
        band: String,
    },
    /// Write a synthetic price panel driven by `seed`.
    Simulate {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        t: usize,
        #[arg(long, value_enum, default_value_t = SimulationKind::Driver)]
        kind: SimulationKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimulationKind {
    /// First series leads all others.
    Driver,
    /// Common heavy-tailed factor.
    CommonShock,
    /// Independent Gaussian noise.
    White,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unrecognized value {s:?}"))
}

/// One optional flag per configuration key.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_enum::<InputKind>)]
    pub input_kind: Option<InputKind>,
    #[arg(long, global = true)]
    pub date_column: Option<String>,
    /// Comma-separated series to keep.
    #[arg(long, global = true, value_delimiter = ',')]
    pub series: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub break_date: Option<NaiveDate>,
    #[arg(long, global = true)]
    pub window: Option<usize>,
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    #[arg(long, global = true, value_parser = parse_enum::<LagMode>)]
    pub lag_mode: Option<LagMode>,
    #[arg(long, global = true)]
    pub lag: Option<usize>,
    #[arg(long, global = true)]
    pub p_max: Option<usize>,
    #[arg(long, global = true, value_parser = parse_enum::<BicVariant>)]
    pub bic_variant: Option<BicVariant>,
    /// Comma-separated quantile levels.
    #[arg(long, global = true, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub surface_taus: Option<Vec<f64>>,
    /// Comma-separated `label:a:b`, e.g. `short:pi/5:pi,long:0:pi/5`.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_band)]
    pub bands: Option<Vec<BandSpec>>,
    #[arg(long, global = true)]
    pub step: Option<usize>,
    #[arg(long, global = true)]
    pub grid_size: Option<usize>,
    #[arg(long, global = true, value_parser = parse_enum::<TciDenominator>)]
    pub tci_denominator: Option<TciDenominator>,
    #[arg(long, global = true, value_parser = parse_enum::<CovarianceKind>)]
    pub covariance: Option<CovarianceKind>,
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_enum::<Strategy>)]
    pub strategies: Option<Vec<Strategy>>,
    #[arg(long, global = true)]
    pub var_alpha: Option<f64>,
    #[arg(long, global = true)]
    pub significance: Option<f64>,
    #[arg(long, global = true)]
    pub network_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(self, c: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        set!(
            input_kind, date_column, window, horizon, lag_mode, lag, p_max, bic_variant, taus,
            surface_taus, bands, step, grid_size, tci_denominator, covariance, strategies,
            var_alpha, significance, network_threshold, output_dir, seed
        );
        if self.input.is_some() {
            c.input = self.input;
        }
        if self.series.is_some() {
            c.series = self.series;
        }
        if self.break_date.is_some() {
            c.break_date = self.break_date;
        }
    }
}

/// Resolves the effective configuration: defaults, then the file, then flags.
pub fn resolve_config(config: Option<&Path>, overrides: Overrides) -> Result<RunConfig> {
    let mut c = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut c);
    c.validate()?;
    Ok(c)
}

pub fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(cli.config.as_deref(), cli.overrides)?;
    let mut out = Output::new(&config);
    match cli.command {
        Command::Ingest => ingest(&config, &mut out)?,
        Command::Stats => stats(&config, &mut out)?,
        Command::Connectedness => connectedness(&config, &mut out)?,
        Command::Rolling { surface } => rolling(&config, surface, &mut out)?,
        Command::Portfolio => portfolio(&config, &mut out)?,
        Command::Breaks { measures, target, measure } => breaks(&config, measures, &target, &measure, &mut out)?,
        Command::ExportNetwork { theta, tau, band } => export_network(&config, theta, tau, &band, &mut out)?,
        Command::Simulate { n, t, kind } => simulate(&config, n, t, kind, &mut out)?,
    }
    out.finish()
}

/// Collects written files and the run metadata.
struct Output {
    dir: PathBuf,
    meta: RunMetadata,
}

impl Output {
    fn new(config: &RunConfig) -> Self {
        Self {
            dir: config.output_dir.clone(),
            meta: RunMetadata::new("", config),
        }
    }

    fn command(&mut self, name: &str) {
        self.meta.command = name.to_string();
    }

    fn file<F>(&mut self, name: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let path = self.dir.join(name);
        write_atomic(&path, fill)?;
        self.meta.outputs.push(name.to_string());
        println!("wrote {}", path.display());
        Ok(())
    }

    fn note(&mut self, text: String) {
        self.meta.notes.push(text);
    }

    fn finish(mut self) -> Result<()> {
        let name = format!("{}.metadata.json", self.meta.command);
        self.meta.outputs.sort();
        let path = self.dir.join(&name);
        write_metadata(&path, &self.meta)?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn schema(config: &RunConfig) -> CsvSchema {
    CsvSchema {
        date_column: config.date_column.clone(),
        series: config.series.clone(),
    }
}

fn input_path(config: &RunConfig) -> Result<&Path> {
    config
        .input
        .as_deref()
        .ok_or_else(|| Error::Config(vec!["input is required for this command".into()]))
}

fn load_prices(config: &RunConfig) -> Result<(PricePanel, PricePanel)> {
    let raw = load_csv(input_path(config)?, &schema(config))?;
    let cleaned = clean(&raw)?;
    Ok((raw, cleaned))
}

fn load_returns(config: &RunConfig) -> Result<ReturnPanel> {
    match config.input_kind {
        InputKind::Prices => log_returns(&load_prices(config)?.1),
        InputKind::Returns => {
            let path = input_path(config)?;
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            ReturnPanel::read_csv(BufReader::new(file), &schema(config))
        }
    }
}

fn ingest(config: &RunConfig, out: &mut Output) -> Result<()> {
    out.command("ingest");
    if config.input_kind == InputKind::Returns {
        return Err(Error::Config(vec!["ingest expects input_kind = prices".into()]));
    }
    let (raw, cleaned) = load_prices(config)?;
    let returns = log_returns(&cleaned)?;
    out.note(format!(
        "{} series, {} dates, {} missing prices filled",
        raw.n_series(),
        raw.n_obs(),
        raw.missing_count()
    ));
    out.file("prices_clean.csv", |w| cleaned.write_csv(w))?;
    out.file("returns.csv", |w| returns.write_csv(w))
}

fn stats(config: &RunConfig, out: &mut Output) -> Result<()> {
    out.command("stats");
    let panel = load_returns(config)?;
    let summaries = (0..panel.n_series())
        .map(|i| summarize(&panel.column(i)))
        .collect::<Result<Vec<_>>>()?;
    let corr = correlation_matrix(&panel, config.significance)?;
    out.file("summary.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["series", "mean", "std_dev", "skewness", "excess_kurtosis", "jb", "jb_pvalue", "adf", "adf_pvalue"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (label, s) in panel.labels.iter().zip(&summaries) {
            c.write_record([
                label.clone(),
                s.mean.to_string(),
                s.std_dev.to_string(),
                s.skewness.to_string(),
                s.excess_kurtosis.to_string(),
                s.jb_stat.to_string(),
                s.jb_pvalue.to_string(),
                opt(s.adf_stat),
                opt(s.adf_pvalue),
            ])?;
        }
        c.flush().map_err(|e| Error::io("summary.csv", e))
    })?;
    for (name, m) in [("kendall_tau.csv", &corr.tau), ("kendall_pvalue.csv", &corr.pvalue)] {
        out.file(name, |w| write_square(w, &panel.labels, m))?;
    }
    Ok(())
}

fn write_square(w: &mut dyn Write, labels: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    c.write_record(&header)?;
    for (i, label) in labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        c.write_record(&rec)?;
    }
    c.flush().map_err(|e| Error::io("matrix output", e))
}

fn connectedness(config: &RunConfig, out: &mut Output) -> Result<()> {
    out.command("connectedness");
    let panel = load_returns(config)?;
    let p = match config.lag_mode {
        LagMode::Fixed => config.lag,
        LagMode::Bic | LagMode::BicPerWindow => select_lag_bic(&panel, config.p_max, config.bic_variant)?,
    };
    out.note(format!("lag order {p}"));
    let bands = config.frequency_bands()?;
    let opts = QvarOptions {
        covariance: config.covariance,
    };
    let mut tables = Vec::new();
    for &tau in &config.taus {
        let model = fit_qvar_with(&panel.values, p, tau, &opts)?;
        if model.explosive {
            out.note(format!("tau {tau}: fitted lag polynomial is explosive"));
        }
        let ft = frequency_connectedness(&model, config.horizon, &bands, config.grid_size, config.tci_denominator)?;
        tables.push(ft.total);
        tables.extend(ft.bands);
    }
    let labels = &panel.labels;
    out.file("theta.csv", |w| write_theta_csv(w, &tables, labels))?;
    out.file("npdc.csv", |w| write_npdc_csv(w, &tables, labels))?;
    out.file("measures.csv", |w| write_measures_csv(w, &tables, labels))
}

fn rolling(config: &RunConfig, surface: bool, out: &mut Output) -> Result<()> {
    out.command(if surface { "surface" } else { "rolling" });
    let panel = load_returns(config)?;
    let taus = if surface { &config.surface_taus } else { &config.taus };
    let result = rolling_connectedness(&panel, &config.rolling(taus)?)?;
    out.note(format!(
        "{} window ends, {} flagged window/level pairs",
        result.dates.len(),
        result.gaps.len()
    ));
    let stem = if surface { "surface" } else { "rolling" };
    out.file(&format!("{stem}.csv"), |w| result.write_long_csv(w))?;
    out.file(&format!("{stem}_gaps.csv"), |w| result.write_gaps_csv(w))?;

    let lo = taus.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        let mut rows = Vec::new();
        for band in &result.bands {
            let upper = result.tci_series(hi, band)?;
            let lower = result.tci_series(lo, band)?;
            let (upper, lower) = common_dates(&upper, &lower)?;
            let rtd = relative_tail_dependence(&upper, &lower)?;
            rows.push((band.clone(), rtd));
        }
        out.file(&format!("{stem}_relative_tail.csv"), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["date", "band", "upper_tau", "lower_tau", "value"])?;
            for (band, s) in &rows {
                for (d, v) in s.dates.iter().zip(&s.values) {
                    c.write_record([format_date(*d), band.clone(), hi.to_string(), lo.to_string(), v.to_string()])?;
                }
            }
            c.flush().map_err(|e| Error::io("relative tail output", e))
        })?;
    }
    Ok(())
}

fn common_dates(a: &DatedSeries, b: &DatedSeries) -> Result<(DatedSeries, DatedSeries)> {
    let keep = |s: &DatedSeries, other: &DatedSeries| {
        let (d, v): (Vec<_>, Vec<_>) = s
            .dates
            .iter()
            .zip(&s.values)
            .filter(|(d, _)| other.dates.binary_search(d).is_ok())
            .map(|(d, v)| (*d, *v))
            .unzip();
        DatedSeries::new(d, v)
    };
    Ok((keep(a, b)?, keep(b, a)?))
}

fn portfolio(config: &RunConfig, out: &mut Output) -> Result<()> {
    out.command("portfolio");
    let panel = load_returns(config)?;
    let rc = config.rolling(&config.taus)?;
    let mut runs: Vec<(String, Backtest)> = Vec::new();
    for &s in &config.strategies {
        let taus: Vec<f64> = if s == Strategy::Mcop { config.taus.clone() } else { vec![0.5] };
        for tau in taus {
            let b = backtest(&panel, s, tau, &rc, config.break_date, config.var_alpha)?;
            let name = if s == Strategy::Mcop {
                format!("{}({tau})", s.name())
            } else {
                s.name().to_string()
            };
            if !b.gaps.is_empty() {
                out.note(format!("{name}: {} windows failed, previous weights held", b.gaps.len()));
            }
            runs.push((name, b));
        }
    }
    for (name, b) in &runs {
        let file = format!("weights_{}.csv", name.to_lowercase().replace(['(', ')'], "_").trim_end_matches('_'));
        out.file(&file, |w| b.weights.write_csv(w))?;
    }
    let refs: Vec<(String, &Backtest)> = runs.iter().map(|(n, b)| (n.clone(), b)).collect();
    out.file("performance.csv", |w| write_performance_table(w, &refs))?;
    out.file("weight_summary.csv", |w| write_weight_summary(w, &refs))?;
    out.file("cumulative.csv", |w| write_cumulative(w, &refs))
}

fn breaks(config: &RunConfig, measures: Option<PathBuf>, target: &str, measure: &str, out: &mut Output) -> Result<()> {
    out.command("breaks");
    let date = config
        .break_date
        .ok_or_else(|| Error::Config(vec!["break_date is required for the breaks command".into()]))?;
    let path = measures.unwrap_or_else(|| config.output_dir.join("rolling.csv"));
    let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut bands = vec![TOTAL_BAND.to_string()];
    bands.extend(config.bands.iter().map(|b| b.label.clone()));
    let mut rows = Vec::new();
    for &tau in &config.taus {
        for band in &bands {
            let series = match read_long_series(text.as_slice(), tau, band, target, measure) {
                Ok(s) => s,
                Err(Error::InsufficientData(msg)) => {
                    out.note(format!("skipped: {msg}"));
                    continue;
                }
                Err(e) => return Err(e),
            };
            for result in [chow_test(&series, date)?, wilcoxon_at(&series, date)?] {
                rows.push(BreakRow {
                    tau,
                    band: band.clone(),
                    series: target.to_string(),
                    result,
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData(format!("{} has no matching series", path.display())));
    }
    out.file("breaks.csv", |w| write_break_table(w, &rows))
}

fn export_network(config: &RunConfig, theta: Option<PathBuf>, tau: f64, band: &str, out: &mut Output) -> Result<()> {
    out.command("export-network");
    let path = theta.unwrap_or_else(|| config.output_dir.join("theta.csv"));
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let (labels, table) = read_theta_table(BufReader::new(file), tau, band, config.tci_denominator, config.horizon)?;
    let net = network(&table, &labels, config.network_threshold)?;
    out.file("edges.csv", |w| net.write_edges_csv(w))?;
    out.file("nodes.csv", |w| net.write_nodes_csv(w))?;
    out.file("network.json", |w| net.write_json(w))
}

fn simulate(config: &RunConfig, n: usize, t: usize, kind: SimulationKind, out: &mut Output) -> Result<()> {
    out.command("simulate");
    if n == 0 || t < 2 {
        return Err(Error::InvalidArgument("simulate needs n >= 1 and t >= 2".into()));
    }
    let mut rng = StdRng::seed_from_u64(config.seed);
    let scale = 0.01;
    let returns = match kind {
        SimulationKind::Driver => {
            let phi = DMatrix::from_fn(n, n, |i, j| match (i, j) {
                (i, j) if i == j => 0.1,
                (_, 0) => 0.5,
                _ => 0.0,
            });
            simulate_var(&mut rng, &[phi], &DMatrix::identity(n, n), Innovations::Gaussian, t)
        }
        SimulationKind::CommonShock => common_shock_panel(&mut rng, n, t, 0.8, Innovations::StudentT(4.0), 0.05),
        SimulationKind::White => simulate_var(&mut rng, &[DMatrix::zeros(n, n)], &DMatrix::identity(n, n), Innovations::Gaussian, t),
    } * scale;
    let prices = prices_from_returns(&returns, 100.0);
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let dates = start.iter_days().take(t + 1).collect();
    let labels = (1..=n).map(|i| format!("S{i}")).collect();
    let panel = PricePanel::new(dates, labels, prices)?;
    out.note(format!("{kind:?} process, n = {n}, t = {t}, seed = {}", config.seed));
    out.file("simulated_prices.csv", |w| panel.write_csv(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_keys() {
        let cli = Cli::try_parse_from([
            "qconnect", "rolling", "--window", "120", "--taus", "0.1,0.9", "--tci-denominator", "n-minus-one",
            "--bands", "lo:0:pi/4", "--bands", "hi:pi/4:pi", "--strategies", "mvp,mcop",
        ])
        .unwrap();
        let c = resolve_config(None, cli.overrides).unwrap();
        assert_eq!(c.window, 120);
        assert_eq!(c.taus, vec![0.1, 0.9]);
        assert_eq!(c.tci_denominator, TciDenominator::NMinusOne);
        assert_eq!(c.bands.len(), 2);
        assert_eq!(c.strategies, vec![Strategy::Mvp, Strategy::Mcop]);
        assert_eq!(c.horizon, 20);
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "window = 150\nhorizon = 10\n").unwrap();
        let cli = Cli::try_parse_from(["qconnect", "stats", "--horizon", "5"]).unwrap();
        let c = resolve_config(Some(&p), cli.overrides).unwrap();
        assert_eq!((c.window, c.horizon), (150, 5));
    }

    #[test]
    fn bad_values_rejected() {
        assert!(Cli::try_parse_from(["qconnect", "stats", "--covariance", "weird"]).is_err());
        let cli = Cli::try_parse_from(["qconnect", "stats", "--step", "0", "--var-alpha", "0.9"]).unwrap();
        match resolve_config(None, cli.overrides) {
            Err(Error::Config(m)) => assert_eq!(m.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
