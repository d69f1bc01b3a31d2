//! Rolling-window estimation of time- and frequency-domain connectedness
//! across quantile levels.

use std::io::{Read, Write};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectedness::{ConnectednessTable, TciDenominator, TOTAL_BAND};
use crate::error::{Error, Result};
use crate::frequency::{frequency_connectedness, FrequencyBand, FrequencyTables, DEFAULT_GRID_SIZE};
use crate::panel::{format_date, parse_date, DatedSeries, ReturnPanel};
use crate::qvar::{fit_qvar_taus, select_lag_bic, BicVariant, CovarianceKind, QvarOptions};

/// Series label used for system-wide measures in long-format output.
pub const ALL_SERIES: &str = "ALL";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum LagPolicy {
    Fixed { p: usize },
    /// Select once on the full sample, then hold fixed.
    Bic { p_max: usize, variant: BicVariant },
    /// Reselect inside every window.
    BicPerWindow { p_max: usize, variant: BicVariant },
}

impl LagPolicy {
    fn max_lag(&self) -> usize {
        match *self {
            LagPolicy::Fixed { p } => p,
            LagPolicy::Bic { p_max, .. } | LagPolicy::BicPerWindow { p_max, .. } => p_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingConfig {
    pub window: usize,
    pub horizon: usize,
    pub lag: LagPolicy,
    pub taus: Vec<f64>,
    pub bands: Vec<FrequencyBand>,
    pub step: usize,
    pub grid_size: usize,
    pub denominator: TciDenominator,
    pub covariance: CovarianceKind,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self {
            window: 200,
            horizon: 20,
            lag: LagPolicy::Fixed { p: 1 },
            taus: vec![0.05, 0.5, 0.95],
            bands: FrequencyBand::defaults(),
            step: 1,
            grid_size: DEFAULT_GRID_SIZE,
            denominator: TciDenominator::N,
            covariance: CovarianceKind::Uncentered,
        }
    }
}

impl RollingConfig {
    /// All violated constraints for a panel with `n` series, or `Ok`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut errs = Vec::new();
        let p = self.lag.max_lag();
        if p == 0 {
            errs.push("lag order must be at least 1".to_string());
        }
        if self.window <= n * p + 10 {
            errs.push(format!(
                "window {} must exceed n*p + 10 = {}",
                self.window,
                n * p + 10
            ));
        }
        if self.taus.is_empty() {
            errs.push("at least one quantile level is required".into());
        }
        for &t in &self.taus {
            if !(t > 0.0 && t < 1.0) {
                errs.push(format!("quantile level {t} outside (0, 1)"));
            }
        }
        if self.step == 0 {
            errs.push("step must be at least 1".into());
        }
        if self.bands.is_empty() {
            errs.push("at least one frequency band is required".into());
        }
        if self.horizon >= 2 * self.grid_size {
            errs.push(format!(
                "grid size {} too small for horizon {}",
                self.grid_size, self.horizon
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Quantile levels `0.05, 0.10, ..., 0.95`.
pub fn tau_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatedTables {
    pub date: NaiveDate,
    pub tau: f64,
    pub lag: usize,
    pub tables: FrequencyTables,
}

/// A window/level pair whose estimation failed.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingGap {
    pub date: NaiveDate,
    pub tau: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingOutput {
    pub labels: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub taus: Vec<f64>,
    pub bands: Vec<String>,
    /// Ordered by date, then by position in `taus`.
    pub tables: Vec<DatedTables>,
    pub gaps: Vec<RollingGap>,
}

/// Row indices (0-based, inclusive) of each window end.
pub fn window_ends(t: usize, window: usize, step: usize) -> Vec<usize> {
    if t < window || window == 0 || step == 0 {
        return Vec::new();
    }
    (window - 1..t).step_by(step).collect()
}

pub fn rolling_connectedness(panel: &ReturnPanel, config: &RollingConfig) -> Result<RollingOutput> {
    let n = panel.n_series();
    config.validate(n)?;
    let t = panel.n_obs();
    if t < config.window {
        return Err(Error::InsufficientData(format!(
            "{t} observations for a window of {}",
            config.window
        )));
    }
    let fixed_lag = match config.lag {
        LagPolicy::Fixed { p } => Some(p),
        LagPolicy::Bic { p_max, variant } => Some(select_lag_bic(panel, p_max, variant)?),
        LagPolicy::BicPerWindow { .. } => None,
    };
    let ends = window_ends(t, config.window, config.step);
    let opts = QvarOptions {
        covariance: config.covariance,
    };

    let per_window: Vec<Vec<std::result::Result<DatedTables, RollingGap>>> = ends
        .par_iter()
        .map(|&end| {
            let date = panel.dates[end];
            let start = end + 1 - config.window;
            let sub = panel.slice_rows(start, end + 1);
            let fail = |reason: String| -> Vec<_> {
                config
                    .taus
                    .iter()
                    .map(|&tau| {
                        Err(RollingGap {
                            date,
                            tau,
                            reason: reason.clone(),
                        })
                    })
                    .collect()
            };
            let lag = match (fixed_lag, config.lag) {
                (Some(p), _) => p,
                (None, LagPolicy::BicPerWindow { p_max, variant }) => {
                    match select_lag_bic(&sub, p_max, variant) {
                        Ok(p) => p,
                        Err(e) => return fail(e.to_string()),
                    }
                }
                _ => unreachable!("lag resolved above"),
            };
            let models = match fit_qvar_taus(&sub.values, lag, &config.taus, &opts) {
                Ok(m) => m,
                Err(e) => return fail(e.to_string()),
            };
            models
                .into_iter()
                .zip(&config.taus)
                .map(|(model, &tau)| {
                    model
                        .and_then(|m| {
                            frequency_connectedness(
                                &m,
                                config.horizon,
                                &config.bands,
                                config.grid_size,
                                config.denominator,
                            )
                        })
                        .map(|tables| DatedTables {
                            date,
                            tau,
                            lag,
                            tables,
                        })
                        .map_err(|e| RollingGap {
                            date,
                            tau,
                            reason: e.to_string(),
                        })
                })
                .collect()
        })
        .collect();

    let mut tables = Vec::new();
    let mut gaps = Vec::new();
    for r in per_window.into_iter().flatten() {
        match r {
            Ok(t) => tables.push(t),
            Err(g) => gaps.push(g),
        }
    }
    let mut bands = vec![TOTAL_BAND.to_string()];
    bands.extend(config.bands.iter().map(|b| b.label.clone()));
    Ok(RollingOutput {
        labels: panel.labels.clone(),
        dates: ends.iter().map(|&e| panel.dates[e]).collect(),
        taus: config.taus.clone(),
        bands,
        tables,
        gaps,
    })
}

impl DatedTables {
    /// The table for `band`, where [`TOTAL_BAND`] is the time domain.
    pub fn band(&self, band: &str) -> Option<&ConnectednessTable> {
        if band == TOTAL_BAND {
            Some(&self.tables.total)
        } else {
            self.tables.bands.iter().find(|t| t.band == band)
        }
    }
}

impl RollingOutput {
    /// TCI path at one level and band, skipping flagged windows.
    pub fn tci_series(&self, tau: f64, band: &str) -> Result<DatedSeries> {
        self.series(tau, band, |t| t.tci)
    }

    /// NET path of series `i`.
    pub fn net_series(&self, tau: f64, band: &str, i: usize) -> Result<DatedSeries> {
        self.series(tau, band, |t| t.net[i])
    }

    fn series(&self, tau: f64, band: &str, f: impl Fn(&ConnectednessTable) -> f64) -> Result<DatedSeries> {
        if !self.taus.contains(&tau) {
            return Err(Error::InvalidArgument(format!("quantile level {tau} was not estimated")));
        }
        if !self.bands.iter().any(|b| b == band) {
            return Err(Error::InvalidArgument(format!("unknown band {band:?}")));
        }
        let (dates, values) = self
            .tables
            .iter()
            .filter(|d| d.tau == tau)
            .filter_map(|d| d.band(band).map(|t| (d.date, f(t))))
            .unzip();
        DatedSeries::new(dates, values)
    }

    /// Writes every measure as `date,tau,band,series,measure,value`.
    pub fn write_long_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "tau", "band", "series", "measure", "value"])?;
        for d in &self.tables {
            let date = format_date(d.date);
            let tau = d.tau.to_string();
            for table in std::iter::once(&d.tables.total).chain(&d.tables.bands) {
                w.write_record([&date, &tau, &table.band, ALL_SERIES, "TCI", &table.tci.to_string()])?;
                for (i, label) in self.labels.iter().enumerate() {
                    for (name, v) in [("TO", table.to[i]), ("FROM", table.from[i]), ("NET", table.net[i])] {
                        w.write_record([&date, &tau, &table.band, label, name, &v.to_string()])?;
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::io("long-format output", e))?;
        Ok(())
    }

    /// Writes flagged windows as `date,tau,reason`.
    pub fn write_gaps_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "tau", "reason"])?;
        for g in &self.gaps {
            w.write_record([format_date(g.date), g.tau.to_string(), g.reason.clone()])?;
        }
        w.flush().map_err(|e| Error::io("gap output", e))?;
        Ok(())
    }
}

/// Selects one measure series from a long-format CSV.
pub fn read_long_series<R: Read>(
    input: R,
    tau: f64,
    band: &str,
    series: &str,
    measure: &str,
) -> Result<DatedSeries> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing column {name:?}")))
    };
    let (c_date, c_tau, c_band, c_series, c_measure, c_value) = (
        col("date")?,
        col("tau")?,
        col("band")?,
        col("series")?,
        col("measure")?,
        col("value")?,
    );
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if &rec[c_band] != band || &rec[c_series] != series || &rec[c_measure] != measure {
            continue;
        }
        let number = |c: usize, name: &str| -> Result<f64> {
            rec[c].trim().parse::<f64>().map_err(|_| Error::BadNumber {
                row,
                column: name.into(),
                value: rec[c].to_string(),
            })
        };
        if number(c_tau, "tau")? != tau {
            continue;
        }
        dates.push(parse_date(row, &rec[c_date])?);
        values.push(number(c_value, "value")?);
    }
    if values.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no rows for tau={tau}, band={band}, series={series}, measure={measure}"
        )));
    }
    DatedSeries::new(dates, values)
}

/// Pointwise `upper - lower` on identical date axes.
pub fn relative_tail_dependence(upper: &DatedSeries, lower: &DatedSeries) -> Result<DatedSeries> {
    if upper.dates != lower.dates {
        return Err(Error::Misaligned(format!(
            "{} upper dates vs {} lower dates",
            upper.len(),
            lower.len()
        )));
    }
    let values = upper.values.iter().zip(&lower.values).map(|(u, l)| u - l).collect();
    DatedSeries::new(upper.dates.clone(), values)
}

/// Date by quantile-level grid of one measure; flagged cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingSurface {
    pub band: String,
    pub series: String,
    pub dates: Vec<NaiveDate>,
    pub taus: Vec<f64>,
    pub values: DMatrix<f64>,
    pub flagged: DMatrix<bool>,
}

/// TCI and per-series NET surfaces for every band.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSet {
    pub tci: Vec<RollingSurface>,
    pub net: Vec<RollingSurface>,
}

impl RollingOutput {
    pub fn surfaces(&self) -> SurfaceSet {
        let date_index = |d: NaiveDate| self.dates.binary_search(&d).expect("date from this run");
        let tau_index = |t: f64| self.taus.iter().position(|x| *x == t).expect("level from this run");
        let (nd, nt) = (self.dates.len(), self.taus.len());
        let mut flagged = DMatrix::from_element(nd, nt, true);
        for d in &self.tables {
            flagged[(date_index(d.date), tau_index(d.tau))] = false;
        }
        let build = |band: &str, series: &str, f: &dyn Fn(&ConnectednessTable) -> f64| {
            let mut values = DMatrix::from_element(nd, nt, f64::NAN);
            for d in &self.tables {
                if let Some(t) = d.band(band) {
                    values[(date_index(d.date), tau_index(d.tau))] = f(t);
                }
            }
            RollingSurface {
                band: band.to_string(),
                series: series.to_string(),
                dates: self.dates.clone(),
                taus: self.taus.clone(),
                values,
                flagged: flagged.clone(),
            }
        };
        let mut tci = Vec::new();
        let mut net = Vec::new();
        for band in &self.bands {
            tci.push(build(band, ALL_SERIES, &|t| t.tci));
            for (i, label) in self.labels.iter().enumerate() {
                net.push(build(band, label, &|t| t.net[i]));
            }
        }
        SurfaceSet { tci, net }
    }
}

/// Rolling estimation over a quantile grid of at least three levels.
pub fn quantile_surface(panel: &ReturnPanel, config: &RollingConfig) -> Result<SurfaceSet> {
    if config.taus.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "a quantile surface needs at least 3 levels, got {}",
            config.taus.len()
        )));
    }
    Ok(rolling_connectedness(panel, config)?.surfaces())
}
