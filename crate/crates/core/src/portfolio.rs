//! Long-only minimum variance, minimum correlation and minimum connectedness
//! portfolios, with rolling out-of-sample backtests and risk-adjusted
//! performance measures.

use std::io::Write;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::connectedness::time_connectedness;
use crate::error::{Error, Result};
use crate::linalg::{
    condition_number, covariance_to_correlation, mean, quantile_linear, sample_covariance,
    sample_variance, symmetrize,
};
use crate::panel::{format_date, DatedSeries, ReturnPanel};
use crate::qvar::{fit_qvar_with, select_lag_bic, QvarOptions};
use crate::rolling::{window_ends, LagPolicy, RollingConfig, RollingGap};

const SINGULAR_CONDITION: f64 = 1e12;
const MIN_SAMPLE: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Mvp,
    Mcp,
    Mcop,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Mvp => "MVP",
            Strategy::Mcp => "MCP",
            Strategy::Mcop => "MCoP",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMeasure {
    StdDev,
    Var,
    Cvar,
}

/// `M^{-1} 1 / (1' M^{-1} 1)` on the columns in `free`, zero elsewhere.
fn face_solution(m: &DMatrix<f64>, free: &[usize], what: &str) -> Result<DVector<f64>> {
    let k = free.len();
    let sub = DMatrix::from_fn(k, k, |a, b| m[(free[a], free[b])]);
    if condition_number(&sub) > SINGULAR_CONDITION {
        return Err(Error::Singular(what.to_string()));
    }
    let x = sub
        .lu()
        .solve(&DVector::from_element(k, 1.0))
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    let total = x.sum();
    if !(total.abs() > f64::EPSILON) || !total.is_finite() {
        return Err(Error::Singular(format!("{what}: weights do not normalize")));
    }
    let mut w = DVector::zeros(m.nrows());
    for (a, &i) in free.iter().enumerate() {
        w[i] = x[a] / total;
    }
    Ok(w)
}

fn is_positive_definite(m: &DMatrix<f64>, free: &[usize]) -> bool {
    let k = free.len();
    DMatrix::from_fn(k, k, |a, b| m[(free[a], free[b])]).cholesky().is_some()
}

/// Minimizes `w' M w` over the long-only simplex. The unconstrained
/// `M^{-1} 1 / (1' M^{-1} 1)` is returned unchanged when it has no negative
/// entry. Otherwise negative assets are clipped and the rest re-solved until
/// none is negative, and for positive definite `M` a primal active-set pass
/// then re-admits any clipped asset that still lowers the objective. Assets
/// with (numerically) zero variance take the whole allocation in equal parts.
fn long_only_min(m: &DMatrix<f64>, what: &str) -> Result<DVector<f64>> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::DimensionMismatch(format!("{what} must be square and nonempty")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("portfolio input matrix"));
    }
    let m = symmetrize(m);
    let scale = (0..n).map(|i| m[(i, i)]).fold(0.0_f64, f64::max);
    if !(scale > 0.0) {
        return Ok(DVector::from_element(n, 1.0 / n as f64));
    }
    let riskless: Vec<usize> = (0..n).filter(|&i| m[(i, i)] <= f64::EPSILON * scale).collect();
    if !riskless.is_empty() {
        let mut w = DVector::zeros(n);
        for &i in &riskless {
            w[i] = 1.0 / riskless.len() as f64;
        }
        return Ok(w);
    }

    let mut free: Vec<usize> = (0..n).collect();
    let mut x = loop {
        let w = face_solution(&m, &free, what)?;
        if free.iter().all(|&i| w[i] >= 0.0) {
            break w;
        }
        free.retain(|&i| w[i] > 0.0);
    };
    if free.len() == n || !is_positive_definite(&m, &(0..n).collect::<Vec<_>>()) {
        return Ok(x);
    }

    let tol = 1e-12 * scale;
    for _ in 0..50 * n {
        let g = &m * &x;
        let level = x.dot(&g);
        let entering = (0..n)
            .filter(|i| !free.contains(i))
            .min_by(|&a, &b| g[a].total_cmp(&g[b]).then(a.cmp(&b)));
        match entering {
            Some(j) if g[j] < level - tol => {
                free.push(j);
                free.sort_unstable();
            }
            _ => return Ok(x),
        }
        loop {
            let w = face_solution(&m, &free, what)?;
            if free.iter().all(|&i| w[i] >= 0.0) {
                x = w;
                break;
            }
            // walk from x toward w until the first weight reaches zero
            let (step, blocking) = free
                .iter()
                .filter(|&&i| w[i] < 0.0)
                .map(|&i| (x[i] / (x[i] - w[i]), i))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("a negative weight exists");
            x = &x + (&w - &x) * step;
            x[blocking] = 0.0;
            free.retain(|&i| i != blocking && x[i] > 0.0);
            for i in 0..n {
                if !free.contains(&i) {
                    x[i] = 0.0;
                }
            }
            let s = x.sum();
            x /= s;
        }
    }
    Ok(x)
}

pub fn mvp_weights(cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    long_only_min(cov, "covariance matrix")
}

pub fn mcp_weights(corr: &DMatrix<f64>) -> Result<DVector<f64>> {
    long_only_min(corr, "correlation matrix")
}

pub fn mcop_weights(pci: &DMatrix<f64>) -> Result<DVector<f64>> {
    long_only_min(pci, "pairwise connectedness matrix")
}

/// `PCI_ij = 2 (s_ij + s_ji) / (s_ii + s_ij + s_ji + s_jj)` off the
/// diagonal, ones on it.
pub fn pairwise_connectedness_index(theta_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = theta_tilde.nrows();
    if theta_tilde.ncols() != n {
        return Err(Error::Malformed("share matrix must be square".into()));
    }
    if theta_tilde.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Malformed("shares must be finite and nonnegative".into()));
    }
    let mut pci = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let cross = theta_tilde[(i, j)] + theta_tilde[(j, i)];
            let den = theta_tilde[(i, i)] + cross + theta_tilde[(j, j)];
            if !(den > 0.0) {
                return Err(Error::Malformed(format!("pair ({i}, {j}) has no variance share")));
            }
            pci[(i, j)] = 2.0 * cross / den;
        }
    }
    Ok(pci)
}

fn check_length(x: &[f64], what: &str) -> Result<()> {
    if x.len() < MIN_SAMPLE {
        return Err(Error::InsufficientData(format!(
            "{what} needs at least {MIN_SAMPLE} observations, got {}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("return series"));
    }
    Ok(())
}

/// `1 - var(portfolio) / var(asset)` with a two-sided F-test of equal
/// variances on `(T - 1, T - 1)` degrees of freedom.
pub fn hedging_effectiveness(portfolio: &[f64], asset: &[f64]) -> Result<(f64, f64)> {
    if portfolio.len() != asset.len() {
        return Err(Error::Misaligned(format!(
            "{} portfolio vs {} asset returns",
            portfolio.len(),
            asset.len()
        )));
    }
    check_length(asset, "hedging effectiveness")?;
    let va = sample_variance(asset);
    if !(va > 0.0) {
        return Err(Error::ZeroVariance("asset returns".into()));
    }
    let vp = sample_variance(portfolio);
    let he = 1.0 - vp / va;
    let df = (asset.len() - 1) as f64;
    let f = FisherSnedecor::new(df, df).expect("positive degrees of freedom");
    let cdf = f.cdf(vp / va);
    let p = (2.0 * cdf.min(1.0 - cdf)).clamp(0.0, 1.0);
    Ok((he, p))
}

/// Left-tail `alpha`-quantile of the empirical distribution (smallest value
/// whose ECDF reaches `alpha`).
pub fn value_at_risk(returns: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidArgument(format!("tail level {alpha} outside (0, 0.5)")));
    }
    if returns.is_empty() {
        return Err(Error::InsufficientData("empty return series".into()));
    }
    let mut s = returns.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let k = ((alpha * s.len() as f64).ceil() as usize).max(1);
    Ok(s[k - 1])
}

/// Mean of returns at or below the `alpha` value-at-risk.
pub fn conditional_value_at_risk(returns: &[f64], alpha: f64) -> Result<f64> {
    let q = value_at_risk(returns, alpha)?;
    let tail: Vec<f64> = returns.iter().copied().filter(|r| *r <= q).collect();
    Ok(mean(&tail))
}

/// Mean return over a risk denominator, with a zero risk-free rate.
pub fn sharpe(returns: &[f64], denominator: RiskMeasure, alpha: f64) -> Result<f64> {
    check_length(returns, "Sharpe ratio")?;
    let d = match denominator {
        RiskMeasure::StdDev => sample_variance(returns).max(0.0).sqrt(),
        RiskMeasure::Var => value_at_risk(returns, alpha)?.abs(),
        RiskMeasure::Cvar => conditional_value_at_risk(returns, alpha)?.abs(),
    };
    if !(d > 0.0) {
        return Err(Error::Degenerate(format!("{denominator:?} risk denominator is zero")));
    }
    Ok(mean(returns) / d)
}

/// Portfolio allocations indexed by rebalance date.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPath {
    pub labels: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// One row per date.
    pub weights: DMatrix<f64>,
}

impl WeightPath {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (r, d) in self.dates.iter().enumerate() {
            let mut rec = vec![format_date(*d)];
            rec.extend(self.weights.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("weight output", e))?;
        Ok(())
    }
}

/// Per-period portfolio log returns: weights dated at a panel row apply to
/// every following row up to and including the next rebalance date.
pub fn realized_returns(path: &WeightPath, panel: &ReturnPanel) -> Result<DatedSeries> {
    if path.labels != panel.labels {
        return Err(Error::Misaligned("weight and return labels differ".into()));
    }
    let mut rows = Vec::with_capacity(path.dates.len());
    for d in &path.dates {
        let r = panel
            .dates
            .binary_search(d)
            .map_err(|_| Error::Misaligned(format!("rebalance date {d} not in return panel")))?;
        rows.push(r);
    }
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (k, &start) in rows.iter().enumerate() {
        let stop = rows.get(k + 1).copied().unwrap_or(panel.n_obs() - 1);
        let w = path.weights.row(k);
        for r in start + 1..=stop {
            dates.push(panel.dates[r]);
            values.push(w.iter().zip(panel.values.row(r).iter()).map(|(a, b)| a * b).sum());
        }
    }
    DatedSeries::new(dates, values)
}

/// Running sum of realized portfolio log returns.
pub fn cumulative_returns(path: &WeightPath, panel: &ReturnPanel) -> Result<DatedSeries> {
    let realized = realized_returns(path, panel)?;
    let mut acc = 0.0;
    let values = realized
        .values
        .iter()
        .map(|r| {
            acc += r;
            acc
        })
        .collect();
    DatedSeries::new(realized.dates, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HedgeStat {
    pub he: f64,
    pub pvalue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceReport {
    pub mean_return: f64,
    pub std_dev: f64,
    /// `None` when the corresponding risk denominator is zero.
    pub sharpe_std: Option<f64>,
    pub sharpe_var: Option<f64>,
    pub sharpe_cvar: Option<f64>,
    pub alpha: f64,
    /// Against each asset; `None` for assets with zero variance.
    pub he_per_asset: Vec<Option<HedgeStat>>,
    pub cumulative: DatedSeries,
}

/// Performance of `returns` against the same-dated asset returns.
pub fn performance_report(returns: &DatedSeries, panel: &ReturnPanel, alpha: f64) -> Result<PerformanceReport> {
    check_length(&returns.values, "performance report")?;
    let x = &returns.values;
    let optional = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let rows: Vec<usize> = returns
        .dates
        .iter()
        .map(|d| {
            panel
                .dates
                .binary_search(d)
                .map_err(|_| Error::Misaligned(format!("return date {d} not in panel")))
        })
        .collect::<Result<_>>()?;
    let he_per_asset = (0..panel.n_series())
        .map(|i| {
            let asset: Vec<f64> = rows.iter().map(|&r| panel.values[(r, i)]).collect();
            match hedging_effectiveness(x, &asset) {
                Ok((he, pvalue)) => Ok(Some(HedgeStat { he, pvalue })),
                Err(Error::ZeroVariance(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut acc = 0.0;
    let cumulative = DatedSeries::new(
        returns.dates.clone(),
        x.iter()
            .map(|r| {
                acc += r;
                acc
            })
            .collect(),
    )?;
    Ok(PerformanceReport {
        mean_return: mean(x),
        std_dev: sample_variance(x).max(0.0).sqrt(),
        sharpe_std: optional(sharpe(x, RiskMeasure::StdDev, alpha))?,
        sharpe_var: optional(sharpe(x, RiskMeasure::Var, alpha))?,
        sharpe_cvar: optional(sharpe(x, RiskMeasure::Cvar, alpha))?,
        alpha,
        he_per_asset,
        cumulative,
    })
}

/// Weight distribution of one asset across a path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSummary {
    pub asset: String,
    pub mean: f64,
    pub std_dev: f64,
    pub q05: f64,
    pub q95: f64,
    pub he: Option<f64>,
    pub pvalue: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backtest {
    pub strategy: Strategy,
    pub tau: f64,
    pub weights: WeightPath,
    pub returns: DatedSeries,
    pub report: PerformanceReport,
    /// Sub-reports strictly before and on or after the break date.
    pub pre: Option<PerformanceReport>,
    pub post: Option<PerformanceReport>,
    /// Windows whose estimation failed; the previous allocation is held.
    pub gaps: Vec<RollingGap>,
}

impl Backtest {
    pub fn weight_summary(&self) -> Vec<WeightSummary> {
        let w = &self.weights.weights;
        self.weights
            .labels
            .iter()
            .enumerate()
            .map(|(i, label)| {
                let col: Vec<f64> = w.column(i).iter().copied().collect();
                let mut sorted = col.clone();
                sorted.sort_by(|a, b| a.total_cmp(b));
                let he = self.report.he_per_asset[i];
                WeightSummary {
                    asset: label.clone(),
                    mean: mean(&col),
                    std_dev: if col.len() > 1 { sample_variance(&col).max(0.0).sqrt() } else { 0.0 },
                    q05: quantile_linear(&sorted, 0.05),
                    q95: quantile_linear(&sorted, 0.95),
                    he: he.map(|h| h.he),
                    pvalue: he.map(|h| h.pvalue),
                }
            })
            .collect()
    }
}

fn window_weights(
    window: &ReturnPanel,
    strategy: Strategy,
    tau: f64,
    lag: usize,
    config: &RollingConfig,
) -> Result<DVector<f64>> {
    match strategy {
        Strategy::Mvp => mvp_weights(&sample_covariance(&window.values)),
        Strategy::Mcp => mcp_weights(&covariance_to_correlation(&sample_covariance(&window.values))),
        Strategy::Mcop => {
            let opts = QvarOptions {
                covariance: config.covariance,
            };
            let model = fit_qvar_with(&window.values, lag, tau, &opts)?;
            let table = time_connectedness(&model, config.horizon, config.denominator)?;
            mcop_weights(&pairwise_connectedness_index(&table.theta_tilde)?)
        }
    }
}

/// Rolling out-of-sample backtest. Weights estimated on the window ending at
/// row `t` are applied from row `t + 1`; with BIC lag selection for the
/// connectedness strategy, the lag is chosen on the first window only.
pub fn backtest(
    panel: &ReturnPanel,
    strategy: Strategy,
    tau: f64,
    config: &RollingConfig,
    break_date: Option<NaiveDate>,
    alpha: f64,
) -> Result<Backtest> {
    let n = panel.n_series();
    if strategy == Strategy::Mcop {
        config.validate(n)?;
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile level {tau} outside (0, 1)")));
        }
    } else if config.window < 2 || config.step == 0 {
        return Err(Error::Config(vec!["window must be at least 2 and step at least 1".into()]));
    }
    let t = panel.n_obs();
    if t <= config.window {
        return Err(Error::InsufficientData(format!(
            "{t} observations leave no out-of-sample period after a window of {}",
            config.window
        )));
    }
    let ends = window_ends(t - 1, config.window, config.step);
    let slice = |end: usize| panel.slice_rows(end + 1 - config.window, end + 1);
    let first_lag = match config.lag {
        LagPolicy::Bic { p_max, variant } if strategy == Strategy::Mcop => {
            Some(select_lag_bic(&slice(ends[0]), p_max, variant)?)
        }
        LagPolicy::Fixed { p } => Some(p),
        _ => None,
    };

    let estimates: Vec<Result<DVector<f64>>> = ends
        .par_iter()
        .map(|&end| {
            let window = slice(end);
            let lag = match (first_lag, config.lag) {
                (Some(p), _) => p,
                (None, LagPolicy::BicPerWindow { p_max, variant }) if strategy == Strategy::Mcop => {
                    select_lag_bic(&window, p_max, variant)?
                }
                _ => 1,
            };
            window_weights(&window, strategy, tau, lag, config)
        })
        .collect();

    let mut dates = Vec::new();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut gaps = Vec::new();
    for (&end, est) in ends.iter().zip(estimates) {
        let date = panel.dates[end];
        match est {
            Ok(w) => {
                dates.push(date);
                rows.push(w);
            }
            Err(e) => gaps.push(RollingGap {
                date,
                tau,
                reason: e.to_string(),
            }),
        }
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("every backtest window failed".into()));
    }
    let weights = WeightPath {
        labels: panel.labels.clone(),
        dates,
        weights: DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]),
    };
    let returns = realized_returns(&weights, panel)?;
    let report = performance_report(&returns, panel, alpha)?;
    let (pre, post) = match break_date {
        None => (None, None),
        Some(b) => {
            let cut = returns.dates.partition_point(|d| *d < b);
            let part = |lo: usize, hi: usize| -> Result<Option<PerformanceReport>> {
                if hi - lo < MIN_SAMPLE {
                    return Ok(None);
                }
                let s = DatedSeries::new(returns.dates[lo..hi].to_vec(), returns.values[lo..hi].to_vec())?;
                performance_report(&s, panel, alpha).map(Some)
            };
            (part(0, cut)?, part(cut, returns.len())?)
        }
    };
    Ok(Backtest {
        strategy,
        tau,
        weights,
        returns,
        report,
        pre,
        post,
        gaps,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `sample,metric,<strategy...>` rows for Return, StdDev and the
/// three Sharpe ratios on the full sample and any break sub-samples.
pub fn write_performance_table<W: Write>(out: W, runs: &[(String, &Backtest)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample".to_string(), "metric".to_string()];
    header.extend(runs.iter().map(|(name, _)| name.clone()));
    w.write_record(&header)?;
    let samples: [(&str, fn(&Backtest) -> Option<&PerformanceReport>); 3] = [
        ("full", |b| Some(&b.report)),
        ("pre_break", |b| b.pre.as_ref()),
        ("post_break", |b| b.post.as_ref()),
    ];
    let metrics: [(&str, fn(&PerformanceReport) -> Option<f64>); 5] = [
        ("Return", |r| Some(r.mean_return)),
        ("StdDev", |r| Some(r.std_dev)),
        ("Sharpe (StdDev)", |r| r.sharpe_std),
        ("Sharpe (VaR)", |r| r.sharpe_var),
        ("Sharpe (CVaR)", |r| r.sharpe_cvar),
    ];
    for (sample, pick) in samples {
        if runs.iter().all(|(_, b)| pick(b).is_none()) {
            continue;
        }
        for (metric, get) in metrics {
            let mut rec = vec![sample.to_string(), metric.to_string()];
            rec.extend(runs.iter().map(|(_, b)| opt(pick(b).and_then(get))));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("performance output", e))?;
    Ok(())
}

/// Writes `strategy,asset,mean,std_dev,q05,q95,he,pvalue`.
pub fn write_weight_summary<W: Write>(out: W, runs: &[(String, &Backtest)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "asset", "mean", "std_dev", "q05", "q95", "he", "pvalue"])?;
    for (name, b) in runs {
        for s in b.weight_summary() {
            w.write_record([
                name.clone(),
                s.asset,
                s.mean.to_string(),
                s.std_dev.to_string(),
                s.q05.to_string(),
                s.q95.to_string(),
                opt(s.he),
                opt(s.pvalue),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("weight summary output", e))?;
    Ok(())
}

/// Writes `date,strategy,cumulative_return`.
pub fn write_cumulative<W: Write>(out: W, runs: &[(String, &Backtest)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "strategy", "cumulative_return"])?;
    for (name, b) in runs {
        let c = &b.report.cumulative;
        for (d, v) in c.dates.iter().zip(&c.values) {
            w.write_record([format_date(*d), name.clone(), v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("cumulative output", e))?;
    Ok(())
}
