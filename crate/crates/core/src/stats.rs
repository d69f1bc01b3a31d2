//! Summary diagnostics for return series: moments, Jarque-Bera, augmented
//! Dickey-Fuller and Kendall rank correlation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, mean};
use crate::panel::ReturnPanel;

/// Table-1 style row for one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesSummary {
    pub mean: f64,
    pub std_dev: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub jb_stat: f64,
    pub jb_pvalue: f64,
    /// `None` when the series is too short or degenerate for the ADF regression.
    pub adf_stat: Option<f64>,
    pub adf_pvalue: Option<f64>,
}

/// Lag selection for [`adf_test`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdfLag {
    /// AIC search up to `floor(12 (T/100)^{1/4})`.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdfResult {
    pub stat: f64,
    pub pvalue: f64,
    pub lags: usize,
    pub nobs: usize,
}

/// Biased central moments `(m2, m3, m4)`.
fn central_moments(x: &[f64]) -> (f64, f64, f64) {
    let m = mean(x);
    let n = x.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

/// Skewness `m3 / m2^1.5`.
pub fn skewness(x: &[f64]) -> Result<f64> {
    let (m2, m3, _) = central_moments(x);
    if m2 <= 0.0 {
        return Err(Error::ZeroVariance("skewness".into()));
    }
    Ok(m3 / m2.powf(1.5))
}

/// Excess kurtosis `m4 / m2^2 - 3`.
pub fn excess_kurtosis(x: &[f64]) -> Result<f64> {
    let (m2, _, m4) = central_moments(x);
    if m2 <= 0.0 {
        return Err(Error::ZeroVariance("kurtosis".into()));
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Jarque-Bera statistic and its chi-square(2) p-value.
pub fn jarque_bera(x: &[f64]) -> Result<(f64, f64)> {
    let s = skewness(x)?;
    let k = excess_kurtosis(x)?;
    let jb = x.len() as f64 / 6.0 * (s * s + k * k / 4.0);
    // chi-square with 2 df has survival function exp(-x/2)
    Ok((jb, (-jb / 2.0).exp()))
}

pub fn summarize(series: &[f64]) -> Result<SeriesSummary> {
    if series.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "summary needs at least 8 observations, got {}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("series"));
    }
    let m = mean(series);
    let var = series.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (series.len() as f64 - 1.0);
    let skew = skewness(series)?;
    let kurt = excess_kurtosis(series)?;
    let (jb, jb_p) = jarque_bera(series)?;
    let adf = adf_test(series, AdfLag::Auto).ok();
    Ok(SeriesSummary {
        mean: m,
        std_dev: var.sqrt(),
        skewness: skew,
        excess_kurtosis: kurt,
        jb_stat: jb,
        jb_pvalue: jb_p,
        adf_stat: adf.map(|a| a.stat),
        adf_pvalue: adf.map(|a| a.pvalue),
    })
}

struct OlsFit {
    beta: DVector<f64>,
    rss: f64,
    xtx_inv: DMatrix<f64>,
    nobs: usize,
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<OlsFit> {
    if condition_number(x) > 1e10 {
        return None;
    }
    let xtx = x.transpose() * x;
    let xtx_inv = xtx.try_inverse()?;
    let beta = &xtx_inv * (x.transpose() * y);
    let resid = y - x * &beta;
    Some(OlsFit {
        beta,
        rss: resid.norm_squared(),
        xtx_inv,
        nobs: x.nrows(),
    })
}

/// Builds the constant-only ADF regression of `dy[t]` on
/// `[1, y[t-1], dy[t-1], ..., dy[t-lags]]` using rows `skip..` of `dy`.
fn adf_design(y: &[f64], dy: &[f64], lags: usize, skip: usize) -> (DMatrix<f64>, DVector<f64>) {
    let rows = dy.len() - skip;
    let x = DMatrix::from_fn(rows, lags + 2, |r, c| {
        let t = r + skip;
        match c {
            0 => 1.0,
            1 => y[t],
            j => dy[t - (j - 1)],
        }
    });
    let resp = DVector::from_fn(rows, |r, _| dy[r + skip]);
    (x, resp)
}

/// Augmented Dickey-Fuller test with a constant and no trend.
///
/// Degenerate inputs (for instance a deterministic linear series, whose
/// differences are constant) return [`Error::Degenerate`] rather than a
/// statistic.
pub fn adf_test(series: &[f64], max_lag: AdfLag) -> Result<AdfResult> {
    let t = series.len();
    let requested = match max_lag {
        AdfLag::Fixed(l) => l,
        AdfLag::Auto => {
            let rule = (12.0 * (t as f64 / 100.0).powf(0.25)).floor() as usize;
            rule.min((t / 2).saturating_sub(3)).min(t.saturating_sub(11))
        }
    };
    if t <= requested + 10 {
        return Err(Error::InsufficientData(format!(
            "ADF with {requested} lags needs more than {} observations, got {t}",
            requested + 10
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("series"));
    }
    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let dm = mean(&dy);
    if dy.iter().all(|v| (v - dm).abs() <= 1e-14 * (1.0 + dm.abs())) {
        return Err(Error::Degenerate("differenced series is constant".into()));
    }

    let lags = match max_lag {
        AdfLag::Fixed(l) => l,
        AdfLag::Auto => {
            // every candidate is scored on the sample trimmed to the largest lag
            let mut best: Option<(f64, usize)> = None;
            for l in 0..=requested {
                let (x, resp) = adf_design(series, &dy, l, requested);
                if let Some(fit) = ols(&x, &resp) {
                    if fit.rss <= 0.0 {
                        continue;
                    }
                    let n = fit.nobs as f64;
                    let aic = n * (fit.rss / n).ln() + 2.0 * (l + 2) as f64;
                    if best.is_none_or(|(b, _)| aic < b) {
                        best = Some((aic, l));
                    }
                }
            }
            best.ok_or_else(|| Error::Degenerate("no admissible ADF lag".into()))?
                .1
        }
    };

    let (x, resp) = adf_design(series, &dy, lags, lags);
    let fit = ols(&x, &resp)
        .ok_or_else(|| Error::Degenerate("ADF design is rank deficient".into()))?;
    let dof = fit.nobs as f64 - (lags + 2) as f64;
    let tss: f64 = resp.iter().map(|v| v * v).sum();
    if fit.rss <= 1e-24 * (1.0 + tss) || dof <= 0.0 {
        return Err(Error::Degenerate("ADF regression fits exactly".into()));
    }
    let s2 = fit.rss / dof;
    let se = (s2 * fit.xtx_inv[(1, 1)]).sqrt();
    let stat = fit.beta[1] / se;
    Ok(AdfResult {
        stat,
        pvalue: mackinnon_pvalue(stat),
        lags,
        nobs: fit.nobs,
    })
}

/// Approximate asymptotic p-value of the constant-only Dickey-Fuller
/// statistic from MacKinnon's (1994) response surface for one series.
pub fn mackinnon_pvalue(stat: f64) -> f64 {
    const TAU_MAX: f64 = 2.74;
    const TAU_MIN: f64 = -18.83;
    const TAU_STAR: f64 = -1.61;
    const SMALL_P: [f64; 3] = [2.1659, 1.4412, 0.038269];
    const LARGE_P: [f64; 4] = [1.7339, 0.93202, -0.12745, -0.010368];
    if stat > TAU_MAX {
        return 1.0;
    }
    if stat < TAU_MIN {
        return 0.0;
    }
    let z = if stat <= TAU_STAR {
        SMALL_P[0] + stat * (SMALL_P[1] + stat * SMALL_P[2])
    } else {
        LARGE_P[0] + stat * (LARGE_P[1] + stat * (LARGE_P[2] + stat * LARGE_P[3]))
    };
    standard_normal().cdf(z)
}

pub(crate) fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Kendall's tau-b with tie correction and an asymptotic two-sided p-value.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "kendall_tau: {} vs {} observations",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!(
            "kendall_tau needs at least 10 observations, got {n}"
        )));
    }
    let mut score: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            let b = (y[i] - y[j]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            score += a * b;
        }
    }
    let ties_x = tie_groups(x);
    let ties_y = tie_groups(y);
    let n0 = (n * (n - 1) / 2) as f64;
    let n1: f64 = ties_x.iter().map(|&t| (t * (t - 1) / 2) as f64).sum();
    let n2: f64 = ties_y.iter().map(|&t| (t * (t - 1) / 2) as f64).sum();
    let denom = ((n0 - n1) * (n0 - n2)).sqrt();
    if denom == 0.0 {
        return Err(Error::ZeroVariance("kendall_tau: constant input".into()));
    }
    let tau = (score as f64 / denom).clamp(-1.0, 1.0);

    let nf = n as f64;
    let sum_a = |g: &[usize], f: &dyn Fn(f64) -> f64| g.iter().map(|&t| f(t as f64)).sum::<f64>();
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = sum_a(&ties_x, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum_a(&ties_y, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = sum_a(&ties_x, &|t| t * (t - 1.0)) * sum_a(&ties_y, &|t| t * (t - 1.0));
    let v2 = sum_a(&ties_x, &|t| t * (t - 1.0) * (t - 2.0))
        * sum_a(&ties_y, &|t| t * (t - 1.0) * (t - 2.0));
    let var = (v0 - vt - vu) / 18.0
        + v1 / (2.0 * nf * (nf - 1.0))
        + v2 / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    let z = score as f64 / var.sqrt();
    let p = 2.0 * (1.0 - standard_normal().cdf(z.abs()));
    Ok((tau, p.clamp(0.0, 1.0)))
}

/// Sizes of groups of tied values (groups of size one are omitted).
pub(crate) fn tie_groups(x: &[f64]) -> Vec<usize> {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let mut out = Vec::new();
    let mut run = 1;
    for w in s.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            if run > 1 {
                out.push(run);
            }
            run = 1;
        }
    }
    if run > 1 {
        out.push(run);
    }
    out
}

/// Pairwise Kendall correlations with a significance mask (`p < alpha`).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub tau: DMatrix<f64>,
    pub pvalue: DMatrix<f64>,
    pub significant: DMatrix<bool>,
}

pub fn correlation_matrix(panel: &ReturnPanel, alpha: f64) -> Result<CorrelationMatrix> {
    let n = panel.n_series();
    if n < 2 {
        return Err(Error::InsufficientData(
            "correlation matrix needs at least two series".into(),
        ));
    }
    let cols: Vec<Vec<f64>> = (0..n).map(|i| panel.column(i)).collect();
    let mut tau = DMatrix::identity(n, n);
    let mut pvalue = DMatrix::zeros(n, n);
    let mut significant = DMatrix::from_element(n, n, true);
    for i in 0..n {
        for j in i + 1..n {
            let (t, p) = kendall_tau(&cols[i], &cols[j])?;
            tau[(i, j)] = t;
            tau[(j, i)] = t;
            pvalue[(i, j)] = p;
            pvalue[(j, i)] = p;
            significant[(i, j)] = p < alpha;
            significant[(j, i)] = p < alpha;
        }
    }
    Ok(CorrelationMatrix {
        labels: panel.labels.clone(),
        tau,
        pvalue,
        significant,
    })
}
