//! Time-domain generalized forecast-error variance decomposition and the
//! directional connectedness measures built on it.
//!
//! Conventions: `theta[(i, j)]` is the share of series `i`'s forecast-error
//! variance attributed to shocks in series `j`. Row sums of the normalized
//! matrix are one. `TO_i` is the off-diagonal column sum, `FROM_i` the
//! off-diagonal row sum. `NPDC[(i, j)] = theta[(i, j)] - theta[(j, i)]`.
//! Reported measures are in percent; `theta_tilde` stays in shares.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qvar::{vma_coefficients, QvarModel, VmaCoefficients};

pub const TOTAL_BAND: &str = "total";

/// Denominator of the total connectedness index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TciDenominator {
    /// `TCI = sum_i TO_i / n`
    #[default]
    N,
    /// `TCI = sum_i TO_i / (n - 1)`
    NMinusOne,
}

impl TciDenominator {
    fn divisor(self, n: usize) -> f64 {
        match self {
            TciDenominator::N => n as f64,
            TciDenominator::NMinusOne => (n.max(2) - 1) as f64,
        }
    }
}

/// Connectedness measures for one window, quantile and band.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectednessTable {
    /// Normalized decomposition shares (for a frequency band, shares of the
    /// whole-range row totals).
    pub theta_tilde: DMatrix<f64>,
    pub to: Vec<f64>,
    pub from: Vec<f64>,
    pub net: Vec<f64>,
    pub npdc: DMatrix<f64>,
    pub tci: f64,
    /// TCI computed from the FROM column; equals `tci` up to rounding.
    pub tci_from: f64,
    pub horizon: usize,
    pub tau: f64,
    pub band: String,
}

impl ConnectednessTable {
    pub fn n(&self) -> usize {
        self.to.len()
    }
}

fn check_sigma(sigma: &DMatrix<f64>) -> Result<()> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    for i in 0..n {
        if !(sigma[(i, i)] > 0.0) {
            return Err(Error::ZeroVariance(format!("covariance diagonal entry {i}")));
        }
    }
    Ok(())
}

/// Generalized FEVD summed over `h = 0..=horizon`.
pub fn gfevd(psi: &VmaCoefficients, sigma: &DMatrix<f64>, horizon: usize) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    if horizon > psi.h_trunc || horizon >= psi.psi.len() {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} exceeds truncation {}",
            psi.h_trunc
        )));
    }
    let n = sigma.nrows();
    let mut num = DMatrix::<f64>::zeros(n, n);
    let mut den = vec![0.0; n];
    for m in &psi.psi[..=horizon] {
        let ms = m * sigma;
        num += ms.map(|v| v * v);
        for i in 0..n {
            // (Psi Sigma Psi')_ii = row_i(Psi Sigma) . row_i(Psi)
            den[i] += ms.row(i).dot(&m.row(i));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| num[(i, j)] / sigma[(j, j)] / den[i]))
}

/// Divides every row by its sum.
pub fn normalize_rows(theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = theta.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let s = row.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Malformed(format!("row {i} sums to {s}")));
        }
        row /= s;
    }
    Ok(out)
}

/// Directional measures from a normalized decomposition matrix.
pub fn measures(theta_tilde: &DMatrix<f64>) -> Result<ConnectednessTable> {
    measures_with(theta_tilde, TciDenominator::N, 0, f64::NAN, TOTAL_BAND)
}

/// Like [`measures`], with the TCI denominator and labels spelled out.
pub fn measures_with(
    theta_tilde: &DMatrix<f64>,
    denominator: TciDenominator,
    horizon: usize,
    tau: f64,
    band: &str,
) -> Result<ConnectednessTable> {
    let n = theta_tilde.nrows();
    if n == 0 || theta_tilde.ncols() != n {
        return Err(Error::Malformed("matrix must be square and nonempty".into()));
    }
    for (i, row) in theta_tilde.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < -1e-12) {
            return Err(Error::Malformed(format!("row {i} has negative or non-finite entries")));
        }
        if (row.sum() - 1.0).abs() > 1e-8 {
            return Err(Error::Malformed(format!("row {i} sums to {}", row.sum())));
        }
    }
    Ok(raw_measures(theta_tilde, denominator, horizon, tau, band))
}

/// Measures without the row-stochastic check; band matrices are shares of
/// the whole-range totals and do not sum to one individually.
pub(crate) fn raw_measures(
    theta: &DMatrix<f64>,
    denominator: TciDenominator,
    horizon: usize,
    tau: f64,
    band: &str,
) -> ConnectednessTable {
    let n = theta.nrows();
    let mut to = vec![0.0; n];
    let mut from = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                from[i] += theta[(i, j)];
                to[j] += theta[(i, j)];
            }
        }
    }
    let to: Vec<f64> = to.into_iter().map(|v| 100.0 * v).collect();
    let from: Vec<f64> = from.into_iter().map(|v| 100.0 * v).collect();
    let net = to.iter().zip(&from).map(|(t, f)| t - f).collect();
    let npdc = DMatrix::from_fn(n, n, |i, j| 100.0 * (theta[(i, j)] - theta[(j, i)]));
    let d = denominator.divisor(n);
    ConnectednessTable {
        theta_tilde: theta.clone(),
        tci: to.iter().sum::<f64>() / d,
        tci_from: from.iter().sum::<f64>() / d,
        to,
        from,
        net,
        npdc,
        horizon,
        tau,
        band: band.to_string(),
    }
}

/// Full time-domain table for a fitted model.
pub fn time_connectedness(
    model: &QvarModel,
    horizon: usize,
    denominator: TciDenominator,
) -> Result<ConnectednessTable> {
    let psi = vma_coefficients(model, horizon.max(1))?;
    let theta = normalize_rows(&gfevd(&psi, &model.sigma, horizon)?)?;
    measures_with(&theta, denominator, horizon, model.tau, TOTAL_BAND)
}
