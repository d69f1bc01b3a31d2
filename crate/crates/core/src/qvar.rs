//! Quantile VAR estimation, lag selection and the moving-average
//! representation that feeds the variance decompositions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{companion_spectral_radius, symmetrize};
use crate::panel::ReturnPanel;
use crate::quantreg::{QuantileDesign, QuantileFit};

/// How the residual covariance `Sigma(tau)` is formed from quantile residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    /// Raw second moment `U'U / (T - p)`. Quantile residuals are not centred,
    /// so their location offset enters the covariance.
    #[default]
    Uncentered,
    /// Mean-corrected sample covariance with denominator `T - p`.
    Centered,
}

/// Information criterion used by [`select_lag_bic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BicVariant {
    /// Gaussian OLS-VAR criterion `ln det(Sigma_ols) + ln(T*)/T* (n^2 p + n)`.
    #[default]
    Ols,
    /// `ln(sum_i mean check loss_i) + ln(T*)/(2 T*) (n^2 p + n)` at the median.
    CheckLoss,
}

/// A fitted QVAR(p) at one quantile level.
#[derive(Debug, Clone, PartialEq)]
pub struct QvarModel {
    pub tau: f64,
    pub p: usize,
    /// Intercepts `mu(tau)`.
    pub mu: DVector<f64>,
    /// Lag matrices `Phi_1 .. Phi_p`; row `i` holds equation `i`.
    pub phi: Vec<DMatrix<f64>>,
    /// `(T - p) x n` residuals in time order.
    pub residuals: DMatrix<f64>,
    /// Residual covariance `Sigma(tau)`, symmetric.
    pub sigma: DMatrix<f64>,
    /// Spectral radius of the companion matrix is at least one.
    pub explosive: bool,
}

impl QvarModel {
    /// Builds a model directly from coefficients, e.g. for simulation or
    /// for feeding known parameters through the decompositions.
    pub fn from_parts(phi: Vec<DMatrix<f64>>, sigma: DMatrix<f64>, tau: f64) -> Result<Self> {
        let n = sigma.nrows();
        if sigma.ncols() != n || phi.iter().any(|m| m.shape() != (n, n)) {
            return Err(Error::DimensionMismatch(
                "lag matrices and covariance must all be n x n".into(),
            ));
        }
        let explosive = companion_spectral_radius(&phi) >= 1.0;
        Ok(Self {
            tau,
            p: phi.len(),
            mu: DVector::zeros(n),
            phi,
            residuals: DMatrix::zeros(0, n),
            sigma: symmetrize(&sigma),
            explosive,
        })
    }

    pub fn n(&self) -> usize {
        self.sigma.nrows()
    }
}

/// Truncated moving-average coefficients `Psi_0 .. Psi_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct VmaCoefficients {
    pub psi: Vec<DMatrix<f64>>,
    pub h_trunc: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QvarOptions {
    pub covariance: CovarianceKind,
}

impl Default for QvarOptions {
    fn default() -> Self {
        Self {
            covariance: CovarianceKind::Uncentered,
        }
    }
}

/// `[1, y_{t-1}', ..., y_{t-p}']` for `t = skip .. T`, where `skip >= p`.
pub fn lag_design(values: &DMatrix<f64>, p: usize, skip: usize) -> DMatrix<f64> {
    let (t, n) = values.shape();
    DMatrix::from_fn(t - skip, 1 + n * p, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / n + 1;
            let series = (c - 1) % n;
            values[(r + skip - lag, series)]
        }
    })
}

fn check_sample(t: usize, n: usize, p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidArgument("lag order must be at least 1".into()));
    }
    if t <= p || t - p <= n * p + 1 {
        return Err(Error::InsufficientData(format!(
            "QVAR({p}) with {n} series needs more than {} observations, got {t}",
            n * p + 1 + p
        )));
    }
    Ok(())
}

pub fn fit_qvar(panel: &ReturnPanel, p: usize, tau: f64) -> Result<QvarModel> {
    fit_qvar_with(&panel.values, p, tau, &QvarOptions::default())
}

/// Fits each equation by quantile regression on a shared lagged design.
pub fn fit_qvar_with(
    values: &DMatrix<f64>,
    p: usize,
    tau: f64,
    opts: &QvarOptions,
) -> Result<QvarModel> {
    fit_qvar_taus(values, p, &[tau], opts)?
        .pop()
        .expect("one model per level")
}

/// Fits one model per quantile level, sharing the lagged design. Each level
/// succeeds or fails independently.
pub fn fit_qvar_taus(
    values: &DMatrix<f64>,
    p: usize,
    taus: &[f64],
    opts: &QvarOptions,
) -> Result<Vec<Result<QvarModel>>> {
    let (t, n) = values.shape();
    check_sample(t, n, p)?;
    let design = QuantileDesign::new(&lag_design(values, p, p))?;
    let responses: Vec<Vec<f64>> = (0..n)
        .map(|i| (p..t).map(|r| values[(r, i)]).collect())
        .collect();
    Ok(taus
        .par_iter()
        .map(|&tau| {
            let fits = (0..n)
                .into_par_iter()
                .map(|i| {
                    let fit = design.fit(&responses[i], tau)?;
                    if !fit.converged {
                        return Err(Error::NotConverged {
                            equation: i,
                            iterations: fit.iterations,
                        });
                    }
                    Ok(fit)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(assemble(fits, n, p, tau, opts.covariance))
        })
        .collect())
}

fn assemble(fits: Vec<QuantileFit>, n: usize, p: usize, tau: f64, cov: CovarianceKind) -> QvarModel {
    let rows = fits[0].residuals.len();
    let mu = DVector::from_fn(n, |i, _| fits[i].coefficients[0]);
    let phi: Vec<DMatrix<f64>> = (0..p)
        .map(|lag| DMatrix::from_fn(n, n, |i, j| fits[i].coefficients[1 + lag * n + j]))
        .collect();
    let residuals = DMatrix::from_fn(rows, n, |r, i| fits[i].residuals[r]);
    let sigma = residual_covariance(&residuals, cov);
    let explosive = companion_spectral_radius(&phi) >= 1.0;
    QvarModel {
        tau,
        p,
        mu,
        phi,
        residuals,
        sigma,
        explosive,
    }
}

pub fn residual_covariance(residuals: &DMatrix<f64>, kind: CovarianceKind) -> DMatrix<f64> {
    let rows = residuals.nrows() as f64;
    let sigma = match kind {
        CovarianceKind::Uncentered => residuals.transpose() * residuals / rows,
        CovarianceKind::Centered => {
            let means = residuals.row_mean();
            let mut c = residuals.clone();
            for mut row in c.row_iter_mut() {
                row -= &means;
            }
            c.transpose() * &c / rows
        }
    };
    symmetrize(&sigma)
}

/// Chooses the lag order in `1..=p_max` minimizing the configured BIC, with
/// every candidate scored on the sample trimmed to `p_max`.
pub fn select_lag_bic(panel: &ReturnPanel, p_max: usize, variant: BicVariant) -> Result<usize> {
    let values = &panel.values;
    let (t, n) = values.shape();
    if p_max == 0 {
        return Err(Error::InvalidArgument("p_max must be at least 1".into()));
    }
    check_sample(t, n, p_max)?;
    if p_max == 1 {
        return Ok(1);
    }
    let t_star = (t - p_max) as f64;
    let mut best = (f64::INFINITY, 1);
    for p in 1..=p_max {
        let x = lag_design(values, p, p_max);
        let params = (n * n * p + n) as f64;
        let score = match variant {
            BicVariant::Ols => {
                let y = values.rows(p_max, t - p_max).into_owned();
                let xtx = x.transpose() * &x;
                let chol = xtx
                    .cholesky()
                    .ok_or_else(|| Error::Singular("OLS VAR design".into()))?;
                let coef = chol.solve(&(x.transpose() * &y));
                let resid = &y - &x * coef;
                let sigma = resid.transpose() * &resid / t_star;
                let det = sigma.determinant();
                if det <= 0.0 {
                    return Err(Error::Singular("OLS residual covariance".into()));
                }
                det.ln() + t_star.ln() / t_star * params
            }
            BicVariant::CheckLoss => {
                let design = QuantileDesign::new(&x)?;
                let mut total = 0.0;
                for i in 0..n {
                    let y: Vec<f64> = (p_max..t).map(|r| values[(r, i)]).collect();
                    total += design.fit(&y, 0.5)?.objective / t_star;
                }
                total.ln() + t_star.ln() / (2.0 * t_star) * params
            }
        };
        if score < best.0 {
            best = (score, p);
        }
    }
    Ok(best.1)
}

/// `Psi_0 = I`, `Psi_h = sum_{j=1}^{min(h,p)} Phi_j Psi_{h-j}`.
pub fn vma_from_phi(phi: &[DMatrix<f64>], n: usize, h_trunc: usize) -> VmaCoefficients {
    let mut psi: Vec<DMatrix<f64>> = Vec::with_capacity(h_trunc + 1);
    psi.push(DMatrix::identity(n, n));
    for h in 1..=h_trunc {
        let mut acc = DMatrix::zeros(n, n);
        for j in 1..=h.min(phi.len()) {
            acc += &phi[j - 1] * &psi[h - j];
        }
        psi.push(acc);
    }
    VmaCoefficients { psi, h_trunc }
}

pub fn vma_coefficients(model: &QvarModel, h_trunc: usize) -> Result<VmaCoefficients> {
    if h_trunc == 0 {
        return Err(Error::InvalidArgument("truncation must be at least 1".into()));
    }
    Ok(vma_from_phi(&model.phi, model.n(), h_trunc))
}
