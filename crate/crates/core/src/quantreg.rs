//! Linear quantile regression by pinball-loss minimization.
//!
//! The problem `min_b sum_t rho_tau(y_t - x_t' b)` is solved through its
//! bounded dual linear program
//!
//! ```text
//! max  y'a   s.t.  X'a = (1 - tau) X'1,  0 <= a <= 1
//! ```
//!
//! with a Frisch-Newton primal-dual interior-point method using Mehrotra
//! predictor-corrector steps. The interior solution is then snapped to the
//! nearest basic solution (an exact fit through `k` observations), which is
//! kept when it does not increase the loss. A vertex whose dual multipliers
//! lie inside `[tau - 1, tau]` is a certified optimum.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::condition_number;

pub const MAX_ITERATIONS: usize = 200;
pub const GAP_TOLERANCE: f64 = 1e-8;
pub const CONDITION_LIMIT: f64 = 1e10;
const STEP_DAMPING: f64 = 0.99995;

/// Result of a single quantile regression.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFit {
    pub tau: f64,
    /// Intercept first when the design's first column is ones.
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Pinball loss at `coefficients`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `rho_tau(u) = u (tau - 1{u < 0})`.
#[inline]
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

pub fn pinball_loss(residuals: &[f64], tau: f64) -> f64 {
    residuals.iter().map(|&u| check_loss(u, tau)).sum()
}

/// A validated design matrix that can be reused across responses and
/// quantile levels.
#[derive(Debug, Clone)]
pub struct QuantileDesign {
    rows: usize,
    cols: usize,
    /// Row-major copy of the design.
    data: Vec<f64>,
    /// Cholesky factor of `X'X`, used for the least-squares starting point.
    gram_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    col_sums: Vec<f64>,
}

impl QuantileDesign {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = x.shape();
        if cols == 0 || rows <= cols {
            return Err(Error::InsufficientData(format!(
                "quantile regression needs more observations ({rows}) than coefficients ({cols})"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        let condition = condition_number(x);
        if !(condition <= CONDITION_LIMIT) {
            return Err(Error::RankDeficient { condition });
        }
        let gram = x.transpose() * x;
        let gram_chol = gram
            .cholesky()
            .ok_or(Error::RankDeficient { condition })?;
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(x[(r, c)]);
            }
        }
        let col_sums = (0..cols).map(|c| x.column(c).sum()).collect();
        Ok(Self {
            rows,
            cols,
            data,
            gram_chol,
            col_sums,
        })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    /// `X b`
    fn mul(&self, b: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|t| self.row(t).iter().zip(b).map(|(x, b)| x * b).sum())
            .collect()
    }

    /// `X' v`
    fn tmul(&self, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.cols);
        for t in 0..self.rows {
            let vt = v[t];
            for (o, x) in out.iter_mut().zip(self.row(t)) {
                *o += x * vt;
            }
        }
        out
    }

    /// `X' diag(q) X`
    fn weighted_gram(&self, q: &[f64]) -> DMatrix<f64> {
        let k = self.cols;
        let mut m = vec![0.0; k * k];
        for t in 0..self.rows {
            let row = self.row(t);
            let qt = q[t];
            for i in 0..k {
                let a = row[i] * qt;
                let dst = &mut m[i * k..i * k + i + 1];
                for (d, x) in dst.iter_mut().zip(&row[..=i]) {
                    *d += a * x;
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                m[j * k + i] = m[i * k + j];
            }
        }
        DMatrix::from_row_slice(k, k, &m)
    }

    /// Fits the `tau` conditional quantile of `response`.
    pub fn fit(&self, response: &[f64], tau: f64) -> Result<QuantileFit> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
        }
        if response.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "response has {} rows, design has {}",
                response.len(),
                self.rows
            )));
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response"));
        }

        let (beta_ipm, iterations, gap_ok) = self.interior_point(response, tau);
        let ipm_loss = self.loss(response, &beta_ipm, tau);

        let mut beta = beta_ipm;
        let mut certified = false;
        if let Some((vertex, basis)) = self.nearest_vertex(response, &beta) {
            let vertex_loss = self.loss(response, &vertex, tau);
            if vertex_loss <= ipm_loss + 1e-12 * (1.0 + ipm_loss.abs()) {
                certified = self.vertex_is_optimal(response, &vertex, &basis, tau);
                beta = vertex;
            }
        }

        let fitted = self.mul(&beta);
        let residuals = DVector::from_iterator(
            self.rows,
            response.iter().zip(&fitted).map(|(y, f)| y - f),
        );
        let objective = pinball_loss(residuals.as_slice(), tau);
        Ok(QuantileFit {
            tau,
            coefficients: DVector::from_vec(beta),
            residuals,
            objective,
            iterations,
            converged: gap_ok || certified,
        })
    }

    fn loss(&self, response: &[f64], beta: &[f64], tau: f64) -> f64 {
        self.mul(beta)
            .iter()
            .zip(response)
            .map(|(f, y)| check_loss(y - f, tau))
            .sum()
    }

    /// Frisch-Newton iterations. Returns `(beta, iterations, gap_converged)`.
    fn interior_point(&self, response: &[f64], tau: f64) -> (Vec<f64>, usize, bool) {
        let n = self.rows;
        let c: Vec<f64> = response.iter().map(|v| -v).collect();
        let b = DVector::from_iterator(self.cols, self.col_sums.iter().map(|s| (1.0 - tau) * s));

        let mut x = vec![1.0 - tau; n];
        let mut s = vec![tau; n];
        let mut y = self.gram_chol.solve(&self.tmul(&c));
        let xy = self.mul(y.as_slice());
        let mut z = vec![0.0; n];
        let mut w = vec![0.0; n];
        for t in 0..n {
            let mut r = c[t] - xy[t];
            if r == 0.0 {
                r = 0.001;
            }
            z[t] = r.max(0.0);
            w[t] = z[t] - r;
        }

        let duality_gap = |x: &[f64], w: &[f64], y: &DVector<f64>| -> (f64, f64) {
            let cx: f64 = c.iter().zip(x).map(|(a, b)| a * b).sum();
            let uw: f64 = w.iter().sum();
            let by = b.dot(y);
            (cx - by + uw, cx.abs())
        };

        let mut iterations = 0;
        let (mut gap, mut scale) = duality_gap(&x, &w, &y);
        let mut q = vec![0.0; n];
        let mut r = vec![0.0; n];
        let mut dx = vec![0.0; n];
        let mut dz = vec![0.0; n];
        let mut dw = vec![0.0; n];
        while gap > GAP_TOLERANCE * (1.0 + scale) && iterations < MAX_ITERATIONS {
            iterations += 1;

            // affine scaling (predictor) direction
            for t in 0..n {
                q[t] = 1.0 / (z[t] / x[t] + w[t] / s[t]);
                r[t] = z[t] - w[t];
            }
            let normal = self.weighted_gram(&q);
            let Some(chol) = normal.cholesky() else { break };
            let qr: Vec<f64> = q.iter().zip(&r).map(|(a, b)| a * b).collect();
            let dy = chol.solve(&self.tmul(&qr));
            let xdy = self.mul(dy.as_slice());
            for t in 0..n {
                dx[t] = q[t] * (xdy[t] - r[t]);
                dz[t] = -z[t] * (1.0 + dx[t] / x[t]);
                dw[t] = -w[t] * (1.0 - dx[t] / s[t]);
            }
            let (mut fp, mut fd) = step_lengths(&x, &s, &z, &w, &dx, &dz, &dw);

            let mut dy = dy;
            if fp.min(fd) < 1.0 {
                // Mehrotra corrector with centering
                let mut mu = 0.0;
                let mut g = 0.0;
                for t in 0..n {
                    mu += z[t] * x[t] + w[t] * s[t];
                    g += (z[t] + fd * dz[t]) * (x[t] + fp * dx[t])
                        + (w[t] + fd * dw[t]) * (s[t] - fp * dx[t]);
                }
                let sigma = (g / mu).powi(3);
                let mu = sigma * mu / (2.0 * n as f64);

                // second-order terms from the affine direction
                let mut rhs = vec![0.0; n];
                let mut dxdz = vec![0.0; n];
                let mut dsdw = vec![0.0; n];
                for t in 0..n {
                    let ds = -dx[t];
                    dxdz[t] = dx[t] * dz[t] / x[t];
                    dsdw[t] = ds * dw[t] / s[t];
                    let xi = mu * (1.0 / x[t] - 1.0 / s[t]);
                    rhs[t] = q[t] * (r[t] - xi + dxdz[t] - dsdw[t]);
                }
                dy = chol.solve(&self.tmul(&rhs));
                let xdy = self.mul(dy.as_slice());
                for t in 0..n {
                    let xi = mu * (1.0 / x[t] - 1.0 / s[t]);
                    dx[t] = q[t] * (xdy[t] - r[t] + xi - dxdz[t] + dsdw[t]);
                    dz[t] = mu / x[t] - z[t] - dxdz[t] - z[t] * dx[t] / x[t];
                    dw[t] = mu / s[t] - w[t] - dsdw[t] + w[t] * dx[t] / s[t];
                }
                (fp, fd) = step_lengths(&x, &s, &z, &w, &dx, &dz, &dw);
            }

            for t in 0..n {
                x[t] += fp * dx[t];
                s[t] -= fp * dx[t];
                z[t] += fd * dz[t];
                w[t] += fd * dw[t];
            }
            y += dy * fd;
            (gap, scale) = duality_gap(&x, &w, &y);
            if !gap.is_finite() {
                break;
            }
        }
        let beta: Vec<f64> = y.iter().map(|v| -v).collect();
        let ok = gap.is_finite() && gap <= GAP_TOLERANCE * (1.0 + scale);
        (beta, iterations, ok)
    }

    /// Exact fit through the `k` linearly independent observations with the
    /// smallest absolute residuals at `beta`.
    fn nearest_vertex(&self, response: &[f64], beta: &[f64]) -> Option<(Vec<f64>, Vec<usize>)> {
        let k = self.cols;
        let fitted = self.mul(beta);
        let mut order: Vec<usize> = (0..self.rows).collect();
        order.sort_by(|&a, &b| {
            let ra = (response[a] - fitted[a]).abs();
            let rb = (response[b] - fitted[b]).abs();
            ra.total_cmp(&rb).then(a.cmp(&b))
        });

        // greedy Gram-Schmidt selection of independent rows
        let mut basis = Vec::with_capacity(k);
        let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(k);
        for &t in &order {
            let row = self.row(t);
            let norm0 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm0 == 0.0 {
                continue;
            }
            let mut v = row.to_vec();
            for e in &ortho {
                let d: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
                for (vi, ei) in v.iter_mut().zip(e) {
                    *vi -= d * ei;
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 * norm0 {
                v.iter_mut().for_each(|a| *a /= norm);
                ortho.push(v);
                basis.push(t);
                if basis.len() == k {
                    break;
                }
            }
        }
        if basis.len() < k {
            return None;
        }
        let xb = DMatrix::from_fn(k, k, |i, j| self.row(basis[i])[j]);
        let yb = DVector::from_fn(k, |i, _| response[basis[i]]);
        let sol = xb.lu().solve(&yb)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((sol.as_slice().to_vec(), basis))
    }

    /// Checks the subgradient optimality condition at a basic solution.
    fn vertex_is_optimal(&self, response: &[f64], beta: &[f64], basis: &[usize], tau: f64) -> bool {
        let k = self.cols;
        let fitted = self.mul(beta);
        let scale = response.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut in_basis = vec![false; self.rows];
        for &t in basis {
            in_basis[t] = true;
        }
        let mut g = DVector::zeros(k);
        for t in 0..self.rows {
            if in_basis[t] {
                continue;
            }
            let res = response[t] - fitted[t];
            if res.abs() <= 1e-12 * scale {
                // degenerate vertex: leave it to the duality-gap criterion
                return false;
            }
            let psi = if res < 0.0 { tau - 1.0 } else { tau };
            for (gi, x) in g.iter_mut().zip(self.row(t)) {
                *gi += x * psi;
            }
        }
        let xbt = DMatrix::from_fn(k, k, |i, j| self.row(basis[j])[i]);
        let Some(a) = xbt.lu().solve(&(-g)) else {
            return false;
        };
        let eps = 1e-9;
        a.iter().all(|&v| v >= tau - 1.0 - eps && v <= tau + eps)
    }
}

fn step_lengths(
    x: &[f64],
    s: &[f64],
    z: &[f64],
    w: &[f64],
    dx: &[f64],
    dz: &[f64],
    dw: &[f64],
) -> (f64, f64) {
    let mut fp = f64::INFINITY;
    let mut fd = f64::INFINITY;
    for t in 0..x.len() {
        if dx[t] < 0.0 {
            fp = fp.min(-x[t] / dx[t]);
        }
        if dx[t] > 0.0 {
            fp = fp.min(s[t] / dx[t]);
        }
        if dz[t] < 0.0 {
            fd = fd.min(-z[t] / dz[t]);
        }
        if dw[t] < 0.0 {
            fd = fd.min(-w[t] / dw[t]);
        }
    }
    ((STEP_DAMPING * fp).min(1.0), (STEP_DAMPING * fd).min(1.0))
}

/// One-shot convenience wrapper around [`QuantileDesign`].
pub fn fit_quantile(design: &DMatrix<f64>, response: &DVector<f64>, tau: f64) -> Result<QuantileFit> {
    QuantileDesign::new(design)?.fit(response.as_slice(), tau)
}
