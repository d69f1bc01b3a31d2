//! Synthetic data generators used by the `simulate` subcommand, examples and
//! tests. All generators are driven by a caller-supplied seeded RNG.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const BURN_IN: usize = 200;

/// Innovation law; all variants have unit variance before scaling by the
/// Cholesky factor of the covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Innovations {
    Gaussian,
    /// Student-t with the given degrees of freedom (> 2), rescaled.
    StudentT(f64),
}

impl Innovations {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        match *self {
            Innovations::Gaussian => z,
            Innovations::StudentT(df) => {
                let chi: f64 = ChiSquared::new(df).expect("df > 0").sample(rng);
                z / (chi / df).sqrt() / (df / (df - 2.0)).sqrt()
            }
        }
    }
}

/// Simulates `t` observations of a zero-mean VAR with lag matrices `phi` and
/// innovation covariance `sigma`, after a burn-in.
pub fn simulate_var<R: Rng + ?Sized>(
    rng: &mut R,
    phi: &[DMatrix<f64>],
    sigma: &DMatrix<f64>,
    innovations: Innovations,
    t: usize,
) -> DMatrix<f64> {
    let n = sigma.nrows();
    let chol = sigma
        .clone()
        .cholesky()
        .expect("innovation covariance must be positive definite")
        .unpack();
    let total = t + BURN_IN;
    let mut y = DMatrix::zeros(total, n);
    for r in 0..total {
        let z = DVector::from_fn(n, |_, _| innovations.draw(rng));
        let mut row = &chol * z;
        for (j, m) in phi.iter().enumerate() {
            if r > j {
                let lagged = y.row(r - j - 1).transpose();
                row += m * lagged;
            }
        }
        y.set_row(r, &row.transpose());
    }
    y.rows(BURN_IN, t).into_owned()
}

/// `y_it = loading * f_t + e_it` with a common heavy-tailed factor `f` and
/// independent Gaussian idiosyncratic noise, plus optional own-lag persistence.
pub fn common_shock_panel<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    t: usize,
    loading: f64,
    factor: Innovations,
    persistence: f64,
) -> DMatrix<f64> {
    let total = t + BURN_IN;
    let mut y = DMatrix::zeros(total, n);
    for r in 0..total {
        let f = factor.draw(rng);
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            let prev = if r > 0 { y[(r - 1, i)] } else { 0.0 };
            y[(r, i)] = persistence * prev + loading * f + e;
        }
    }
    y.rows(BURN_IN, t).into_owned()
}

/// Random geometric-walk prices `p_t = p_{t-1} exp(r_t)` from a return matrix.
pub fn prices_from_returns(returns: &DMatrix<f64>, start: f64) -> DMatrix<f64> {
    let (t, n) = returns.shape();
    let mut p = DMatrix::from_element(t + 1, n, start);
    for r in 0..t {
        for c in 0..n {
            p[(r + 1, c)] = p[(r, c)] * returns[(r, c)].exp();
        }
    }
    p
}
