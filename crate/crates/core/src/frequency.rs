//! Frequency-domain decomposition of the generalized FEVD into bands of
//! angular frequency.
//!
//! The spectrum is sampled on `N` midpoints `w_k = (k - 1/2) pi / N` of
//! `(0, pi]`, each carrying weight `1/N`. Mirrored to `(-pi, pi)` these are
//! `2N` equally spaced nodes, so for any moving-average truncation `H < 2N`
//! the weighted sum of `|sum_h a_h e^{-i w h}|^2` equals `sum_h a_h^2`
//! exactly. Consequently the whole-range aggregate reproduces the time-domain
//! decomposition at horizon `H`, and band shares normalized by whole-range
//! row totals add up to the time-domain shares.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::connectedness::{
    gfevd, normalize_rows, raw_measures, ConnectednessTable, TciDenominator, TOTAL_BAND,
};
use crate::error::{Error, Result};
use crate::qvar::{vma_coefficients, QvarModel, VmaCoefficients};

pub const DEFAULT_GRID_SIZE: usize = 500;

/// A half-open interval `(a, b]` of angular frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub label: String,
    pub a: f64,
    pub b: f64,
    pub horizon_note: String,
}

impl FrequencyBand {
    pub fn new(label: &str, a: f64, b: f64) -> Result<Self> {
        if !(0.0 <= a && a < b && b <= PI + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "band {label:?} needs 0 <= a < b <= pi, got ({a}, {b})"
            )));
        }
        // period in days is 2 pi / w
        let note = if a == 0.0 {
            format!("> {:.0} days", 2.0 * PI / b)
        } else {
            format!("{:.0}-{:.0} days", 2.0 * PI / b, 2.0 * PI / a)
        };
        Ok(Self {
            label: label.to_string(),
            a,
            b: b.min(PI),
            horizon_note: note,
        })
    }

    /// The whole range `(0, pi]`.
    pub fn full() -> Self {
        Self::new("all", 0.0, PI).expect("valid band")
    }

    #[inline]
    pub fn contains(&self, omega: f64) -> bool {
        omega > self.a && omega <= self.b
    }

    /// Short (1-5 days), medium (5-20 days) and long (> 20 days) horizons.
    pub fn defaults() -> Vec<Self> {
        let mut short = Self::new("short", PI / 5.0, PI).expect("valid band");
        short.horizon_note = "1-5 days".into();
        let mut medium = Self::new("medium", PI / 20.0, PI / 5.0).expect("valid band");
        medium.horizon_note = "5-20 days".into();
        let mut long = Self::new("long", 0.0, PI / 20.0).expect("valid band");
        long.horizon_note = "> 20 days".into();
        vec![short, medium, long]
    }
}

/// Midpoint grid of `size` frequencies on `(0, pi]`.
pub fn frequency_grid(size: usize) -> Vec<f64> {
    (1..=size)
        .map(|k| (k as f64 - 0.5) * PI / size as f64)
        .collect()
}

/// Unnormalized decomposition terms at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSlice {
    pub omega: f64,
    /// `|(Psi(e^{-iw}) Sigma)_ij|^2 / sigma_jj`
    pub numerator: DMatrix<f64>,
    /// `(Psi(e^{-iw}) Sigma Psi*(e^{iw}))_ii`
    pub denominator: DVector<f64>,
}

impl SpectralSlice {
    /// `theta_ij(w)`: the numerator over this frequency's own denominator.
    pub fn theta_raw(&self) -> DMatrix<f64> {
        let n = self.numerator.nrows();
        DMatrix::from_fn(n, n, |i, j| self.numerator[(i, j)] / self.denominator[i])
    }

    /// Row-normalized within-frequency shares. Diagnostic only: these do not
    /// integrate to the time-domain decomposition.
    pub fn within_frequency(&self) -> Result<DMatrix<f64>> {
        normalize_rows(&self.theta_raw())
    }
}

/// `Psi(e^{-iw}) = sum_h Psi_h e^{-iwh}`.
pub fn frequency_response(psi: &VmaCoefficients, omega: f64) -> DMatrix<Complex64> {
    let n = psi.psi[0].nrows();
    let mut out = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (h, m) in psi.psi.iter().enumerate() {
        let e = Complex64::from_polar(1.0, -omega * h as f64);
        for (o, v) in out.iter_mut().zip(m.iter()) {
            *o += e * v;
        }
    }
    out
}

pub fn spectral_gfevd(
    psi: &VmaCoefficients,
    sigma: &DMatrix<f64>,
    omega_grid: &[f64],
) -> Result<Vec<SpectralSlice>> {
    let n = sigma.nrows();
    for i in 0..n {
        if !(sigma[(i, i)] > 0.0) {
            return Err(Error::ZeroVariance(format!("covariance diagonal entry {i}")));
        }
    }
    for w in omega_grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidArgument("frequency grid must increase".into()));
        }
    }
    if omega_grid
        .iter()
        .any(|w| !(0.0..=PI + 1e-12).contains(w))
    {
        return Err(Error::InvalidArgument("frequencies must lie in [0, pi]".into()));
    }

    let mut re = DMatrix::<f64>::zeros(n, n);
    let mut im = DMatrix::<f64>::zeros(n, n);
    let slices = omega_grid
        .iter()
        .map(|&omega| {
            re.fill(0.0);
            im.fill(0.0);
            for (h, m) in psi.psi.iter().enumerate() {
                let (s, c) = (omega * h as f64).sin_cos();
                re.zip_apply(m, |r, v| *r += c * v);
                im.zip_apply(m, |r, v| *r -= s * v);
            }
            let re_s = &re * sigma;
            let im_s = &im * sigma;
            let numerator = DMatrix::from_fn(n, n, |i, j| {
                (re_s[(i, j)].powi(2) + im_s[(i, j)].powi(2)) / sigma[(j, j)]
            });
            let denominator = DVector::from_fn(n, |i, _| {
                re_s.row(i).dot(&re.row(i)) + im_s.row(i).dot(&im.row(i))
            });
            SpectralSlice {
                omega,
                numerator,
                denominator,
            }
        })
        .collect();
    Ok(slices)
}

/// Raw band decompositions plus the whole-range aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct BandAggregates {
    pub bands: Vec<FrequencyBand>,
    /// One raw `theta(d)` per band, in `bands` order.
    pub theta: Vec<DMatrix<f64>>,
    /// `sum_d theta(d)`.
    pub whole: DMatrix<f64>,
}

/// Sums slice numerators over each band with equal weights and divides by
/// the whole-range denominator. Each slice must fall into exactly one band.
pub fn band_aggregate(slices: &[SpectralSlice], bands: &[FrequencyBand]) -> Result<BandAggregates> {
    let first = slices
        .first()
        .ok_or_else(|| Error::InvalidArgument("no spectral slices".into()))?;
    let n = first.numerator.nrows();
    let weight = 1.0 / slices.len() as f64;

    let mut den = DVector::<f64>::zeros(n);
    for s in slices {
        den += &s.denominator * weight;
    }
    let mut sums = vec![DMatrix::<f64>::zeros(n, n); bands.len()];
    let mut counts = vec![0usize; bands.len()];
    for s in slices {
        let mut hit = None;
        for (b, band) in bands.iter().enumerate() {
            if band.contains(s.omega) {
                if hit.is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "bands overlap at frequency {}",
                        s.omega
                    )));
                }
                hit = Some(b);
            }
        }
        let b = hit.ok_or_else(|| {
            Error::InvalidArgument(format!("frequency {} is not covered by any band", s.omega))
        })?;
        sums[b] += &s.numerator * weight;
        counts[b] += 1;
    }
    for (band, c) in bands.iter().zip(&counts) {
        if *c == 0 {
            return Err(Error::EmptyBand(band.label.clone()));
        }
    }
    let theta: Vec<DMatrix<f64>> = sums
        .into_iter()
        .map(|m| DMatrix::from_fn(n, n, |i, j| m[(i, j)] / den[i]))
        .collect();
    let mut whole = DMatrix::zeros(n, n);
    for m in &theta {
        whole += m;
    }
    Ok(BandAggregates {
        bands: bands.to_vec(),
        theta,
        whole,
    })
}

/// Per-band tables. Band shares are normalized by the whole-range row sums,
/// so summing any measure across a partition reproduces the total.
pub fn band_measures(
    agg: &BandAggregates,
    denominator: TciDenominator,
    horizon: usize,
    tau: f64,
) -> Result<Vec<ConnectednessTable>> {
    let n = agg.whole.nrows();
    let row_sums: Vec<f64> = (0..n).map(|i| agg.whole.row(i).sum()).collect();
    if let Some(i) = row_sums.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Malformed(format!("whole-range row {i} sums to zero")));
    }
    Ok(agg
        .bands
        .iter()
        .zip(&agg.theta)
        .map(|(band, th)| {
            let shares = DMatrix::from_fn(n, n, |i, j| th[(i, j)] / row_sums[i]);
            raw_measures(&shares, denominator, horizon, tau, &band.label)
        })
        .collect())
}

/// Time-domain table plus one table per band for a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTables {
    pub total: ConnectednessTable,
    pub bands: Vec<ConnectednessTable>,
}

/// Runs the full decomposition with the moving average truncated at the
/// forecast horizon.
pub fn frequency_connectedness(
    model: &QvarModel,
    horizon: usize,
    bands: &[FrequencyBand],
    grid_size: usize,
    denominator: TciDenominator,
) -> Result<FrequencyTables> {
    if horizon >= 2 * grid_size {
        return Err(Error::InvalidArgument(format!(
            "grid of {grid_size} points is too coarse for horizon {horizon}"
        )));
    }
    let psi = vma_coefficients(model, horizon.max(1))?;
    let psi = VmaCoefficients {
        psi: psi.psi[..=horizon].to_vec(),
        h_trunc: horizon,
    };
    let theta = normalize_rows(&gfevd(&psi, &model.sigma, horizon)?)?;
    let total = raw_measures(&theta, denominator, horizon, model.tau, TOTAL_BAND);
    let slices = spectral_gfevd(&psi, &model.sigma, &frequency_grid(grid_size))?;
    let agg = band_aggregate(&slices, bands)?;
    let bands = band_measures(&agg, denominator, horizon, model.tau)?;
    Ok(FrequencyTables { total, bands })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qvar::vma_from_phi;

    fn oracle_phi() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.3])
    }

    #[test]
    fn response_at_zero_and_without_dynamics() {
        let psi = vma_from_phi(&[oracle_phi()], 2, 15);
        let at0 = frequency_response(&psi, 0.0);
        let sum = psi.psi.iter().fold(DMatrix::zeros(2, 2), |a, m| a + m);
        for (z, s) in at0.iter().zip(sum.iter()) {
            assert!((z.re - s).abs() < 1e-14 && z.im.abs() < 1e-14);
        }
        let flat = vma_from_phi(&[DMatrix::zeros(2, 2)], 2, 5);
        for w in [0.3, 1.0, 3.0] {
            let r = frequency_response(&flat, w);
            assert!((r[(0, 0)] - 1.0).norm() < 1e-15 && r[(0, 1)].norm() < 1e-15);
        }
    }

    #[test]
    fn scalar_response_matches_geometric_series() {
        let psi = vma_from_phi(&[DMatrix::from_element(1, 1, 0.5)], 1, 100);
        let w = PI / 3.0;
        let closed = Complex64::new(1.0, 0.0) / (Complex64::new(1.0, 0.0) - 0.5 * Complex64::from_polar(1.0, -w));
        assert!((frequency_response(&psi, w)[(0, 0)] - closed).norm() < 1e-6);
    }

    #[test]
    fn conjugate_symmetry() {
        let psi = vma_from_phi(&[oracle_phi()], 2, 20);
        for w in [0.2, 1.1, 2.9] {
            let a = frequency_response(&psi, w);
            let b = frequency_response(&psi, 2.0 * PI - w);
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y.conj()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_spectrum_without_dynamics() {
        let rho = 0.3;
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let psi = vma_from_phi(&[DMatrix::zeros(2, 2)], 2, 4);
        let grid = frequency_grid(100);
        let slices = spectral_gfevd(&psi, &sigma, &grid).unwrap();
        for s in &slices {
            assert!((s.numerator[(0, 1)] - rho * rho).abs() < 1e-14);
            assert!((s.numerator[(0, 0)] - 1.0).abs() < 1e-14);
        }
        let agg = band_aggregate(&slices, &FrequencyBand::defaults()).unwrap();
        let counts = [80.0, 15.0, 5.0];
        for (m, c) in agg.theta.iter().zip(counts) {
            let share = m[(0, 1)] / agg.whole[(0, 1)];
            assert!((share - c / 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_slices_without_dynamics() {
        let psi = vma_from_phi(&[DMatrix::zeros(3, 3)], 3, 4);
        let s = spectral_gfevd(&psi, &DMatrix::identity(3, 3), &frequency_grid(10)).unwrap();
        assert!(s.iter().all(|s| (s.theta_raw() - DMatrix::identity(3, 3)).amax() < 1e-14));
        assert!(s[0].within_frequency().is_ok());
    }

    #[test]
    fn whole_range_equals_time_domain() {
        let phi = oracle_phi();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        for h in [1usize, 2, 5, 20] {
            let psi = vma_from_phi(&[phi.clone()], 2, h);
            let time = gfevd(&psi, &sigma, h).unwrap();
            let slices = spectral_gfevd(&psi, &sigma, &frequency_grid(DEFAULT_GRID_SIZE)).unwrap();
            let agg = band_aggregate(&slices, &[FrequencyBand::full()]).unwrap();
            assert!((agg.whole - time).amax() < 1e-13, "h={h}");
        }
    }

    #[test]
    fn bands_add_up() {
        let psi = vma_from_phi(&[oracle_phi()], 2, 20);
        let sigma = DMatrix::identity(2, 2);
        let slices = spectral_gfevd(&psi, &sigma, &frequency_grid(DEFAULT_GRID_SIZE)).unwrap();
        let agg = band_aggregate(&slices, &FrequencyBand::defaults()).unwrap();
        let sum = agg.theta.iter().fold(DMatrix::zeros(2, 2), |a, m| a + m);
        assert!((sum - &agg.whole).amax() < 1e-12);
    }

    #[test]
    fn empty_band_and_gaps_rejected() {
        let psi = vma_from_phi(&[oracle_phi()], 2, 3);
        let slices = spectral_gfevd(&psi, &DMatrix::identity(2, 2), &frequency_grid(4)).unwrap();
        let narrow = vec![
            FrequencyBand::new("tiny", 0.0, 0.01).unwrap(),
            FrequencyBand::new("rest", 0.01, PI).unwrap(),
        ];
        assert!(matches!(band_aggregate(&slices, &narrow), Err(Error::EmptyBand(l)) if l == "tiny"));
        let gap = vec![FrequencyBand::new("hi", 1.0, PI).unwrap()];
        assert!(band_aggregate(&slices, &gap).is_err());
    }

    #[test]
    fn persistence_shifts_mass_to_low_frequencies() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let tci = |rho: f64| {
            let model = QvarModel::from_parts(vec![DMatrix::identity(2, 2) * rho], sigma.clone(), 0.5).unwrap();
            let t = frequency_connectedness(&model, 20, &FrequencyBand::defaults(), DEFAULT_GRID_SIZE, TciDenominator::N).unwrap();
            t.bands.iter().map(|b| b.tci).collect::<Vec<_>>()
        };
        let white = tci(0.0);
        assert!(white[0] > white[1] && white[0] > white[2]);
        let persistent = tci(0.97);
        assert!(persistent[2] > persistent[0] && persistent[2] > persistent[1]);
    }
}
