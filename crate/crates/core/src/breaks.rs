//! Known-date structural break tests for measure series: a mean-shift Chow
//! F-test and the Wilcoxon rank-sum location test.

use std::io::Write;

use chrono::NaiveDate;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::linalg::mean;
use crate::panel::{format_date, DatedSeries};
use crate::stats::{standard_normal, tie_groups};

const MIN_SIDE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BreakTest {
    Chow,
    Wilcoxon,
}

impl BreakTest {
    pub fn name(&self) -> &'static str {
        match self {
            BreakTest::Chow => "chow",
            BreakTest::Wilcoxon => "wilcoxon",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BreakTestResult {
    pub statistic: f64,
    pub pvalue: f64,
    pub break_date: NaiveDate,
    pub test: BreakTest,
}

fn check_sides(pre: usize, post: usize) -> Result<()> {
    if pre < MIN_SIDE || post < MIN_SIDE {
        return Err(Error::InsufficientData(format!(
            "each side of the break needs at least {MIN_SIDE} observations, got {pre} and {post}"
        )));
    }
    Ok(())
}

fn rss(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum()
}

/// Chow test for a shift in the mean at `break_date`; the break date opens
/// the second regime.
pub fn chow_test(series: &DatedSeries, break_date: NaiveDate) -> Result<BreakTestResult> {
    let (pre, post) = series.split_at_date(break_date);
    check_sides(pre.len(), post.len())?;
    if series.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("break-test series"));
    }
    let within = rss(pre) + rss(post);
    if !(within > 0.0) {
        return Err(Error::Degenerate("both regimes are constant".into()));
    }
    let k = 1.0;
    let df = series.len() as f64 - 2.0 * k;
    let f = ((rss(&series.values) - within) / k).max(0.0) / (within / df);
    let dist = FisherSnedecor::new(k, df).expect("positive degrees of freedom");
    Ok(BreakTestResult {
        statistic: f,
        pvalue: dist.sf(f).clamp(0.0, 1.0),
        break_date,
        test: BreakTest::Chow,
    })
}

/// Midranks (1-based) of the pooled sample.
fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-sum statistic `W = R_pre - n_pre (n_pre + 1) / 2` with a
/// tie-corrected, continuity-corrected normal approximation.
pub fn wilcoxon_rank_sum(pre: &[f64], post: &[f64], break_date: NaiveDate) -> Result<BreakTestResult> {
    check_sides(pre.len(), post.len())?;
    if pre.iter().chain(post).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("break-test series"));
    }
    let pooled: Vec<f64> = pre.iter().chain(post).copied().collect();
    let ranks = midranks(&pooled);
    let (n1, n2) = (pre.len() as f64, post.len() as f64);
    let n = n1 + n2;
    let w = ranks[..pre.len()].iter().sum::<f64>() - n1 * (n1 + 1.0) / 2.0;
    let centre = n1 * n2 / 2.0;
    let ties: f64 = tie_groups(&pooled)
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let pvalue = if var > 0.0 {
        let d = w - centre;
        let correction = if d > 0.0 { 0.5 } else if d < 0.0 { -0.5 } else { 0.0 };
        let z = (d - correction) / var.sqrt();
        (2.0 * standard_normal().sf(z.abs())).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(BreakTestResult {
        statistic: w,
        pvalue,
        break_date,
        test: BreakTest::Wilcoxon,
    })
}

/// Wilcoxon test on a dated series split at `break_date`.
pub fn wilcoxon_at(series: &DatedSeries, break_date: NaiveDate) -> Result<BreakTestResult> {
    let (pre, post) = series.split_at_date(break_date);
    wilcoxon_rank_sum(pre, post, break_date)
}

/// One labelled row of a break-test table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakRow {
    pub tau: f64,
    pub band: String,
    pub series: String,
    pub result: BreakTestResult,
}

/// Writes `tau,band,series,test,statistic,pvalue,break_date`.
pub fn write_break_table<W: Write>(out: W, rows: &[BreakRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "band", "series", "test", "statistic", "pvalue", "break_date"])?;
    for r in rows {
        w.write_record([
            r.tau.to_string(),
            r.band.clone(),
            r.series.clone(),
            r.result.test.name().to_string(),
            r.result.statistic.to_string(),
            r.result.pvalue.to_string(),
            format_date(r.result.break_date),
        ])?;
    }
    w.flush().map_err(|e| Error::io("break-test output", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn dated(values: Vec<f64>) -> DatedSeries {
        let dates = NaiveDate::from_ymd_opt(2019, 1, 1)
            .unwrap()
            .iter_days()
            .take(values.len())
            .collect();
        DatedSeries::new(dates, values).unwrap()
    }

    fn noise(rng: &mut StdRng, t: usize) -> Vec<f64> {
        (0..t).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn chow_matches_hand_computation() {
        let x = vec![1.0, 2.0, 3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0, 2.0, 5.0, 6.0, 7.0, 6.0, 5.0, 6.0, 7.0, 6.0, 5.0, 6.0];
        let s = dated(x.clone());
        let r = chow_test(&s, s.dates[10]).unwrap();
        // each half has RSS 4.9 around its own mean; pooled mean is 3.9
        let pooled: f64 = x.iter().map(|v| (v - 3.9f64).powi(2)).sum();
        let expected = (pooled - 9.8) / (9.8 / 18.0);
        assert!((r.statistic - expected).abs() < 1e-10);
        assert!(r.pvalue < 1e-6);
        assert_eq!(r.test, BreakTest::Chow);
    }

    #[test]
    fn short_sides_rejected() {
        let s = dated((0..30).map(f64::from).collect());
        assert!(matches!(chow_test(&s, s.dates[5]), Err(Error::InsufficientData(_))));
        assert!(wilcoxon_at(&s, s.dates[25]).is_err());
    }

    #[test]
    fn wilcoxon_trivial_cases() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let a: Vec<f64> = (0..15).map(|i| (i * 7 % 11) as f64).collect();
        let same = wilcoxon_rank_sum(&a, &a, d).unwrap();
        assert!((same.pvalue - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = a.iter().map(|v| v + 100.0).collect();
        let r = wilcoxon_rank_sum(&a, &shifted, d).unwrap();
        assert!(r.pvalue < 0.001);
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn wilcoxon_matches_exact_small_sample_enumeration_in_the_centre() {
        // all-tied input has no spread
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let r = wilcoxon_rank_sum(&[1.0; 10], &[1.0; 12], d).unwrap();
        assert_eq!(r.statistic, 60.0);
        assert_eq!(r.pvalue, 1.0);
    }

    #[test]
    fn wilcoxon_tie_variance_against_brute_force() {
        // variance of W under random relabelling, by enumeration of ranks
        let pooled = [1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 4.0, 5.0, 6.0, 6.0, 7.0, 8.0, 9.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0];
        let ranks = midranks(&pooled);
        let n = ranks.len() as f64;
        let mean_r = ranks.iter().sum::<f64>() / n;
        let pop_var = ranks.iter().map(|r| (r - mean_r).powi(2)).sum::<f64>() / n;
        let (n1, n2) = (10.0, 10.0);
        let brute = n1 * n2 / (n - 1.0) * pop_var;
        let ties: f64 = tie_groups(&pooled).iter().map(|&t| (t * t * t - t) as f64).sum();
        let formula = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
        assert!((brute - formula).abs() < 1e-10);
    }

    #[test]
    fn calibration_and_power() {
        let mut rng = StdRng::seed_from_u64(77);
        let reps = 400;
        let (mut chow_null, mut wil_null, mut chow_alt, mut wil_alt) = (0, 0, 0, 0);
        for _ in 0..reps {
            let s = dated(noise(&mut rng, 100));
            let b = s.dates[50];
            chow_null += (chow_test(&s, b).unwrap().pvalue < 0.05) as usize;
            wil_null += (wilcoxon_at(&s, b).unwrap().pvalue < 0.05) as usize;
            let mut v = noise(&mut rng, 100);
            v[50..].iter_mut().for_each(|x| *x += 3.0);
            let s = dated(v);
            chow_alt += (chow_test(&s, b).unwrap().pvalue < 0.01) as usize;
            wil_alt += (wilcoxon_at(&s, b).unwrap().pvalue < 0.01) as usize;
        }
        let rate = |k: usize| k as f64 / reps as f64;
        assert!(rate(chow_null) <= 0.10 && rate(wil_null) <= 0.10);
        assert!(rate(chow_alt) >= 0.95 && rate(wil_alt) >= 0.95);
    }

    #[test]
    fn table_has_one_row_per_result() {
        let s = dated((0..40).map(|i| (i as f64).sin()).collect());
        let r = chow_test(&s, s.dates[20]).unwrap();
        let rows = vec![BreakRow { tau: 0.5, band: "total".into(), series: "ALL".into(), result: r }];
        let mut buf = Vec::new();
        write_break_table(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("0.5,total,ALL,chow,"));
    }

    proptest! {
        #[test]
        fn chow_ignores_a_common_shift(seed in 0u64..500, c in -50.0f64..50.0) {
            let mut rng = StdRng::seed_from_u64(seed);
            let v = noise(&mut rng, 40);
            let a = dated(v.clone());
            let b = dated(v.iter().map(|x| x + c).collect());
            let fa = chow_test(&a, a.dates[20]).unwrap().statistic;
            let fb = chow_test(&b, b.dates[20]).unwrap().statistic;
            prop_assert!((fa - fb).abs() <= 1e-7 * (1.0 + fa));
        }

        #[test]
        fn wilcoxon_is_rank_invariant(seed in 0u64..500) {
            let mut rng = StdRng::seed_from_u64(seed);
            let v = noise(&mut rng, 30);
            let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
            let a = wilcoxon_rank_sum(&v[..12], &v[12..], d).unwrap();
            let t: Vec<f64> = v.iter().map(|x| x.exp() + x * x * x).collect();
            let b = wilcoxon_rank_sum(&t[..12], &t[12..], d).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
