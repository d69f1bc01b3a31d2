//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Each check compares library output against an oracle written
//! here, independent of the library's own code paths.

use std::time::Instant;

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use qconnect::breaks::{chow_test, wilcoxon_at};
use qconnect::connectedness::{gfevd, time_connectedness, ConnectednessTable, TciDenominator};
use qconnect::frequency::{frequency_connectedness, FrequencyBand, DEFAULT_GRID_SIZE};
use qconnect::panel::{DatedSeries, ReturnPanel};
use qconnect::portfolio::{backtest, hedging_effectiveness, mcop_weights, mvp_weights, Strategy};
use qconnect::quantreg::{fit_quantile, pinball_loss};
use qconnect::qvar::{fit_qvar, vma_from_phi, QvarModel};
use qconnect::rolling::{rolling_connectedness, LagPolicy, RollingConfig};
use qconnect::simulate::{common_shock_panel, simulate_var, Innovations};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn dates(n: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    (0..n).map(|k| start + Days::new(k as u64)).collect()
}

fn labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("S{i}")).collect()
}

fn panel(values: DMatrix<f64>) -> ReturnPanel {
    let (t, n) = values.shape();
    ReturnPanel::new(dates(t), labels(n), values).unwrap()
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

// ---- oracles -------------------------------------------------------------

/// Direct expansion: moving-average matrices by repeated multiplication of
/// the companion matrix, then the generalized decomposition cell by cell.
fn brute_gfevd(phi: &[DMatrix<f64>], sigma: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let n = sigma.nrows();
    let p = phi.len();
    let np = n * p;
    let mut companion = DMatrix::<f64>::zeros(np, np);
    for (l, m) in phi.iter().enumerate() {
        companion.view_mut((0, l * n), (n, n)).copy_from(m);
    }
    for r in n..np {
        companion[(r, r - n)] = 1.0;
    }
    let mut power = DMatrix::<f64>::identity(np, np);
    let mut psis = Vec::new();
    for _ in 0..=horizon {
        psis.push(power.view((0, 0), (n, n)).into_owned());
        power = &companion * &power;
    }
    DMatrix::from_fn(n, n, |i, j| {
        let mut num = 0.0;
        let mut den = 0.0;
        for psi in &psis {
            let mut cell = 0.0;
            for k in 0..n {
                cell += psi[(i, k)] * sigma[(k, j)];
            }
            num += cell * cell;
            for a in 0..n {
                for b in 0..n {
                    den += psi[(i, a)] * sigma[(a, b)] * psi[(i, b)];
                }
            }
        }
        num / sigma[(j, j)] / den
    })
}

fn random_model(rng: &mut StdRng) -> QvarModel {
    let n = rng.random_range(2..=6);
    let p = rng.random_range(1..=3);
    let raw: Vec<DMatrix<f64>> = (0..p)
        .map(|_| DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let norm: f64 = raw.iter().map(|m| m.norm()).sum();
    let scale = rng.random_range(0.2..0.9) / norm;
    let phi = raw.into_iter().map(|m| m * scale).collect();
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sigma = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
    QvarModel::from_parts(phi, sigma, 0.5).unwrap()
}

fn table_gap(a: &ConnectednessTable, b: &ConnectednessTable) -> f64 {
    let vec_gap = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    [
        max_abs_diff(&a.theta_tilde, &b.theta_tilde),
        max_abs_diff(&a.npdc, &b.npdc),
        vec_gap(&a.to, &b.to),
        vec_gap(&a.from, &b.from),
        vec_gap(&a.net, &b.net),
        (a.tci - b.tci).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

// ---- criteria ------------------------------------------------------------

fn gfevd_oracle() -> Outcome {
    let start = Instant::now();
    let phi = vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.3])];
    let mut worst = 0.0f64;
    for rho in [0.0, 0.4] {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        for h in [0usize, 1, 2, 5, 20] {
            let psi = vma_from_phi(&phi, 2, h.max(1));
            let got = gfevd(&psi, &sigma, h).unwrap();
            worst = worst.max(max_abs_diff(&got, &brute_gfevd(&phi, &sigma, h)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-10 && secs < 1.0, format!("max |diff| {worst:.2e}, {secs:.3}s"))
}

fn row_identities() -> Outcome {
    let mut rng = StdRng::seed_from_u64(101);
    let (mut rows, mut net, mut tci, mut npdc) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let model = random_model(&mut rng);
        let t = time_connectedness(&model, 20, TciDenominator::N).unwrap();
        for r in t.theta_tilde.row_iter() {
            rows = rows.max((r.sum() - 1.0).abs());
        }
        net = net.max(t.net.iter().sum::<f64>().abs());
        tci = tci.max((t.tci - t.tci_from).abs());
        npdc = npdc.max((&t.npdc + t.npdc.transpose()).amax());
    }
    let pass = rows <= 1e-10 && net <= 1e-8 && tci <= 1e-10 && npdc <= 1e-12;
    outcome(
        pass,
        format!("row sums {rows:.1e}, sum NET {net:.1e}, TCI {tci:.1e}, NPDC {npdc:.1e}"),
    )
}

fn band_additivity() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(101);
    let bands = FrequencyBand::defaults();
    let full = [FrequencyBand::full()];
    let (mut additive, mut single) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let model = random_model(&mut rng);
        let ft = frequency_connectedness(&model, 20, &bands, DEFAULT_GRID_SIZE, TciDenominator::N).unwrap();
        let total = &ft.total;
        let n = total.n();
        let mut theta = DMatrix::zeros(n, n);
        let mut npdc = DMatrix::zeros(n, n);
        let (mut to, mut from, mut net) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut tci = 0.0;
        for b in &ft.bands {
            theta += &b.theta_tilde;
            npdc += &b.npdc;
            for i in 0..n {
                to[i] += b.to[i];
                from[i] += b.from[i];
                net[i] += b.net[i];
            }
            tci += b.tci;
        }
        let summed = ConnectednessTable {
            theta_tilde: theta,
            to,
            from,
            net,
            npdc,
            tci,
            ..total.clone()
        };
        additive = additive.max(table_gap(&summed, total));
        let one = frequency_connectedness(&model, 20, &full, DEFAULT_GRID_SIZE, TciDenominator::N).unwrap();
        single = single.max(table_gap(&one.bands[0], total));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        additive <= 1e-8 && single <= 1e-10 && secs < 30.0,
        format!("band sum {additive:.1e}, single band {single:.1e}, {secs:.2}s"),
    )
}

fn quantile_regression() -> Outcome {
    let mut rng = StdRng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for tau in [0.05, 0.25, 0.5, 0.75, 0.95] {
        let y: Vec<f64> = (0..301).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let design = DMatrix::from_element(y.len(), 1, 1.0);
        let fit = fit_quantile(&design, &DVector::from_vec(y.clone()), tau).unwrap();
        // the optimum of a piecewise-linear convex loss sits on a sample point
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let grid = (0..=20_000).map(|k| lo + (hi - lo) * k as f64 / 20_000.0);
        let oracle = y
            .iter()
            .cloned()
            .chain(grid)
            .map(|c| pinball_loss(&y.iter().map(|v| v - c).collect::<Vec<_>>(), tau))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max((fit.objective - oracle).abs());
    }

    let mut rng = StdRng::seed_from_u64(20240601);
    let t = 2000;
    let xs: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| 1.0 + 2.0 * x + rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0))
        .collect();
    let design = DMatrix::from_fn(t, 2, |r, c| if c == 0 { 1.0 } else { xs[r] });
    let fit = fit_quantile(&design, &DVector::from_vec(ys), 0.5).unwrap();
    let (b0, b1) = (fit.coefficients[0], fit.coefficients[1]);
    let recovered = (b0 - 1.0).abs() < 0.05 && (b1 - 2.0).abs() < 0.05;
    outcome(
        worst <= 1e-8 && recovered,
        format!("intercept-only objective gap {worst:.1e}; recovery ({b0:.4}, {b1:.4})"),
    )
}

fn zero_coupling_null() -> Outcome {
    let mut below = 0;
    let mut max_tci = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = StdRng::seed_from_u64(5000 + seed);
        let y = DMatrix::from_fn(5000, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let model = fit_qvar(&panel(y), 1, 0.5).unwrap();
        let t = time_connectedness(&model, 20, TciDenominator::N).unwrap();
        max_tci = max_tci.max(t.tci);
        if t.tci < 10.0 {
            below += 1;
        }
    }
    outcome(below >= 45, format!("{below}/50 runs with TCI < 10, max {max_tci:.2}"))
}

fn transmitter_identification() -> Outcome {
    let phi = DMatrix::from_row_slice(3, 3, &[0.2, 0.0, 0.0, 0.5, 0.1, 0.0, 0.5, 0.0, 0.1]);
    let sigma = DMatrix::identity(3, 3);
    let mut hits = 0;
    for seed in 0..50u64 {
        let mut rng = StdRng::seed_from_u64(6000 + seed);
        let y = simulate_var(&mut rng, std::slice::from_ref(&phi), &sigma, Innovations::Gaussian, 1000);
        let model = fit_qvar(&panel(y), 1, 0.5).unwrap();
        let t = time_connectedness(&model, 20, TciDenominator::N).unwrap();
        if t.net[0] > 0.0 && t.net[1] < 0.0 && t.net[2] < 0.0 {
            hits += 1;
        }
    }
    outcome(hits >= 45, format!("{hits}/50 runs identify the driver"))
}

fn tail_elevation() -> Outcome {
    let runs = 20;
    let mut hits = 0;
    let mut means = [0.0; 3];
    for seed in 0..runs {
        let mut rng = StdRng::seed_from_u64(7000 + seed);
        let y = common_shock_panel(&mut rng, 4, 1000, 1.0, Innovations::StudentT(3.0), 0.1);
        let p = panel(y);
        let tci: Vec<f64> = [0.05, 0.5, 0.95]
            .iter()
            .map(|&tau| {
                let m = fit_qvar(&p, 1, tau).unwrap();
                time_connectedness(&m, 20, TciDenominator::N).unwrap().tci
            })
            .collect();
        for k in 0..3 {
            means[k] += tci[k] / runs as f64;
        }
        if tci[0] > tci[1] && tci[2] > tci[1] {
            hits += 1;
        }
    }
    outcome(
        hits * 10 >= runs * 9,
        format!(
            "{hits}/{runs} runs; mean TCI {:.1} / {:.1} / {:.1} at 0.05 / 0.5 / 0.95",
            means[0], means[1], means[2]
        ),
    )
}

fn portfolio_identities() -> Outcome {
    let var = [0.5, 1.0, 2.0, 4.0, 0.25];
    let cov = DMatrix::from_diagonal(&DVector::from_row_slice(&var));
    let w = mvp_weights(&cov).unwrap();
    let inv_sum: f64 = var.iter().map(|v| 1.0 / v).sum();
    let mvp_gap = (0..5).map(|i| (w[i] - 1.0 / var[i] / inv_sum).abs()).fold(0.0, f64::max);
    let mcop_exact = (2..=8).all(|n| {
        let w = mcop_weights(&DMatrix::identity(n, n)).unwrap();
        w.iter().all(|x| *x == 1.0 / n as f64)
    });

    let mut rng = StdRng::seed_from_u64(8000);
    let y = common_shock_panel(&mut rng, 4, 150, 0.6, Innovations::StudentT(5.0), 0.05) * 0.01;
    let p = panel(y.clone());
    let config = RollingConfig {
        window: 80,
        horizon: 10,
        lag: LagPolicy::Fixed { p: 1 },
        step: 10,
        ..RollingConfig::default()
    };
    let mut simplex = 0.0f64;
    let mut no_look_ahead = true;
    let cut = 100;
    let mut shifted = y.clone();
    for r in (cut + 1)..shifted.nrows() {
        for c in 0..shifted.ncols() {
            shifted[(r, c)] += 0.05 * ((r * 7 + c * 3) % 5) as f64 - 0.1;
        }
    }
    let shifted = panel(shifted);
    for strategy in [Strategy::Mvp, Strategy::Mcp, Strategy::Mcop] {
        let bt = backtest(&p, strategy, 0.5, &config, None, 0.05).unwrap();
        for row in bt.weights.weights.row_iter() {
            simplex = simplex.max((row.sum() - 1.0).abs());
            if row.iter().any(|v| *v < -1e-10) {
                simplex = f64::INFINITY;
            }
        }
        let moved = backtest(&shifted, strategy, 0.5, &config, None, 0.05).unwrap();
        let cutoff = p.dates[cut];
        for (k, d) in bt.weights.dates.iter().enumerate() {
            if *d <= cutoff && bt.weights.weights.row(k) != moved.weights.weights.row(k) {
                no_look_ahead = false;
            }
        }
    }
    let asset = p.column(0);
    let (he_self, _) = hedging_effectiveness(&asset, &asset).unwrap();

    let pass = mvp_gap <= 1e-12 && mcop_exact && simplex <= 1e-10 && no_look_ahead && he_self == 0.0;
    outcome(
        pass,
        format!(
            "MVP gap {mvp_gap:.1e}, MCoP 1/n {mcop_exact}, simplex {simplex:.1e}, no look-ahead {no_look_ahead}, HE(self) {he_self}"
        ),
    )
}

fn break_calibration() -> Outcome {
    let reps = 2000;
    let t = 200;
    let d = dates(t);
    let break_date = d[t / 2];
    let mut size = [0usize; 2];
    let mut power = [0usize; 2];
    let mut rng = StdRng::seed_from_u64(9000);
    for _ in 0..reps {
        let null: Vec<f64> = (0..t).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let shifted: Vec<f64> = null
            .iter()
            .enumerate()
            .map(|(k, v)| if k >= t / 2 { v + 3.0 } else { *v })
            .collect();
        for (values, counts) in [(null, &mut size), (shifted, &mut power)] {
            let s = DatedSeries::new(d.clone(), values).unwrap();
            if chow_test(&s, break_date).unwrap().pvalue < 0.05 {
                counts[0] += 1;
            }
            if wilcoxon_at(&s, break_date).unwrap().pvalue < 0.05 {
                counts[1] += 1;
            }
        }
    }
    let rate = |c: usize| c as f64 / reps as f64;
    let sized = size.iter().all(|c| (0.02..=0.09).contains(&rate(*c)));
    let powered = power.iter().all(|c| rate(*c) >= 0.95);
    outcome(
        sized && powered,
        format!(
            "size Chow {:.3} Wilcoxon {:.3}; power Chow {:.3} Wilcoxon {:.3}",
            rate(size[0]),
            rate(size[1]),
            rate(power[0]),
            rate(power[1])
        ),
    )
}

fn end_to_end() -> Outcome {
    let mut rng = StdRng::seed_from_u64(10_000);
    let y = common_shock_panel(&mut rng, 23, 610, 0.7, Innovations::StudentT(4.0), 0.05) * 0.01;
    let p = panel(y);
    let config = RollingConfig {
        window: 200,
        horizon: 20,
        lag: LagPolicy::Fixed { p: 1 },
        taus: vec![0.05, 0.5, 0.95],
        bands: FrequencyBand::defaults(),
        step: 1,
        ..RollingConfig::default()
    };
    let run = || {
        let start = Instant::now();
        let out = rolling_connectedness(&p, &config).unwrap();
        let mut buf = Vec::new();
        out.write_long_csv(&mut buf).unwrap();
        (start.elapsed().as_secs_f64(), out.dates.len(), out.gaps.len(), buf)
    };
    let (first_secs, windows, gaps, first) = run();
    let (second_secs, _, _, second) = run();
    let identical = first == second;
    outcome(
        first_secs < 600.0 && identical && windows == 411,
        format!(
            "{windows} windows, {gaps} flagged, {first_secs:.1}s then {second_secs:.1}s on {} threads, identical output {identical}",
            rayon::current_num_threads()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("GFEVD oracle equivalence", gfevd_oracle),
        ("row-stochastic identities", row_identities),
        ("frequency additivity", band_additivity),
        ("quantile regression correctness", quantile_regression),
        ("zero-coupling null", zero_coupling_null),
        ("transmitter identification", transmitter_identification),
        ("tail elevation", tail_elevation),
        ("portfolio identities", portfolio_identities),
        ("break-test calibration", break_calibration),
        ("end-to-end performance", end_to_end),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({})",
            k + 1,
            if result.pass { "PASS" } else { "FAIL" },
            name,
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
