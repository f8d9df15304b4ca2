//! End-to-end acceptance criteria. Each test prints one `PASS`/`FAIL` line
//! and then asserts, so `cargo test --test acceptance -- --nocapture`
//! shows the full scorecard.

use std::time::{Duration, Instant};

use mrptd::harness::{self, Experiment, ExperimentConfig, TransitionChoice};
use mrptd::link::LinkFunction;
use mrptd::mrp::{build_transition, dsm_project, reward_vector, stationary, TransitionKind};
use mrptd::solvers;
use mrptd::td::{self, StepSize, TdConfig};
use mrptd::{Dataset, LinkKind, TransitionMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{verdict}] {name}: {detail}");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Averages random permutation matrices with their transposes.
fn symmetric_doubly_stochastic(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let perms = 5;
    for _ in 0..perms {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        for (i, &j) in perm.iter().enumerate() {
            m[(i, j)] += 0.5 / perms as f64;
            m[(j, i)] += 0.5 / perms as f64;
        }
    }
    m
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

#[test]
fn criterion_1_min_norm_overparameterized() {
    let cfg = ExperimentConfig {
        dims: vec![110, 130],
        seeds: 10,
        ..ExperimentConfig::new(Experiment::MinNormTable)
    };
    let start = Instant::now();
    let table = harness::run(&cfg).unwrap();
    let elapsed = start.elapsed();
    let mut worst_full: f64 = 0.0;
    let mut least_deficient = f64::INFINITY;
    let mut failures = 0.0;
    for r in 0..table.len() {
        let mean = table.float(r, "mean_distance").unwrap();
        failures += table.float(r, "failures").unwrap();
        if table.text(r, "transition") == Some("deficient") {
            least_deficient = least_deficient.min(mean);
        } else {
            worst_full = worst_full.max(mean);
        }
    }
    let pass = table.len() == 10 && failures == 0.0 && worst_full <= 1e-8 && least_deficient >= 0.05 && within(elapsed, 30);
    report(
        1,
        "min-norm equivalence",
        pass,
        format!(
            "max distance (full-rank P) {worst_full:.3e} <= 1e-8, min distance (deficient) {least_deficient:.3} >= 0.05, {:.2} s <= 30 s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_interpolating_solutions_solve_td_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for instance in 0..20u64 {
        let n = rng.random_range(5..40);
        let d = n + rng.random_range(1..30);
        let x = gaussian(&mut rng, n, d);
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ds = Dataset::new(x.clone(), y.clone()).unwrap();
        let p = build_transition(&ds, &TransitionKind::Random, instance).unwrap();
        let gamma = rng.random_range(0.0..0.99);
        let sol = solvers::td_closed_form(&ds, &p, gamma).unwrap();
        // Interpolating set: w_min + null(X), with the null space from an SVD.
        let svd = x.clone().svd(true, true);
        let row_space = svd.v_t.unwrap().rows(0, n).transpose();
        let coeffs = (svd.u.unwrap().transpose() * &y).component_div(&svd.singular_values);
        let w_min = &row_space * coeffs;
        let mut candidates = vec![w_min.clone()];
        for _ in 0..5 {
            let mut probe = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            probe -= &row_space * (row_space.transpose() * &probe);
            candidates.push(&w_min + probe * 3.0);
        }
        for w in &candidates {
            assert!((&x * w - &y).norm() <= 1e-8 * (1.0 + y.norm()), "candidate does not interpolate");
            worst = worst.max(solvers::check_preconditioned_solution(&ds, &sol, w).unwrap());
        }
    }
    report(
        2,
        "interpolators solve the TD system",
        worst <= 1e-8,
        format!("max ||Aw - b|| over 20 instances x 6 interpolators = {worst:.3e} <= 1e-8"),
    );
}

#[test]
fn criterion_3_td_is_gls_with_matching_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d, gamma) = (40, 5, 0.9);
    let x = gaussian(&mut rng, n, d);
    let y = x.column_sum() + DVector::from_fn(n, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
    let ds = Dataset::new(x.clone(), y).unwrap();
    let p = TransitionMatrix::new(symmetric_doubly_stochastic(n, &mut rng)).unwrap();
    // Uniform stationary weights give S = (I - gamma P) / n, symmetric.
    let s = (DMatrix::identity(n, n) - p.probs() * gamma) / n as f64;
    let c = s.clone().try_inverse().unwrap();
    let c = (&c + c.transpose()) * 0.5;

    let w_td = solvers::td_closed_form(&ds, &p, gamma).unwrap().weights;
    let w_gls = solvers::gls(&ds, &c).unwrap();
    let agree = (&w_td - &w_gls).norm();

    let closed = solvers::td_covariance_closed_form(&ds, &p, gamma, &c).unwrap().matrix;
    let mc = solvers::td_covariance_monte_carlo(&ds, &p, gamma, &c, 10_000, 33).unwrap();
    let rel = (&mc.covariance.matrix - &closed).norm() / closed.norm();
    // Independent closed form: (X^T C^-1 X)^-1 for C = S^-1.
    let gls_cov = (x.transpose() * &s * &x).try_inverse().unwrap();
    let formula_gap = (&closed - &gls_cov).norm() / gls_cov.norm();
    let ols = solvers::ols_covariance(&ds, &c).unwrap().matrix;
    let (tr_td, tr_ols) = (closed.trace(), ols.trace());

    let pass = agree <= 1e-8 && rel <= 0.10 && formula_gap <= 1e-8 && tr_td < tr_ols;
    report(
        3,
        "TD equals GLS under C = S^-1",
        pass,
        format!(
            "||w_TD - w_GLS|| = {agree:.3e} <= 1e-8, MC rel. Frobenius error {rel:.4} <= 0.10, trace TD {tr_td:.5} < OLS {tr_ols:.5}"
        ),
    );
}

#[test]
fn criterion_4_gp_sweep_favours_td() {
    let cfg = ExperimentConfig {
        rhos: vec![0.9],
        etas: vec![0.9],
        gammas: vec![0.99],
        seeds: 50,
        ..ExperimentConfig::new(Experiment::GpSweep)
    };
    let start = Instant::now();
    let table = harness::run(&cfg).unwrap();
    let elapsed = start.elapsed();
    let td = table.float(0, "rmse_td_mean").unwrap();
    let ols = table.float(0, "rmse_ols_mean").unwrap();
    let win = table.float(0, "td_win_rate").unwrap();
    let seeds = table.float(0, "seeds").unwrap();
    let pass = seeds == 50.0 && td < ols && win >= 0.8 && within(elapsed, 120);
    report(
        4,
        "GP sweep at rho = eta = 0.9",
        pass,
        format!(
            "mean RMSE TD {td:.4} < OLS {ols:.4}, win rate {win:.2} >= 0.80, {:.2} s <= 120 s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_5_target_variance_quadratic() {
    let (sigma, sigma_eps) = (1.0, 0.5);
    let cfg = ExperimentConfig {
        rhos: vec![0.0, 0.3, 0.6, 0.9],
        sigma_t: sigma,
        sigma_next: sigma,
        sigma_eps,
        samples: 100_000,
        ..ExperimentConfig::new(Experiment::VarianceCheck)
    };
    let table = harness::run(&cfg).unwrap();
    let mut ok = table.len() == 4 * 50;
    let mut worst_z: f64 = 0.0;
    let mut worst_argmin: f64 = 0.0;
    for r in 0..table.len() {
        let rho = table.float(r, "rho").unwrap();
        let g = table.float(r, "gamma").unwrap();
        let theory = sigma * sigma + g * g * sigma * sigma - 2.0 * g * rho * sigma * sigma + g * g * sigma_eps * sigma_eps;
        let emp = table.float(r, "var_td_empirical").unwrap();
        let se = table.float(r, "std_error").unwrap();
        let z = (emp - theory).abs() / se.max(1e-300);
        if (emp - theory).abs() > 3.0 * se + 1e-12 {
            ok = false;
        }
        worst_z = worst_z.max(if (emp - theory).abs() <= 1e-12 { 0.0 } else { z });
        let target = rho * sigma * sigma / (sigma * sigma + sigma_eps * sigma_eps);
        let gap = (table.float(r, "argmin_empirical").unwrap() - target).abs();
        worst_argmin = worst_argmin.max(gap);
        if gap > 1.0 / 49.0 + 1e-12 {
            ok = false;
        }
    }
    report(
        5,
        "bootstrapped target variance",
        ok,
        format!("max |MC - theory| / SE = {worst_z:.2} <= 3, max argmin gap {worst_argmin:.4} <= one cell (1/49)"),
    );
}

#[test]
fn criterion_6_contraction_certificate() {
    let mut details = Vec::new();
    let mut ok = true;
    for (link, gammas) in [(LinkKind::Identity, vec![0.5]), (LinkKind::Sigmoid, vec![])] {
        let cfg = ExperimentConfig {
            link,
            gammas,
            trials: 100,
            transitions: vec![TransitionChoice::Random],
            ..ExperimentConfig::new(Experiment::Contraction)
        };
        let table = harness::run(&cfg).unwrap();
        let gamma = table.float(0, "gamma").unwrap();
        let l = table.float(0, "lipschitz").unwrap();
        let ratio = table.float(0, "max_ratio").unwrap();
        let bound = table.float(0, "bound").unwrap();
        let spread = table.float(0, "fixed_point_spread").unwrap();
        let trials = table.float(0, "trials").unwrap();
        let pass = gamma * l * l < 1.0 && trials == 100.0 && ratio <= bound && spread <= 1e-6;
        ok &= pass;
        details.push(format!(
            "{}: gamma {gamma:.4} (gamma L^2 = {:.3}), max ratio {ratio:.8} <= bound {bound:.8}, fixed-point spread {spread:.2e}",
            link.name(),
            gamma * l * l
        ));
    }
    report(6, "expected update contracts", ok, details.join("; "));
}

#[test]
fn criterion_7_sample_rate() {
    let cfg = ExperimentConfig {
        link: LinkKind::Identity,
        gammas: vec![0.5],
        horizons: vec![1_000, 4_000, 16_000],
        ..ExperimentConfig::new(Experiment::SampleRate)
    };
    let table = harness::run(&cfg).unwrap();
    let mut ok = table.len() == 3;
    let mut parts = Vec::new();
    let mut ts = Vec::new();
    let mut errs = Vec::new();
    for r in 0..table.len() {
        let t = table.float(r, "horizon").unwrap();
        let e = table.float(r, "error_mean").unwrap();
        let b = table.float(r, "bound").unwrap();
        ok &= e <= b;
        ts.push(t);
        errs.push(e);
        parts.push(format!("T={t}: {e:.3e} <= {b:.3e}"));
    }
    // Independent slope fit.
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = lx.iter().sum::<f64>() / 3.0;
    let my = ly.iter().sum::<f64>() / 3.0;
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    ok &= slope <= -0.4;
    report(7, "sampled TD rate", ok, format!("{}, log-log slope {slope:.3} <= -0.4", parts.join(", ")));
}

#[test]
fn criterion_8_exact_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // Bellman: solving (I - gamma P) v = r recovers the values.
    let mut bellman: f64 = 0.0;
    for seed in 0..10 {
        let n = 12;
        let ds = Dataset::new(gaussian(&mut rng, n, 2), DVector::zeros(n)).unwrap();
        let p = build_transition(&ds, &TransitionKind::Random, seed).unwrap();
        let gamma = rng.random_range(0.0..0.99);
        let z = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let r = reward_vector(&z, &p, gamma).unwrap();
        let lhs = &z - p.probs() * &z * gamma;
        bellman = bellman.max((lhs - &r).amax());
        let v = (DMatrix::identity(n, n) - p.probs() * gamma).lu().solve(&r).unwrap();
        bellman = bellman.max((v - &z).amax());
    }

    // gamma = 0 TD step against the SGD step, bit for bit.
    let mut mismatches = 0;
    let cfg = TdConfig::new(0.0, StepSize::Constant(0.1), 1, LinkFunction::identity());
    for _ in 0..1000 {
        let d = 4;
        let x_t = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x_next = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (y_t, y_next): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let alpha = rng.random_range(1e-4..1.0);
        let a = td::td_step(&x_t, y_t, &x_next, y_next, &w, &cfg, alpha).unwrap();
        let b = td::sgd_step(&x_t, y_t, &w, &cfg, alpha).unwrap();
        if a.iter().zip(b.iter()).any(|(u, v)| u.to_bits() != v.to_bits()) {
            mismatches += 1;
        }
    }

    // DSM projection: doubly stochastic with uniform stationary weights.
    let mut dsm: f64 = 0.0;
    let mut uniform: f64 = 0.0;
    for _ in 0..5 {
        let n = 30;
        let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() + 1e-3);
        let p = dsm_project(&m, 100_000, 1e-9).unwrap();
        let rows = p.probs().column_sum().map(|s| (s - 1.0).abs()).amax();
        let cols = p.probs().row_sum().map(|s| (s - 1.0).abs()).amax();
        dsm = dsm.max(rows.max(cols));
        let pi = stationary(&p).unwrap();
        uniform = uniform.max(pi.weights().map(|w| (w - 1.0 / n as f64).abs()).amax());
    }

    let pass = bellman <= 1e-12 && mismatches == 0 && dsm <= 1e-6 && uniform <= 1e-6;
    report(
        8,
        "exact identities",
        pass,
        format!(
            "Bellman residual {bellman:.2e} <= 1e-12, gamma=0 step mismatches {mismatches}/1000, DSM marginal error {dsm:.2e} <= 1e-6, stationary deviation {uniform:.2e} <= 1e-6"
        ),
    );
}
