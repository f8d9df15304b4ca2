//! Variance of the bootstrapped target for correlated consecutive labels.
//!
//! With `y_td = y_t - gamma (y_{t+1} - E y_{t+1}) + gamma eps`, the next
//! label acts as a control variate and
//! `Var(y_td) = s_t^2 + gamma^2 s_{t+1}^2 - 2 gamma rho s_t s_{t+1} + gamma^2 s_eps^2`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_GRID_POINTS: usize = 50;

/// Roundoff allowance, relative to `sigma_t^2`, added to the Monte Carlo
/// tolerance so exact-zero variances compare equal.
const ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceSpec {
    pub sigma_t: f64,
    pub sigma_next: f64,
    pub rho: f64,
    pub sigma_eps: f64,
    pub samples: usize,
    /// Number of evenly spaced `gamma` values on `[0, 1]`.
    pub grid_points: usize,
    pub seed: u64,
}

impl VarianceSpec {
    pub fn new(sigma_t: f64, sigma_next: f64, rho: f64, sigma_eps: f64) -> Self {
        Self {
            sigma_t,
            sigma_next,
            rho,
            sigma_eps,
            samples: DEFAULT_SAMPLES,
            grid_points: DEFAULT_GRID_POINTS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sds = [self.sigma_t, self.sigma_next, self.sigma_eps];
        if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidInput("standard deviations must be finite and nonnegative".into()));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidInput(format!("correlation must lie in [-1,1], got {}", self.rho)));
        }
        if self.samples < 2 || self.grid_points < 2 {
            return Err(Error::InvalidInput("need at least two samples and two grid points".into()));
        }
        Ok(())
    }

    pub fn gammas(&self) -> Vec<f64> {
        let last = (self.grid_points - 1) as f64;
        (0..self.grid_points).map(|k| k as f64 / last).collect()
    }
}

/// `s_t^2 + gamma^2 s_{t+1}^2 - 2 gamma rho s_t s_{t+1} + gamma^2 s_eps^2`.
pub fn td_target_variance(spec: &VarianceSpec, gamma: f64) -> f64 {
    let (st, sn, se) = (spec.sigma_t, spec.sigma_next, spec.sigma_eps);
    st * st + gamma * gamma * sn * sn - 2.0 * gamma * spec.rho * st * sn + gamma * gamma * se * se
}

/// Minimizer `rho s_t s_{t+1} / (s_{t+1}^2 + s_eps^2)` of
/// [`td_target_variance`], clipped to `[0, 1]`.
pub fn variance_minimizing_gamma(spec: &VarianceSpec) -> f64 {
    let denom = spec.sigma_next.powi(2) + spec.sigma_eps.powi(2);
    if denom == 0.0 {
        return if spec.rho > 0.0 { 1.0 } else { 0.0 };
    }
    (spec.rho * spec.sigma_t * spec.sigma_next / denom).clamp(0.0, 1.0)
}

/// Whether the correlation meets `rho >= gamma^2 (s_{t+1}^2 + s_eps^2) / (2 gamma s_t s_{t+1})`.
pub fn reduction_condition(spec: &VarianceSpec, gamma: f64) -> bool {
    if gamma == 0.0 {
        return true;
    }
    let denom = 2.0 * gamma * spec.sigma_t * spec.sigma_next;
    denom > 0.0 && spec.rho >= gamma * gamma * (spec.sigma_next.powi(2) + spec.sigma_eps.powi(2)) / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub gammas: Vec<f64>,
    pub empirical: Vec<f64>,
    pub theoretical: Vec<f64>,
    /// Standard error of each empirical variance.
    pub std_errors: Vec<f64>,
    pub var_y_t: f64,
    pub var_y_t_std_error: f64,
    pub empirical_argmin: f64,
    pub theoretical_argmin: f64,
    /// Every empirical variance is within three standard errors of theory.
    pub matches_theory: bool,
    pub argmin_within_cell: bool,
    /// Where the correlation condition holds, the TD target variance does
    /// not exceed `Var(y_t)` by more than three standard errors.
    pub reduction_holds: bool,
}

/// Sample variance and the standard error of that estimate.
fn variance_with_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in xs {
        let d2 = (x - mean).powi(2);
        m2 += d2;
        m4 += d2 * d2;
    }
    let var = m2 / (n - 1.0);
    let pop = m2 / n;
    let se = ((m4 / n - pop * pop).max(0.0) / n).sqrt();
    (var, se)
}

/// Monte Carlo estimate of `Var(y_td)` on a `gamma` grid, with the same
/// draws reused at every grid point.
pub fn run_variance_check(spec: &VarianceSpec) -> Result<VarianceReport> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed);
    let m = spec.samples;
    let mut y_t = Vec::with_capacity(m);
    // centered next label minus the estimate noise: y_td = y_t - gamma * c
    let mut c = Vec::with_capacity(m);
    let orth = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
    for _ in 0..m {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        y_t.push(spec.sigma_t * a);
        c.push(spec.sigma_next * (spec.rho * a + orth * b) - spec.sigma_eps * e);
    }
    let (var_y_t, var_y_t_se) = variance_with_se(&y_t);
    let gammas = spec.gammas();
    let mut empirical = Vec::with_capacity(gammas.len());
    let mut std_errors = Vec::with_capacity(gammas.len());
    let mut theoretical = Vec::with_capacity(gammas.len());
    let mut buf = vec![0.0; m];
    for &g in &gammas {
        for ((slot, yt), ci) in buf.iter_mut().zip(&y_t).zip(&c) {
            *slot = yt - g * ci;
        }
        let (v, se) = variance_with_se(&buf);
        empirical.push(v);
        std_errors.push(se);
        theoretical.push(td_target_variance(spec, g));
    }
    let slack = ROUNDOFF * spec.sigma_t.powi(2).max(1.0);
    let matches_theory = empirical
        .iter()
        .zip(&theoretical)
        .zip(&std_errors)
        .all(|((e, t), se)| (e - t).abs() <= 3.0 * se + slack);
    let k = empirical
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let empirical_argmin = gammas[k];
    let theoretical_argmin = variance_minimizing_gamma(spec);
    let cell = 1.0 / (spec.grid_points - 1) as f64;
    let reduction_holds = gammas
        .iter()
        .zip(empirical.iter().zip(&std_errors))
        .filter(|(g, _)| reduction_condition(spec, **g))
        .all(|(_, (e, se))| *e <= var_y_t + 3.0 * se + slack);
    Ok(VarianceReport {
        gammas,
        empirical,
        theoretical,
        std_errors,
        var_y_t,
        var_y_t_std_error: var_y_t_se,
        empirical_argmin,
        theoretical_argmin,
        matches_theory,
        argmin_within_cell: (empirical_argmin - theoretical_argmin).abs() <= cell + 1e-12,
        reduction_holds,
    })
}
