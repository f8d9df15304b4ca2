//! Generalized TD learning for supervised data.
//!
//! A sampled step moves the weights toward the bootstrapped target
//! `z_td = r + gamma x'^T w` built in logit space, where the reward
//! `r = f^-1(y) - gamma f^-1(y')` is implied by the labels through the
//! Bellman equation. [`ExpectedTd`] computes the same update in expectation
//! over the stationary distribution, which is what the contraction and
//! rate certificates reason about.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::link::{self, LinkFunction};
use crate::mrp::{self, Dataset, Labels, StationaryDistribution, TransitionMatrix, TransitionSampler};
use crate::rng::{self, StreamRng};
use crate::solvers;

/// Weight norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Number of checkpoints kept per run, at most.
pub const CHECKPOINTS: usize = 1000;

/// Samples used to estimate the gradient noise at the fixed point.
pub const SIGMA2_SAMPLES: usize = 100_000;

/// Tolerance on the step norm when iterating the expected update.
pub const FIXED_POINT_TOL: f64 = 1e-13;
pub const FIXED_POINT_MAX_ITERS: usize = 1_000_000;

/// Step-size schedule `alpha_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Constant(f64),
    /// `initial / (1 + t / half_life)`.
    Harmonic { initial: f64, half_life: f64 },
}

impl StepSize {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSize::Constant(a) => a,
            StepSize::Harmonic { initial, half_life } => initial / (1.0 + t as f64 / half_life),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSize::Constant(a) => a > 0.0 && a.is_finite(),
            StepSize::Harmonic { initial, half_life } => {
                initial > 0.0 && initial.is_finite() && half_life > 0.0 && half_life.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid step size {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdConfig {
    pub gamma: f64,
    pub step_size: StepSize,
    pub steps: usize,
    /// Radius of the origin-centered ball iterates are projected onto;
    /// `None` leaves them unconstrained.
    pub projection_radius: Option<f64>,
    pub link: LinkFunction,
    pub rng_seed: u64,
}

impl TdConfig {
    pub fn new(gamma: f64, step_size: StepSize, steps: usize, link: LinkFunction) -> Self {
        Self {
            gamma,
            step_size,
            steps,
            projection_radius: None,
            link,
            rng_seed: 0,
        }
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.projection_radius = Some(radius);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        mrp::check_gamma(self.gamma)?;
        self.step_size.validate()?;
        if self.steps == 0 {
            return Err(Error::InvalidInput("steps must be positive".into()));
        }
        if let Some(r) = self.projection_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidInput(format!("projection radius must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

/// Metrics recorded at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub weights: DVector<f64>,
    pub metrics: BTreeMap<&'static str, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdTrajectory {
    /// Subsampled iterates; the first is `w_0`, the last is `w_T`.
    pub checkpoints: Vec<Checkpoint>,
    /// Mean of `w_0, ..., w_{T-1}`.
    pub averaged_weights: DVector<f64>,
    pub final_weights: DVector<f64>,
}

impl TdTrajectory {
    pub fn weight_history(&self) -> impl Iterator<Item = (usize, &DVector<f64>)> {
        self.checkpoints.iter().map(|c| (c.step, &c.weights))
    }
}

/// `w` if it lies in the ball, else its radial projection onto the sphere.
pub fn project_ball(w: &DVector<f64>, radius: f64) -> DVector<f64> {
    let norm = w.norm();
    if norm <= radius {
        w.clone()
    } else {
        w * (radius / norm)
    }
}

fn project(w: DVector<f64>, radius: Option<f64>) -> DVector<f64> {
    match radius {
        Some(r) if w.norm() > r => project_ball(&w, r),
        _ => w,
    }
}

/// `10 (1 + ||w_OLS||)` when OLS is defined for the labels, else 100.
pub fn default_radius(dataset: &Dataset) -> f64 {
    match solvers::ols_min_norm(dataset) {
        Ok(w) => 10.0 * (1.0 + w.norm()),
        Err(_) => 100.0,
    }
}

/// Step size `(1 - gamma L^2) / (4 L^3)` of the contraction theorem.
pub fn theorem_step_size(gamma: f64, l: f64) -> f64 {
    (1.0 - gamma * l * l) / (4.0 * l.powi(3))
}

/// Contraction factor `1 - omega ((1 - gamma L^2) / (2 L^2))^2`.
pub fn contraction_factor(gamma: f64, l: f64, omega: f64) -> f64 {
    let c = (1.0 - gamma * l * l) / (2.0 * l * l);
    1.0 - omega * c * c
}

/// Smallest horizon `64 L^6 / (1 - gamma L^2)^2` covered by the rate theorem.
pub fn sample_rate_threshold(gamma: f64, l: f64) -> f64 {
    64.0 * l.powi(6) / (1.0 - gamma * l * l).powi(2)
}

/// `f(z_td) - f(x_t^T w)` given inverse-link labels `u_t`, `u_next`.
fn td_delta(link: &LinkFunction, gamma: f64, u_t: f64, u_next: f64, x_t: &DVector<f64>, x_next: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
    let z = x_t.dot(w);
    let r = u_t - gamma * u_next;
    let z_td = r + gamma * x_next.dot(w);
    Ok(link.forward(z_td)? - link.forward(z)?)
}

fn apply(w: &DVector<f64>, x: &DVector<f64>, alpha: f64, delta: f64, radius: Option<f64>) -> DVector<f64> {
    project(w + x * (alpha * delta), radius)
}

/// One sampled generalized TD step with step size `alpha`.
pub fn td_step(
    x_t: &DVector<f64>,
    y_t: f64,
    x_next: &DVector<f64>,
    y_next: f64,
    w: &DVector<f64>,
    cfg: &TdConfig,
    alpha: f64,
) -> Result<DVector<f64>> {
    check_dims(x_t, x_next, w)?;
    let u_t = cfg.link.inverse(y_t)?;
    let u_next = cfg.link.inverse(y_next)?;
    let delta = td_delta(&cfg.link, cfg.gamma, u_t, u_next, x_t, x_next, w)?;
    Ok(apply(w, x_t, alpha, delta, cfg.projection_radius))
}

/// The conventional regression step `w + alpha (y - f(x^T w)) x`.
pub fn sgd_step(x: &DVector<f64>, y: f64, w: &DVector<f64>, cfg: &TdConfig, alpha: f64) -> Result<DVector<f64>> {
    check_dims(x, x, w)?;
    let delta = y - cfg.link.forward(x.dot(w))?;
    Ok(apply(w, x, alpha, delta, cfg.projection_radius))
}

fn check_dims(x_t: &DVector<f64>, x_next: &DVector<f64>, w: &DVector<f64>) -> Result<()> {
    if x_t.len() != w.len() || x_next.len() != w.len() {
        return Err(Error::InvalidInput(format!(
            "feature vectors of length {} and {} for {} weights",
            x_t.len(),
            x_next.len(),
            w.len()
        )));
    }
    Ok(())
}

fn rows(x: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..x.nrows()).map(|i| x.row(i).transpose()).collect()
}

fn inverse_labels(dataset: &Dataset, link: &LinkFunction) -> Result<Vec<f64>> {
    dataset.scalar_labels()?.iter().map(|&y| link.inverse(y)).collect()
}

fn check_divergence(step: usize, w: &DVector<f64>) -> Result<()> {
    let norm = w.norm();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::Divergence { step, norm });
    }
    Ok(())
}

/// Accumulates the running average and the subsampled checkpoints.
struct Recorder {
    every: usize,
    sum: DVector<f64>,
    abs_delta: f64,
    since: usize,
    checkpoints: Vec<Checkpoint>,
}

impl Recorder {
    fn new(steps: usize, w0: &DVector<f64>, alpha0: f64) -> Self {
        let mut r = Self {
            every: (steps / CHECKPOINTS).max(1),
            sum: DVector::zeros(w0.len()),
            abs_delta: 0.0,
            since: 0,
            checkpoints: Vec::new(),
        };
        r.checkpoint(0, w0, alpha0);
        r
    }

    fn checkpoint(&mut self, step: usize, w: &DVector<f64>, alpha: f64) {
        let mut metrics = BTreeMap::new();
        metrics.insert("weight_norm", w.norm());
        metrics.insert("alpha", alpha);
        let mean = if self.since > 0 {
            self.abs_delta / self.since as f64
        } else {
            0.0
        };
        metrics.insert("mean_abs_td_error", mean);
        self.abs_delta = 0.0;
        self.since = 0;
        self.checkpoints.push(Checkpoint {
            step,
            weights: w.clone(),
            metrics,
        });
    }

    /// Called with `w_t` before the update at step `t`.
    fn before(&mut self, w: &DVector<f64>) {
        self.sum += w;
    }

    /// Called with `w_{t+1}` after the update at step `t`.
    fn after(&mut self, t: usize, w: &DVector<f64>, delta: f64, alpha: f64, steps: usize) {
        self.abs_delta += delta.abs();
        self.since += 1;
        let done = t + 1;
        if done % self.every == 0 || done == steps {
            self.checkpoint(done, w, alpha);
        }
    }

    fn finish(self, steps: usize, final_weights: DVector<f64>) -> TdTrajectory {
        TdTrajectory {
            checkpoints: self.checkpoints,
            averaged_weights: self.sum / steps as f64,
            final_weights,
        }
    }
}

fn check_run(dataset: &Dataset, p: &TransitionMatrix, cfg: &TdConfig, start_index: usize) -> Result<()> {
    cfg.validate()?;
    if dataset.n() != p.n() {
        return Err(Error::InvalidInput(format!(
            "dataset has {} points, transition matrix has {} states",
            dataset.n(),
            p.n()
        )));
    }
    if start_index >= dataset.n() {
        return Err(Error::InvalidInput(format!(
            "start index {start_index} out of range for {} states",
            dataset.n()
        )));
    }
    Ok(())
}

/// Sampled generalized TD along a Markov chain over the data points,
/// starting from `w = 0` at state `start_index`.
pub fn run_td(dataset: &Dataset, p: &TransitionMatrix, cfg: &TdConfig, start_index: usize) -> Result<TdTrajectory> {
    check_run(dataset, p, cfg, start_index)?;
    let xs = rows(dataset.features());
    let u = inverse_labels(dataset, &cfg.link)?;
    let sampler = TransitionSampler::new(p);
    let mut rng = rng::stream(cfg.rng_seed);
    let mut w = DVector::zeros(dataset.d());
    let mut rec = Recorder::new(cfg.steps, &w, cfg.step_size.at(0));
    let mut s = start_index;
    for t in 0..cfg.steps {
        let next = sampler.next(s, &mut rng);
        let alpha = cfg.step_size.at(t);
        let delta = td_delta(&cfg.link, cfg.gamma, u[s], u[next], &xs[s], &xs[next], &w)?;
        rec.before(&w);
        w = apply(&w, &xs[s], alpha, delta, cfg.projection_radius);
        check_divergence(t + 1, &w)?;
        rec.after(t, &w, delta, alpha, cfg.steps);
        s = next;
    }
    Ok(rec.finish(cfg.steps, w))
}

/// Conventional SGD visiting states in the same order as [`run_td`] with
/// the same configuration.
pub fn run_sgd(dataset: &Dataset, p: &TransitionMatrix, cfg: &TdConfig, start_index: usize) -> Result<TdTrajectory> {
    check_run(dataset, p, cfg, start_index)?;
    let xs = rows(dataset.features());
    let y = dataset.scalar_labels()?;
    let sampler = TransitionSampler::new(p);
    let mut rng = rng::stream(cfg.rng_seed);
    let mut w = DVector::zeros(dataset.d());
    let mut rec = Recorder::new(cfg.steps, &w, cfg.step_size.at(0));
    let mut s = start_index;
    for t in 0..cfg.steps {
        let next = sampler.next(s, &mut rng);
        let alpha = cfg.step_size.at(t);
        let delta = y[s] - cfg.link.forward(xs[s].dot(&w))?;
        rec.before(&w);
        w = apply(&w, &xs[s], alpha, delta, cfg.projection_radius);
        check_divergence(t + 1, &w)?;
        rec.after(t, &w, delta, alpha, cfg.steps);
        s = next;
    }
    Ok(rec.finish(cfg.steps, w))
}

/// Result of [`run_td_multiclass`]: one weight column per output.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTrajectory {
    pub final_weights: DMatrix<f64>,
    pub averaged_weights: DMatrix<f64>,
}

/// Sampled generalized TD with vector-valued labels, e.g. class
/// probabilities under the softmax link. Weights are `d x k`.
pub fn run_td_multiclass(dataset: &Dataset, p: &TransitionMatrix, cfg: &TdConfig, start_index: usize) -> Result<MultiTrajectory> {
    check_run(dataset, p, cfg, start_index)?;
    let probs = match dataset.labels() {
        Labels::Multiclass(m) => m,
        Labels::Scalar(_) => {
            return Err(Error::InvalidInput("multiclass TD needs vector labels".into()));
        }
    };
    let (n, k) = (probs.nrows(), probs.ncols());
    let xs = rows(dataset.features());
    let mut u = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = probs.row(i).iter().copied().collect();
        u.push(DVector::from_vec(cfg.link.inverse_vec(&row)?));
    }
    let sampler = TransitionSampler::new(p);
    let mut rng = rng::stream(cfg.rng_seed);
    let mut w = DMatrix::zeros(dataset.d(), k);
    let mut sum = DMatrix::zeros(dataset.d(), k);
    let mut s = start_index;
    for t in 0..cfg.steps {
        let next = sampler.next(s, &mut rng);
        let alpha = cfg.step_size.at(t);
        let z = w.tr_mul(&xs[s]);
        let z_td = (&u[s] - &u[next] * cfg.gamma) + w.tr_mul(&xs[next]) * cfg.gamma;
        let f_td = DVector::from_vec(cfg.link.forward_vec(z_td.as_slice())?);
        let f_z = DVector::from_vec(cfg.link.forward_vec(z.as_slice())?);
        sum += &w;
        w += &xs[s] * (f_td - f_z).transpose() * alpha;
        if let Some(r) = cfg.projection_radius {
            let norm = w.norm();
            if norm > r {
                w *= r / norm;
            }
        }
        let norm = w.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Divergence { step: t + 1, norm });
        }
        s = next;
    }
    Ok(MultiTrajectory {
        final_weights: w,
        averaged_weights: sum / cfg.steps as f64,
    })
}

/// The expected TD update over `s ~ D`, `s' ~ P(s, .)`, computed by exact
/// summation.
#[derive(Debug, Clone)]
pub struct ExpectedTd {
    x: DMatrix<f64>,
    u: Vec<f64>,
    p: DMatrix<f64>,
    d: Vec<f64>,
    gamma: f64,
    link: LinkFunction,
    radius: Option<f64>,
}

/// Fixed point of the projected expected update.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub weights: DVector<f64>,
    pub iterations: usize,
    pub last_step_norm: f64,
}

impl ExpectedTd {
    pub fn new(
        dataset: &Dataset,
        p: &TransitionMatrix,
        stationary: &StationaryDistribution,
        gamma: f64,
        link: LinkFunction,
        radius: Option<f64>,
    ) -> Result<Self> {
        mrp::check_gamma(gamma)?;
        if dataset.n() != p.n() || stationary.len() != p.n() {
            return Err(Error::InvalidInput("dataset, transition matrix and distribution sizes differ".into()));
        }
        Ok(Self {
            x: dataset.features().clone(),
            u: inverse_labels(dataset, &link)?,
            p: p.probs().clone(),
            d: stationary.weights().iter().copied().collect(),
            gamma,
            link,
            radius,
        })
    }

    pub fn from_config(dataset: &Dataset, p: &TransitionMatrix, stationary: &StationaryDistribution, cfg: &TdConfig) -> Result<Self> {
        Self::new(dataset, p, stationary, cfg.gamma, cfg.link, cfg.projection_radius)
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// `E[(f(z_td) - f(z)) x]`.
    pub fn gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        if w.len() != self.dim() {
            return Err(Error::InvalidInput("weight length does not match features".into()));
        }
        let z = &self.x * w;
        let n = z.len();
        let mut coef = DVector::zeros(n);
        for s in 0..n {
            if self.d[s] == 0.0 {
                continue;
            }
            let mut target = 0.0;
            for t in 0..n {
                let pst = self.p[(s, t)];
                if pst != 0.0 {
                    let z_td = self.u[s] - self.gamma * self.u[t] + self.gamma * z[t];
                    target += pst * self.link.forward(z_td)?;
                }
            }
            coef[s] = self.d[s] * (target - self.link.forward(z[s])?);
        }
        Ok(self.x.tr_mul(&coef))
    }

    /// `project(w + alpha E[(f(z_td) - f(z)) x])`.
    pub fn update(&self, w: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
        Ok(project(w + self.gradient(w)? * alpha, self.radius))
    }

    /// Iterates [`update`](Self::update) from `w0` until the step norm drops
    /// below `tol`.
    pub fn fixed_point(&self, w0: &DVector<f64>, alpha: f64, tol: f64, max_iters: usize) -> Result<FixedPoint> {
        let mut w = project(w0.clone(), self.radius);
        let mut step_norm = f64::INFINITY;
        for it in 1..=max_iters {
            let next = self.update(&w, alpha)?;
            step_norm = (&next - &w).norm();
            w = next;
            check_divergence(it, &w)?;
            if step_norm <= tol {
                return Ok(FixedPoint {
                    weights: w,
                    iterations: it,
                    last_step_norm: step_norm,
                });
            }
        }
        Err(Error::NonConvergence {
            what: "expected TD fixed point",
            iterations: max_iters,
            residual: step_norm,
        })
    }
}

/// One projected expected update from `w` with the configured step size at
/// `t = 0`.
pub fn expected_update(
    w: &DVector<f64>,
    dataset: &Dataset,
    p: &TransitionMatrix,
    stationary: &StationaryDistribution,
    cfg: &TdConfig,
) -> Result<DVector<f64>> {
    ExpectedTd::from_config(dataset, p, stationary, cfg)?.update(w, cfg.step_size.at(0))
}

/// Half-width `M` of the logit interval `[-M, M]` reachable by `x^T w` and
/// by TD targets when `||w|| <= radius`.
pub fn logit_domain(dataset: &Dataset, p: &TransitionMatrix, link: &LinkFunction, gamma: f64, radius: f64) -> Result<f64> {
    let u = inverse_labels(dataset, link)?;
    let x = dataset.features();
    let xmax = (0..x.nrows()).map(|i| x.row(i).norm()).fold(0.0, f64::max);
    let reach = radius * xmax;
    let mut rmax: f64 = 0.0;
    for s in 0..u.len() {
        for t in 0..u.len() {
            if p.probs()[(s, t)] > 0.0 {
                rmax = rmax.max((u[s] - gamma * u[t]).abs());
            }
        }
    }
    Ok(reach.max(rmax + gamma * reach))
}

/// Moduli of the expected update over a logit domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateGeometry {
    pub domain: f64,
    pub lipschitz: f64,
    pub min_derivative: f64,
    pub max_derivative: f64,
    /// Extreme eigenvalues of `X^T D X`.
    pub omega_min: f64,
    pub omega_max: f64,
}

impl UpdateGeometry {
    /// Step with guaranteed contraction using the measured derivative range
    /// rather than `L`: `(f'_min - gamma f'_max) / (f'_max (1 + gamma))^2`.
    pub fn fast_step(&self, gamma: f64) -> Option<f64> {
        let mu = self.min_derivative - gamma * self.max_derivative;
        (mu > 0.0).then(|| mu / (self.max_derivative * (1.0 + gamma)).powi(2))
    }
}

pub fn update_geometry(
    dataset: &Dataset,
    p: &TransitionMatrix,
    stationary: &StationaryDistribution,
    link: &LinkFunction,
    gamma: f64,
    radius: f64,
) -> Result<UpdateGeometry> {
    let domain = logit_domain(dataset, p, link, gamma, radius)?;
    let (lo, hi) = if domain > 0.0 { (-domain, domain) } else { (-1e-9, 1e-9) };
    let l = link::lipschitz_bound(link, lo, hi, link::DEFAULT_GRID_POINTS)?.l;
    let (dmin, dmax) = link::derivative_range(link, lo, hi, link::DEFAULT_GRID_POINTS)?;
    let x = dataset.features();
    let mut xd = x.clone();
    for (i, &di) in stationary.weights().iter().enumerate() {
        xd.row_mut(i).scale_mut(di);
    }
    let sigma = x.tr_mul(&xd);
    let (omega_min, omega_max) = linalg::sym_eigen_range(&sigma);
    Ok(UpdateGeometry {
        domain,
        lipschitz: l,
        min_derivative: dmin,
        max_derivative: dmax,
        omega_min,
        omega_max,
    })
}

fn check_unit_features(dataset: &Dataset) -> Result<()> {
    let x = dataset.features();
    for i in 0..x.nrows() {
        let norm = x.row(i).norm();
        if norm > 1.0 + 1e-12 {
            return Err(Error::Assumption {
                assumption: "bounded features",
                detail: format!("row {i} has norm {norm} > 1; rescale features into the unit ball"),
            });
        }
    }
    Ok(())
}

fn check_contraction_regime(geo: &UpdateGeometry, gamma: f64) -> Result<()> {
    let rank_tol = linalg::PINV_RCOND * geo.omega_max.abs();
    if !(geo.omega_min > rank_tol) {
        return Err(Error::Assumption {
            assumption: "full-rank feature covariance",
            detail: format!(
                "X^T D X has smallest eigenvalue {:.3e}; use fewer features or more states",
                geo.omega_min
            ),
        });
    }
    let l2 = geo.lipschitz * geo.lipschitz;
    if gamma * l2 >= 1.0 {
        return Err(Error::Assumption {
            assumption: "gamma < 1/L^2",
            detail: format!(
                "gamma = {gamma} but L = {:.6} on [-{:.4}, {:.4}] needs gamma < {:.6}; lower gamma or the projection radius",
                geo.lipschitz,
                geo.domain,
                geo.domain,
                1.0 / l2
            ),
        });
    }
    Ok(())
}

fn uniform_in_ball(rng: &mut StreamRng, d: usize, radius: f64) -> DVector<f64> {
    let dir = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    let norm = dir.norm();
    if norm == 0.0 {
        dir
    } else {
        dir * (r / norm)
    }
}

/// Squared-distance ratio `||T(a) - T(b)||^2 / ||a - b||^2`, zero when
/// `a == b`.
pub fn contraction_ratio(op: &ExpectedTd, a: &DVector<f64>, b: &DVector<f64>, alpha: f64) -> Result<f64> {
    let before = (a - b).norm_squared();
    if before == 0.0 {
        return Ok(0.0);
    }
    let after = (op.update(a, alpha)? - op.update(b, alpha)?).norm_squared();
    Ok(after / before)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub trials: usize,
    pub max_ratio: f64,
    /// Bound with `omega` the smallest eigenvalue of `X^T D X`.
    pub bound: f64,
    /// Bound with `omega` the largest eigenvalue, reported for comparison.
    pub bound_max_eig: f64,
    pub max_eig_bound_holds: bool,
    pub alpha: f64,
    pub radius: f64,
    pub geometry: UpdateGeometry,
    pub pass: bool,
}

/// Applies the expected update with the theorem's step size to `trials`
/// random pairs in the projection ball and compares the worst squared
/// distance ratio with the contraction bound.
pub fn certify_contraction(dataset: &Dataset, p: &TransitionMatrix, cfg: &TdConfig, trials: usize) -> Result<ContractionReport> {
    mrp::check_gamma(cfg.gamma)?;
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    check_unit_features(dataset)?;
    let radius = cfg.projection_radius.unwrap_or_else(|| default_radius(dataset));
    let stationary = mrp::stationary(p)?;
    let geo = update_geometry(dataset, p, &stationary, &cfg.link, cfg.gamma, radius)?;
    check_contraction_regime(&geo, cfg.gamma)?;
    let alpha = theorem_step_size(cfg.gamma, geo.lipschitz);
    let op = ExpectedTd::new(dataset, p, &stationary, cfg.gamma, cfg.link, Some(radius))?;
    let mut rng = rng::stream(cfg.rng_seed);
    let mut max_ratio: f64 = 0.0;
    for _ in 0..trials {
        let a = uniform_in_ball(&mut rng, dataset.d(), radius);
        let b = uniform_in_ball(&mut rng, dataset.d(), radius);
        max_ratio = max_ratio.max(contraction_ratio(&op, &a, &b, alpha)?);
    }
    let bound = contraction_factor(cfg.gamma, geo.lipschitz, geo.omega_min);
    let bound_max_eig = contraction_factor(cfg.gamma, geo.lipschitz, geo.omega_max);
    Ok(ContractionReport {
        trials,
        max_ratio,
        bound,
        bound_max_eig,
        max_eig_bound_holds: max_ratio <= bound_max_eig + 1e-9,
        alpha,
        radius,
        geometry: geo,
        pass: max_ratio <= bound + 1e-9,
    })
}

/// Fixed point of the expected update, iterated with the fast contraction
/// step of [`UpdateGeometry::fast_step`].
pub fn solve_fixed_point(dataset: &Dataset, p: &TransitionMatrix, cfg: &TdConfig, w0: &DVector<f64>) -> Result<FixedPoint> {
    let radius = cfg.projection_radius.unwrap_or_else(|| default_radius(dataset));
    let stationary = mrp::stationary(p)?;
    let geo = update_geometry(dataset, p, &stationary, &cfg.link, cfg.gamma, radius)?;
    let xmax2 = (0..dataset.n())
        .map(|i| dataset.features().row(i).norm_squared())
        .fold(0.0, f64::max);
    let alpha = geo
        .fast_step(cfg.gamma)
        .map(|a| a / xmax2.max(f64::MIN_POSITIVE))
        .ok_or_else(|| Error::Assumption {
            assumption: "gamma < 1/L^2",
            detail: "link derivative range admits no contracting step; lower gamma or the projection radius".into(),
        })?;
    let op = ExpectedTd::new(dataset, p, &stationary, cfg.gamma, cfg.link, Some(radius))?;
    op.fixed_point(w0, alpha, FIXED_POINT_TOL, FIXED_POINT_MAX_ITERS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRateReport {
    pub horizons: Vec<usize>,
    /// Mean over seeds of `E_s[(x_s^T (w* - w_bar_T))^2]`.
    pub errors_by_t: Vec<f64>,
    pub std_errors_by_t: Vec<f64>,
    pub bound_by_t: Vec<f64>,
    pub sigma2: f64,
    pub sigma2_samples: usize,
    pub lipschitz: f64,
    pub threshold: f64,
    pub fixed_point: DVector<f64>,
    /// Least-squares slope of `ln error` against `ln T`.
    pub slope: f64,
    pub pass: bool,
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn log_log_slope(ts: &[f64], errors: &[f64]) -> f64 {
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs i.i.d.-sampled TD from `w = 0` with constant step `1/sqrt(T)` for
/// each horizon and compares the averaged-iterate error in logit space with
/// `L (||w* - w_0||^2 + 2 sigma^2) / (sqrt(T) (1 - gamma L^2))`.
pub fn certify_sample_rate(
    dataset: &Dataset,
    p: &TransitionMatrix,
    cfg: &TdConfig,
    horizons: &[usize],
    seeds: usize,
) -> Result<SampleRateReport> {
    mrp::check_gamma(cfg.gamma)?;
    if horizons.is_empty() || seeds == 0 {
        return Err(Error::InvalidInput("need at least one horizon and one seed".into()));
    }
    check_unit_features(dataset)?;
    let radius = cfg.projection_radius.unwrap_or_else(|| default_radius(dataset));
    let stationary = mrp::stationary(p)?;
    let geo = update_geometry(dataset, p, &stationary, &cfg.link, cfg.gamma, radius)?;
    check_contraction_regime(&geo, cfg.gamma)?;
    let l = geo.lipschitz;
    let threshold = sample_rate_threshold(cfg.gamma, l);
    if let Some(&t) = horizons.iter().find(|&&t| (t as f64) < threshold) {
        return Err(Error::Assumption {
            assumption: "T >= 64 L^6 / (1 - gamma L^2)^2",
            detail: format!("horizon {t} is below the threshold {threshold:.1}; use longer horizons"),
        });
    }
    let d = dataset.d();
    let w0 = DVector::zeros(d);
    let w_star = solve_fixed_point(dataset, p, &TdConfig { projection_radius: Some(radius), ..cfg.clone() }, &w0)?.weights;

    let xs = rows(dataset.features());
    let u = inverse_labels(dataset, &cfg.link)?;
    let sampler = TransitionSampler::new(p);
    let state_sampler = StateSampler::new(&stationary);
    let link = cfg.link;
    let gamma = cfg.gamma;

    let mut rng = rng::stream(rng::derive_seed(cfg.rng_seed, &[u64::MAX]));
    let mut sigma2 = 0.0;
    for _ in 0..SIGMA2_SAMPLES {
        let s = state_sampler.draw(&mut rng);
        let t = sampler.next(s, &mut rng);
        let delta = td_delta(&link, gamma, u[s], u[t], &xs[s], &xs[t], &w_star)?;
        sigma2 += delta * delta * xs[s].norm_squared();
    }
    sigma2 /= SIGMA2_SAMPLES as f64;

    let x = dataset.features();
    let dist = stationary.weights();
    let sigma_err = |w_bar: &DVector<f64>| -> f64 {
        let diff = x * (&w_star - w_bar);
        diff.iter().zip(dist.iter()).map(|(e, p)| p * e * e).sum()
    };

    let mut errors_by_t = Vec::with_capacity(horizons.len());
    let mut std_errors_by_t = Vec::with_capacity(horizons.len());
    let mut bound_by_t = Vec::with_capacity(horizons.len());
    for &horizon in horizons {
        let alpha = 1.0 / (horizon as f64).sqrt();
        let errs: Vec<f64> = (0..seeds as u64)
            .into_par_iter()
            .map(|seed| -> Result<f64> {
                let mut rng = rng::stream(rng::derive_seed(cfg.rng_seed, &[horizon as u64, seed]));
                let mut w = w0.clone();
                let mut sum = DVector::zeros(d);
                for step in 0..horizon {
                    let s = state_sampler.draw(&mut rng);
                    let t = sampler.next(s, &mut rng);
                    let delta = td_delta(&link, gamma, u[s], u[t], &xs[s], &xs[t], &w)?;
                    sum += &w;
                    w = apply(&w, &xs[s], alpha, delta, Some(radius));
                    check_divergence(step + 1, &w)?;
                }
                Ok(sigma_err(&(sum / horizon as f64)))
            })
            .collect::<Result<_>>()?;
        let m = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / m;
        let var = if errs.len() > 1 {
            errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        errors_by_t.push(mean);
        std_errors_by_t.push((var / m).sqrt());
        bound_by_t.push(
            l * ((&w_star - &w0).norm_squared() + 2.0 * sigma2) / ((horizon as f64).sqrt() * (1.0 - gamma * l * l)),
        );
    }
    let ts: Vec<f64> = horizons.iter().map(|&t| t as f64).collect();
    let slope = if horizons.len() > 1 {
        log_log_slope(&ts, &errors_by_t)
    } else {
        f64::NAN
    };
    let pass = errors_by_t.iter().zip(&bound_by_t).all(|(e, b)| e <= b);
    Ok(SampleRateReport {
        horizons: horizons.to_vec(),
        errors_by_t,
        std_errors_by_t,
        bound_by_t,
        sigma2,
        sigma2_samples: SIGMA2_SAMPLES,
        lipschitz: l,
        threshold,
        fixed_point: w_star,
        slope,
        pass,
    })
}

/// Cumulative-table sampler for a fixed state distribution.
struct StateSampler {
    cdf: Vec<f64>,
}

impl StateSampler {
    fn new(dist: &StationaryDistribution) -> Self {
        let mut acc = 0.0;
        Self {
            cdf: dist
                .weights()
                .iter()
                .map(|&v| {
                    acc += v;
                    acc
                })
                .collect(),
        }
    }

    fn draw(&self, rng: &mut StreamRng) -> usize {
        let u = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let j = self.cdf.partition_point(|&c| c <= u);
        j.min(self.cdf.len() - 1)
    }
}
