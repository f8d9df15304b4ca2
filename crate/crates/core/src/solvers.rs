//! Closed-form linear estimators: minimum-norm OLS, the TD fixed point,
//! GLS, FGLS, and the TD estimator's conditional covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mrp::{self, Dataset, StationaryDistribution, TransitionMatrix};
use crate::rng;

/// Weight on the residual outer product in the FGLS covariance estimate;
/// the remainder goes to its diagonal.
pub const FGLS_SHRINKAGE: f64 = 0.5;

/// Default FGLS ridge, relative to the mean residual variance.
pub const FGLS_RIDGE: f64 = 1e-6;

/// Weights of the TD linear system `A w = b` with `A = X^T S X`,
/// `b = X^T S y` and `S = D (I - gamma P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdSolution {
    pub weights: DVector<f64>,
    pub a_matrix: DMatrix<f64>,
    pub b_vector: DVector<f64>,
    pub stationary: StationaryDistribution,
    pub gamma: f64,
}

impl TdSolution {
    /// `||A w - b||_2`.
    pub fn residual(&self, w: &DVector<f64>) -> f64 {
        (&self.a_matrix * w - &self.b_vector).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceSource {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub source: CovarianceSource,
}

/// Sample moments of an estimator under repeated noise draws.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloMoments {
    pub mean: DVector<f64>,
    /// Standard error of each component of `mean`.
    pub std_error: DVector<f64>,
    pub covariance: CovarianceEstimate,
    pub draws: usize,
}

/// `X^+ y` through the SVD.
pub fn ols_min_norm(dataset: &Dataset) -> Result<DVector<f64>> {
    linalg::pinv_solve(dataset.features(), dataset.scalar_labels()?)
}

/// `S = D (I - gamma P)`.
pub fn td_weighting(p: &TransitionMatrix, stationary: &StationaryDistribution, gamma: f64) -> Result<DMatrix<f64>> {
    mrp::check_gamma(gamma)?;
    let n = p.n();
    if stationary.len() != n {
        return Err(Error::InvalidInput(format!(
            "stationary distribution has {} states, transition matrix has {n}",
            stationary.len()
        )));
    }
    let mut s = DMatrix::identity(n, n) - p.probs() * gamma;
    for (i, &di) in stationary.weights().iter().enumerate() {
        s.row_mut(i).scale_mut(di);
    }
    Ok(s)
}

fn check_states(dataset: &Dataset, p: &TransitionMatrix) -> Result<()> {
    if dataset.n() != p.n() {
        return Err(Error::InvalidInput(format!(
            "dataset has {} points, transition matrix has {} states",
            dataset.n(),
            p.n()
        )));
    }
    Ok(())
}

/// TD fixed point `A^+ b` with `D` the stationary distribution of `p`.
pub fn td_closed_form(dataset: &Dataset, p: &TransitionMatrix, gamma: f64) -> Result<TdSolution> {
    check_states(dataset, p)?;
    mrp::check_gamma(gamma)?;
    let stationary = mrp::stationary(p)?;
    td_closed_form_with(dataset, p, &stationary, gamma)
}

/// [`td_closed_form`] with a caller-supplied state weighting.
pub fn td_closed_form_with(
    dataset: &Dataset,
    p: &TransitionMatrix,
    stationary: &StationaryDistribution,
    gamma: f64,
) -> Result<TdSolution> {
    check_states(dataset, p)?;
    let y = dataset.scalar_labels()?;
    let x = dataset.features();
    let s = td_weighting(p, stationary, gamma)?;
    let xt_s = x.transpose() * s;
    let a_matrix = &xt_s * x;
    let b_vector = xt_s * y;
    let weights = linalg::pinv_solve(&a_matrix, &b_vector)?;
    Ok(TdSolution {
        weights,
        a_matrix,
        b_vector,
        stationary: stationary.clone(),
        gamma,
    })
}

/// `||A w - b||_2` for the TD system in `sol`.
pub fn check_preconditioned_solution(dataset: &Dataset, sol: &TdSolution, w: &DVector<f64>) -> Result<f64> {
    if w.len() != dataset.d() || sol.a_matrix.ncols() != dataset.d() {
        return Err(Error::InvalidInput(format!(
            "weights have length {}, dataset has {} features",
            w.len(),
            dataset.d()
        )));
    }
    Ok(sol.residual(w))
}

/// `(X^T C^-1 X)^-1 X^T C^-1 y`, computed as least squares on the system
/// whitened by the Cholesky factor of `C`.
pub fn gls(dataset: &Dataset, noise_cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = dataset.n();
    if noise_cov.nrows() != n || noise_cov.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "noise covariance is {}x{} for {n} points",
            noise_cov.nrows(),
            noise_cov.ncols()
        )));
    }
    let y = dataset.scalar_labels()?;
    let chol = linalg::cholesky(noise_cov, "GLS noise covariance")?;
    let l = chol.l();
    let xw = l
        .solve_lower_triangular(dataset.features())
        .ok_or(Error::Singular { context: "GLS whitening" })?;
    let yw = l
        .solve_lower_triangular(y)
        .ok_or(Error::Singular { context: "GLS whitening" })?;
    linalg::pinv_solve(&xw, &yw)
}

/// Residual covariance estimate used by [`fgls`]: shrinkage of `e e^T`
/// toward its diagonal plus a ridge scaled by the mean squared residual.
pub fn fgls_covariance(residuals: &DVector<f64>, ridge: f64) -> DMatrix<f64> {
    let n = residuals.len();
    let mut c = residuals * residuals.transpose() * FGLS_SHRINKAGE;
    let mean_sq = residuals.norm_squared() / n as f64;
    // with vanishing residuals the ridge is taken as absolute
    let scale = if mean_sq > 0.0 { ridge * mean_sq } else { ridge };
    for i in 0..n {
        c[(i, i)] += (1.0 - FGLS_SHRINKAGE) * residuals[i] * residuals[i] + scale;
    }
    c
}

/// Feasible GLS: OLS residuals feed [`fgls_covariance`], then GLS; repeated
/// `iterations` times from the latest fit.
pub fn fgls(dataset: &Dataset, ridge: f64, iterations: usize) -> Result<DVector<f64>> {
    if dataset.n() <= dataset.d() {
        return Err(Error::Assumption {
            assumption: "n > d",
            detail: format!(
                "FGLS needs more points than features, got n = {} and d = {}",
                dataset.n(),
                dataset.d()
            ),
        });
    }
    if !(ridge > 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidInput(format!("FGLS ridge must be positive, got {ridge}")));
    }
    if iterations == 0 {
        return Err(Error::InvalidInput("FGLS needs at least one iteration".into()));
    }
    let x = dataset.features();
    let y = dataset.scalar_labels()?;
    let mut w = ols_min_norm(dataset)?;
    for _ in 0..iterations {
        let c = fgls_covariance(&(y - x * &w), ridge);
        w = gls(dataset, &c).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => Error::Singular {
                context: "FGLS covariance estimate",
            },
            other => other,
        })?;
    }
    Ok(w)
}

/// The `d x n` matrix `K` with `w_TD = K y`, requiring `A` invertible.
pub fn td_operator(dataset: &Dataset, p: &TransitionMatrix, gamma: f64) -> Result<DMatrix<f64>> {
    check_states(dataset, p)?;
    let stationary = mrp::stationary(p)?;
    let s = td_weighting(p, &stationary, gamma)?;
    let x = dataset.features();
    let xt_s = x.transpose() * s;
    let a = &xt_s * x;
    if linalg::rank(&a) < dataset.d() {
        return Err(Error::Singular { context: "TD matrix A" });
    }
    a.lu().solve(&xt_s).ok_or(Error::Singular { context: "TD matrix A" })
}

/// The `d x n` matrix `(X^T X)^-1 X^T`, requiring full column rank.
pub fn ols_operator(dataset: &Dataset) -> Result<DMatrix<f64>> {
    let x = dataset.features();
    let gram = x.transpose() * x;
    if linalg::rank(&gram) < dataset.d() {
        return Err(Error::Singular { context: "Gram matrix X^T X" });
    }
    gram.lu()
        .solve(&x.transpose())
        .ok_or(Error::Singular { context: "Gram matrix X^T X" })
}

fn check_cov(noise_cov: &DMatrix<f64>, n: usize) -> Result<()> {
    if noise_cov.nrows() != n || noise_cov.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "noise covariance is {}x{} for {n} points",
            noise_cov.nrows(),
            noise_cov.ncols()
        )));
    }
    Ok(())
}

fn sandwich(op: &DMatrix<f64>, noise_cov: &DMatrix<f64>) -> CovarianceEstimate {
    let m = op * noise_cov * op.transpose();
    CovarianceEstimate {
        matrix: (&m + m.transpose()) * 0.5,
        source: CovarianceSource::ClosedForm,
    }
}

/// `A^-1 X^T S C S^T X A^-T`.
pub fn td_covariance_closed_form(
    dataset: &Dataset,
    p: &TransitionMatrix,
    gamma: f64,
    noise_cov: &DMatrix<f64>,
) -> Result<CovarianceEstimate> {
    check_cov(noise_cov, dataset.n())?;
    Ok(sandwich(&td_operator(dataset, p, gamma)?, noise_cov))
}

/// `(X^T X)^-1 X^T C X (X^T X)^-1`.
pub fn ols_covariance(dataset: &Dataset, noise_cov: &DMatrix<f64>) -> Result<CovarianceEstimate> {
    check_cov(noise_cov, dataset.n())?;
    Ok(sandwich(&ols_operator(dataset)?, noise_cov))
}

/// Moments of the linear estimator `w = K (y + eps)` over `draws` noise
/// vectors `eps ~ N(0, C)`.
pub fn monte_carlo_moments(
    operator: &DMatrix<f64>,
    labels: &DVector<f64>,
    noise_cov: &DMatrix<f64>,
    draws: usize,
    seed: u64,
) -> Result<MonteCarloMoments> {
    let n = labels.len();
    if operator.ncols() != n {
        return Err(Error::InvalidInput("operator does not match label count".into()));
    }
    check_cov(noise_cov, n)?;
    if draws < 2 {
        return Err(Error::InvalidInput("Monte Carlo needs at least two draws".into()));
    }
    let l = linalg::cholesky(noise_cov, "Monte Carlo noise covariance")?.l();
    let mut rng = rng::stream(seed);
    let d = operator.nrows();
    let k_l = operator * l;
    let center = operator * labels;
    let mut sum = DVector::zeros(d);
    let mut outer = DMatrix::zeros(d, d);
    let mut xi = DVector::zeros(n);
    for _ in 0..draws {
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let dev = &k_l * &xi;
        sum += &dev;
        outer.ger(1.0, &dev, &dev, 1.0);
    }
    let m = draws as f64;
    let dev_mean = sum / m;
    let cov = (outer - &dev_mean * dev_mean.transpose() * m) / (m - 1.0);
    let std_error = cov.diagonal().map(|v| (v.max(0.0) / m).sqrt());
    Ok(MonteCarloMoments {
        mean: center + dev_mean,
        std_error,
        covariance: CovarianceEstimate {
            matrix: (&cov + cov.transpose()) * 0.5,
            source: CovarianceSource::MonteCarlo,
        },
        draws,
    })
}

/// Monte Carlo counterpart of [`td_covariance_closed_form`].
pub fn td_covariance_monte_carlo(
    dataset: &Dataset,
    p: &TransitionMatrix,
    gamma: f64,
    noise_cov: &DMatrix<f64>,
    draws: usize,
    seed: u64,
) -> Result<MonteCarloMoments> {
    let op = td_operator(dataset, p, gamma)?;
    monte_carlo_moments(&op, dataset.scalar_labels()?, noise_cov, draws, seed)
}

/// Monte Carlo counterpart of [`ols_covariance`].
pub fn ols_covariance_monte_carlo(
    dataset: &Dataset,
    noise_cov: &DMatrix<f64>,
    draws: usize,
    seed: u64,
) -> Result<MonteCarloMoments> {
    let op = ols_operator(dataset)?;
    monte_carlo_moments(&op, dataset.scalar_labels()?, noise_cov, draws, seed)
}
