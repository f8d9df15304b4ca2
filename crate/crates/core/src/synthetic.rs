//! Synthetic instances: Gaussian designs, linear ground truth, and
//! block-correlated Gaussian-process outputs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, StreamRng};

pub const DEFAULT_OBS_NOISE_SD: f64 = 0.1;

fn normals(rng: &mut StreamRng, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// `n x d` matrix of i.i.d. standard normal entries, filled row by row.
pub fn gaussian_design(n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!("design must be at least 1x1, got {n}x{d}")));
    }
    let mut rng = rng::stream(seed);
    let data: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    Ok(DMatrix::from_row_slice(n, d, &data))
}

/// `X w + noise_sd * xi` with `xi` standard normal.
pub fn linear_labels(x: &DMatrix<f64>, w: &DVector<f64>, noise_sd: f64, seed: u64) -> Result<DVector<f64>> {
    if x.ncols() != w.len() {
        return Err(Error::InvalidInput(format!(
            "weights have length {} for {} features",
            w.len(),
            x.ncols()
        )));
    }
    let mut rng = rng::stream(seed);
    Ok(x * w + normals(&mut rng, x.nrows()) * noise_sd)
}

/// Rescales all rows by the largest row norm so every row has norm at most one.
pub fn scale_to_unit_ball(x: &DMatrix<f64>) -> DMatrix<f64> {
    let max = (0..x.nrows()).map(|i| x.row(i).norm()).fold(0.0, f64::max);
    if max > 0.0 {
        x / max
    } else {
        x.clone()
    }
}

/// Block-diagonal matrix whose blocks have unit diagonal and `rho` elsewhere.
pub fn block_covariance(n: usize, block_size: usize, rho: f64) -> Result<DMatrix<f64>> {
    if block_size == 0 || n % block_size != 0 {
        return Err(Error::InvalidInput(format!(
            "block size {block_size} does not divide {n}"
        )));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("rho must lie in [0,1), got {rho}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if i / block_size == j / block_size {
            rho
        } else {
            0.0
        }
    }))
}

/// Gaussian-process outputs with a linear mean and block-correlated noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GpSpec {
    pub n: usize,
    pub d: usize,
    pub block_size: usize,
    pub rho: f64,
    pub obs_noise_sd: f64,
    pub true_weights: DVector<f64>,
}

impl GpSpec {
    /// Observation noise 0.1 and all-ones true weights.
    pub fn new(n: usize, d: usize, block_size: usize, rho: f64) -> Result<Self> {
        let spec = Self {
            n,
            d,
            block_size,
            rho,
            obs_noise_sd: DEFAULT_OBS_NOISE_SD,
            true_weights: DVector::from_element(d, 1.0),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 || self.n % self.block_size != 0 {
            return Err(Error::InvalidInput(format!(
                "block size {} does not divide n = {}",
                self.block_size, self.n
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidInput(format!("rho must lie in [0,1), got {}", self.rho)));
        }
        if !(self.obs_noise_sd >= 0.0) {
            return Err(Error::InvalidInput("observation noise sd must be nonnegative".into()));
        }
        if self.true_weights.len() != self.d {
            return Err(Error::InvalidInput("true weights do not match d".into()));
        }
        Ok(())
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        block_covariance(self.n, self.block_size, self.rho)
    }
}

/// `y = X w* + L xi + obs_noise_sd * eta`, with `L L^T` the block covariance.
pub fn sample_gp(spec: &GpSpec, features: &DMatrix<f64>, seed: u64) -> Result<DVector<f64>> {
    spec.validate()?;
    if features.nrows() != spec.n || features.ncols() != spec.d {
        return Err(Error::InvalidInput(format!(
            "features are {}x{}, spec expects {}x{}",
            features.nrows(),
            features.ncols(),
            spec.n,
            spec.d
        )));
    }
    let chol = linalg::cholesky(&spec.covariance()?, "GP covariance")?;
    let mut rng = rng::stream(seed);
    let xi = normals(&mut rng, spec.n);
    let eta = normals(&mut rng, spec.n);
    Ok(features * &spec.true_weights + chol.l() * xi + eta * spec.obs_noise_sd)
}

/// A reproducible noise vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub epsilon: DVector<f64>,
    pub seed: u64,
}

/// `scale * L xi` for the Cholesky factor `L` of `cov`; callers add it to labels.
pub fn correlated_noise_for(labels: &DVector<f64>, cov: &DMatrix<f64>, scale: f64, seed: u64) -> Result<NoiseDraw> {
    let n = labels.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "covariance is {}x{} for {n} labels",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let chol = linalg::cholesky(cov, "noise covariance")?;
    let mut rng = rng::stream(seed);
    let xi = normals(&mut rng, n);
    Ok(NoiseDraw {
        epsilon: chol.l() * xi * scale,
        seed,
    })
}
