//! The Markov reward process view of a supervised dataset.
//!
//! Each data point is a state whose feature vector is the row of the design
//! matrix and whose value is its label. A row-stochastic [`TransitionMatrix`]
//! links the points; its [`StationaryDistribution`] weights the states in the
//! TD linear system, and [`reward_vector`] recovers the rewards implied by
//! the labels through the Bellman equation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Row sums of a transition matrix must be within this of one.
pub const ROW_SUM_TOL: f64 = 1e-9;

pub const STATIONARY_TOL: f64 = 1e-12;
pub const STATIONARY_MAX_ITERS: usize = 100_000;

pub const DSM_TOL: f64 = 1e-9;
pub const DSM_MAX_ITERS: usize = 10_000;

/// Labels aligned with the rows of the feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Scalar(DVector<f64>),
    /// One row per data point, one column per class; rows are probability
    /// vectors (one-hot for hard labels).
    Multiclass(DMatrix<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Scalar(y) => y.len(),
            Labels::Multiclass(y) => y.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Labels,
}

impl Dataset {
    /// A dataset with scalar labels.
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        Self::with_labels(features, Labels::Scalar(labels))
    }

    /// A dataset whose labels are per-class probability rows.
    pub fn multiclass(features: DMatrix<f64>, probs: DMatrix<f64>) -> Result<Self> {
        Self::with_labels(features, Labels::Multiclass(probs))
    }

    /// One-hot encodes integer class labels in `0..classes`.
    pub fn from_class_indices(
        features: DMatrix<f64>,
        classes: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidInput("need at least two classes".into()));
        }
        let mut probs = DMatrix::zeros(classes.len(), num_classes);
        for (i, &c) in classes.iter().enumerate() {
            if c >= num_classes {
                return Err(Error::InvalidInput(format!(
                    "class {c} at row {i} is out of range 0..{num_classes}"
                )));
            }
            probs[(i, c)] = 1.0;
        }
        Self::multiclass(features, probs)
    }

    pub fn with_labels(features: DMatrix<f64>, labels: Labels) -> Result<Self> {
        let n = features.nrows();
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "a dataset needs at least 2 points, got {n}"
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::InvalidInput("feature matrix has no columns".into()));
        }
        if labels.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| features.row(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput(format!("feature row {i} has a non-finite entry")));
        }
        match &labels {
            Labels::Scalar(y) => {
                if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!("label {i} is not finite")));
                }
            }
            Labels::Multiclass(y) => {
                for i in 0..n {
                    let row = y.row(i);
                    if row.iter().any(|&v| !v.is_finite() || v < 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "class probabilities at row {i} must be finite and nonnegative"
                        )));
                    }
                    if (row.sum() - 1.0).abs() > 1e-9 {
                        return Err(Error::InvalidInput(format!(
                            "class probabilities at row {i} sum to {}",
                            row.sum()
                        )));
                    }
                }
            }
        }
        Ok(Self { features, labels })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    /// The label vector, or an error for multiclass data.
    pub fn scalar_labels(&self) -> Result<&DVector<f64>> {
        match &self.labels {
            Labels::Scalar(y) => Ok(y),
            Labels::Multiclass(_) => Err(Error::InvalidInput(
                "operation requires scalar labels".into(),
            )),
        }
    }

    /// Rows `idx` of the dataset, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Dataset> {
        let features = self.features.select_rows(idx.iter());
        let labels = match &self.labels {
            Labels::Scalar(y) => Labels::Scalar(y.select_rows(idx.iter())),
            Labels::Multiclass(y) => Labels::Multiclass(y.select_rows(idx.iter())),
        };
        Dataset::with_labels(features, labels)
    }
}

/// A row-stochastic matrix over the data points.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    probs: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if !probs.is_square() || probs.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "transition matrix must be square and non-empty, got {}x{}",
                probs.nrows(),
                probs.ncols()
            )));
        }
        for i in 0..probs.nrows() {
            let row = probs.row(i);
            if row.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "transition row {i} has a negative or non-finite entry"
                )));
            }
            let s = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!("transition row {i} sums to {s}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("need n >= 2, got {n}")));
        }
        Ok(Self {
            probs: DMatrix::from_element(n, n, 1.0 / n as f64),
        })
    }

    /// Divides every row of a nonnegative kernel by its sum.
    pub fn row_normalized(mut kernel: DMatrix<f64>) -> Result<Self> {
        if !kernel.is_square() {
            return Err(Error::InvalidInput("kernel is not square".into()));
        }
        for i in 0..kernel.nrows() {
            let mut row = kernel.row_mut(i);
            if row.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "kernel row {i} has a negative or non-finite entry"
                )));
            }
            let s = row.sum();
            if s <= 0.0 {
                return Err(Error::ZeroRow { row: i });
            }
            row /= s;
        }
        Self::new(kernel)
    }

    pub fn n(&self) -> usize {
        self.probs.nrows()
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.probs
    }

    /// Largest deviation of a column sum from one.
    pub fn column_residual(&self) -> f64 {
        (0..self.n())
            .map(|j| (self.probs.column(j).sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Long-run state visitation probabilities of a transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    weights: DVector<f64>,
}

impl StationaryDistribution {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if weights.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidInput(
                "distribution weights must be finite and nonnegative".into(),
            ));
        }
        let s = weights.sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidInput(format!("distribution sums to {s}")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: DVector::from_element(n, 1.0 / n as f64),
        }
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Recipe for a transition matrix over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionKind {
    /// Every entry `1/n`.
    Uniform,
    /// i.i.d. `U(0,1)` entries, row-normalized.
    Random,
    /// `Random` with the last column zeroed, so the last state is never entered.
    Deficient,
    /// Label-similarity kernel `exp(-(y_i - y_j)^2 / v) + 0.1`, `v = Var(y)/n`.
    DistanceClose,
    /// Label-dissimilarity kernel `1 - exp(-(y_i - y_j)^2 / v)`.
    DistanceFar,
    /// `(1 - eta)(1 - C) + eta C` elementwise for a correlation-like `C`.
    CovInterp { eta: f64, covariance: DMatrix<f64> },
}

impl TransitionKind {
    pub fn name(&self) -> &'static str {
        match self {
            TransitionKind::Uniform => "uniform",
            TransitionKind::Random => "random",
            TransitionKind::Deficient => "deficient",
            TransitionKind::DistanceClose => "close",
            TransitionKind::DistanceFar => "far",
            TransitionKind::CovInterp { .. } => "cov-interp",
        }
    }
}

/// Builds a row-stochastic transition matrix for `dataset`.
pub fn build_transition(
    dataset: &Dataset,
    kind: &TransitionKind,
    rng_seed: u64,
) -> Result<TransitionMatrix> {
    let n = dataset.n();
    match kind {
        TransitionKind::Uniform => TransitionMatrix::uniform(n),
        TransitionKind::Random | TransitionKind::Deficient => {
            let mut rng = rng::stream(rng_seed);
            let mut m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
            if matches!(kind, TransitionKind::Deficient) {
                m.column_mut(n - 1).fill(0.0);
            }
            TransitionMatrix::row_normalized(m)
        }
        TransitionKind::DistanceClose | TransitionKind::DistanceFar => {
            let y = dataset.scalar_labels()?;
            let k = label_similarity(y);
            let m = if matches!(kind, TransitionKind::DistanceClose) {
                k.map(|v| v + 0.1)
            } else {
                k.map(|v| 1.0 - v)
            };
            TransitionMatrix::row_normalized(m)
        }
        TransitionKind::CovInterp { eta, covariance } => {
            if !(0.0..=1.0).contains(eta) {
                return Err(Error::InvalidInput(format!("eta must be in [0,1], got {eta}")));
            }
            if covariance.nrows() != n || covariance.ncols() != n {
                return Err(Error::InvalidInput(format!(
                    "covariance is {}x{} but the dataset has {n} points",
                    covariance.nrows(),
                    covariance.ncols()
                )));
            }
            if covariance
                .iter()
                .any(|&c| !c.is_finite() || !(0.0..=1.0).contains(&c))
            {
                return Err(Error::InvalidInput(
                    "covariance entries must lie in [0,1] for interpolation".into(),
                ));
            }
            let m = covariance.map(|c| ((1.0 - eta) * (1.0 - c) + eta * c).max(0.0));
            TransitionMatrix::row_normalized(m)
        }
    }
}

/// `exp(-(y_i - y_j)^2 / v)` with `v` the population variance of `y` over `n`.
fn label_similarity(y: &DVector<f64>) -> DMatrix<f64> {
    let n = y.len();
    let mean = y.mean();
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let v = var / n as f64;
    DMatrix::from_fn(n, n, |i, j| {
        let d2 = (y[i] - y[j]).powi(2);
        if d2 == 0.0 {
            1.0
        } else if v == 0.0 {
            0.0
        } else {
            (-d2 / v).exp()
        }
    })
}

/// Alternating row/column normalization (Sinkhorn) of a nonnegative matrix.
///
/// Stops once, after a row pass, every column sum is within `tol` of one. The
/// returned matrix is the row-normalized iterate.
pub fn dsm_project(m: &DMatrix<f64>, max_iters: usize, tol: f64) -> Result<TransitionMatrix> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::InvalidInput("DSM projection needs a square matrix".into()));
    }
    let n = m.nrows();
    if m.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::InvalidInput(
            "DSM projection needs a finite nonnegative matrix".into(),
        ));
    }
    if let Some(row) = (0..n).find(|&i| m.row(i).sum() <= 0.0) {
        return Err(Error::ZeroRow { row });
    }
    if let Some(column) = (0..n).find(|&j| m.column(j).sum() <= 0.0) {
        return Err(Error::ZeroColumn { column });
    }

    // Row-major scratch copy; the inner loops dominate for slow instances.
    let mut a: Vec<f64> = (0..n).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect();
    let mut col = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        col.iter_mut().for_each(|c| *c = 0.0);
        for row in a.chunks_exact_mut(n) {
            let s: f64 = row.iter().sum();
            for (x, c) in row.iter_mut().zip(col.iter_mut()) {
                *x /= s;
                *c += *x;
            }
        }
        residual = col.iter().map(|c| (c - 1.0).abs()).fold(0.0, f64::max);
        if residual <= tol {
            return TransitionMatrix::new(DMatrix::from_row_slice(n, n, &a));
        }
        for row in a.chunks_exact_mut(n) {
            for (x, c) in row.iter_mut().zip(col.iter()) {
                *x /= c;
            }
        }
    }
    Err(Error::NonConvergence {
        what: "DSM projection",
        iterations: max_iters,
        residual,
    })
}

/// Power iteration from the uniform vector until `||pi P - pi||_1 <= tol`.
pub fn stationary_distribution(
    p: &TransitionMatrix,
    tol: f64,
    max_iters: usize,
) -> Result<StationaryDistribution> {
    let mut pi = DVector::from_element(p.n(), 1.0 / p.n() as f64);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let mut next = p.probs().tr_mul(&pi);
        residual = (&next - &pi).lp_norm(1);
        if residual <= tol {
            return StationaryDistribution::new(pi);
        }
        next /= next.sum();
        pi = next;
    }
    Err(Error::NonConvergence {
        what: "stationary distribution",
        iterations: max_iters,
        residual,
    })
}

/// [`stationary_distribution`] with the default tolerance and iteration cap.
pub fn stationary(p: &TransitionMatrix) -> Result<StationaryDistribution> {
    stationary_distribution(p, STATIONARY_TOL, STATIONARY_MAX_ITERS)
}

/// Expected rewards `r = (I - gamma P) z` implied by state values `z`.
pub fn reward_vector(logits: &DVector<f64>, p: &TransitionMatrix, gamma: f64) -> Result<DVector<f64>> {
    check_gamma(gamma)?;
    if logits.len() != p.n() {
        return Err(Error::InvalidInput(format!(
            "{} logits for a {}-state chain",
            logits.len(),
            p.n()
        )));
    }
    let next = p.probs() * logits;
    Ok(logits - next * gamma)
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!("gamma must lie in [0,1), got {gamma}")));
    }
    Ok(())
}

/// Draws the next state from row `current` of `p`.
pub fn sample_transition(p: &TransitionMatrix, current: usize, rng: &mut StreamRng) -> Result<usize> {
    if current >= p.n() {
        return Err(Error::InvalidInput(format!(
            "state {current} out of range for {} states",
            p.n()
        )));
    }
    let mut acc = 0.0;
    let cdf: Vec<f64> = p
        .probs()
        .row(current)
        .iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect();
    Ok(draw_from_cdf(&cdf, p.probs().row(current).iter().copied(), rng))
}

fn draw_from_cdf(cdf: &[f64], probs: impl DoubleEndedIterator<Item = f64> + ExactSizeIterator, rng: &mut StreamRng) -> usize {
    let u = rng.random::<f64>() * cdf[cdf.len() - 1];
    let j = cdf.partition_point(|&c| c <= u);
    if j < cdf.len() {
        j
    } else {
        // u landed on the rounding slack at the top; take the last reachable state.
        let n = probs.len();
        n - 1 - probs.rev().position(|v| v > 0.0).unwrap_or(0)
    }
}

/// Precomputed cumulative rows for repeated sampling from one matrix.
#[derive(Debug, Clone)]
pub struct TransitionSampler {
    n: usize,
    cdf: Vec<f64>,
    probs: Vec<f64>,
}

impl TransitionSampler {
    pub fn new(p: &TransitionMatrix) -> Self {
        let n = p.n();
        let mut cdf = Vec::with_capacity(n * n);
        let mut probs = Vec::with_capacity(n * n);
        for i in 0..n {
            let mut acc = 0.0;
            for &v in p.probs().row(i).iter() {
                acc += v;
                cdf.push(acc);
                probs.push(v);
            }
        }
        Self { n, cdf, probs }
    }

    pub fn next(&self, current: usize, rng: &mut StreamRng) -> usize {
        let row = current * self.n..(current + 1) * self.n;
        draw_from_cdf(&self.cdf[row.clone()], self.probs[row].iter().copied(), rng)
    }
}

/// Draws a state from a distribution.
pub fn sample_state(dist: &StationaryDistribution, rng: &mut StreamRng) -> usize {
    let mut acc = 0.0;
    let cdf: Vec<f64> = dist
        .weights()
        .iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect();
    draw_from_cdf(&cdf, dist.weights().iter().copied(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn scalar_dataset(labels: &[f64]) -> Dataset {
        let n = labels.len();
        Dataset::new(
            DMatrix::from_fn(n, 2, |i, j| (i + j) as f64),
            DVector::from_column_slice(labels),
        )
        .unwrap()
    }

    fn assert_stochastic(p: &TransitionMatrix) {
        for i in 0..p.n() {
            assert!(p.probs().row(i).iter().all(|&v| v >= 0.0));
            assert_abs_diff_eq!(p.probs().row(i).sum(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn dataset_rejects_single_point() {
        let err = Dataset::new(DMatrix::zeros(1, 2), DVector::zeros(1)).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn dataset_rejects_non_finite_features() {
        let mut x = DMatrix::zeros(3, 2);
        x[(1, 0)] = f64::NAN;
        assert!(Dataset::new(x, DVector::zeros(3)).is_err());
    }

    #[test]
    fn one_hot_rows_sum_to_one() {
        let ds = Dataset::from_class_indices(DMatrix::zeros(3, 1), &[0, 2, 1], 3).unwrap();
        match ds.labels() {
            Labels::Multiclass(y) => {
                assert_eq!(y[(1, 2)], 1.0);
                assert_eq!(y.row(0).sum(), 1.0);
            }
            _ => unreachable!(),
        }
        assert!(Dataset::from_class_indices(DMatrix::zeros(2, 1), &[0, 3], 3).is_err());
    }

    #[test]
    fn uniform_entries_are_one_over_n() {
        let p = build_transition(&scalar_dataset(&[0.0, 1.0, 2.0, 3.0]), &TransitionKind::Uniform, 0).unwrap();
        assert!(p.probs().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn deficient_never_enters_last_state() {
        for seed in 0..5 {
            let p = build_transition(&scalar_dataset(&[0.0, 1.0, 2.0]), &TransitionKind::Deficient, seed)
                .unwrap();
            assert!(p.probs().column(2).iter().all(|&v| v == 0.0));
            assert_stochastic(&p);
        }
    }

    #[test]
    fn distance_close_matches_hand_evaluated_kernel() {
        // Var([0,1]) = 0.25, v = 0.125, (0-1)^2 / v = 8.
        let p = build_transition(&scalar_dataset(&[0.0, 1.0]), &TransitionKind::DistanceClose, 0).unwrap();
        let off = 0.1 + (-8.0f64).exp();
        let row_sum = 1.1 + off;
        assert_abs_diff_eq!(p.probs()[(0, 0)], 1.1 / row_sum, epsilon = 1e-15);
        assert_abs_diff_eq!(p.probs()[(0, 1)], off / row_sum, epsilon = 1e-15);
        assert_abs_diff_eq!(p.probs()[(1, 1)], 1.1 / row_sum, epsilon = 1e-15);
    }

    #[test]
    fn distance_far_with_constant_labels_is_a_zero_row() {
        let err = build_transition(&scalar_dataset(&[1.0, 1.0, 1.0]), &TransitionKind::DistanceFar, 0)
            .unwrap_err();
        assert!(matches!(err, Error::ZeroRow { row: 0 }));
    }

    #[test]
    fn distance_kernels_need_scalar_labels() {
        let ds = Dataset::from_class_indices(DMatrix::zeros(2, 1), &[0, 1], 2).unwrap();
        assert!(build_transition(&ds, &TransitionKind::DistanceClose, 0).is_err());
    }

    #[test]
    fn cov_interp_clamps_and_normalizes() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let kind = TransitionKind::CovInterp { eta: 0.9, covariance: c };
        let p = build_transition(&scalar_dataset(&[0.0, 1.0]), &kind, 0).unwrap();
        // diag 0.9, off-diag 0.1*0.5 + 0.9*0.5 = 0.5
        assert_abs_diff_eq!(p.probs()[(0, 0)], 0.9 / 1.4, epsilon = 1e-15);
        let bad = TransitionKind::CovInterp { eta: 0.5, covariance: DMatrix::identity(3, 3) };
        assert!(build_transition(&scalar_dataset(&[0.0, 1.0]), &bad, 0).is_err());
        let out_of_range = TransitionKind::CovInterp {
            eta: 0.5,
            covariance: DMatrix::from_element(2, 2, 1.5),
        };
        assert!(build_transition(&scalar_dataset(&[0.0, 1.0]), &out_of_range, 0).is_err());
    }

    #[test]
    fn dsm_fixed_point_is_unchanged() {
        let m = DMatrix::from_element(2, 2, 0.5);
        let p = dsm_project(&m, DSM_MAX_ITERS, DSM_TOL).unwrap();
        assert_eq!(p.probs(), &m);
    }

    #[test]
    fn dsm_triangular_converges_to_identity() {
        // The off-diagonal mass decays like 1/(2k), so tol 1e-9 takes ~5e8 sweeps.
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        let p = dsm_project(&m, 1_000_000_000, 1e-9).unwrap();
        assert_abs_diff_eq!(p.probs()[(0, 0)], 1.0, epsilon = 2e-9);
        assert_abs_diff_eq!(p.probs()[(0, 1)], 0.0, epsilon = 2e-9);
        assert_abs_diff_eq!(p.probs()[(1, 1)], 1.0, epsilon = 2e-9);
        assert!(p.column_residual() <= 1e-9);
    }

    #[test]
    fn dsm_reports_residual_on_non_convergence() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        match dsm_project(&m, 10, 1e-9).unwrap_err() {
            Error::NonConvergence { residual, iterations, .. } => {
                assert_eq!(iterations, 10);
                assert!(residual > 1e-9);
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn dsm_rejects_zero_column() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            dsm_project(&m, DSM_MAX_ITERS, DSM_TOL),
            Err(Error::ZeroColumn { column: 1 })
        ));
    }

    #[test]
    fn stationary_of_uniform_is_uniform() {
        let pi = stationary(&TransitionMatrix::uniform(5).unwrap()).unwrap();
        for &w in pi.weights().iter() {
            assert_abs_diff_eq!(w, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn stationary_two_state_balance() {
        // 0.1 pi_0 = 0.5 pi_1 => pi = (5/6, 1/6)
        let p = TransitionMatrix::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.5, 0.5])).unwrap();
        let pi = stationary(&p).unwrap();
        assert_abs_diff_eq!(pi.weights()[0], 5.0 / 6.0, epsilon = 1e-11);
        assert_abs_diff_eq!(pi.weights()[1], 1.0 / 6.0, epsilon = 1e-11);
    }

    #[test]
    fn stationary_detects_periodic_chain() {
        let p = TransitionMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 0.5, 0.5, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        ))
        .unwrap();
        assert!(matches!(
            stationary_distribution(&p, 1e-12, 1000),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn stationary_is_stable_under_extra_iterations() {
        let p = build_transition(&scalar_dataset(&[0.0, 1.0, 3.0, 4.0, 7.0]), &TransitionKind::Random, 3)
            .unwrap();
        let a = stationary_distribution(&p, 1e-12, 100_000).unwrap();
        let b = stationary_distribution(&p, 1e-15, 100_000).unwrap();
        assert!((a.weights() - b.weights()).amax() < 1e-12);
    }

    #[test]
    fn deficient_stationary_lacks_full_support() {
        let y: Vec<f64> = (0..20).map(f64::from).collect();
        let p = build_transition(&scalar_dataset(&y), &TransitionKind::Deficient, 11).unwrap();
        let pi = stationary(&p).unwrap();
        assert!(pi.weights()[19] <= 1e-6);
    }

    #[test]
    fn reward_examples() {
        let p = TransitionMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let r = reward_vector(&DVector::from_vec(vec![1.0, 2.0]), &p, 0.5).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 1.5]);

        let z = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let u = TransitionMatrix::uniform(3).unwrap();
        let r = reward_vector(&z, &u, 0.5).unwrap();
        for &v in r.iter() {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        }
        assert_eq!(reward_vector(&z, &u, 0.0).unwrap(), z);
        assert!(reward_vector(&z, &u, 1.0).is_err());
        assert!(reward_vector(&z, &u, -0.1).is_err());
    }

    #[test]
    fn degenerate_row_always_samples_its_mass() {
        let p = TransitionMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.0, 0.2, 0.3, 0.5, 0.0, 0.0, 1.0],
        ))
        .unwrap();
        let mut rng = rng::stream(5);
        for _ in 0..1000 {
            assert_eq!(sample_transition(&p, 0, &mut rng).unwrap(), 0);
            assert_eq!(sample_transition(&p, 2, &mut rng).unwrap(), 2);
        }
        assert!(sample_transition(&p, 3, &mut rng).is_err());
    }

    #[test]
    fn uniform_sampling_frequencies_within_three_sigma() {
        let n = 5;
        let draws = 100_000;
        let p = TransitionMatrix::uniform(n).unwrap();
        let mut rng = rng::stream(42);
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            counts[sample_transition(&p, 1, &mut rng).unwrap()] += 1;
        }
        let q = 1.0 / n as f64;
        let sigma = (q * (1.0 - q) / draws as f64).sqrt();
        for c in counts {
            assert!((c as f64 / draws as f64 - q).abs() <= 3.0 * sigma);
        }
    }

    #[test]
    fn sampler_matches_single_draws_for_same_seed() {
        let p = build_transition(&scalar_dataset(&[0.0, 1.0, 2.0, 5.0]), &TransitionKind::Random, 9).unwrap();
        let sampler = TransitionSampler::new(&p);
        let (mut a, mut b) = (rng::stream(1), rng::stream(1));
        let (mut s, mut t) = (0, 0);
        for _ in 0..500 {
            s = sample_transition(&p, s, &mut a).unwrap();
            t = sampler.next(t, &mut b);
            assert_eq!(s, t);
        }
    }

    fn kinds() -> impl Strategy<Value = TransitionKind> {
        prop_oneof![
            Just(TransitionKind::Uniform),
            Just(TransitionKind::Random),
            Just(TransitionKind::Deficient),
            Just(TransitionKind::DistanceClose),
            Just(TransitionKind::DistanceFar),
            (0.0f64..=1.0).prop_map(|eta| TransitionKind::CovInterp {
                eta,
                covariance: DMatrix::from_fn(6, 6, |i, j| match (i == j, i / 3 == j / 3) {
                    (true, _) => 1.0,
                    (false, true) => 0.7,
                    _ => 0.0,
                }),
            }),
        ]
    }

    proptest! {
        #[test]
        fn every_kind_is_row_stochastic(kind in kinds(), seed in any::<u64>(), labels in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let ds = scalar_dataset(&labels);
            match build_transition(&ds, &kind, seed) {
                Ok(p) => {
                    for i in 0..p.n() {
                        prop_assert!(p.probs().row(i).iter().all(|&v| v >= 0.0));
                        prop_assert!((p.probs().row(i).sum() - 1.0).abs() <= 1e-9);
                    }
                }
                // Only the far kernel can produce an empty row (duplicate labels).
                Err(Error::ZeroRow { .. }) => prop_assert_eq!(kind, TransitionKind::DistanceFar),
                Err(e) => prop_assert!(false, "unexpected error {}", e),
            }
        }

        #[test]
        fn bellman_identity_holds(seed in any::<u64>(), gamma in 0.0f64..0.999, z in proptest::collection::vec(-100.0f64..100.0, 6)) {
            let ds = scalar_dataset(&z);
            let p = build_transition(&ds, &TransitionKind::Random, seed).unwrap();
            let z = DVector::from_vec(z);
            let r = reward_vector(&z, &p, gamma).unwrap();
            let back = &r + (p.probs() * &z) * gamma;
            prop_assert!((back - z).amax() <= 1e-12);
        }

        #[test]
        fn dsm_projection_has_uniform_stationary(seed in any::<u64>()) {
            let mut rng = rng::stream(seed);
            let m = DMatrix::from_fn(8, 8, |_, _| 0.05 + rng.random::<f64>());
            let p = dsm_project(&m, DSM_MAX_ITERS, DSM_TOL).unwrap();
            prop_assert!(p.column_residual() <= DSM_TOL);
            let pi = stationary(&p).unwrap();
            prop_assert!(pi.weights().iter().all(|&w| (w - 0.125).abs() <= 1e-6));
        }
    }
}
