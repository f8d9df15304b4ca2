use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde_json::json;

use super::data::{load_csv, CsvData};
use super::table::{git_describe, Cell, ResultTable};
use super::{Estimator, Experiment, ExperimentConfig, TransitionChoice};
use crate::error::{Error, Result};
use crate::link::{LinkFunction, LinkKind};
use crate::mrp::{self, build_transition, Dataset, TransitionKind, TransitionMatrix};
use crate::rng::{self, derive_seed, real_coord};
use crate::solvers;
use crate::synthetic::{self, GpSpec};
use crate::td::{self, StepSize, TdConfig};
use crate::variance::{self, VarianceSpec};

/// Runs the configured experiment and stamps the table metadata.
pub fn run(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let start = Instant::now();
    let mut table = match cfg.experiment {
        Experiment::MinNormTable => run_min_norm_table(cfg)?,
        Experiment::GpSweep => run_gp_sweep(cfg)?,
        Experiment::VarianceCheck => run_variance_check(cfg)?,
        Experiment::Contraction => run_contraction(cfg)?,
        Experiment::SampleRate => run_sample_rate(cfg)?,
        Experiment::FitCsv => fit_csv(cfg)?,
    };
    table.meta.insert("experiment".into(), json!(cfg.experiment.name()));
    table.meta.insert("git_describe".into(), json!(git_describe()));
    table.meta.insert("base_seed".into(), json!(cfg.base_seed));
    table.meta.insert("seeds".into(), json!(cfg.seeds));
    table.wall_time_secs = Some(start.elapsed().as_secs_f64());
    Ok(table)
}

fn transition_kind(choice: TransitionChoice) -> Result<TransitionKind> {
    Ok(match choice {
        TransitionChoice::Uniform => TransitionKind::Uniform,
        TransitionChoice::Random => TransitionKind::Random,
        TransitionChoice::Deficient => TransitionKind::Deficient,
        TransitionChoice::Close => TransitionKind::DistanceClose,
        TransitionChoice::Far => TransitionKind::DistanceFar,
        TransitionChoice::CovInterp => {
            return Err(Error::Config("cov-interp needs a covariance and is only available in gp-sweep and fit".into()))
        }
    })
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn first_error<T>(results: &[Result<T>]) -> String {
    results
        .iter()
        .find_map(|r| r.as_ref().err().map(|e| e.to_string()))
        .unwrap_or_default()
}

fn rmse(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> f64 {
    ((x * w - y).norm_squared() / y.len() as f64).sqrt()
}

/// Distance between the TD fixed point and the minimum-norm OLS solution
/// on Gaussian designs with `y = X 1 + N(0, 0.1^2)`.
pub fn run_min_norm_table(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let kinds = cfg
        .transitions
        .iter()
        .map(|&c| transition_kind(c).map(|k| (c, k)))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for &(choice, ref kind) in &kinds {
        for &d in &cfg.dims {
            for &gamma in &cfg.gammas {
                cells.push((choice, kind.clone(), d, gamma));
            }
        }
    }
    let n = cfg.n;
    let results: Vec<Vec<Result<f64>>> = cells
        .par_iter()
        .map(|(choice, kind, d, gamma)| {
            (0..cfg.seeds as u64)
                .map(|seed| {
                    let data_seed = derive_seed(cfg.base_seed, &[*d as u64, seed]);
                    let x = synthetic::gaussian_design(n, *d, data_seed)?;
                    let w = DVector::from_element(*d, 1.0);
                    let y = synthetic::linear_labels(&x, &w, 0.1, derive_seed(data_seed, &[1]))?;
                    let ds = Dataset::new(x, y)?;
                    let p_seed = derive_seed(cfg.base_seed, &[*d as u64, seed, choice.code()]);
                    let p = build_transition(&ds, kind, p_seed)?;
                    let td = solvers::td_closed_form(&ds, &p, *gamma)?.weights;
                    Ok((td - solvers::ols_min_norm(&ds)?).norm())
                })
                .collect()
        })
        .collect();
    let mut table = ResultTable::new([
        "transition",
        "d",
        "n",
        "gamma",
        "seeds",
        "mean_distance",
        "std_error",
        "failures",
        "error",
    ]);
    for ((choice, _, d, gamma), res) in cells.iter().zip(&results) {
        let ok: Vec<f64> = res.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let (mean, sd) = mean_sd(&ok);
        table.push(vec![
            choice.name().into(),
            (*d).into(),
            n.into(),
            (*gamma).into(),
            ok.len().into(),
            mean.into(),
            (sd / (ok.len() as f64).sqrt()).into(),
            (res.len() - ok.len()).into(),
            first_error(res).into(),
        ])?;
    }
    Ok(table)
}

/// `(rmse_td, rmse_ols)` for one GP draw with a contiguous half split.
fn gp_cell(cfg: &ExperimentConfig, d: usize, rho: f64, eta: f64, gamma: f64, seed: u64) -> Result<(f64, f64)> {
    let n = cfg.n;
    let data_seed = derive_seed(cfg.base_seed, &[d as u64, real_coord(rho), seed]);
    let spec = GpSpec::new(n, d, cfg.block_size, rho)?;
    let x = synthetic::gaussian_design(n, d, data_seed)?;
    let y = synthetic::sample_gp(&spec, &x, derive_seed(data_seed, &[1]))?;
    let half = n / 2;
    let ds = Dataset::new(x.rows(0, half).into_owned(), y.rows(0, half).into_owned())?;
    let cov = spec.covariance()?.view((0, 0), (half, half)).into_owned();
    let p = build_transition(&ds, &TransitionKind::CovInterp { eta, covariance: cov }, 0)?;
    let w_td = solvers::td_closed_form(&ds, &p, gamma)?.weights;
    let w_ols = solvers::ols_min_norm(&ds)?;
    let x_test = x.rows(half, n - half).into_owned();
    let y_test = y.rows(half, n - half).into_owned();
    Ok((rmse(&x_test, &y_test, &w_td), rmse(&x_test, &y_test, &w_ols)))
}

/// TD against OLS on block-correlated Gaussian-process outputs, sweeping
/// the correlation `rho` and the interpolation weight `eta` of the
/// transition matrix.
pub fn run_gp_sweep(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut cells = Vec::new();
    for &d in &cfg.dims {
        for &rho in &cfg.rhos {
            for &eta in &cfg.etas {
                for &gamma in &cfg.gammas {
                    cells.push((d, rho, eta, gamma));
                }
            }
        }
    }
    let results: Vec<Vec<Result<(f64, f64)>>> = cells
        .par_iter()
        .map(|&(d, rho, eta, gamma)| {
            (0..cfg.seeds as u64)
                .into_par_iter()
                .map(|seed| gp_cell(cfg, d, rho, eta, gamma, seed))
                .collect()
        })
        .collect();
    let mut table = ResultTable::new([
        "d",
        "rho",
        "eta",
        "gamma",
        "seeds",
        "rmse_td_mean",
        "rmse_td_sd",
        "rmse_ols_mean",
        "rmse_ols_sd",
        "td_win_rate",
        "failures",
        "error",
    ]);
    for (&(d, rho, eta, gamma), res) in cells.iter().zip(&results) {
        let ok: Vec<(f64, f64)> = res.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let td: Vec<f64> = ok.iter().map(|p| p.0).collect();
        let ols: Vec<f64> = ok.iter().map(|p| p.1).collect();
        let (td_mean, td_sd) = mean_sd(&td);
        let (ols_mean, ols_sd) = mean_sd(&ols);
        let wins = ok.iter().filter(|(a, b)| a < b).count();
        let win_rate = if ok.is_empty() { f64::NAN } else { wins as f64 / ok.len() as f64 };
        table.push(vec![
            d.into(),
            rho.into(),
            eta.into(),
            gamma.into(),
            ok.len().into(),
            td_mean.into(),
            td_sd.into(),
            ols_mean.into(),
            ols_sd.into(),
            win_rate.into(),
            (res.len() - ok.len()).into(),
            first_error(res).into(),
        ])?;
    }
    Ok(table)
}

/// Monte Carlo variance of the bootstrapped target over a `gamma` grid for
/// each correlation.
pub fn run_variance_check(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let reports = cfg
        .rhos
        .par_iter()
        .map(|&rho| {
            let spec = VarianceSpec {
                samples: cfg.samples,
                seed: derive_seed(cfg.base_seed, &[real_coord(rho)]),
                ..VarianceSpec::new(cfg.sigma_t, cfg.sigma_next, rho, cfg.sigma_eps)
            };
            variance::run_variance_check(&spec).map(|r| (rho, spec, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = ResultTable::new([
        "rho",
        "gamma",
        "var_td_empirical",
        "std_error",
        "var_td_theory",
        "var_y_t",
        "condition_holds",
        "argmin_empirical",
        "argmin_theory",
        "matches_theory",
        "argmin_within_cell",
        "reduction_holds",
    ]);
    for (rho, spec, r) in &reports {
        for k in 0..r.gammas.len() {
            table.push(vec![
                (*rho).into(),
                r.gammas[k].into(),
                r.empirical[k].into(),
                r.std_errors[k].into(),
                r.theoretical[k].into(),
                r.var_y_t.into(),
                variance::reduction_condition(spec, r.gammas[k]).into(),
                r.empirical_argmin.into(),
                r.theoretical_argmin.into(),
                r.matches_theory.into(),
                r.argmin_within_cell.into(),
                r.reduction_holds.into(),
            ])?;
        }
    }
    table.meta.insert("samples".into(), json!(cfg.samples));
    Ok(table)
}

/// Unit-ball synthetic data with labels in the link's range.
fn certification_dataset(cfg: &ExperimentConfig, d: usize) -> Result<Dataset> {
    let seed = derive_seed(cfg.base_seed, &[d as u64]);
    let x = synthetic::scale_to_unit_ball(&synthetic::gaussian_design(cfg.n, d, seed)?);
    let w = DVector::from_fn(d, |i, _| if i % 2 == 0 { 0.5 } else { -0.5 });
    let link = LinkFunction::of(cfg.link);
    let y = match cfg.link {
        LinkKind::Identity => synthetic::linear_labels(&x, &w, 0.1, derive_seed(seed, &[1]))?,
        _ => (&x * &w).map(|z| link.forward(z).unwrap_or(f64::NAN)),
    };
    Dataset::new(x, y)
}

fn certification_radius(cfg: &ExperimentConfig, ds: &Dataset) -> f64 {
    cfg.radius.unwrap_or(match cfg.link {
        LinkKind::Identity => td::default_radius(ds),
        _ => 0.5,
    })
}

/// `0.9 / L^2`, refined once because the logit domain depends on `gamma`.
fn auto_gamma(ds: &Dataset, p: &TransitionMatrix, link: &LinkFunction, radius: f64) -> Result<f64> {
    if link.kind() == LinkKind::Identity {
        return Ok(0.5);
    }
    let stat = mrp::stationary(p)?;
    let mut gamma = 0.0;
    for _ in 0..3 {
        let geo = td::update_geometry(ds, p, &stat, link, gamma, radius)?;
        gamma = 0.9 / geo.lipschitz.powi(2);
    }
    let geo = td::update_geometry(ds, p, &stat, link, gamma, radius)?;
    if gamma * geo.lipschitz.powi(2) >= 1.0 {
        gamma = 0.9 / geo.lipschitz.powi(2);
    }
    Ok(gamma)
}

/// Contraction certificate and fixed-point uniqueness of the expected
/// update for each `gamma`.
pub fn run_contraction(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let link = LinkFunction::of(cfg.link);
    let mut table = ResultTable::new([
        "link",
        "d",
        "gamma",
        "radius",
        "lipschitz",
        "alpha",
        "trials",
        "max_ratio",
        "bound",
        "bound_max_eig",
        "max_eig_bound_holds",
        "omega_min",
        "omega_max",
        "fixed_point_spread",
        "pass",
    ]);
    for &d in &cfg.dims {
        let ds = certification_dataset(cfg, d)?;
        let choice = cfg.transitions[0];
        let p = build_transition(&ds, &transition_kind(choice)?, derive_seed(cfg.base_seed, &[d as u64, choice.code()]))?;
        let radius = certification_radius(cfg, &ds);
        let gammas = if cfg.gammas.is_empty() {
            vec![auto_gamma(&ds, &p, &link, radius)?]
        } else {
            cfg.gammas.clone()
        };
        for gamma in gammas {
            let tc = TdConfig::new(gamma, StepSize::Constant(1.0), 1, link)
                .with_radius(radius)
                .with_seed(derive_seed(cfg.base_seed, &[d as u64, real_coord(gamma)]));
            let report = td::certify_contraction(&ds, &p, &tc, cfg.trials)?;
            let spread = fixed_point_spread(&ds, &p, &tc, 10)?;
            table.push(vec![
                cfg.link.name().into(),
                d.into(),
                gamma.into(),
                radius.into(),
                report.geometry.lipschitz.into(),
                report.alpha.into(),
                report.trials.into(),
                report.max_ratio.into(),
                report.bound.into(),
                report.bound_max_eig.into(),
                report.max_eig_bound_holds.into(),
                report.geometry.omega_min.into(),
                report.geometry.omega_max.into(),
                spread.into(),
                report.pass.into(),
            ])?;
        }
    }
    Ok(table)
}

/// Largest pairwise distance between fixed points reached from `starts`
/// random points in the projection ball.
pub fn fixed_point_spread(ds: &Dataset, p: &TransitionMatrix, tc: &TdConfig, starts: usize) -> Result<f64> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let radius = tc.projection_radius.unwrap_or_else(|| td::default_radius(ds));
    let mut rng = rng::stream(derive_seed(tc.rng_seed, &[starts as u64]));
    let points = (0..starts)
        .map(|_| {
            let dir = DVector::from_iterator(ds.d(), (0..ds.d()).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let w0 = dir.normalize() * (radius * rng.random::<f64>());
            td::solve_fixed_point(ds, p, tc, &w0).map(|f| f.weights)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut spread: f64 = 0.0;
    for a in &points {
        for b in &points {
            spread = spread.max((a - b).norm());
        }
    }
    Ok(spread)
}

/// Averaged-iterate error of i.i.d.-sampled TD against the rate bound.
pub fn run_sample_rate(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let link = LinkFunction::of(cfg.link);
    let mut table = ResultTable::new([
        "link",
        "d",
        "gamma",
        "horizon",
        "alpha",
        "error_mean",
        "error_std_error",
        "bound",
        "threshold",
        "sigma2",
        "slope",
        "pass",
    ]);
    for &d in &cfg.dims {
        let ds = certification_dataset(cfg, d)?;
        let choice = cfg.transitions[0];
        let p = build_transition(&ds, &transition_kind(choice)?, derive_seed(cfg.base_seed, &[d as u64, choice.code()]))?;
        let radius = certification_radius(cfg, &ds);
        let gamma = cfg.gammas[0];
        let tc = TdConfig::new(gamma, StepSize::Constant(1.0), 1, link)
            .with_radius(radius)
            .with_seed(derive_seed(cfg.base_seed, &[d as u64, real_coord(gamma)]));
        let r = td::certify_sample_rate(&ds, &p, &tc, &cfg.horizons, cfg.seeds)?;
        for k in 0..r.horizons.len() {
            table.push(vec![
                cfg.link.name().into(),
                d.into(),
                gamma.into(),
                r.horizons[k].into(),
                (1.0 / (r.horizons[k] as f64).sqrt()).into(),
                r.errors_by_t[k].into(),
                r.std_errors_by_t[k].into(),
                r.bound_by_t[k].into(),
                r.threshold.into(),
                r.sigma2.into(),
                r.slope.into(),
                r.pass.into(),
            ])?;
        }
        table.meta.insert("sigma2_samples".into(), json!(r.sigma2_samples));
    }
    Ok(table)
}

/// Block covariance over `m` rows; the last block may be short.
fn row_blocks(m: usize, block: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0
        } else if i / block == j / block {
            rho
        } else {
            0.0
        }
    })
}

fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

fn select_block(c: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| c[(idx[i], idx[j])])
}

/// `(n_train, n_test, metric per estimator)`.
type SeedFit = (usize, usize, Vec<(Estimator, Result<f64>)>);

/// Per-estimator test metric for one seed: subset, inject noise, split,
/// fit.
fn fit_seed(cfg: &ExperimentConfig, data: &CsvData, seed: u64) -> Result<SeedFit> {
    let link = LinkFunction::of(cfg.link);
    let rho = cfg.rhos[0];
    let eta = cfg.etas[0];
    let gamma = cfg.gammas[0];
    let mut rng = rng::stream(derive_seed(cfg.base_seed, &[seed]));

    let total = data.target.len();
    let mut rows: Vec<usize> = (0..total).collect();
    if total > cfg.subset {
        rows.shuffle(&mut rng);
        rows.truncate(cfg.subset);
        rows.sort_unstable();
    }
    let m = rows.len();
    let d = data.features.ncols() + 1;
    let x = DMatrix::from_fn(m, d, |i, j| if j + 1 == d { 1.0 } else { data.features[(rows[i], j)] });
    let mut y = DVector::from_fn(m, |i, _| data.target[rows[i]]);
    let cov = row_blocks(m, cfg.block_size, rho);
    if cfg.noise_scale > 0.0 {
        y += synthetic::correlated_noise_for(&y, &cov, cfg.noise_scale, derive_seed(cfg.base_seed, &[seed, 1]))?.epsilon;
    }

    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng);
    let n_train = ((cfg.train_fraction * m as f64).round() as usize).clamp(2, m - 2);
    let (mut train, mut test) = (perm[..n_train].to_vec(), perm[n_train..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    let x_train = select_rows(&x, &train);
    let y_train = DVector::from_fn(train.len(), |i, _| y[train[i]]);
    let x_test = select_rows(&x, &test);
    let y_test = DVector::from_fn(test.len(), |i, _| y[test[i]]);
    let cov_train = select_block(&cov, &train);
    let ds = Dataset::new(x_train.clone(), y_train)?;

    let choice = cfg.transitions.first().copied().unwrap_or(if cfg.noise_scale > 0.0 {
        TransitionChoice::CovInterp
    } else {
        TransitionChoice::Close
    });
    let kind = match choice {
        TransitionChoice::CovInterp => TransitionKind::CovInterp { eta, covariance: cov_train.clone() },
        other => transition_kind(other)?,
    };
    let p = build_transition(&ds, &kind, derive_seed(cfg.base_seed, &[seed, 2]))?;

    let metric = |pred: DVector<f64>| -> f64 {
        if cfg.link == LinkKind::Sigmoid {
            let hits = pred
                .iter()
                .zip(y_test.iter())
                .filter(|(p, t)| (**p >= 0.5) == (**t >= 0.5))
                .count();
            hits as f64 / y_test.len() as f64
        } else {
            ((pred - &y_test).norm_squared() / y_test.len() as f64).sqrt()
        }
    };
    let linear = |w: Result<DVector<f64>>| w.map(|w| metric(&x_test * w));

    let mut out = Vec::with_capacity(cfg.estimators.len());
    for &est in &cfg.estimators {
        let value = match est {
            Estimator::Td => linear(solvers::td_closed_form(&ds, &p, gamma).map(|s| s.weights)),
            Estimator::Ols => linear(solvers::ols_min_norm(&ds)),
            Estimator::Gls => linear(solvers::gls(&ds, &cov_train)),
            Estimator::Fgls => linear(solvers::fgls(&ds, solvers::FGLS_RIDGE, 1)),
            Estimator::IterativeTd => iterative_td(cfg, &ds, &p, &x_test, gamma, link, seed).map(metric),
        };
        out.push((est, value));
    }
    Ok((train.len(), test.len(), out))
}

/// Sampled TD on features rescaled into the unit ball; returns test
/// predictions `f(x^T w)`.
fn iterative_td(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    p: &TransitionMatrix,
    x_test: &DMatrix<f64>,
    gamma: f64,
    link: LinkFunction,
    seed: u64,
) -> Result<DVector<f64>> {
    let x = ds.features();
    let scale = (0..x.nrows()).map(|i| x.row(i).norm()).fold(0.0, f64::max);
    let scaled = Dataset::new(x / scale, ds.scalar_labels()?.clone())?;
    let steps = cfg.td_steps;
    let tc = TdConfig::new(
        gamma,
        StepSize::Harmonic {
            initial: 0.5,
            half_life: (steps as f64 / 10.0).max(1.0),
        },
        steps,
        link,
    )
    .with_seed(derive_seed(cfg.base_seed, &[seed, 3]));
    let traj = td::run_td(&scaled, p, &tc, 0)?;
    let z = (x_test / scale) * traj.final_weights;
    z.iter()
        .map(|&v| link.forward(v))
        .collect::<Result<Vec<_>>>()
        .map(DVector::from_vec)
}

/// Fits the requested estimators to a CSV over several random splits.
pub fn fit_csv(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let path = cfg
        .csv_path
        .as_ref()
        .ok_or_else(|| Error::Config("fit needs --csv <path>".into()))?;
    let data = load_csv(path, cfg.target_col.as_deref())?;
    if data.target.len() < 4 {
        return Err(Error::Config("fit needs at least four rows".into()));
    }
    let mut per_seed: Vec<Result<SeedFit>> =
        (0..cfg.seeds as u64).into_par_iter().map(|s| fit_seed(cfg, &data, s)).collect();
    if let Some(k) = per_seed.iter().position(|r| r.as_ref().is_err_and(Error::is_configuration)) {
        return Err(per_seed.swap_remove(k).unwrap_err());
    }
    let metric_name = if cfg.link == LinkKind::Sigmoid { "accuracy" } else { "rmse" };
    let mut table = ResultTable::new(["seed", "estimator", "metric", "value", "n_train", "n_test", "error"]);
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); cfg.estimators.len()];
    for (seed, res) in per_seed.iter().enumerate() {
        match res {
            Ok((n_train, n_test, fits)) => {
                for (k, (est, value)) in fits.iter().enumerate() {
                    let (v, err) = match value {
                        Ok(v) => {
                            values[k].push(*v);
                            (*v, String::new())
                        }
                        Err(e) => (f64::NAN, e.to_string()),
                    };
                    table.push(vec![
                        seed.to_string().into(),
                        est.name().into(),
                        metric_name.into(),
                        v.into(),
                        (*n_train).into(),
                        (*n_test).into(),
                        err.into(),
                    ])?;
                }
            }
            Err(e) => {
                for est in &cfg.estimators {
                    table.push(vec![
                        seed.to_string().into(),
                        est.name().into(),
                        metric_name.into(),
                        f64::NAN.into(),
                        Cell::Int(0),
                        Cell::Int(0),
                        e.to_string().into(),
                    ])?;
                }
            }
        }
    }
    for (k, est) in cfg.estimators.iter().enumerate() {
        let (mean, _) = mean_sd(&values[k]);
        table.push(vec![
            "mean".into(),
            est.name().into(),
            metric_name.into(),
            mean.into(),
            Cell::Int(0),
            Cell::Int(0),
            String::new().into(),
        ])?;
    }
    table.meta.insert("csv".into(), json!(path.display().to_string()));
    table.meta.insert("target".into(), json!(data.target_name));
    table.meta.insert("noise_scale".into(), json!(cfg.noise_scale));
    table.meta.insert("gamma".into(), json!(cfg.gammas[0]));
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::write_synthetic_csv;

    fn synth_csv(dir: &tempfile::TempDir, n: usize, d: usize, noise: f64) -> std::path::PathBuf {
        let path = dir.path().join("data.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        write_synthetic_csv(&mut f, n, d, noise, 5).unwrap();
        path
    }

    #[test]
    fn min_norm_table_rows() {
        let cfg = ExperimentConfig {
            dims: vec![70, 110],
            seeds: 3,
            ..ExperimentConfig::new(Experiment::MinNormTable)
        };
        let t = run(&cfg).unwrap();
        assert_eq!(t.len(), 10);
        for kind in ["uniform", "random", "close", "far"] {
            let r: Vec<_> = t.find(&[("transition", kind)]).collect();
            assert_eq!(t.float(r[1], "d"), Some(110.0));
            assert!(t.float(r[1], "mean_distance").unwrap() <= 1e-8, "{kind}");
        }
        let r: Vec<_> = t.find(&[("transition", "random")]).collect();
        let gap = t.float(r[0], "mean_distance").unwrap();
        assert!(gap > 0.0 && gap < 0.2, "{gap}");
        let r: Vec<_> = t.find(&[("transition", "deficient")]).collect();
        assert!(t.float(r[1], "mean_distance").unwrap() >= 0.05);
        assert!(t.wall_time_secs.is_some());
        assert!(!t.to_csv_string().unwrap().contains("wall"));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = ExperimentConfig {
            rhos: vec![0.9],
            etas: vec![0.9],
            seeds: 4,
            ..ExperimentConfig::new(Experiment::GpSweep)
        };
        let a = run(&cfg).unwrap().to_csv_string().unwrap();
        let b = run(&cfg).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uncorrelated_gp_is_a_tie() {
        let cfg = ExperimentConfig {
            rhos: vec![0.0],
            etas: vec![0.9],
            ..ExperimentConfig::new(Experiment::GpSweep)
        };
        let t = run(&cfg).unwrap();
        let (td, ols) = (t.float(0, "rmse_td_mean").unwrap(), t.float(0, "rmse_ols_mean").unwrap());
        let pooled = ((t.float(0, "rmse_td_sd").unwrap().powi(2) + t.float(0, "rmse_ols_sd").unwrap().powi(2)) / 2.0).sqrt();
        assert!((td - ols).abs() <= 2.0 * pooled, "{td} vs {ols}");
    }

    #[test]
    fn seed_depends_on_cell_not_order() {
        let mut cfg = ExperimentConfig {
            dims: vec![70],
            seeds: 2,
            transitions: vec![TransitionChoice::Random, TransitionChoice::Far],
            ..ExperimentConfig::new(Experiment::MinNormTable)
        };
        let a = run(&cfg).unwrap();
        cfg.transitions.reverse();
        let b = run(&cfg).unwrap();
        assert_eq!(a.rows()[0], b.rows()[1]);
    }

    #[test]
    fn variance_rows_cover_grid() {
        let cfg = ExperimentConfig {
            rhos: vec![0.6],
            ..ExperimentConfig::new(Experiment::VarianceCheck)
        };
        let t = run(&cfg).unwrap();
        assert_eq!(t.len(), variance::DEFAULT_GRID_POINTS);
        assert_eq!(t.text(0, "matches_theory"), Some("true"));
    }

    #[test]
    fn contraction_identity_passes() {
        let t = run(&ExperimentConfig::new(Experiment::Contraction)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.text(0, "pass"), Some("true"));
        assert!(t.float(0, "fixed_point_spread").unwrap() <= 1e-6);
    }

    #[test]
    fn noiseless_fit_recovers_targets() {
        let dir = tempfile::tempdir().unwrap();
        let path = synth_csv(&dir, 200, 4, 0.0);
        let cfg = ExperimentConfig {
            csv_path: Some(path),
            gammas: vec![0.5],
            seeds: 2,
            td_steps: 200_000,
            ..ExperimentConfig::new(Experiment::FitCsv)
        };
        let t = run(&cfg).unwrap();
        for est in Estimator::ALL {
            let r = t.find(&[("seed", "mean"), ("estimator", est.name())]).next().unwrap();
            let v = t.float(r, "value").unwrap();
            let tol = if est == Estimator::IterativeTd { 1e-3 } else { 1e-6 };
            assert!(v <= tol, "{} rmse {v}", est.name());
        }
    }

    #[test]
    fn fit_rejects_missing_target() {
        let dir = tempfile::tempdir().unwrap();
        let path = synth_csv(&dir, 20, 2, 0.1);
        let cfg = ExperimentConfig {
            csv_path: Some(path),
            target_col: Some("nope".into()),
            ..ExperimentConfig::new(Experiment::FitCsv)
        };
        let err = run(&cfg).unwrap_err();
        assert!(err.is_configuration());
    }

    #[test]
    fn correlated_noise_favours_td() {
        let dir = tempfile::tempdir().unwrap();
        let path = synth_csv(&dir, 400, 5, 0.0);
        let cfg = ExperimentConfig {
            csv_path: Some(path),
            noise_scale: 1.0,
            estimators: vec![Estimator::Td, Estimator::Ols, Estimator::Gls, Estimator::Fgls],
            seeds: 10,
            ..ExperimentConfig::new(Experiment::FitCsv)
        };
        let t = run(&cfg).unwrap();
        let value = |seed: &str, est: &str| {
            let r = t.find(&[("seed", seed), ("estimator", est)]).next().unwrap();
            t.float(r, "value").unwrap()
        };
        let wins = (0..10)
            .filter(|s| value(&s.to_string(), "td") <= value(&s.to_string(), "ols"))
            .count();
        assert!(wins > 5, "td won {wins}/10");
        assert!(value("mean", "gls") <= value("mean", "ols"));
    }

    #[test]
    fn invalid_configs_are_configuration_errors() {
        let cfg = ExperimentConfig {
            gammas: vec![1.0],
            ..ExperimentConfig::new(Experiment::MinNormTable)
        };
        assert!(run(&cfg).unwrap_err().is_configuration());
        let cfg = ExperimentConfig {
            n: 150,
            ..ExperimentConfig::new(Experiment::GpSweep)
        };
        assert!(run(&cfg).unwrap_err().is_configuration());
    }
}
