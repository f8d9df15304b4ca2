//! Experiment runner: declarative configurations in, deterministic CSV
//! tables out.
//!
//! Sweep cells run in parallel with seeds derived from the base seed and
//! the cell's own coordinates. A cell that fails numerically becomes a row
//! with its error message; configuration problems abort the run.

mod data;
mod experiments;
mod table;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

pub use data::{load_csv, read_csv, write_synthetic_csv, CsvData};
pub use experiments::{
    fit_csv, run, run_contraction, run_gp_sweep, run_min_norm_table, run_sample_rate, run_variance_check,
};
pub use table::{format_float, git_describe, Cell, ResultTable};

use crate::error::{Error, Result};
use crate::link::LinkKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    MinNormTable,
    GpSweep,
    VarianceCheck,
    Contraction,
    SampleRate,
    FitCsv,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::MinNormTable => "min-norm",
            Experiment::GpSweep => "gp-sweep",
            Experiment::VarianceCheck => "variance",
            Experiment::Contraction => "contraction",
            Experiment::SampleRate => "sample-rate",
            Experiment::FitCsv => "fit",
        }
    }
}

/// Transition recipes selectable from a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionChoice {
    Uniform,
    Random,
    Deficient,
    Close,
    Far,
    CovInterp,
}

impl TransitionChoice {
    pub const TABLE: [TransitionChoice; 5] = [
        TransitionChoice::Uniform,
        TransitionChoice::Random,
        TransitionChoice::Deficient,
        TransitionChoice::Close,
        TransitionChoice::Far,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransitionChoice::Uniform => "uniform",
            TransitionChoice::Random => "random",
            TransitionChoice::Deficient => "deficient",
            TransitionChoice::Close => "close",
            TransitionChoice::Far => "far",
            TransitionChoice::CovInterp => "cov-interp",
        }
    }

    /// Stable seed coordinate, independent of list order.
    fn code(self) -> u64 {
        match self {
            TransitionChoice::Uniform => 1,
            TransitionChoice::Random => 2,
            TransitionChoice::Deficient => 3,
            TransitionChoice::Close => 4,
            TransitionChoice::Far => 5,
            TransitionChoice::CovInterp => 6,
        }
    }
}

impl FromStr for TransitionChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "uniform" => TransitionChoice::Uniform,
            "random" => TransitionChoice::Random,
            "deficient" => TransitionChoice::Deficient,
            "close" => TransitionChoice::Close,
            "far" => TransitionChoice::Far,
            "cov-interp" => TransitionChoice::CovInterp,
            other => {
                return Err(Error::Config(format!(
                    "unknown transition '{other}' (expected uniform, random, deficient, close, far or cov-interp)"
                )))
            }
        })
    }
}

impl fmt::Display for TransitionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Td,
    Ols,
    Gls,
    Fgls,
    IterativeTd,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Td,
        Estimator::Ols,
        Estimator::Gls,
        Estimator::Fgls,
        Estimator::IterativeTd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Td => "td",
            Estimator::Ols => "ols",
            Estimator::Gls => "gls",
            Estimator::Fgls => "fgls",
            Estimator::IterativeTd => "td-iter",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}' (expected td, ols, gls, fgls or td-iter)")))
    }
}

/// Declarative settings for one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub dims: Vec<usize>,
    pub rhos: Vec<f64>,
    pub etas: Vec<f64>,
    /// Empty means "choose automatically" for the certification runs.
    pub gammas: Vec<f64>,
    pub seeds: usize,
    pub base_seed: u64,
    /// Number of data points for the synthetic experiments.
    pub n: usize,
    pub transitions: Vec<TransitionChoice>,
    pub link: LinkKind,
    pub csv_path: Option<PathBuf>,
    pub target_col: Option<String>,
    /// Scale of the block-correlated noise added to CSV targets; zero disables it.
    pub noise_scale: f64,
    pub block_size: usize,
    pub estimators: Vec<Estimator>,
    pub train_fraction: f64,
    /// Rows kept per seed when a CSV is larger.
    pub subset: usize,
    pub td_steps: usize,
    pub horizons: Vec<usize>,
    pub trials: usize,
    pub radius: Option<f64>,
    pub sigma_t: f64,
    pub sigma_next: f64,
    pub sigma_eps: f64,
    pub samples: usize,
    pub output_path: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for `experiment`.
    pub fn new(experiment: Experiment) -> Self {
        let mut cfg = Self {
            experiment,
            dims: vec![],
            rhos: vec![],
            etas: vec![],
            gammas: vec![],
            seeds: 10,
            base_seed: 0,
            n: 100,
            transitions: vec![],
            link: LinkKind::Identity,
            csv_path: None,
            target_col: None,
            noise_scale: 0.0,
            block_size: 10,
            estimators: Estimator::ALL.to_vec(),
            train_fraction: 0.6,
            subset: 500,
            td_steps: 100_000,
            horizons: vec![],
            trials: 100,
            radius: None,
            sigma_t: 1.0,
            sigma_next: 1.0,
            sigma_eps: 0.5,
            samples: crate::variance::DEFAULT_SAMPLES,
            output_path: None,
        };
        match experiment {
            Experiment::MinNormTable => {
                cfg.dims = vec![70, 90, 110, 130];
                cfg.gammas = vec![0.9];
                cfg.transitions = TransitionChoice::TABLE.to_vec();
            }
            Experiment::GpSweep => {
                cfg.dims = vec![70];
                cfg.n = 200;
                cfg.rhos = vec![0.1, 0.3, 0.5, 0.7, 0.9];
                cfg.etas = vec![0.5, 0.6, 0.7, 0.8, 0.9];
                cfg.gammas = vec![0.99];
                cfg.seeds = 50;
            }
            Experiment::VarianceCheck => {
                cfg.rhos = vec![0.0, 0.3, 0.6, 0.9];
                cfg.seeds = 1;
            }
            Experiment::Contraction => {
                cfg.dims = vec![3];
                cfg.n = 50;
                cfg.transitions = vec![TransitionChoice::Random];
                cfg.seeds = 1;
            }
            Experiment::SampleRate => {
                cfg.dims = vec![3];
                cfg.n = 50;
                cfg.gammas = vec![0.5];
                cfg.transitions = vec![TransitionChoice::Random];
                cfg.horizons = vec![1_000, 4_000, 16_000];
                cfg.seeds = 30;
            }
            Experiment::FitCsv => {
                cfg.rhos = vec![0.9];
                cfg.etas = vec![0.9];
                cfg.gammas = vec![0.99];
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.seeds == 0 {
            return fail("--seeds must be at least 1".into());
        }
        let need = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{} needs a non-empty {what} list", self.experiment.name())))
            }
        };
        for &g in &self.gammas {
            if !(0.0..1.0).contains(&g) {
                return fail(format!("gamma must lie in [0,1), got {g}"));
            }
        }
        for &r in &self.rhos {
            if !(0.0..1.0).contains(&r) {
                return fail(format!("rho must lie in [0,1), got {r}"));
            }
        }
        for &e in &self.etas {
            if !(0.0..=1.0).contains(&e) {
                return fail(format!("eta must lie in [0,1], got {e}"));
            }
        }
        if self.dims.contains(&0) {
            return fail("dimensions must be positive".into());
        }
        if self.n < 2 {
            return fail("need at least two data points".into());
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return fail(format!("radius must be positive, got {r}"));
            }
        }
        match self.experiment {
            Experiment::MinNormTable => {
                need(!self.dims.is_empty(), "dims")?;
                need(!self.gammas.is_empty(), "gamma")?;
                need(!self.transitions.is_empty(), "transition")?;
                if self.transitions.contains(&TransitionChoice::CovInterp) {
                    return fail("min-norm does not support cov-interp transitions".into());
                }
            }
            Experiment::GpSweep => {
                need(!self.dims.is_empty(), "dims")?;
                need(!self.rhos.is_empty(), "rho")?;
                need(!self.etas.is_empty(), "eta")?;
                need(!self.gammas.is_empty(), "gamma")?;
                if self.n % 2 != 0 || (self.n / 2) % self.block_size != 0 {
                    return fail(format!(
                        "n = {} must split into two halves that are multiples of the block size {}",
                        self.n, self.block_size
                    ));
                }
            }
            Experiment::VarianceCheck => {
                need(!self.rhos.is_empty(), "rho")?;
                let sds = [self.sigma_t, self.sigma_next, self.sigma_eps];
                if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    return fail("standard deviations must be finite and nonnegative".into());
                }
                if self.samples < 2 {
                    return fail("need at least two samples".into());
                }
            }
            Experiment::Contraction => {
                need(!self.dims.is_empty(), "dims")?;
                need(self.transitions.len() == 1, "single-transition")?;
                if self.trials == 0 {
                    return fail("need at least one trial".into());
                }
            }
            Experiment::SampleRate => {
                need(!self.dims.is_empty(), "dims")?;
                need(self.gammas.len() == 1, "single-gamma")?;
                need(self.transitions.len() == 1, "single-transition")?;
                need(!self.horizons.is_empty(), "horizon")?;
            }
            Experiment::FitCsv => {
                if self.csv_path.is_none() {
                    return fail("fit needs --csv <path>".into());
                }
                for (list, what) in [(self.rhos.len(), "rho"), (self.etas.len(), "eta"), (self.gammas.len(), "gamma")] {
                    if list != 1 {
                        return fail(format!("fit takes exactly one {what} value"));
                    }
                }
                if self.transitions.len() > 1 {
                    return fail("fit takes at most one transition".into());
                }
                need(!self.estimators.is_empty(), "estimator")?;
                if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
                    return fail(format!("train fraction must lie in (0,1), got {}", self.train_fraction));
                }
                if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
                    return fail(format!("noise scale must be nonnegative, got {}", self.noise_scale));
                }
                if self.block_size == 0 || self.subset < 4 || self.td_steps == 0 {
                    return fail("block size, subset and TD steps must be positive".into());
                }
            }
        }
        Ok(())
    }
}
