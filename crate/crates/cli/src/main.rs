use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrptd::harness::{self, Estimator, Experiment, ExperimentConfig, TransitionChoice};
use mrptd::{Error, LinkKind};

/// Supervised learning as a Markov reward process: experiment runner.
#[derive(Debug, Parser)]
#[command(name = "mrptd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Distance between the TD and minimum-norm least-squares solutions.
    MinNorm {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        gamma: Option<Vec<f64>>,
        /// Transition recipes to compare.
        #[arg(long = "p", value_delimiter = ',', value_parser = parse_transition)]
        transitions: Option<Vec<TransitionChoice>>,
        /// Data points per instance.
        #[arg(long)]
        n: Option<usize>,
    },
    /// TD against OLS on block-correlated Gaussian-process outputs.
    GpSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        rho: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        eta: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        gamma: Option<Vec<f64>>,
        /// Total points, split evenly into train and test.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        block_size: Option<usize>,
    },
    /// Monte Carlo variance of the bootstrapped target over a gamma grid.
    Variance {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        rho: Option<Vec<f64>>,
        #[arg(long)]
        sigma_t: Option<f64>,
        #[arg(long)]
        sigma_next: Option<f64>,
        #[arg(long)]
        sigma_eps: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Contraction certificate for the expected TD update.
    Contraction {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cert: Certification,
        /// Gamma values; chosen automatically when omitted.
        #[arg(long, value_delimiter = ',')]
        gamma: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Averaged-iterate error of sampled TD against the rate bound.
    SampleRate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cert: Certification,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
    },
    /// Fit the estimators to a CSV file over random train/test splits.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        csv: PathBuf,
        /// Target column; defaults to the last column.
        #[arg(long)]
        target_col: Option<String>,
        /// Scale of the injected block-correlated noise; 0 disables it.
        #[arg(long)]
        noise_scale: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, value_parser = parse_link)]
        link: Option<LinkKind>,
        /// Transition recipe; cov-interp with injected noise, close otherwise.
        #[arg(long = "p", value_parser = parse_transition)]
        transition: Option<TransitionChoice>,
        #[arg(long, value_delimiter = ',', value_parser = parse_estimator)]
        estimators: Option<Vec<Estimator>>,
        #[arg(long)]
        train_fraction: Option<f64>,
        /// Rows sampled per seed when the file is larger.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long)]
        block_size: Option<usize>,
        /// Steps of sampled TD for the td-iter estimator.
        #[arg(long)]
        td_steps: Option<usize>,
    },
    /// Write a synthetic linear-regression CSV.
    SynthCsv {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        d: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_sd: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Base seed; every cell derives its own stream from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions per cell.
    #[arg(long)]
    seeds: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Certification {
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_link)]
    link: Option<LinkKind>,
    #[arg(long = "p", value_parser = parse_transition)]
    transition: Option<TransitionChoice>,
    #[arg(long)]
    n: Option<usize>,
    /// Projection radius.
    #[arg(long)]
    radius: Option<f64>,
}

fn parse_link(s: &str) -> Result<LinkKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_transition(s: &str) -> Result<TransitionChoice, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Common {
    fn apply(self, cfg: &mut ExperimentConfig) {
        set(&mut cfg.base_seed, self.seed);
        set(&mut cfg.seeds, self.seeds);
        cfg.output_path = self.out;
    }
}

impl Certification {
    fn apply(self, cfg: &mut ExperimentConfig) {
        set(&mut cfg.dims, self.dims);
        set(&mut cfg.link, self.link);
        set(&mut cfg.transitions, self.transition.map(|t| vec![t]));
        set(&mut cfg.n, self.n);
        cfg.radius = self.radius.or(cfg.radius);
    }
}

fn config(command: Command) -> ExperimentConfig {
    match command {
        Command::MinNorm { common, dims, gamma, transitions, n } => {
            let mut cfg = ExperimentConfig::new(Experiment::MinNormTable);
            common.apply(&mut cfg);
            set(&mut cfg.dims, dims);
            set(&mut cfg.gammas, gamma);
            set(&mut cfg.transitions, transitions);
            set(&mut cfg.n, n);
            cfg
        }
        Command::GpSweep { common, dims, rho, eta, gamma, n, block_size } => {
            let mut cfg = ExperimentConfig::new(Experiment::GpSweep);
            common.apply(&mut cfg);
            set(&mut cfg.dims, dims);
            set(&mut cfg.rhos, rho);
            set(&mut cfg.etas, eta);
            set(&mut cfg.gammas, gamma);
            set(&mut cfg.n, n);
            set(&mut cfg.block_size, block_size);
            cfg
        }
        Command::Variance { common, rho, sigma_t, sigma_next, sigma_eps, samples } => {
            let mut cfg = ExperimentConfig::new(Experiment::VarianceCheck);
            common.apply(&mut cfg);
            set(&mut cfg.rhos, rho);
            set(&mut cfg.sigma_t, sigma_t);
            set(&mut cfg.sigma_next, sigma_next);
            set(&mut cfg.sigma_eps, sigma_eps);
            set(&mut cfg.samples, samples);
            cfg
        }
        Command::Contraction { common, cert, gamma, trials } => {
            let mut cfg = ExperimentConfig::new(Experiment::Contraction);
            common.apply(&mut cfg);
            cert.apply(&mut cfg);
            set(&mut cfg.gammas, gamma);
            set(&mut cfg.trials, trials);
            cfg
        }
        Command::SampleRate { common, cert, gamma, horizons } => {
            let mut cfg = ExperimentConfig::new(Experiment::SampleRate);
            common.apply(&mut cfg);
            cert.apply(&mut cfg);
            set(&mut cfg.gammas, gamma.map(|g| vec![g]));
            set(&mut cfg.horizons, horizons);
            cfg
        }
        Command::Fit {
            common,
            csv,
            target_col,
            noise_scale,
            rho,
            eta,
            gamma,
            link,
            transition,
            estimators,
            train_fraction,
            subset,
            block_size,
            td_steps,
        } => {
            let mut cfg = ExperimentConfig::new(Experiment::FitCsv);
            common.apply(&mut cfg);
            cfg.csv_path = Some(csv);
            cfg.target_col = target_col;
            set(&mut cfg.noise_scale, noise_scale);
            set(&mut cfg.rhos, rho.map(|v| vec![v]));
            set(&mut cfg.etas, eta.map(|v| vec![v]));
            set(&mut cfg.gammas, gamma.map(|v| vec![v]));
            set(&mut cfg.link, link);
            set(&mut cfg.transitions, transition.map(|t| vec![t]));
            set(&mut cfg.estimators, estimators);
            set(&mut cfg.train_fraction, train_fraction);
            set(&mut cfg.subset, subset);
            set(&mut cfg.block_size, block_size);
            set(&mut cfg.td_steps, td_steps);
            cfg
        }
        Command::SynthCsv { .. } => unreachable!("handled before configuration"),
    }
}

fn hint(err: &Error) -> Option<&'static str> {
    match err {
        Error::Assumption { .. } => Some("lower --gamma, shrink --radius, or pick a full-rank transition with --p"),
        Error::Parse { .. } => Some("check the CSV header and that every cell is numeric"),
        Error::Io(_) => Some("check that the input path exists and the output directory is writable"),
        _ => None,
    }
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn execute(command: Command) -> Result<(), Error> {
    if let Command::SynthCsv { n, d, noise_sd, seed, out } = command {
        let mut w = output(out.as_ref())?;
        harness::write_synthetic_csv(&mut w, n, d, noise_sd, seed)?;
        w.flush()?;
        return Ok(());
    }
    let cfg = config(command);
    let table = harness::run(&cfg)?;
    let mut w = output(cfg.output_path.as_ref())?;
    table.write_csv(&mut w)?;
    w.flush()?;
    if let Some(secs) = table.wall_time_secs {
        eprintln!("{}: {} rows in {secs:.3} s", cfg.experiment.name(), table.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_configuration() {
                if let Some(h) = hint(&err) {
                    eprintln!("hint: {h}");
                }
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
