//! TOML run configuration shared by every CLI subcommand.
//!
//! ```toml
//! solver = "sine"      # or "cgne"
//! gamma = 1e-3
//! tau = 1.001
//! max_iters = 500      # optional, default min(domain dim, 10000)
//! x0 = "x0.csv"        # optional one-column CSV
//! history = false
//!
//! [problem]
//! kind = "multiplication"
//! n = 4096
//! exponent = 1.0
//! delta = 1e-3
//! noise = "constant"
//! seed = 0
//!
//! [ratecheck]
//! delta_grid = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5]
//! mu = 0.5
//! n = 4096
//! ```
//!
//! Other problem kinds:
//!
//! ```toml
//! [problem]
//! kind = "random"
//! rows = 50
//! cols = 40
//! decay = { kind = "geometric", rate = 0.8 }
//! delta = 1e-3
//! noise = "random"
//! seed = 7
//!
//! [problem]
//! kind = "files"
//! operator = "A.mtx"   # format = "auto" | "matrixmarket" | "csv" | "diagonal"
//! data = "y.csv"
//! truth = "x.csv"      # optional
//! delta = 1e-3
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::problem::{
    load_problem, multiplication_problem_with_noise, Decay, LoadConfig, NoiseMode,
    OperatorFormat, Problem, RandomProblem,
};
use crate::run::{SolverKind, StoppingRule};

pub const DEFAULT_GAMMA: f64 = 1e-3;
pub const DEFAULT_TAU: f64 = 1.001;
pub const DEFAULT_GRID_SIZE: usize = 4096;
pub const DEFAULT_DELTA: f64 = 1e-3;
pub const DEFAULT_DELTA_GRID: [f64; 7] = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5];

fn default_solver() -> SolverKind {
    SolverKind::Sine
}
fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_n() -> usize {
    DEFAULT_GRID_SIZE
}
fn default_exponent() -> f64 {
    1.0
}
fn default_mu() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_random_noise() -> NoiseMode {
    NoiseMode::Random
}
fn default_delta_grid() -> Vec<f64> {
    DEFAULT_DELTA_GRID.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemConfig {
    Multiplication {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_exponent")]
        exponent: f64,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default)]
        noise: NoiseMode,
        #[serde(default)]
        seed: u64,
    },
    Random {
        rows: usize,
        cols: usize,
        decay: Decay,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_random_noise")]
        noise: NoiseMode,
        #[serde(default)]
        seed: u64,
    },
    Files {
        operator: PathBuf,
        data: PathBuf,
        #[serde(default)]
        format: OperatorFormat,
        #[serde(default)]
        truth: Option<PathBuf>,
        #[serde(default)]
        delta: f64,
    },
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig::Multiplication {
            n: DEFAULT_GRID_SIZE,
            exponent: 1.0,
            delta: DEFAULT_DELTA,
            noise: NoiseMode::Constant,
            seed: 0,
        }
    }
}

impl ProblemConfig {
    pub fn build(&self) -> Result<Problem> {
        match self {
            ProblemConfig::Multiplication {
                n,
                exponent,
                delta,
                noise,
                seed,
            } => multiplication_problem_with_noise(*n, *exponent, *delta, *noise, *seed),
            ProblemConfig::Random {
                rows,
                cols,
                decay,
                delta,
                noise,
                seed,
            } => RandomProblem::new(*rows, *cols, *decay, *seed)
                .with_noise(*delta, *noise)
                .build(),
            ProblemConfig::Files {
                operator,
                data,
                format,
                truth,
                delta,
            } => load_problem(
                operator,
                data,
                &LoadConfig {
                    delta: *delta,
                    format: *format,
                    truth: truth.clone(),
                },
            ),
        }
    }

    pub fn set_seed(&mut self, value: u64) {
        match self {
            ProblemConfig::Multiplication { seed, .. } | ProblemConfig::Random { seed, .. } => {
                *seed = value
            }
            ProblemConfig::Files { .. } => {}
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let ProblemConfig::Files {
            operator,
            data,
            truth,
            ..
        } = self
        {
            *operator = resolve(base, operator);
            *data = resolve(base, data);
            if let Some(t) = truth {
                *t = resolve(base, t);
            }
        }
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// `[ratecheck]` table. `gamma`, `tau` and `max_iters` come from the top
/// level of the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateCheckSection {
    #[serde(default = "default_delta_grid")]
    pub delta_grid: Vec<f64>,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub noise: NoiseMode,
}

impl Default for RateCheckSection {
    fn default() -> Self {
        RateCheckSection {
            delta_grid: default_delta_grid(),
            mu: default_mu(),
            n: DEFAULT_GRID_SIZE,
            noise: NoiseMode::Constant,
        }
    }
}

/// Everything a rate check needs. Truth on the multiplication grid is
/// `t^(2 mu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheckConfig {
    pub delta_grid: Vec<f64>,
    pub mu: f64,
    pub n: usize,
    pub gamma: f64,
    pub tau: f64,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub noise: NoiseMode,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RateCheckConfig {
    fn default() -> Self {
        RateCheckConfig {
            delta_grid: default_delta_grid(),
            mu: default_mu(),
            n: DEFAULT_GRID_SIZE,
            gamma: DEFAULT_GAMMA,
            tau: DEFAULT_TAU,
            max_iters: None,
            noise: NoiseMode::Constant,
            seed: 0,
        }
    }
}

impl RateCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta_grid.is_empty() {
            return Err(Error::Config("delta_grid is empty".into()));
        }
        if let Some(d) = self.delta_grid.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::Config(format!("delta_grid entries must be positive, got {d}")));
        }
        if let Some(w) = self.delta_grid.windows(2).find(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!(
                "delta_grid must be strictly decreasing, got {} then {}",
                w[0], w[1]
            )));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if self.n < 2 {
            return Err(Error::Config(format!("n must be >= 2, got {}", self.n)));
        }
        check_gamma(self.gamma)?;
        StoppingRule::new(self.tau, 0.0)?;
        Ok(())
    }

    pub fn exponent(&self) -> f64 {
        2.0 * self.mu
    }

    /// Rate `2 mu / (2 mu + 1)` promised for the discrepancy stop.
    pub fn theory_exponent(&self) -> f64 {
        2.0 * self.mu / (2.0 * self.mu + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_solver")]
    pub solver: SolverKind,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub x0: Option<PathBuf>,
    #[serde(default)]
    pub history: bool,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub ratecheck: RateCheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            solver: SolverKind::Sine,
            gamma: DEFAULT_GAMMA,
            tau: DEFAULT_TAU,
            max_iters: None,
            x0: None,
            history: false,
            problem: ProblemConfig::default(),
            ratecheck: RateCheckSection::default(),
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must be positive, got {gamma}")))
    }
}

impl RunConfig {
    /// Parses TOML; relative paths are taken against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.problem.resolve_paths(base);
        if let Some(x0) = &config.x0 {
            config.x0 = Some(resolve(base, x0));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        StoppingRule::new(self.tau, 0.0)?;
        if self.max_iters == Some(0) {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.problem.set_seed(seed);
        self
    }

    pub fn build_problem(&self) -> Result<Problem> {
        self.problem.build()
    }

    pub fn rule(&self, problem: &Problem) -> Result<StoppingRule> {
        let rule = StoppingRule::for_problem(self.tau, problem)?;
        Ok(match self.max_iters {
            Some(k) => rule.with_max_iters(k),
            None => rule,
        })
    }

    pub fn initial_guess(&self, problem: &Problem) -> Result<Option<DVector<f64>>> {
        let Some(path) = &self.x0 else {
            return Ok(None);
        };
        let x0 = io::read_csv_vector(path)?;
        let dim = problem.operator().domain_dim();
        if x0.len() != dim {
            return Err(Error::invalid(format!(
                "initial guess {} has {} entries but the operator has {dim} columns",
                path.display(),
                x0.len()
            )));
        }
        Ok(Some(x0))
    }

    pub fn ratecheck(&self) -> Result<RateCheckConfig> {
        let seed = match self.problem {
            ProblemConfig::Multiplication { seed, .. } | ProblemConfig::Random { seed, .. } => seed,
            ProblemConfig::Files { .. } => 0,
        };
        let config = RateCheckConfig {
            delta_grid: self.ratecheck.delta_grid.clone(),
            mu: self.ratecheck.mu,
            n: self.ratecheck.n,
            gamma: self.gamma,
            tau: self.tau,
            max_iters: self.max_iters,
            noise: self.ratecheck.noise,
            seed,
        };
        config.validate()?;
        Ok(config)
    }
}
