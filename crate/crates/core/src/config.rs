//! Declarative experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::directed::Budget;
use crate::error::{CovMatchError, Result};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "COVMATCH_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Undirected,
    Dag,
    Cyclic,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Undirected => "undirected",
            Mode::Dag => "dag",
            Mode::Cyclic => "cyclic",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = CovMatchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "undirected" => Ok(Mode::Undirected),
            "dag" => Ok(Mode::Dag),
            "cyclic" => Ok(Mode::Cyclic),
            other => Err(CovMatchError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Covmatch,
    Sigmatch,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Covmatch => "covmatch",
            Method::Sigmatch => "sigmatch",
        }
    }

    pub(crate) fn seed_tag(&self) -> u64 {
        match self {
            Method::Covmatch => 1,
            Method::Sigmatch => 2,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Number of samples, or the population covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SampleSize {
    Finite(usize),
    Asymptotic,
}

impl SampleSize {
    pub(crate) fn seed_tag(&self) -> u64 {
        match self {
            SampleSize::Finite(t) => *t as u64,
            SampleSize::Asymptotic => u64::MAX,
        }
    }
}

impl fmt::Display for SampleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleSize::Finite(t) => write!(f, "{t}"),
            SampleSize::Asymptotic => f.write_str("asymptotic"),
        }
    }
}

impl FromStr for SampleSize {
    type Err = CovMatchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asymptotic" | "inf" => Ok(SampleSize::Asymptotic),
            _ => s
                .parse::<usize>()
                .ok()
                .filter(|&t| t > 0)
                .map(SampleSize::Finite)
                .ok_or_else(|| CovMatchError::Config(format!("bad sample size {s:?}"))),
        }
    }
}

impl Serialize for SampleSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SampleSize::Finite(t) => s.serialize_u64(*t as u64),
            SampleSize::Asymptotic => s.serialize_str("asymptotic"),
        }
    }
}

impl<'de> Deserialize<'de> for SampleSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(0) => Err(serde::de::Error::custom("sample size must be positive")),
            Raw::N(t) => Ok(SampleSize::Finite(t as usize)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UndirectedSolver {
    Exact,
    Bnb,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Covmatch]
}
fn default_alpha() -> f64 {
    1e-2
}
fn default_workers() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_n_graphs() -> usize {
    10
}
fn default_edges_per_node() -> f64 {
    2.0
}
fn default_budget() -> Budget {
    Budget::Desk
}
fn default_solver() -> UndirectedSolver {
    UndirectedSolver::Exact
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub n_list: Vec<usize>,
    pub t_list: Vec<SampleSize>,
    #[serde(default = "default_n_graphs")]
    pub n_graphs: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Sparsity weight of the signal-matching baseline; `alpha` when absent.
    #[serde(default)]
    pub sigmatch_alpha: Option<f64>,
    #[serde(default = "default_budget")]
    pub budget: Budget,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; falls back to the environment, then `./covmatch-out`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Threads shared by the instance grid.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Threads of each directed solver.
    #[serde(default = "default_workers")]
    pub solver_workers: usize,
    /// Edges per node for undirected and cyclic graphs (`M = k N`); the DAG
    /// edge probability is `k / N`.
    #[serde(default = "default_edges_per_node")]
    pub edges_per_node: f64,
    #[serde(default = "default_solver")]
    pub undirected_solver: UndirectedSolver,
    /// Record wall-clock runtimes. When off, runtimes are written as zero so
    /// repeated runs produce byte-identical artifacts.
    #[serde(default = "default_true")]
    pub timing: bool,
    /// Overrides of the budget preset.
    #[serde(default)]
    pub cycles: Option<usize>,
    #[serde(default)]
    pub r_max: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, n_list: Vec<usize>, t_list: Vec<SampleSize>) -> Self {
        ExperimentConfig {
            mode,
            n_list,
            t_list,
            n_graphs: default_n_graphs(),
            alpha: default_alpha(),
            sigmatch_alpha: None,
            budget: Budget::Desk,
            seed: 0,
            output_dir: None,
            methods: default_methods(),
            workers: 1,
            solver_workers: 1,
            edges_per_node: default_edges_per_node(),
            undirected_solver: UndirectedSolver::Exact,
            timing: true,
            cycles: None,
            r_max: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| CovMatchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CovMatchError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CovMatchError::Config(m.to_string()));
        if self.n_list.is_empty() {
            return bad("n_list must not be empty");
        }
        if self.n_list.iter().any(|&n| n < 2) {
            return bad("every N must be at least 2");
        }
        if self.t_list.is_empty() {
            return bad("t_list must not be empty");
        }
        if self.n_graphs == 0 {
            return bad("n_graphs must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and nonnegative");
        }
        if let Some(a) = self.sigmatch_alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return bad("sigmatch_alpha must be finite and nonnegative");
            }
        }
        if self.workers == 0 || self.solver_workers == 0 {
            return bad("worker counts must be at least 1");
        }
        if !(self.edges_per_node > 0.0) {
            return bad("edges_per_node must be positive");
        }
        Ok(())
    }

    /// Resolved output directory.
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("covmatch-out"))
    }

    pub fn sigmatch_alpha(&self) -> f64 {
        self.sigmatch_alpha.unwrap_or(self.alpha)
    }
}
