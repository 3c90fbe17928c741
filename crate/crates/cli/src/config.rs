use std::fmt;
use std::path::Path;

use qtime_core::krotov::ConvergenceCriteria;
use qtime_core::propagation::default_slices;
use qtime_core::propagation::T2_MAX;
use qtime_core::records::read_json;
use qtime_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::InsufficientData(_)) => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// A single solve, as read from `--config` or assembled from flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: String,
    pub n: usize,
    /// Total time in units of T2max.
    pub t_rel: f64,
    pub seed: u64,
    #[serde(default)]
    pub slices: Option<usize>,
    #[serde(default = "unit")]
    pub omega: f64,
    #[serde(default)]
    pub criteria: ConvergenceCriteria,
}

fn unit() -> f64 {
    1.0
}

impl RunConfig {
    pub fn resolve(
        path: Option<&Path>,
        target: Option<String>,
        n: Option<usize>,
        t_rel: Option<f64>,
        seed: Option<u64>,
        slices: Option<usize>,
        max_cycles: Option<usize>,
    ) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => read_json::<RunConfig>(p)?,
            None => RunConfig {
                target: target.ok_or_else(|| CliError::Usage("--target is required".into()))?,
                n: n.ok_or_else(|| CliError::Usage("--n is required".into()))?,
                t_rel: t_rel.ok_or_else(|| CliError::Usage("--t is required".into()))?,
                seed: seed.ok_or_else(|| CliError::Usage("--seed is required".into()))?,
                slices: None,
                omega: 1.0,
                criteria: ConvergenceCriteria::default(),
            },
        };
        if slices.is_some() {
            cfg.slices = slices;
        }
        if let Some(m) = max_cycles {
            cfg.criteria.max_cycles = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(self.t_rel > 0.0 && self.t_rel.is_finite()) {
            return Err(CliError::Usage(format!(
                "t_rel must be positive, got {}",
                self.t_rel
            )));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(CliError::Usage(format!(
                "omega must be positive, got {}",
                self.omega
            )));
        }
        if self.slices == Some(0) {
            return Err(CliError::Usage("slices must be positive".into()));
        }
        self.criteria.validate()?;
        Ok(())
    }

    pub fn slice_count(&self) -> usize {
        self.slices
            .unwrap_or_else(|| default_slices(self.t_rel * T2_MAX))
    }
}

/// Parses `lo:hi` into an ordered positive pair.
pub fn parse_window(s: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::Usage(format!("window {s:?} is not lo:hi with 0 < lo < hi"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi > lo) {
        return Err(bad());
    }
    Ok((lo, hi))
}
