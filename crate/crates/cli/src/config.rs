//! The JSON run configuration shared by every command.

use std::path::{Path, PathBuf};

use epm_core::correlation::{FitOptions, DEFAULT_FLOOR, DEFAULT_SKIP};
use epm_core::kernel::Direction;
use epm_core::{Error, ModelParams, PotentialSpec, ScalarField, SolveOptions, TorusGrid, TrigTerm};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryFormat {
    Binary,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    pub grid_points: usize,
    pub epsilon: f64,
    pub h: f64,
    #[serde(alias = "P")]
    pub momentum: Vec<f64>,
    #[serde(default = "PotentialSpec::zero")]
    pub potential: PotentialSpec,
    #[serde(default = "defaults::cutoff")]
    pub cutoff_sigmas: f64,
    #[serde(default = "defaults::tol")]
    pub tol: f64,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::gap_tol")]
    pub gap_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::trajectory_length")]
    pub trajectory_length: usize,
    #[serde(default = "defaults::n_max")]
    pub n_max: usize,
    #[serde(default = "defaults::output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    /// Kernel that drives `simulate` and `correlate`.
    #[serde(default = "defaults::direction")]
    pub kernel: Direction,
    #[serde(default = "defaults::format")]
    pub trajectory_format: TrajectoryFormat,
    /// Observables as trigonometric polynomials; default `sin(2 pi x_0)`.
    #[serde(default)]
    pub observable_f: Option<PotentialSpec>,
    #[serde(default)]
    pub observable_g: Option<PotentialSpec>,
    #[serde(default = "defaults::skip")]
    pub fit_skip: usize,
    #[serde(default = "defaults::floor")]
    pub fit_floor: f64,
    /// `(epsilon, h)` pairs for `sweep`.
    #[serde(default)]
    pub sweep: Vec<(f64, f64)>,
    /// Number of random competitors scored by `objective`.
    #[serde(default)]
    pub competitors: usize,
}

mod defaults {
    use super::*;

    pub fn cutoff() -> f64 {
        epm_core::DEFAULT_CUTOFF_SIGMAS
    }
    pub fn tol() -> f64 {
        SolveOptions::default().tol
    }
    pub fn max_iter() -> usize {
        SolveOptions::default().max_iter
    }
    pub fn gap_tol() -> f64 {
        SolveOptions::default().gap_tol
    }
    pub fn trajectory_length() -> usize {
        100_000
    }
    pub fn n_max() -> usize {
        50
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("out")
    }
    pub fn direction() -> Direction {
        Direction::Forward
    }
    pub fn format() -> TrajectoryFormat {
        TrajectoryFormat::Binary
    }
    pub fn skip() -> usize {
        DEFAULT_SKIP
    }
    pub fn floor() -> f64 {
        DEFAULT_FLOOR
    }
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Usage(format!("malformed config {}: {e}", path.display())))
    }

    pub fn params(&self) -> Result<ModelParams, Error> {
        if self.momentum.len() != self.dimension {
            return Err(config_error(
                "momentum",
                format!("has {} entries but dimension is {}", self.momentum.len(), self.dimension),
            ));
        }
        ModelParams::new(self.epsilon, self.h, self.momentum.clone(), self.potential.clone())
    }

    pub fn grid(&self) -> Result<TorusGrid, Error> {
        TorusGrid::new(self.dimension, self.grid_points)
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            cutoff_sigmas: self.cutoff_sigmas,
            tol: self.tol,
            max_iter: self.max_iter,
            gap_tol: self.gap_tol,
            ..SolveOptions::default()
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            skip: self.fit_skip,
            floor: self.fit_floor,
        }
    }

    /// Everything checkable before a solve, including the resolution rule.
    pub fn validate(&self) -> Result<(ModelParams, TorusGrid), Error> {
        let params = self.params()?;
        let grid = self.grid()?;
        params.check_resolution(&grid)?;
        if !(self.cutoff_sigmas >= epm_core::kernel::MIN_CUTOFF_SIGMAS) {
            return Err(config_error(
                "cutoff_sigmas",
                format!("must be at least {}", epm_core::kernel::MIN_CUTOFF_SIGMAS),
            ));
        }
        if !(self.tol > 0.0) || !(self.gap_tol > 0.0) {
            return Err(config_error("tol", "tolerances must be positive"));
        }
        if self.max_iter == 0 {
            return Err(config_error("max_iter", "must be positive"));
        }
        if self.n_max == 0 {
            return Err(config_error("n_max", "must be at least 1"));
        }
        Ok((params, grid))
    }

    fn observable(&self, spec: &Option<PotentialSpec>, name: &str, grid: &TorusGrid) -> Result<ScalarField, Error> {
        let spec = spec.clone().unwrap_or_else(|| {
            let mut freq = vec![0; self.dimension];
            freq[0] = 1;
            PotentialSpec::from_terms(vec![TrigTerm {
                freq,
                cos_amp: 0.0,
                sin_amp: 1.0,
            }])
        });
        spec.sample(grid)
            .map_err(|e| config_error(name, e.to_string()))
    }

    pub fn observables(&self, grid: &TorusGrid) -> Result<(ScalarField, ScalarField), Error> {
        Ok((
            self.observable(&self.observable_f, "observable_f", grid)?,
            self.observable(&self.observable_g, "observable_g", grid)?,
        ))
    }
}
