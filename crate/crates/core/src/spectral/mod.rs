//! Perron-Frobenius eigen-solves, stationary density, forward and backward
//! Markov kernels, and the spectral gap of the normalized operator.

mod eigen;
mod gap;
mod markov;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use eigen::{build_theta, solve_backward, solve_forward, EigenSolution};
pub use gap::{estimate_gap, GapMethod, SpectrumEstimate, DEFAULT_GAP_TOL, GAP_SEED, GAP_WINDOW};
pub use markov::{
    apply_f, apply_f_star, build_backward_kernel, build_forward_kernel, StochasticKernel,
    MIN_STATIONARY_WEIGHT, STATIONARITY_TOL,
};

use crate::error::Result;
use crate::kernel::{assemble_backward_log, assemble_forward_log, OperatorMatrix, DEFAULT_CUTOFF_SIGMAS};
use crate::model::ModelParams;
use crate::output::format_float;
use crate::torus::{ScalarField, TorusGrid};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub cutoff_sigmas: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub gap_tol: f64,
    pub gap_max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            cutoff_sigmas: DEFAULT_CUTOFF_SIGMAS,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            gap_tol: DEFAULT_GAP_TOL,
            gap_max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Everything derived from one `(params, grid)` pair: both operators, both
/// potentials, `theta`, and the kernels `K` and `Q`.
#[derive(Debug, Clone)]
pub struct SolvedModel {
    pub params: ModelParams,
    pub grid: TorusGrid,
    pub options: SolveOptions,
    pub forward_operator: OperatorMatrix,
    pub backward_operator: OperatorMatrix,
    pub forward: EigenSolution,
    pub backward: EigenSolution,
    /// `theta` from the potentials, `exp(-(phi + phibar)/(eps h))`.
    pub theta: ScalarField,
    /// Forward kernel; its attached stationary vector is the left-iteration one.
    pub kernel: StochasticKernel,
    pub backward_kernel: StochasticKernel,
    /// `|| theta_formula - theta_left ||_1`.
    pub theta_discrepancy: f64,
}

impl SolvedModel {
    pub fn solve(params: &ModelParams, grid: &TorusGrid, options: &SolveOptions) -> Result<Self> {
        let a = assemble_forward_log(params, grid, options.cutoff_sigmas)?;
        let b = assemble_backward_log(params, grid, options.cutoff_sigmas)?;
        let forward = solve_forward(&a, params, options.tol, options.max_iter)?;
        let backward = solve_backward(&b, params, options.tol, options.max_iter)?;
        let theta = build_theta(&forward, &backward, params)?;
        let kernel = build_forward_kernel(&a, &forward, options.tol, Some(&theta))?;
        let backward_kernel = build_backward_kernel(&kernel)?;
        let theta_discrepancy = theta
            .values()
            .iter()
            .zip(kernel.stationary().values())
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(Self {
            params: params.clone(),
            grid: *grid,
            options: *options,
            forward_operator: a,
            backward_operator: b,
            forward,
            backward,
            theta,
            kernel,
            backward_kernel,
            theta_discrepancy,
        })
    }

    /// Stationary density attached to the kernels.
    pub fn stationary(&self) -> &ScalarField {
        self.kernel.stationary()
    }

    pub fn lambda(&self) -> f64 {
        self.forward.lambda
    }

    pub fn estimate_gap(&self) -> Result<SpectrumEstimate> {
        estimate_gap(
            &self.kernel,
            self.kernel.stationary(),
            self.options.gap_tol,
            self.options.gap_max_iter,
        )
    }

    pub fn summary(&self, gap: &SpectrumEstimate) -> SolveSummary {
        SolveSummary {
            lambda: self.forward.lambda,
            lambda_backward: self.backward.lambda,
            big_lambda: self.forward.eigenvalue(),
            log_big_lambda: self.forward.log_eigenvalue,
            residual: self.forward.residual.max(self.backward.residual),
            iterations: self.forward.iterations.max(self.backward.iterations),
            lambda2_modulus: gap.lambda2_modulus,
            gap: gap.gap,
            gap_converged: gap.converged,
            gap_method: gap.method,
            theta_l1_defect: self.kernel.stationarity_defect(),
            q_rowsum_defect: self.backward_kernel.row_sum_defect(),
            k_normalization_defect: self.kernel.normalization_defect(),
            theta_discrepancy: self.theta_discrepancy,
        }
    }

    /// One row per grid point: multi-index, coordinates, `phi`, `phibar`, `theta`.
    pub fn write_fields_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.grid.dim();
        let mut header: Vec<String> = (0..dim).map(|d| format!("i{d}")).collect();
        header.extend((0..dim).map(|d| format!("x{d}")));
        header.extend(["phi", "phibar", "theta"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        let theta = self.stationary().values();
        for flat in 0..self.grid.size() {
            let mut cols: Vec<String> = self
                .grid
                .multi_index(flat)
                .iter()
                .map(|i| i.to_string())
                .collect();
            cols.extend(self.grid.point(flat).into_iter().map(format_float));
            cols.push(format_float(self.forward.potential.values()[flat]));
            cols.push(format_float(self.backward.potential.values()[flat]));
            cols.push(format_float(theta[flat]));
            writeln!(out, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Solve summary. `Lambda` is serialized under that name and may be `null`
/// when it overflows; `log_Lambda` is always finite.
#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub lambda: f64,
    pub lambda_backward: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    #[serde(rename = "log_Lambda")]
    pub log_big_lambda: f64,
    pub residual: f64,
    pub iterations: usize,
    pub lambda2_modulus: f64,
    pub gap: f64,
    pub gap_converged: bool,
    pub gap_method: GapMethod,
    pub theta_l1_defect: f64,
    pub q_rowsum_defect: f64,
    pub k_normalization_defect: f64,
    pub theta_discrepancy: f64,
}
