//! Numerical laboratory for the discrete-time entropy-penalized Mather problem
//! on the torus `[0,1)^n`.
//!
//! The crate assembles dense discretizations of the forward and backward
//! Perron operators of the Lagrangian `L(x,v) = |v|^2/2 - U(x) + <P,v>`,
//! solves their Perron-Frobenius eigenproblems for the potentials `phi`,
//! `phibar` and the effective value `lambda`, builds the stationary density
//! `theta` and the forward/backward Markov kernels, and checks adjointness,
//! holonomy, stationarity, the spectral gap and the exponential decay of
//! correlations.
//!
//! Modules, bottom-up: [`torus`] and [`model`] (geometry, fields, parameters),
//! [`kernel`] (operator assembly), [`spectral`] (eigen-solves, kernels, gap),
//! [`chain`] (trajectory simulation), [`correlation`] (exact and empirical
//! correlation functions) and [`mather`] (action, entropy, competitors, sweeps).

pub mod chain;
pub mod correlation;
pub mod error;
pub mod kernel;
pub mod mather;
pub mod model;
pub mod output;
pub mod spectral;
pub mod torus;

pub use error::{Error, Result};
pub use kernel::{
    apply_g, assemble_backward, assemble_backward_log, assemble_forward, assemble_forward_log,
    eval_lagrangian, Direction, Domain, OperatorMatrix, DEFAULT_CUTOFF_SIGMAS,
};
pub use model::{eval_potential, ModelParams, PotentialSpec, TrigTerm};
pub use spectral::{
    apply_f, apply_f_star, build_backward_kernel, build_forward_kernel, build_theta,
    estimate_gap, solve_backward, solve_forward, EigenSolution, GapMethod, SolveOptions,
    SolvedModel, SpectrumEstimate, StochasticKernel,
};
pub use torus::{integrate, weighted_inner, wrap, ScalarField, TorusGrid};
