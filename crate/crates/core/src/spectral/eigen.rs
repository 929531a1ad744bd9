use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{apply_g_scaled, Direction, OperatorMatrix};
use crate::model::ModelParams;
use crate::torus::ScalarField;

/// Additive eigenpair of `G` (or its backward analogue): `G[phi] = phi + lambda`.
///
/// Equivalently `A u = Lambda u` with `u = exp(-phi/(eps h))` and
/// `Lambda = exp(-lambda/(eps h))`. The potential is normalized to `min phi = 0`
/// (so `max u = 1`).
#[derive(Debug, Clone, Serialize)]
pub struct EigenSolution {
    pub direction: Direction,
    /// Effective value `lambda`.
    pub lambda: f64,
    /// `ln Lambda = -lambda/(eps h)`; kept separately because `Lambda` itself
    /// may overflow for small `eps h`.
    pub log_eigenvalue: f64,
    #[serde(skip)]
    pub potential: ScalarField,
    /// Sup-norm of `G[phi] - phi - lambda` in units of `eps h`, i.e. the
    /// relative eigen-residual of `u`.
    pub residual: f64,
    pub iterations: usize,
    pub eps_h: f64,
}

impl EigenSolution {
    /// Matrix eigenvalue `Lambda`.
    pub fn eigenvalue(&self) -> f64 {
        self.log_eigenvalue.exp()
    }

    /// `u = exp(-phi/(eps h))`, with `max u = 1`.
    pub fn eigenvector(&self) -> ScalarField {
        let eh = self.eps_h;
        self.potential.map(|p| (-p / eh).exp())
    }

    /// Potential in units of `eps h`.
    pub(crate) fn scaled_potential(&self) -> Vec<f64> {
        self.potential.values().iter().map(|p| p / self.eps_h).collect()
    }
}

/// Solves `G[phi] = phi + lambda` by the normalized fixed-point iteration
/// `phi <- G[phi] - min G[phi]`, with `lambda_k = mean(G[phi_k] - phi_k)`.
/// Stops when `sup |G[phi_k] - phi_k - lambda_k| < tol * eps h`.
pub fn solve_forward(
    a: &OperatorMatrix,
    params: &ModelParams,
    tol: f64,
    max_iter: usize,
) -> Result<EigenSolution> {
    solve(a, params, tol, max_iter, Direction::Forward)
}

/// As [`solve_forward`], applied to the backward operator. Yields `phibar`
/// and the same `lambda`.
pub fn solve_backward(
    b: &OperatorMatrix,
    params: &ModelParams,
    tol: f64,
    max_iter: usize,
) -> Result<EigenSolution> {
    solve(b, params, tol, max_iter, Direction::Backward)
}

fn solve(
    a: &OperatorMatrix,
    params: &ModelParams,
    tol: f64,
    max_iter: usize,
    direction: Direction,
) -> Result<EigenSolution> {
    if !(tol > 0.0) {
        return Err(Error::config("tol", "must be positive"));
    }
    if a.grid().dim() != params.dim() {
        return Err(Error::shape(params.dim(), a.grid().dim()));
    }
    let n = a.size();
    let eh = params.eps_h();
    // iterate on psi = phi / (eps h)
    let mut psi = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iter {
        let g = apply_g_scaled(a, &psi);
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Internal(format!(
                "eigen-iterate lost positivity at index {i} (empty operator row?)"
            )));
        }
        let shift = g.iter().zip(&psi).map(|(x, y)| x - y).sum::<f64>() / n as f64;
        residual = g
            .iter()
            .zip(&psi)
            .map(|(x, y)| (x - y - shift).abs())
            .fold(0.0, f64::max);
        if residual < tol {
            return Ok(EigenSolution {
                direction,
                lambda: shift * eh,
                log_eigenvalue: -shift,
                potential: ScalarField::new(*a.grid(), psi.iter().map(|p| p * eh).collect())?,
                residual,
                iterations: iter,
                eps_h: eh,
            });
        }
        let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
        for (p, v) in psi.iter_mut().zip(&g) {
            *p = v - lo;
        }
    }
    Err(Error::NonConvergence {
        what: "eigen-potential iteration",
        iterations: max_iter,
        residual,
    })
}

/// Stationary density `theta ~ exp(-(phi + phibar)/(eps h))`, normalized to a
/// probability vector.
pub fn build_theta(
    forward: &EigenSolution,
    backward: &EigenSolution,
    params: &ModelParams,
) -> Result<ScalarField> {
    forward.potential.grid().check_same(backward.potential.grid())?;
    let eh = params.eps_h();
    let expo: Vec<f64> = forward
        .potential
        .values()
        .iter()
        .zip(backward.potential.values())
        .map(|(p, q)| -(p + q) / eh)
        .collect();
    let top = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = expo.iter().map(|e| (e - top).exp()).collect();
    let z: f64 = w.iter().sum();
    ScalarField::new(*forward.potential.grid(), w.into_iter().map(|v| v / z).collect())
}
