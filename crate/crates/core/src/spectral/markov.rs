use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{Direction, OperatorMatrix};
use crate::spectral::eigen::EigenSolution;
use crate::torus::{ScalarField, TorusGrid};

/// Required `l1` stationarity of an attached stationary vector.
pub const STATIONARITY_TOL: f64 = 1e-10;
const STATIONARY_TARGET: f64 = 1e-15;
const STATIONARY_MAX_ITER: usize = 200_000;
const STATIONARY_PATIENCE: usize = 50;
/// Rows per block in `theta^T K`; fixed so sums do not depend on thread count.
const LEFT_BLOCK: usize = 64;
/// Smallest stationary weight accepted as a divisor.
pub const MIN_STATIONARY_WEIGHT: f64 = 1e-300;

/// Row-stochastic transition matrix on the grid with its stationary density.
#[derive(Debug, Clone)]
pub struct StochasticKernel {
    grid: TorusGrid,
    direction: Direction,
    rows: Vec<f64>,
    stationary: ScalarField,
    normalization_defect: f64,
}

impl StochasticKernel {
    /// Renormalizes nonnegative `rows` (row-major, `N x N`) and computes the
    /// stationary vector by left power iteration from the uniform density.
    pub fn from_rows(grid: TorusGrid, direction: Direction, rows: Vec<f64>) -> Result<Self> {
        Self::from_rows_with_start(grid, direction, rows, None)
    }

    pub(crate) fn from_rows_with_start(
        grid: TorusGrid,
        direction: Direction,
        mut rows: Vec<f64>,
        start: Option<&ScalarField>,
    ) -> Result<Self> {
        let n = grid.size();
        if rows.len() != n * n {
            return Err(Error::shape(n * n, rows.len()));
        }
        if rows.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("kernel entries must be finite and nonnegative".into()));
        }
        let mut defect: f64 = 0.0;
        for (i, row) in rows.chunks_mut(n).enumerate() {
            let s: f64 = row.iter().sum();
            if !(s > 0.0) {
                return Err(Error::Domain(format!("kernel row {i} has no mass")));
            }
            defect = defect.max((s - 1.0).abs());
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let stationary = stationary_left(&grid, &rows, start)?;
        Ok(Self {
            grid,
            direction,
            rows,
            stationary,
            normalization_defect: defect,
        })
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.grid.size()
    }

    #[inline]
    pub fn direction(&self) -> Direction {
        self.direction
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i * self.size() + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.size();
        &self.rows[i * n..(i + 1) * n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.rows
    }

    pub fn stationary(&self) -> &ScalarField {
        &self.stationary
    }

    /// Largest `|row sum - 1|` before renormalization (forward kernels) or of
    /// the stored rows (backward kernels, which are not renormalized).
    pub fn normalization_defect(&self) -> f64 {
        self.normalization_defect
    }

    /// Largest `|row sum - 1|` of the stored rows.
    pub fn row_sum_defect(&self) -> f64 {
        self.rows
            .chunks(self.size())
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `|| theta^T K - theta^T ||_1` for the attached stationary vector.
    pub fn stationarity_defect(&self) -> f64 {
        self.stationarity_defect_of(&self.stationary)
    }

    pub fn stationarity_defect_of(&self, theta: &ScalarField) -> f64 {
        let moved = left_apply(&self.rows, theta.values(), self.size());
        moved
            .iter()
            .zip(theta.values())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// `(K g)_i = sum_j K[i][j] g_j`.
    pub fn apply(&self, g: &ScalarField) -> Result<ScalarField> {
        self.grid.check_same(g.grid())?;
        Ok(ScalarField::new(self.grid, self.apply_slice(g.values()))?)
    }

    pub(crate) fn apply_slice(&self, g: &[f64]) -> Vec<f64> {
        self.rows
            .par_chunks(self.size())
            .map(|row| row.iter().zip(g).map(|(k, v)| k * v).sum())
            .collect()
    }

    /// Replaces the attached stationary vector.
    pub fn with_stationary(mut self, theta: ScalarField) -> Result<Self> {
        self.grid.check_same(theta.grid())?;
        self.stationary = theta;
        Ok(self)
    }
}

/// `theta^T K`, summed in fixed row blocks.
fn left_apply(rows: &[f64], theta: &[f64], n: usize) -> Vec<f64> {
    let partials: Vec<Vec<f64>> = rows
        .par_chunks(n * LEFT_BLOCK)
        .zip(theta.par_chunks(LEFT_BLOCK))
        .map(|(block, th)| {
            let mut acc = vec![0.0; n];
            for (row, &t) in block.chunks(n).zip(th) {
                if t != 0.0 {
                    for (a, k) in acc.iter_mut().zip(row) {
                        *a += t * k;
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; n];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Stationary vector of a row-stochastic matrix by left power iteration.
pub(crate) fn stationary_left(
    grid: &TorusGrid,
    rows: &[f64],
    start: Option<&ScalarField>,
) -> Result<ScalarField> {
    let n = grid.size();
    let mut theta = match start {
        Some(s) => {
            grid.check_same(s.grid())?;
            let z: f64 = s.values().iter().sum();
            if !(z > 0.0) || s.values().iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::Usage("stationary start must be a nonnegative density".into()));
            }
            s.values().iter().map(|v| v / z).collect()
        }
        None => vec![1.0 / n as f64; n],
    };
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut change = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITER {
        let mut next = left_apply(rows, &theta, n);
        let z: f64 = next.iter().sum();
        for v in next.iter_mut() {
            *v /= z;
        }
        change = next.iter().zip(&theta).map(|(a, b)| (a - b).abs()).sum();
        theta = next;
        if change <= STATIONARY_TARGET {
            break;
        }
        if change < best {
            best = change;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STATIONARY_PATIENCE && best <= STATIONARITY_TOL {
                break;
            }
        }
    }
    let moved = left_apply(rows, &theta, n);
    let defect: f64 = moved.iter().zip(&theta).map(|(a, b)| (a - b).abs()).sum();
    if defect > STATIONARITY_TOL {
        return Err(Error::NonConvergence {
            what: "stationary left power iteration",
            iterations: STATIONARY_MAX_ITER,
            residual: defect.min(change),
        });
    }
    ScalarField::new(*grid, theta)
}

/// Discretized forward transition density `K[i][j] = A[i][j] u_j / (Lambda u_i)`,
/// renormalized row by row. The attached stationary vector comes from left
/// power iteration, started at `start` when given.
pub fn build_forward_kernel(
    a: &OperatorMatrix,
    forward: &EigenSolution,
    tol: f64,
    start: Option<&ScalarField>,
) -> Result<StochasticKernel> {
    a.grid().check_same(forward.potential.grid())?;
    let n = a.size();
    let psi = forward.scaled_potential();
    let log_lambda = forward.log_eigenvalue;
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let row = a.log_row(i);
            let pi = psi[i];
            let psi = &psi;
            row.iter()
                .zip(psi.iter())
                .map(move |(l, pj)| (l + pi - pj - log_lambda).exp())
        })
        .collect();
    let kernel = StochasticKernel::from_rows_with_start(*a.grid(), Direction::Forward, rows, start)?;
    if kernel.normalization_defect > 100.0 * tol {
        return Err(Error::NonConvergence {
            what: "forward kernel normalization",
            iterations: forward.iterations,
            residual: kernel.normalization_defect,
        });
    }
    Ok(kernel)
}

/// Time-reversed kernel `Q[i][j] = theta_j K[j][i] / theta_i`. Rows are left
/// as computed; their defect verifies that `Q` is stochastic.
pub fn build_backward_kernel(k: &StochasticKernel) -> Result<StochasticKernel> {
    let theta = k.stationary().values();
    let pre = k.stationarity_defect();
    if pre > STATIONARITY_TOL {
        return Err(Error::Usage(format!(
            "attached stationary vector has l1 defect {pre:e} > {STATIONARITY_TOL:e}"
        )));
    }
    if let Some((index, &value)) = theta
        .iter()
        .enumerate()
        .find(|(_, &t)| t < MIN_STATIONARY_WEIGHT)
    {
        return Err(Error::Underflow { index, value });
    }
    let n = k.size();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let ti = theta[i];
            (0..n).map(move |j| theta[j] * k.entry(j, i) / ti)
        })
        .collect();
    let mut q = StochasticKernel {
        grid: *k.grid(),
        direction: Direction::Backward,
        rows,
        stationary: k.stationary().clone(),
        normalization_defect: 0.0,
    };
    q.normalization_defect = q.row_sum_defect();
    Ok(q)
}

/// Normalized forward operator `(F g)_i = sum_j K[i][j] g_j`.
pub fn apply_f(k: &StochasticKernel, g: &ScalarField) -> Result<ScalarField> {
    if k.direction() != Direction::Forward {
        return Err(Error::Usage("apply_f expects the forward kernel".into()));
    }
    k.apply(g)
}

/// Backward transfer operator `(F* f)_i = sum_j Q[i][j] f_j`, the adjoint of
/// `F` in `L^2(theta)`.
pub fn apply_f_star(q: &StochasticKernel, f: &ScalarField) -> Result<ScalarField> {
    if q.direction() != Direction::Backward {
        return Err(Error::Usage("apply_f_star expects the backward kernel".into()));
    }
    q.apply(f)
}
