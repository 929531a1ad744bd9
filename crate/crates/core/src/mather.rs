//! Holonomic measures `mu_ij = theta_i K_ij`, their action, entropy and
//! penalized objective, competitor measures, and `(eps, h)` sweeps.
//!
//! An entry `(i, j)` stands for every velocity `v = (y_j + k - x_i)/h` over the
//! periodic images `k`. Its mass is split over those images with the
//! operator's Gibbs weights, so the action uses the weighted mean Lagrangian
//! and the entropy subtracts the Shannon entropy `H_ij` of the split. The
//! v-space density of one entry is `K_ij * N * h^n`.

use std::borrow::Cow;
use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{Direction, OperatorMatrix};
use crate::model::ModelParams;
use crate::output::format_float;
use crate::spectral::{SolveOptions, SolvedModel, StochasticKernel};
use crate::torus::{ScalarField, TorusGrid};

/// A probability measure on (position, step) built from a kernel and a
/// density on positions.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure<'a> {
    theta: Cow<'a, ScalarField>,
    kernel: Cow<'a, StochasticKernel>,
    operator: Option<&'a OperatorMatrix>,
}

impl<'a> DiscreteMeasure<'a> {
    /// `theta` defaults to the kernel's attached stationary vector.
    pub fn new(kernel: &'a StochasticKernel, operator: Option<&'a OperatorMatrix>) -> Result<Self> {
        if let Some(op) = operator {
            kernel.grid().check_same(op.grid())?;
            if op.direction() != Direction::Forward {
                return Err(Error::Usage("measure metadata must come from the forward operator".into()));
            }
        }
        Ok(Self {
            theta: Cow::Borrowed(kernel.stationary()),
            kernel: Cow::Borrowed(kernel),
            operator,
        })
    }

    /// The measure of a solved model.
    pub fn of_solution(s: &'a SolvedModel) -> Self {
        Self {
            theta: Cow::Borrowed(s.stationary()),
            kernel: Cow::Borrowed(&s.kernel),
            operator: Some(&s.forward_operator),
        }
    }

    /// Same kernel, different position density.
    pub fn with_theta(mut self, theta: ScalarField) -> Result<Self> {
        self.kernel.grid().check_same(theta.grid())?;
        self.theta = Cow::Owned(theta);
        Ok(self)
    }

    pub fn theta(&self) -> &ScalarField {
        &self.theta
    }

    pub fn kernel(&self) -> &StochasticKernel {
        &self.kernel
    }

    #[inline]
    pub fn joint_mass(&self, i: usize, j: usize) -> f64 {
        self.theta.values()[i] * self.kernel.entry(i, j)
    }

    pub fn total_mass(&self) -> f64 {
        let n = self.kernel.size();
        (0..n).map(|i| (0..n).map(|j| self.joint_mass(i, j)).sum::<f64>()).sum()
    }

    /// `max_i |sum_j mu_ij - theta_i|`.
    pub fn marginal_defect(&self) -> f64 {
        let n = self.kernel.size();
        (0..n)
            .map(|i| {
                let s: f64 = (0..n).map(|j| self.joint_mass(i, j)).sum();
                (s - self.theta.values()[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    fn operator(&self) -> Result<&OperatorMatrix> {
        self.operator
            .ok_or_else(|| Error::Usage("measure carries no mean-Lagrangian metadata".into()))
    }

    /// Row sums `sum_j K_ij t_ij` for row terms that are only needed where
    /// `K_ij > 0`; `None` from `term` marks an entry that cannot be evaluated.
    fn row_weighted(&self, term: impl Fn(usize, usize, f64) -> Option<f64> + Sync) -> Result<f64> {
        let n = self.kernel.size();
        let th = self.theta.values();
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for (j, &k) in self.kernel.row(i).iter().enumerate() {
                    if k > 0.0 {
                        match term(i, j, k) {
                            Some(t) => acc += k * t,
                            None => return Err(Error::Numeric(format!("kernel entry ({i},{j}) lies outside the operator support"))),
                        }
                    }
                }
                Ok(th[i] * acc)
            })
            .collect::<Result<_>>()?;
        Ok(rows.iter().sum())
    }

    /// `sum_ij mu_ij meanL_ij`.
    pub fn action(&self) -> Result<f64> {
        let op = self.operator()?;
        self.row_weighted(|i, j, _| {
            let l = op.mean_lagrangian(i, j);
            l.is_finite().then_some(l)
        })
    }

    /// `sum_ij mu_ij [ln(K_ij N h^n) - H_ij]`.
    pub fn entropy(&self, params: &ModelParams) -> Result<f64> {
        let op = self.operator()?;
        let g = self.kernel.grid();
        let log_cell = (g.size() as f64).ln() + g.dim() as f64 * params.h().ln();
        self.row_weighted(|i, j, k| {
            if !op.log_entry(i, j).is_finite() {
                return None;
            }
            Some(k.ln() + log_cell - op.image_entropy(i, j))
        })
    }

    /// `action + eps * entropy`.
    pub fn objective(&self, params: &ModelParams) -> Result<f64> {
        Ok(self.action()? + params.epsilon() * self.entropy(params)?)
    }

    /// `|sum_ij mu_ij (psi_j - psi_i)| / h`.
    pub fn holonomy_residual(&self, psi: &ScalarField, h: f64) -> Result<f64> {
        self.kernel.grid().check_same(psi.grid())?;
        let p = psi.values();
        let n = self.kernel.size();
        let s: f64 = (0..n)
            .map(|i| {
                let row: f64 = self.kernel.row(i).iter().zip(p).map(|(k, pj)| k * (pj - p[i])).sum();
                self.theta.values()[i] * row
            })
            .sum();
        Ok(s.abs() / h)
    }
}

/// The constant and `cos`, `sin` of `2 pi x_d` on every axis.
pub fn trig_test_fields(grid: &TorusGrid) -> Vec<ScalarField> {
    let mut out = vec![ScalarField::constant(*grid, 1.0)];
    for d in 0..grid.dim() {
        out.push(ScalarField::from_fn(*grid, |x| (2.0 * PI * x[d]).cos()));
        out.push(ScalarField::from_fn(*grid, |x| (2.0 * PI * x[d]).sin()));
    }
    out
}

/// Largest holonomy residual over [`trig_test_fields`].
pub fn max_trig_holonomy(mu: &DiscreteMeasure, h: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for psi in trig_test_fields(mu.kernel().grid()) {
        worst = worst.max(mu.holonomy_residual(&psi, h)?);
    }
    Ok(worst)
}

/// How to build a competitor kernel. Every family keeps its rows inside the
/// support of the model's forward operator.
#[derive(Debug, Clone)]
pub enum CompetitorSpec {
    /// Rows drawn from the flat Dirichlet distribution.
    Dirichlet { seed: u64 },
    /// Uniform over the whole support of each row.
    UniformAll,
    /// Uniform over steps of at most `radius` cells per axis.
    UniformStep { radius: usize },
    /// The solved kernel with each entry scaled by `exp(strength * z)`,
    /// `z` standard normal, then renormalized.
    Perturbed { seed: u64, strength: f64 },
    Given(StochasticKernel),
}

/// Fails unless every state reaches and is reached from state 0.
fn check_irreducible(grid: &TorusGrid, rows: &[f64]) -> Result<()> {
    let n = grid.size();
    for transpose in [false, true] {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let w = if transpose { rows[j * n + i] } else { rows[i * n + j] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(miss) = seen.iter().position(|s| !s) {
            let how = if transpose { "cannot reach" } else { "is not reachable from" };
            return Err(Error::Reducible(format!("state {miss} {how} state 0")));
        }
    }
    Ok(())
}

/// Competitor kernel with its own stationary vector; pair it with the model's
/// forward operator via [`DiscreteMeasure::new`].
pub fn competitor(spec: &CompetitorSpec, model: &SolvedModel) -> Result<StochasticKernel> {
    let op = &model.forward_operator;
    let grid = model.grid;
    let n = grid.size();
    let inside = |i: usize, j: usize| op.log_entry(i, j).is_finite();
    let rows: Vec<f64> = match spec {
        CompetitorSpec::Dirichlet { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut rows = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    if inside(i, j) {
                        let e: f64 = Exp1.sample(&mut rng);
                        rows[i * n + j] = e;
                    }
                }
            }
            rows
        }
        CompetitorSpec::UniformAll => (0..n * n)
            .map(|ij| if inside(ij / n, ij % n) { 1.0 } else { 0.0 })
            .collect(),
        CompetitorSpec::UniformStep { radius } => {
            let m = grid.points_per_axis() as i64;
            let r = *radius as i64;
            let mut rows = vec![0.0; n * n];
            for i in 0..n {
                let a = grid.multi_index(i);
                for j in 0..n {
                    let b = grid.multi_index(j);
                    let near = a.iter().zip(&b).all(|(&p, &q)| {
                        let d = (q as i64 - p as i64).rem_euclid(m);
                        d.min(m - d) <= r
                    });
                    if near && inside(i, j) {
                        rows[i * n + j] = 1.0;
                    }
                }
            }
            rows
        }
        CompetitorSpec::Perturbed { seed, strength } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            model
                .kernel
                .entries()
                .iter()
                .map(|&k| {
                    let z: f64 = rng.sample(StandardNormal);
                    k * (strength * z).exp()
                })
                .collect()
        }
        CompetitorSpec::Given(k) => {
            k.grid().check_same(&grid)?;
            k.entries().to_vec()
        }
    };
    check_irreducible(&grid, &rows)?;
    StochasticKernel::from_rows(grid, Direction::Forward, rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveReport {
    pub epsilon: f64,
    pub h: f64,
    pub lambda: f64,
    pub lambda_over_h: f64,
    pub action: f64,
    pub entropy: f64,
    pub objective: f64,
    /// `objective - lambda/h`.
    pub identity_defect: f64,
    pub total_mass: f64,
    pub marginal_defect: f64,
    pub holonomy_residual: f64,
}

pub fn objective_report(model: &SolvedModel) -> Result<ObjectiveReport> {
    let mu = DiscreteMeasure::of_solution(model);
    let p = &model.params;
    let action = mu.action()?;
    let entropy = mu.entropy(p)?;
    let objective = action + p.epsilon() * entropy;
    let lambda_over_h = model.lambda() / p.h();
    Ok(ObjectiveReport {
        epsilon: p.epsilon(),
        h: p.h(),
        lambda: model.lambda(),
        lambda_over_h,
        action,
        entropy,
        objective,
        identity_defect: objective - lambda_over_h,
        total_mass: mu.total_mass(),
        marginal_defect: mu.marginal_defect(),
        holonomy_residual: max_trig_holonomy(&mu, p.h())?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub h: f64,
    pub lambda: f64,
    pub lambda_over_h: f64,
    pub gap: f64,
    pub gap_converged: bool,
    pub action: f64,
    pub entropy: f64,
    pub objective: f64,
    pub theta_argmax_x: Vec<f64>,
    /// Set when this configuration failed; the numbers are then NaN.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn sweep_row(base: &ModelParams, eps: f64, h: f64, m: usize, opts: &SolveOptions) -> Result<SweepRow> {
    let params = base.with_scales(eps, h)?;
    let grid = TorusGrid::new(params.dim(), m)?;
    params.check_resolution(&grid)?;
    let model = SolvedModel::solve(&params, &grid, opts)?;
    let gap = model.estimate_gap()?;
    let rep = objective_report(&model)?;
    Ok(SweepRow {
        epsilon: eps,
        h,
        lambda: rep.lambda,
        lambda_over_h: rep.lambda_over_h,
        gap: gap.gap,
        gap_converged: gap.converged,
        action: rep.action,
        entropy: rep.entropy,
        objective: rep.objective,
        theta_argmax_x: grid.point(model.stationary().argmax()),
        error: None,
    })
}

/// Solves every `(eps, h)` pair with the potential and tilt of `base` on an
/// `m`-point-per-axis grid. Rows run in parallel and come back in input
/// order; a failed row records its error and the sweep continues.
pub fn sweep(base: &ModelParams, pairs: &[(f64, f64)], m: usize, opts: &SolveOptions) -> Vec<SweepRow> {
    pairs
        .par_iter()
        .map(|&(eps, h)| {
            sweep_row(base, eps, h, m, opts).unwrap_or_else(|e| SweepRow {
                epsilon: eps,
                h,
                lambda: f64::NAN,
                lambda_over_h: f64::NAN,
                gap: f64::NAN,
                gap_converged: false,
                action: f64::NAN,
                entropy: f64::NAN,
                objective: f64::NAN,
                theta_argmax_x: Vec::new(),
                error: Some(e.to_string()),
            })
        })
        .collect()
}

/// Sweep table; multi-dimensional argmax coordinates are joined with `;`.
pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "epsilon,h,lambda,lambda_over_h,gap,action,entropy,objective,theta_argmax_x")?;
    for r in rows {
        let arg = if r.theta_argmax_x.is_empty() {
            "NaN".to_string()
        } else {
            r.theta_argmax_x.iter().map(|c| format_float(*c)).collect::<Vec<_>>().join(";")
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            format_float(r.epsilon),
            format_float(r.h),
            format_float(r.lambda),
            format_float(r.lambda_over_h),
            format_float(r.gap),
            format_float(r.action),
            format_float(r.entropy),
            format_float(r.objective),
            arg
        )?;
    }
    Ok(())
}
