//! Dense discretizations of the forward and backward Perron operators.
//!
//! The velocity integral `int exp(-L(x,v)/eps) u(x + h v) dv` becomes, after
//! `y = x + h v`, an integral over landing points `y in R^n` with Jacobian
//! `h^-n`. Landing points are folded onto the torus grid by summing over the
//! integer images `y_j + k`, keeping only images inside the ball
//! `|y_j + k - x_i + h P| <= c * h sqrt(eps)` around the centre of the
//! Gaussian factor. Every entry carries the Gibbs-weighted mean of the
//! Lagrangian over its images and the Shannon entropy of those image weights,
//! which is what the action and entropy functionals need after lumping.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{eval_potential, ModelParams};
use crate::output::format_float;
use crate::torus::{ScalarField, TorusGrid};

pub const DEFAULT_CUTOFF_SIGMAS: f64 = 12.0;
pub const MIN_CUTOFF_SIGMAS: f64 = 6.0;

/// Above this row spread of log-entries the linear representation is not used.
pub const MAX_LINEAR_SPREAD: f64 = 500.0;
const MAX_LINEAR_LOG: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Preferred evaluation domain of an assembled operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Linear,
    Log,
}

/// `L(x,v) = |v|^2/2 - U(wrap(x)) + <P,v>`.
pub fn eval_lagrangian(params: &ModelParams, x: &[f64], v: &[f64]) -> Result<f64> {
    let n = params.dim();
    if x.len() != n {
        return Err(Error::shape(n, x.len()));
    }
    if v.len() != n {
        return Err(Error::shape(n, v.len()));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("non-finite velocity".into()));
    }
    let u = eval_potential(params.potential(), x)?;
    Ok(lagrangian_with(u, v, params.momentum()))
}

#[inline]
fn lagrangian_with(u: f64, v: &[f64], p: &[f64]) -> f64 {
    let mut kin = 0.0;
    let mut tilt = 0.0;
    for (vd, pd) in v.iter().zip(p) {
        kin += vd * vd;
        tilt += pd * vd;
    }
    0.5 * kin - u + tilt
}

/// Dense `N x N` operator, row = source point, column = landing point.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    grid: TorusGrid,
    direction: Direction,
    cutoff_sigmas: f64,
    log_entries: Vec<f64>,
    linear: Option<Vec<f64>>,
    mean_lagrangian: Vec<f64>,
    image_entropy: Vec<f64>,
}

impl OperatorMatrix {
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
    pub fn cutoff_sigmas(&self) -> f64 {
        self.cutoff_sigmas
    }

    /// `ln A[i][j]`; `-inf` where no image falls inside the cutoff.
    #[inline]
    pub fn log_entry(&self, i: usize, j: usize) -> f64 {
        self.log_entries[i * self.size() + j]
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.linear {
            Some(a) => a[i * self.size() + j],
            None => self.log_entry(i, j).exp(),
        }
    }

    pub fn log_row(&self, i: usize) -> &[f64] {
        let n = self.size();
        &self.log_entries[i * n..(i + 1) * n]
    }

    pub fn log_entries(&self) -> &[f64] {
        &self.log_entries
    }

    /// Linear-domain entries, when they are representable.
    pub fn linear_entries(&self) -> Result<&[f64]> {
        self.linear.as_deref().ok_or_else(|| Error::LinearOverflow {
            max_log: self.max_log_entry(),
            spread: self.max_row_spread(),
        })
    }

    /// Gibbs-weighted mean of `L` over the images lumped into entry `(i,j)`;
    /// NaN for empty entries.
    #[inline]
    pub fn mean_lagrangian(&self, i: usize, j: usize) -> f64 {
        self.mean_lagrangian[i * self.size() + j]
    }

    /// Shannon entropy `-sum w ln w` of the image weights of entry `(i,j)`.
    #[inline]
    pub fn image_entropy(&self, i: usize, j: usize) -> f64 {
        self.image_entropy[i * self.size() + j]
    }

    pub fn max_log_entry(&self) -> f64 {
        self.log_entries
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `max - min` of finite log-entries within one row.
    pub fn max_row_spread(&self) -> f64 {
        self.log_entries
            .chunks(self.size())
            .map(|row| {
                let (lo, hi) = row
                    .iter()
                    .filter(|v| v.is_finite())
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    pub fn domain(&self) -> Domain {
        if self.max_row_spread() > MAX_LINEAR_SPREAD || self.max_log_entry() > MAX_LINEAR_LOG {
            Domain::Log
        } else {
            Domain::Linear
        }
    }

    /// Row sums of the linear entries, computed stably from the log domain.
    pub fn row_sums(&self) -> Vec<f64> {
        self.log_entries
            .chunks(self.size())
            .map(|row| log_sum_exp(row).exp())
            .collect()
    }

    /// Writes `i,j,A_ij,meanL_ij` for every entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,j,A_ij,meanL_ij")?;
        let n = self.size();
        for i in 0..n {
            for j in 0..n {
                writeln!(
                    out,
                    "{i},{j},{},{}",
                    format_float(self.entry(i, j)),
                    format_float(self.mean_lagrangian(i, j))
                )?;
            }
        }
        Ok(())
    }

    fn attach_linear(mut self) -> Result<Self> {
        if self.domain() == Domain::Log {
            return Err(Error::LinearOverflow {
                max_log: self.max_log_entry(),
                spread: self.max_row_spread(),
            });
        }
        self.linear = Some(self.log_entries.iter().map(|v| v.exp()).collect());
        Ok(self)
    }
}

/// `ln sum exp(z)`, shifted by the maximum; `-inf` for an empty or all `-inf` input.
pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// Forward operator with both linear and log entries. Fails with
/// [`Error::LinearOverflow`] when the linear entries are not representable;
/// use [`assemble_forward_log`] then.
pub fn assemble_forward(
    params: &ModelParams,
    grid: &TorusGrid,
    cutoff_sigmas: f64,
) -> Result<OperatorMatrix> {
    assemble(params, grid, cutoff_sigmas, Direction::Forward)?.attach_linear()
}

pub fn assemble_forward_log(
    params: &ModelParams,
    grid: &TorusGrid,
    cutoff_sigmas: f64,
) -> Result<OperatorMatrix> {
    assemble(params, grid, cutoff_sigmas, Direction::Forward)
}

/// Backward operator, assembled directly from the kernel
/// `exp(-L(x - h v, v)/eps)` at landing point `y = x - h v`. Equals the
/// transpose of the forward operator.
pub fn assemble_backward(
    params: &ModelParams,
    grid: &TorusGrid,
    cutoff_sigmas: f64,
) -> Result<OperatorMatrix> {
    assemble(params, grid, cutoff_sigmas, Direction::Backward)?.attach_linear()
}

pub fn assemble_backward_log(
    params: &ModelParams,
    grid: &TorusGrid,
    cutoff_sigmas: f64,
) -> Result<OperatorMatrix> {
    assemble(params, grid, cutoff_sigmas, Direction::Backward)
}

struct RowData {
    log: Vec<f64>,
    mean_l: Vec<f64>,
    entropy: Vec<f64>,
}

fn assemble(
    params: &ModelParams,
    grid: &TorusGrid,
    cutoff_sigmas: f64,
    direction: Direction,
) -> Result<OperatorMatrix> {
    let dim = grid.dim();
    if dim != params.dim() {
        return Err(Error::config(
            "dimension",
            format!("grid has n={dim} but the model has n={}", params.dim()),
        ));
    }
    if !(cutoff_sigmas.is_finite() && cutoff_sigmas >= MIN_CUTOFF_SIGMAS) {
        return Err(Error::config(
            "cutoff_sigmas",
            format!("must be at least {MIN_CUTOFF_SIGMAS}, got {cutoff_sigmas}"),
        ));
    }
    let n = grid.size();
    let eps = params.epsilon();
    let h = params.h();
    let p = params.momentum();
    let radius = cutoff_sigmas * params.sigma();
    let log_norm = (n as f64).ln() + dim as f64 * h.ln();
    let u = params.potential().sample(grid)?;
    let u = u.values();
    let coords = grid.coordinates();
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };

    let rows: Vec<RowData> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &coords[i * dim..(i + 1) * dim];
            let mut log = vec![f64::NEG_INFINITY; n];
            let mut mean_l = vec![f64::NAN; n];
            let mut entropy = vec![0.0; n];
            let mut lo = vec![0i64; dim];
            let mut hi = vec![0i64; dim];
            let mut k = vec![0i64; dim];
            let mut w = vec![0.0; dim];
            let mut v = vec![0.0; dim];
            let mut exps: Vec<f64> = Vec::new();
            let mut lags: Vec<f64> = Vec::new();
            for j in 0..n {
                let yj = &coords[j * dim..(j + 1) * dim];
                // forward: w = y_j + k - x_i and v = w / h
                // backward: w = x_i - y_j - k and v = w / h
                // in both cases |w + h P| <= radius
                let mut empty = false;
                for d in 0..dim {
                    let c = -h * p[d];
                    let base = yj[d] - xi[d];
                    let (a, b) = if sign > 0.0 {
                        (c - radius - base, c + radius - base)
                    } else {
                        (-(c + radius) - base, -(c - radius) - base)
                    };
                    lo[d] = a.ceil() as i64;
                    hi[d] = b.floor() as i64;
                    if lo[d] > hi[d] {
                        empty = true;
                    }
                }
                if empty {
                    continue;
                }
                let u_src = match direction {
                    Direction::Forward => u[i],
                    Direction::Backward => u[j],
                };
                exps.clear();
                lags.clear();
                k.copy_from_slice(&lo);
                'images: loop {
                    let mut dist2 = 0.0;
                    for d in 0..dim {
                        w[d] = sign * (yj[d] + k[d] as f64 - xi[d]);
                        let s = w[d] + h * p[d];
                        dist2 += s * s;
                    }
                    if dist2 <= radius * radius {
                        for d in 0..dim {
                            v[d] = w[d] / h;
                        }
                        let l = lagrangian_with(u_src, &v, p);
                        lags.push(l);
                        exps.push(-l / eps);
                    }
                    // lexicographic odometer over the image box
                    let mut d = dim;
                    loop {
                        if d == 0 {
                            break 'images;
                        }
                        d -= 1;
                        if k[d] < hi[d] {
                            k[d] += 1;
                            break;
                        }
                        k[d] = lo[d];
                    }
                }
                if exps.is_empty() {
                    continue;
                }
                let lse = log_sum_exp(&exps);
                let mut ml = 0.0;
                let mut ent = 0.0;
                for (&a, &l) in exps.iter().zip(&lags) {
                    let lw = a - lse;
                    let wk = lw.exp();
                    ml += wk * l;
                    ent -= wk * lw;
                }
                log[j] = lse - log_norm;
                mean_l[j] = ml;
                entropy[j] = ent.max(0.0);
            }
            RowData {
                log,
                mean_l,
                entropy,
            }
        })
        .collect();

    let mut log_entries = Vec::with_capacity(n * n);
    let mut mean_lagrangian = Vec::with_capacity(n * n);
    let mut image_entropy = Vec::with_capacity(n * n);
    for (i, row) in rows.into_iter().enumerate() {
        if row.log.iter().all(|v| !v.is_finite()) {
            return Err(Error::config(
                "cutoff_sigmas",
                format!("no periodic image falls inside the cutoff for row {i}"),
            ));
        }
        if row.log.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numeric(format!("non-finite log-entry in row {i}")));
        }
        log_entries.extend(row.log);
        mean_lagrangian.extend(row.mean_l);
        image_entropy.extend(row.entropy);
    }
    Ok(OperatorMatrix {
        grid: *grid,
        direction,
        cutoff_sigmas,
        log_entries,
        linear: None,
        mean_lagrangian,
        image_entropy,
    })
}

/// The nonlinear operator `G[phi](x) = -eps h ln int exp(-(h L + phi(x + h v))/(eps h)) dv`,
/// evaluated row by row with log-sum-exp.
pub fn apply_g(params: &ModelParams, a: &OperatorMatrix, phi: &ScalarField) -> Result<ScalarField> {
    a.grid().check_same(phi.grid())?;
    if phi.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("phi has non-finite values".into()));
    }
    let eh = params.eps_h();
    let scaled: Vec<f64> = phi.values().iter().map(|v| v / eh).collect();
    let out = apply_g_scaled(a, &scaled);
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::config(
            "cutoff_sigmas",
            format!("row {i} of the operator is empty"),
        ));
    }
    ScalarField::new(*a.grid(), out.into_iter().map(|v| v * eh).collect())
}

/// `G` in units of `eps h`: `psi -> -ln sum_j A_ij exp(-psi_j)`.
pub(crate) fn apply_g_scaled(a: &OperatorMatrix, psi: &[f64]) -> Vec<f64> {
    let n = a.size();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let row = a.log_row(i);
            let mut m = f64::NEG_INFINITY;
            for (l, s) in row.iter().zip(psi) {
                let z = l - s;
                if z > m {
                    m = z;
                }
            }
            if !m.is_finite() {
                return f64::INFINITY;
            }
            let mut acc = 0.0;
            for (l, s) in row.iter().zip(psi) {
                if l.is_finite() {
                    acc += (l - s - m).exp();
                }
            }
            -(m + acc.ln())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PotentialSpec;
    use std::f64::consts::PI;

    fn cos_params(eps: f64, h: f64, p: f64) -> ModelParams {
        ModelParams::new(eps, h, vec![p], PotentialSpec::cosine(1, 0, 1.0)).unwrap()
    }

    #[test]
    fn lagrangian_examples() {
        let p = cos_params(1.0, 1.0, 0.3);
        let l = eval_lagrangian(&p, &[0.5], &[2.0]).unwrap();
        assert!((l - 3.6).abs() < 1e-14);
        let free = ModelParams::free(1.0, 1.0, vec![0.0]).unwrap();
        assert_eq!(eval_lagrangian(&free, &[0.3], &[0.0]).unwrap(), 0.0);
        let tilt = ModelParams::free(1.0, 1.0, vec![1.0]).unwrap();
        assert_eq!(eval_lagrangian(&tilt, &[0.9], &[-1.0]).unwrap(), -0.5);
        assert!(matches!(
            eval_lagrangian(&tilt, &[0.1, 0.2], &[1.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn free_row_sums_are_gaussian_integrals() {
        let g = TorusGrid::new(1, 64).unwrap();
        let a = assemble_forward(&ModelParams::free(1.0, 1.0, vec![0.0]).unwrap(), &g, 12.0).unwrap();
        for s in a.row_sums() {
            assert!((s - (2.0 * PI).sqrt()).abs() < 1e-10, "{s}");
        }
        let a = assemble_forward(&ModelParams::free(1.0, 1.0, vec![1.0]).unwrap(), &g, 12.0).unwrap();
        let want = (2.0 * PI).sqrt() * 0.5f64.exp();
        for s in a.row_sums() {
            assert!((s - want).abs() < 1e-9, "{s}");
        }
        let b = assemble_backward(&ModelParams::free(1.0, 1.0, vec![1.0]).unwrap(), &g, 12.0).unwrap();
        for s in b.row_sums() {
            assert!((s - want).abs() < 1e-9, "{s}");
        }
    }

    #[test]
    fn backward_is_transpose() {
        let g = TorusGrid::new(1, 48).unwrap();
        for params in [
            cos_params(0.5, 0.5, 0.5),
            cos_params(0.2, 0.7, -0.3),
            ModelParams::free(1.0, 1.0, vec![0.0]).unwrap(),
        ] {
            let a = assemble_forward(&params, &g, 12.0).unwrap();
            let b = assemble_backward(&params, &g, 12.0).unwrap();
            let n = g.size();
            for i in 0..n {
                for j in 0..n {
                    let (x, y) = (b.entry(i, j), a.entry(j, i));
                    assert!((x - y).abs() <= 1e-13 * x.abs().max(y.abs()), "{i} {j} {x} {y}");
                }
            }
        }
    }

    #[test]
    fn symmetric_free_kernel() {
        let g = TorusGrid::new(1, 32).unwrap();
        let p = ModelParams::free(0.3, 0.8, vec![0.0]).unwrap();
        let a = assemble_forward(&p, &g, 12.0).unwrap();
        let b = assemble_backward(&p, &g, 12.0).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let (x, y) = (a.entry(i, j), b.entry(i, j));
                assert!((x - y).abs() <= 1e-13 * x);
            }
        }
    }

    #[test]
    fn positivity_and_mean_lagrangian_bracketing() {
        let g = TorusGrid::new(1, 16).unwrap();
        let params = cos_params(0.5, 1.0, 0.2);
        let a = assemble_forward(&params, &g, 6.0).unwrap();
        let sigma = params.sigma();
        for i in 0..16 {
            let x = g.point(i)[0];
            for j in 0..16 {
                assert!(a.entry(i, j) > 0.0);
                let y = g.point(j)[0];
                // brute-force the image set
                let ls: Vec<f64> = (-20i64..=20)
                    .filter(|&k| (y + k as f64 - x + params.h() * 0.2).abs() <= 6.0 * sigma)
                    .map(|k| eval_lagrangian(&params, &[x], &[(y + k as f64 - x) / params.h()]).unwrap())
                    .collect();
                let lo = ls.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let ml = a.mean_lagrangian(i, j);
                assert!(ml >= lo - 1e-12 && ml <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn cutoff_monotone() {
        let g = TorusGrid::new(1, 32).unwrap();
        let params = cos_params(0.4, 0.6, 0.3);
        let a6 = assemble_forward(&params, &g, 6.0).unwrap();
        let a10 = assemble_forward(&params, &g, 10.0).unwrap();
        let a14 = assemble_forward(&params, &g, 14.0).unwrap();
        let tail = (-50.0f64).exp();
        for i in 0..32 {
            for j in 0..32 {
                assert!(a10.entry(i, j) >= a6.entry(i, j) * (1.0 - 4e-16));
                assert!(a14.entry(i, j) >= a10.entry(i, j) * (1.0 - 4e-16));
                let rel = (a14.entry(i, j) - a10.entry(i, j)) / a10.entry(i, j);
                assert!(rel < tail.max(4e-16));
            }
        }
    }

    #[test]
    fn cutoff_errors() {
        let g = TorusGrid::new(1, 16).unwrap();
        let params = cos_params(0.5, 0.5, 0.0);
        assert!(matches!(
            assemble_forward(&params, &g, 3.0),
            Err(Error::Config { .. })
        ));
        let g2 = TorusGrid::new(2, 4).unwrap();
        assert!(assemble_forward(&params, &g2, 12.0).is_err());
    }

    #[test]
    fn linear_overflow_is_reported() {
        let g = TorusGrid::new(1, 8).unwrap();
        let params = ModelParams::free(0.01, 0.5, vec![4.0]).unwrap();
        assert!(matches!(
            assemble_forward(&params, &g, 12.0),
            Err(Error::LinearOverflow { .. })
        ));
        let a = assemble_forward_log(&params, &g, 12.0).unwrap();
        assert_eq!(a.domain(), Domain::Log);
        assert!(a.linear_entries().is_err());
    }

    #[test]
    fn apply_g_constant_and_tilt() {
        let g = TorusGrid::new(1, 64).unwrap();
        let p = ModelParams::free(1.0, 1.0, vec![0.0]).unwrap();
        let a = assemble_forward(&p, &g, 12.0).unwrap();
        let out = apply_g(&p, &a, &ScalarField::constant(g, 2.0)).unwrap();
        for v in out.values() {
            assert!((v - (2.0 - 0.918_938_533_204_672_7)).abs() < 1e-9);
        }
        let p = ModelParams::free(1.0, 1.0, vec![1.0]).unwrap();
        let a = assemble_forward(&p, &g, 12.0).unwrap();
        let out = apply_g(&p, &a, &ScalarField::constant(g, 0.0)).unwrap();
        for v in out.values() {
            assert!((v + 1.418_938_533_204_672_7).abs() < 1e-9);
        }
    }

    #[test]
    fn apply_g_rejects_non_finite() {
        let g = TorusGrid::new(1, 16).unwrap();
        let p = cos_params(0.5, 0.5, 0.0);
        let a = assemble_forward(&p, &g, 12.0).unwrap();
        let mut phi = ScalarField::constant(g, 0.0);
        phi.values_mut()[3] = f64::NAN;
        assert!(matches!(apply_g(&p, &a, &phi), Err(Error::Domain(_))));
    }

    #[test]
    fn csv_dump_layout() {
        let g = TorusGrid::new(1, 4).unwrap();
        let p = ModelParams::free(1.0, 1.0, vec![0.0]).unwrap();
        let a = assemble_forward(&p, &g, 12.0).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,j,A_ij,meanL_ij");
        assert_eq!(lines.len(), 17);
        assert!(lines[6].starts_with("1,1,"));
    }
}
