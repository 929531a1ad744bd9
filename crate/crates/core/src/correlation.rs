//! Correlation functions of the stationary chains, computed exactly from
//! kernel powers and empirically from trajectories, plus exponential fits.
//!
//! For a chain `Z` run by the kernel `T` from `Z_0 ~ theta`, the lag-`n`
//! correlation of observables `(f, g)` is
//! `C_n = E[g_c(Z_0) f_c(Z_n)] = <g_c, T^n f_c>_theta`, where `_c` means the
//! `theta`-mean has been subtracted. With `T = K` this is the chain whose
//! operator is `F`; with `T = Q` the one whose operator is `F*`, and
//! adjointness gives `C^K_n(f, g) = C^Q_n(g, f)`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::Trajectory;
use crate::error::{Error, Result};
use crate::kernel::Direction;
use crate::output::format_float;
use crate::spectral::StochasticKernel;
use crate::torus::{weighted_inner, weighted_mean, ScalarField};

pub const BATCH_COUNT: usize = 50;
/// Trajectories must be at least this many times longer than the largest lag.
pub const MIN_LENGTH_FACTOR: usize = 100;
pub const DEFAULT_FLOOR: f64 = 1e-13;
pub const DEFAULT_SKIP: usize = 5;
pub const MIN_FIT_LAGS: usize = 5;

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationSeries {
    /// Direction of the kernel that drives the chain.
    pub direction: Direction,
    /// Means subtracted from `f` and `g`.
    pub f_mean: f64,
    pub g_mean: f64,
    /// `C_0, ..., C_{n_max}`.
    pub values: Vec<f64>,
    /// Batch-means standard errors; `None` for exact series.
    pub stderr: Option<Vec<f64>>,
}

impl CorrelationSeries {
    pub fn n_max(&self) -> usize {
        self.values.len() - 1
    }
}

fn center(f: &ScalarField, theta: &ScalarField) -> Result<(ScalarField, f64)> {
    let m = weighted_mean(f, theta)?;
    Ok((f.map(|v| v - m), m))
}

/// `C_n = <g_c, T^n f_c>_theta` for `n = 0..=n_max` by repeated kernel
/// application.
pub fn exact_correlation(
    kernel: &StochasticKernel,
    theta: &ScalarField,
    f: &ScalarField,
    g: &ScalarField,
    n_max: usize,
) -> Result<CorrelationSeries> {
    if n_max < 1 {
        return Err(Error::Usage("n_max must be at least 1".into()));
    }
    kernel.grid().check_same(theta.grid())?;
    let (fc, f_mean) = center(f, theta)?;
    let (gc, g_mean) = center(g, theta)?;
    let mut values = Vec::with_capacity(n_max + 1);
    let mut cur = fc;
    values.push(weighted_inner(&gc, &cur, theta)?);
    for _ in 0..n_max {
        cur = kernel.apply(&cur)?;
        values.push(weighted_inner(&gc, &cur, theta)?);
    }
    Ok(CorrelationSeries {
        direction: kernel.direction(),
        f_mean,
        g_mean,
        values,
        stderr: None,
    })
}

/// Values of `f` along the trajectory, minus their trajectory average. A
/// trajectory on which `f` is constant centers to exactly zero.
fn centered_path(traj: &Trajectory, f: &ScalarField) -> (Vec<f64>, f64) {
    let vals: Vec<f64> = traj.states.iter().map(|&s| f.values()[s as usize]).collect();
    if vals.iter().all(|&v| v == vals[0]) {
        return (vec![0.0; vals.len()], vals[0]);
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    (vals.into_iter().map(|v| v - m).collect(), m)
}

/// `C^_n = (1/(T-n)) sum_t g_c(X_t) f_c(X_{t+n})`, with standard errors from
/// [`BATCH_COUNT`] contiguous batch means.
pub fn empirical_correlation(
    traj: &Trajectory,
    f: &ScalarField,
    g: &ScalarField,
    n_max: usize,
) -> Result<CorrelationSeries> {
    if n_max < 1 {
        return Err(Error::Usage("n_max must be at least 1".into()));
    }
    traj.grid.check_same(f.grid())?;
    traj.grid.check_same(g.grid())?;
    let t = traj.steps();
    if t < MIN_LENGTH_FACTOR * n_max {
        return Err(Error::Usage(format!(
            "trajectory of {t} steps is too short for {n_max} lags (need {})",
            MIN_LENGTH_FACTOR * n_max
        )));
    }
    let (fc, f_mean) = centered_path(traj, f);
    let (gc, g_mean) = centered_path(traj, g);
    let (values, stderr): (Vec<f64>, Vec<f64>) = (0..=n_max)
        .into_par_iter()
        .map(|n| {
            let len = t + 1 - n;
            let prods = |range: std::ops::Range<usize>| -> f64 {
                range.map(|s| gc[s] * fc[s + n]).sum::<f64>()
            };
            let total = prods(0..len) / len as f64;
            let batch = len / BATCH_COUNT;
            let means: Vec<f64> = (0..BATCH_COUNT)
                .map(|b| prods(b * batch..(b + 1) * batch) / batch as f64)
                .collect();
            let mb = means.iter().sum::<f64>() / BATCH_COUNT as f64;
            let var = means.iter().map(|m| (m - mb).powi(2)).sum::<f64>() / (BATCH_COUNT - 1) as f64;
            (total, (var / BATCH_COUNT as f64).sqrt())
        })
        .unzip();
    Ok(CorrelationSeries {
        direction: traj.direction,
        f_mean,
        g_mean,
        values,
        stderr: Some(stderr),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Leading lags left out of the fit.
    pub skip: usize,
    /// Lags with `|C_n| <= floor` end the fit window.
    pub floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            skip: DEFAULT_SKIP,
            floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub intercept: f64,
    /// First and last lag of the fit.
    pub window: (usize, usize),
    pub r2: f64,
    pub oscillation: bool,
}

/// Least-squares line through `(n, ln|C_n|)` over the contiguous run of lags
/// from `skip` on whose magnitude stays above `floor`.
pub fn fit_decay(values: &[f64], opts: FitOptions) -> Result<DecayFit> {
    let lo = opts.skip;
    let mut hi = lo;
    while hi < values.len() && values[hi].is_finite() && values[hi].abs() > opts.floor {
        hi += 1;
    }
    let count = hi.saturating_sub(lo);
    if count < MIN_FIT_LAGS {
        return Err(Error::InsufficientData {
            usable: count,
            required: MIN_FIT_LAGS,
        });
    }
    let xs: Vec<f64> = (lo..hi).map(|n| n as f64).collect();
    let ys: Vec<f64> = values[lo..hi].iter().map(|c| c.abs().ln()).collect();
    let k = count as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let rate = slope.exp();
    if !(rate > 0.0 && rate <= 1.0 + 1e-12) {
        return Err(Error::Numeric(format!("series does not decay (fitted rate {rate})")));
    }
    let flips = values[lo..hi]
        .windows(2)
        .filter(|w| w[0].signum() != w[1].signum())
        .count();
    Ok(DecayFit {
        rate: rate.min(1.0),
        intercept,
        window: (lo, hi - 1),
        r2,
        oscillation: flips as f64 > 0.25 * (count - 1) as f64,
    })
}

/// JSON report of a fit next to the spectral reference it should match.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub rate: f64,
    pub r2: f64,
    pub window: (usize, usize),
    pub oscillation: bool,
    pub lambda2_modulus_reference: f64,
}

impl FitReport {
    pub fn new(fit: &DecayFit, lambda2_modulus: f64) -> Self {
        Self {
            rate: fit.rate,
            r2: fit.r2,
            window: fit.window,
            oscillation: fit.oscillation,
            lambda2_modulus_reference: lambda2_modulus,
        }
    }
}

/// CSV with columns `lag,exact,empirical,stderr`; missing columns are left
/// empty.
pub fn write_correlation_csv<W: Write>(
    mut out: W,
    exact: Option<&CorrelationSeries>,
    empirical: Option<&CorrelationSeries>,
) -> Result<()> {
    let len = exact
        .map(|s| s.values.len())
        .into_iter()
        .chain(empirical.map(|s| s.values.len()))
        .max()
        .unwrap_or(0);
    writeln!(out, "lag,exact,empirical,stderr")?;
    let cell = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    for n in 0..len {
        let e = exact.and_then(|s| s.values.get(n).copied());
        let m = empirical.and_then(|s| s.values.get(n).copied());
        let se = empirical
            .and_then(|s| s.stderr.as_ref())
            .and_then(|v| v.get(n).copied());
        writeln!(out, "{n},{},{},{}", cell(e), cell(m), cell(se))?;
    }
    Ok(())
}
