use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::markov::StochasticKernel;
use crate::torus::ScalarField;

pub const GAP_WINDOW: usize = 20;
pub const DEFAULT_GAP_TOL: f64 = 1e-10;
/// Seed of the random start vector; the estimate is a deterministic function
/// of the kernel.
pub const GAP_SEED: u64 = 0x6761_7020_7365_6564;
/// Ritz moduli closer than this (relative) are treated as one modulus class.
const DEGENERATE_REL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMethod {
    /// Windowed geometric mean of power-iteration step ratios.
    StepRatio,
    /// Modulus of the leading Ritz value of a two-vector subspace; used when
    /// the subdominant eigenvalues form a complex pair or share a modulus.
    RitzPair,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumEstimate {
    pub lambda2_modulus: f64,
    pub gap: f64,
    /// `max - min` of the estimates across the trailing window.
    pub window_dispersion: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: GapMethod,
}

/// Deflated power iteration on `{g : <g, 1>_theta = 0}`.
///
/// Two `theta`-orthonormal vectors are iterated together; the first is the
/// plain deflated power iterate, whose step ratios `||K g||/||g||` give the
/// estimate. The 2x2 Rayleigh-Ritz matrix of the pair resolves complex or
/// equal-modulus subdominant eigenvalues, where step ratios oscillate.
pub fn estimate_gap(
    k: &StochasticKernel,
    theta: &ScalarField,
    tol: f64,
    max_iter: usize,
) -> Result<SpectrumEstimate> {
    k.grid().check_same(theta.grid())?;
    if !(tol > 0.0) {
        return Err(Error::config("gap_tol", "must be positive"));
    }
    let th = theta.values();
    let n = k.size();
    if n < 2 {
        return Ok(exact_zero(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(GAP_SEED);
    let mut v1: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let mut v2: Option<Vec<f64>> = if n > 2 {
        Some((0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
    } else {
        None
    };
    project(&mut v1, th);
    if normalize(&mut v1, th) == 0.0 {
        return Ok(exact_zero(0));
    }
    if let Some(w) = v2.as_mut() {
        project(w, th);
        if !orthonormalize(w, &v1, th) {
            v2 = None;
        }
    }

    let mut ratios: VecDeque<f64> = VecDeque::with_capacity(GAP_WINDOW + 1);
    let mut ritz: VecDeque<f64> = VecDeque::with_capacity(GAP_WINDOW + 1);
    let mut last = (f64::NAN, f64::INFINITY);
    for iter in 1..=max_iter {
        let mut w1 = k.apply_slice(&v1);
        project(&mut w1, th);
        let r1 = norm(&w1, th);
        if r1 <= f64::MIN_POSITIVE {
            return Ok(exact_zero(iter));
        }

        let mut ritz_value = None;
        if let Some(v2v) = v2.as_ref() {
            let mut w2 = k.apply_slice(v2v);
            project(&mut w2, th);
            let b11 = inner(&v1, &w1, th);
            let b12 = inner(&v1, &w2, th);
            let b21 = inner(v2v, &w1, th);
            let b22 = inner(v2v, &w2, th);
            ritz_value = Some(leading_moduli(b11, b12, b21, b22));
            // next block: Gram-Schmidt on (K v1, K v2)
            let mut nv1 = w1.clone();
            normalize(&mut nv1, th);
            if orthonormalize(&mut w2, &nv1, th) {
                v2 = Some(w2);
            } else {
                v2 = None;
            }
            v1 = nv1;
        } else {
            v1 = w1;
            normalize(&mut v1, th);
        }

        ratios.push_back(r1);
        if ratios.len() > GAP_WINDOW {
            ratios.pop_front();
        }
        match ritz_value {
            Some((m1, m2)) => {
                ritz.push_back(m1);
                if ritz.len() > GAP_WINDOW {
                    ritz.pop_front();
                }
                last = (m1, m2);
            }
            None => ritz.clear(),
        }
        if ratios.len() < GAP_WINDOW {
            continue;
        }
        let geo = geometric_mean(&ratios);
        let spread = dispersion(&ratios);
        if spread < tol {
            return Ok(estimate(geo, spread, iter, true, GapMethod::StepRatio));
        }
        if ritz.len() == GAP_WINDOW {
            let (m1, m2) = last;
            let degenerate = (m1 - m2).abs() <= DEGENERATE_REL * m1;
            let rspread = dispersion(&ritz);
            if degenerate && rspread < tol {
                return Ok(estimate(m1, rspread, iter, true, GapMethod::RitzPair));
            }
        }
        if iter == max_iter {
            return Ok(estimate(geo, spread, iter, false, GapMethod::StepRatio));
        }
    }
    // max_iter < window
    let geo = if ratios.is_empty() { f64::NAN } else { geometric_mean(&ratios) };
    Ok(estimate(geo, f64::INFINITY, max_iter, false, GapMethod::StepRatio))
}

fn estimate(l2: f64, disp: f64, iterations: usize, converged: bool, method: GapMethod) -> SpectrumEstimate {
    SpectrumEstimate {
        lambda2_modulus: l2,
        gap: 1.0 - l2,
        window_dispersion: disp,
        iterations,
        converged,
        method,
    }
}

fn exact_zero(iterations: usize) -> SpectrumEstimate {
    estimate(0.0, 0.0, iterations, true, GapMethod::StepRatio)
}

fn geometric_mean(v: &VecDeque<f64>) -> f64 {
    (v.iter().map(|r| r.ln()).sum::<f64>() / v.len() as f64).exp()
}

fn dispersion(v: &VecDeque<f64>) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

/// Moduli of the two eigenvalues of `[[a, b], [c, d]]`, largest first.
fn leading_moduli(a: f64, b: f64, c: f64, d: f64) -> (f64, f64) {
    let half_tr = 0.5 * (a + d);
    let det = a * d - b * c;
    let disc = half_tr * half_tr - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let (x, y) = ((half_tr + s).abs(), (half_tr - s).abs());
        (x.max(y), x.min(y))
    } else {
        let m = det.abs().sqrt();
        (m, m)
    }
}

fn inner(a: &[f64], b: &[f64], th: &[f64]) -> f64 {
    a.iter().zip(b).zip(th).map(|((x, y), t)| x * y * t).sum()
}

fn norm(a: &[f64], th: &[f64]) -> f64 {
    inner(a, a, th).sqrt()
}

fn project(g: &mut [f64], th: &[f64]) {
    let m: f64 = g.iter().zip(th).map(|(x, t)| x * t).sum();
    for x in g.iter_mut() {
        *x -= m;
    }
}

fn normalize(g: &mut [f64], th: &[f64]) -> f64 {
    let s = norm(g, th);
    if s > 0.0 {
        for x in g.iter_mut() {
            *x /= s;
        }
    }
    s
}

/// Removes the `v`-component of `w` and normalizes; false when nothing is left.
fn orthonormalize(w: &mut [f64], v: &[f64], th: &[f64]) -> bool {
    let before = norm(w, th);
    let c = inner(v, w, th);
    for (x, y) in w.iter_mut().zip(v) {
        *x -= c * y;
    }
    let after = normalize(w, th);
    after > 1e-12 * before && after > f64::MIN_POSITIVE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moduli_of_2x2() {
        let (a, b) = leading_moduli(0.5, 0.0, 0.0, -0.25);
        assert_eq!((a, b), (0.5, 0.25));
        // rotation scaled by 0.3
        let c = 0.3 * 0.7f64.cos();
        let s = 0.3 * 0.7f64.sin();
        let (a, b) = leading_moduli(c, -s, s, c);
        assert!((a - 0.3).abs() < 1e-15 && (b - 0.3).abs() < 1e-15);
    }
}
