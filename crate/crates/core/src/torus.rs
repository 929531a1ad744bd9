//! Uniform periodic grids on the unit torus `[0,1)^n` and real fields on them.
//!
//! Every integral over the torus is a uniform-weight (trapezoidal) sum, which
//! is spectrally accurate for smooth periodic integrands. Probability vectors
//! on the grid sum to one; the matching continuum density is `N * theta[i]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps every coordinate into `[0, 1)`.
pub fn wrap(x: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .map(|&c| {
            if c.is_finite() {
                Ok(wrap_scalar(c))
            } else {
                Err(Error::Domain(format!("cannot wrap non-finite coordinate {c}")))
            }
        })
        .collect()
}

#[inline]
pub(crate) fn wrap_scalar(c: f64) -> f64 {
    let r = c.rem_euclid(1.0);
    // rem_euclid rounds tiny negatives up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed displacement of smallest magnitude between two points of the circle,
/// in `[-0.5, 0.5)`.
#[inline]
pub fn minimal_image(d: f64) -> f64 {
    wrap_scalar(d + 0.5) - 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    points_per_axis: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, points_per_axis: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dimension", "must be at least 1"));
        }
        if points_per_axis == 0 {
            return Err(Error::config("grid_points", "must be at least 1"));
        }
        // trajectories store states as u32
        let fits = points_per_axis
            .checked_pow(dim as u32)
            .is_some_and(|s| s <= u32::MAX as usize);
        if !fits {
            return Err(Error::config("grid_points", "grid size overflows 32-bit indices"));
        }
        Ok(Self {
            dim,
            points_per_axis,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.points_per_axis as f64
    }

    /// Total number of grid points `m^n`.
    #[inline]
    pub fn size(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    /// Row-major multi-index: the first axis varies slowest.
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        let mut rest = flat;
        for d in (0..self.dim).rev() {
            idx[d] = rest % self.points_per_axis;
            rest /= self.points_per_axis;
        }
        idx
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.dim);
        multi
            .iter()
            .fold(0, |acc, &i| acc * self.points_per_axis + i % self.points_per_axis)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.point_into(flat, &mut out);
        out
    }

    /// Writes the coordinates of grid point `flat` into `out` without allocating.
    pub fn point_into(&self, flat: usize, out: &mut [f64]) {
        let m = self.points_per_axis;
        let mut rest = flat;
        for d in (0..self.dim).rev() {
            out[d] = (rest % m) as f64 / m as f64;
            rest /= m;
        }
    }

    /// All grid points, flattened as `size() * dim()` coordinates.
    pub fn coordinates(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.size() * self.dim];
        for (i, chunk) in out.chunks_mut(self.dim).enumerate() {
            self.point_into(i, chunk);
        }
        out
    }

    /// Flat index of the grid point at `x`, if `x` (wrapped) lies on the grid
    /// to within `1e-9` cell widths.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim {
            return None;
        }
        let m = self.points_per_axis as f64;
        let mut multi = Vec::with_capacity(self.dim);
        for &c in x {
            if !c.is_finite() {
                return None;
            }
            let s = wrap_scalar(c) * m;
            let r = s.round();
            if (s - r).abs() > 1e-9 {
                return None;
            }
            multi.push(r as usize % self.points_per_axis);
        }
        Some(self.flat_index(&multi))
    }

    pub(crate) fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::shape(
                format!("grid n={} m={}", self.dim, self.points_per_axis),
                format!("grid n={} m={}", other.dim, other.points_per_axis),
            ))
        }
    }
}

/// A real function sampled on a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.size() {
            return Err(Error::shape(grid.size(), values.len()));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.size()],
        }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.size())
            .map(|i| {
                grid.point_into(i, &mut x);
                f(&x)
            })
            .collect();
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index of the largest value (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Cyclic shift of the flat value array by `k` positions.
    pub fn rotate(&self, k: usize) -> Self {
        let mut values = self.values.clone();
        let n = values.len();
        values.rotate_right(k % n.max(1));
        Self {
            grid: self.grid,
            values,
        }
    }
}

/// Uniform-weight quadrature `(1/N) * sum f(x_i)` over the unit-volume torus.
pub fn integrate(f: &ScalarField) -> Result<f64> {
    let n = f.len() as f64;
    let s: f64 = f.values().iter().sum();
    if !s.is_finite() {
        return Err(Error::Numeric("integrand has non-finite values".into()));
    }
    Ok(s / n)
}

/// `sum_i f_i g_i theta_i`, the inner product of `L^2(theta)` for a
/// probability vector `theta`.
pub fn weighted_inner(f: &ScalarField, g: &ScalarField, theta: &ScalarField) -> Result<f64> {
    f.grid().check_same(g.grid())?;
    f.grid().check_same(theta.grid())?;
    Ok(f
        .values()
        .iter()
        .zip(g.values())
        .zip(theta.values())
        .map(|((a, b), t)| a * b * t)
        .sum())
}

/// `theta`-weighted mean `sum_i f_i theta_i`.
pub fn weighted_mean(f: &ScalarField, theta: &ScalarField) -> Result<f64> {
    f.grid().check_same(theta.grid())?;
    Ok(f.values().iter().zip(theta.values()).map(|(a, t)| a * t).sum())
}

/// `sqrt(<f, f>_theta)`.
pub fn weighted_norm(f: &ScalarField, theta: &ScalarField) -> Result<f64> {
    Ok(weighted_inner(f, f, theta)?.sqrt())
}
