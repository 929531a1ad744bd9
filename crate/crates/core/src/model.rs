//! Model parameters and the periodic potential `U`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{wrap, ScalarField, TorusGrid};

/// One Fourier mode `cos_amp * cos(2 pi k.x) + sin_amp * sin(2 pi k.x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub freq: Vec<i64>,
    #[serde(default, rename = "cos")]
    pub cos_amp: f64,
    #[serde(default, rename = "sin")]
    pub sin_amp: f64,
}

/// A smooth 1-periodic potential, given either as a trigonometric polynomial
/// or as values tabulated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Trig { terms: Vec<TrigTerm> },
    Tabulated { grid: TorusGrid, values: Vec<f64> },
}

impl PotentialSpec {
    pub fn zero() -> Self {
        PotentialSpec::Trig { terms: Vec::new() }
    }

    /// `amplitude * cos(2 pi x_axis)` in dimension `dim`.
    pub fn cosine(dim: usize, axis: usize, amplitude: f64) -> Self {
        let mut freq = vec![0; dim];
        freq[axis] = 1;
        PotentialSpec::Trig {
            terms: vec![TrigTerm {
                freq,
                cos_amp: amplitude,
                sin_amp: 0.0,
            }],
        }
    }

    pub fn from_terms(terms: Vec<TrigTerm>) -> Self {
        PotentialSpec::Trig { terms }
    }

    pub fn tabulated(field: &ScalarField) -> Self {
        PotentialSpec::Tabulated {
            grid: *field.grid(),
            values: field.values().to_vec(),
        }
    }

    /// The same potential plus a constant.
    pub fn shifted(&self, c: f64) -> Self {
        match self {
            PotentialSpec::Trig { terms } => {
                let dim = terms.first().map_or(1, |t| t.freq.len());
                let mut terms = terms.clone();
                terms.push(TrigTerm {
                    freq: vec![0; dim],
                    cos_amp: c,
                    sin_amp: 0.0,
                });
                PotentialSpec::Trig { terms }
            }
            PotentialSpec::Tabulated { grid, values } => PotentialSpec::Tabulated {
                grid: *grid,
                values: values.iter().map(|v| v + c).collect(),
            },
        }
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            PotentialSpec::Trig { terms } => {
                for t in terms {
                    if t.freq.len() != dim {
                        return Err(Error::config(
                            "potential",
                            format!(
                                "frequency vector {:?} does not match dimension {dim}",
                                t.freq
                            ),
                        ));
                    }
                    if !t.cos_amp.is_finite() || !t.sin_amp.is_finite() {
                        return Err(Error::config("potential", "non-finite amplitude"));
                    }
                }
                Ok(())
            }
            PotentialSpec::Tabulated { grid, values } => {
                if grid.dim() != dim {
                    return Err(Error::config("potential", "tabulated grid dimension mismatch"));
                }
                if values.len() != grid.size() {
                    return Err(Error::config("potential", "tabulated value count mismatch"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("potential", "non-finite tabulated value"));
                }
                Ok(())
            }
        }
    }

    /// Evaluates a trigonometric potential at an already wrapped point.
    #[inline]
    fn eval_trig(terms: &[TrigTerm], x: &[f64]) -> f64 {
        terms
            .iter()
            .map(|t| {
                let arg = 2.0
                    * PI
                    * t.freq
                        .iter()
                        .zip(x)
                        .map(|(&k, &c)| k as f64 * c)
                        .sum::<f64>();
                let mut v = 0.0;
                if t.cos_amp != 0.0 {
                    v += t.cos_amp * arg.cos();
                }
                if t.sin_amp != 0.0 {
                    v += t.sin_amp * arg.sin();
                }
                v
            })
            .sum()
    }

    /// Samples the potential on every point of `grid`.
    pub fn sample(&self, grid: &TorusGrid) -> Result<ScalarField> {
        match self {
            PotentialSpec::Trig { terms } => {
                Ok(ScalarField::from_fn(*grid, |x| Self::eval_trig(terms, x)))
            }
            PotentialSpec::Tabulated { grid: g, values } => {
                if g == grid {
                    ScalarField::new(*grid, values.clone())
                } else {
                    // a coarser table can still serve a grid whose points are all on it
                    let mut out = Vec::with_capacity(grid.size());
                    for i in 0..grid.size() {
                        out.push(eval_potential(self, &grid.point(i))?);
                    }
                    ScalarField::new(*grid, out)
                }
            }
        }
    }
}

/// Value of `U` at `wrap(x)`. Tabulated potentials answer only at their grid
/// points.
pub fn eval_potential(spec: &PotentialSpec, x: &[f64]) -> Result<f64> {
    let xw = wrap(x)?;
    match spec {
        PotentialSpec::Trig { terms } => {
            if let Some(t) = terms.first() {
                if t.freq.len() != xw.len() {
                    return Err(Error::shape(t.freq.len(), xw.len()));
                }
            }
            Ok(PotentialSpec::eval_trig(terms, &xw))
        }
        PotentialSpec::Tabulated { grid, values } => match grid.locate(&xw) {
            Some(i) => Ok(values[i]),
            None => Err(Error::Usage(format!(
                "tabulated potential queried off its grid at {xw:?}"
            ))),
        },
    }
}

/// Entropy weight `epsilon`, time step `h`, momentum tilt `P` and potential
/// `U` of the Lagrangian `L(x,v) = |v|^2/2 - U(x) + <P,v>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    epsilon: f64,
    h: f64,
    momentum: Vec<f64>,
    potential: PotentialSpec,
}

impl ModelParams {
    pub fn new(epsilon: f64, h: f64, momentum: Vec<f64>, potential: PotentialSpec) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::config("epsilon", format!("must be positive, got {epsilon}")));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::config("h", format!("must be positive, got {h}")));
        }
        if momentum.is_empty() {
            return Err(Error::config("momentum", "needs one entry per dimension (n >= 1)"));
        }
        if momentum.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("momentum", "non-finite entry"));
        }
        potential.check_dim(momentum.len())?;
        Ok(Self {
            epsilon,
            h,
            momentum,
            potential,
        })
    }

    /// Free particle `U = 0` with the given tilt.
    pub fn free(epsilon: f64, h: f64, momentum: Vec<f64>) -> Result<Self> {
        Self::new(epsilon, h, momentum, PotentialSpec::zero())
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    /// `epsilon * h`, the scale converting potentials to log-weights.
    #[inline]
    pub fn eps_h(&self) -> f64 {
        self.epsilon * self.h
    }

    /// Standard deviation `h sqrt(epsilon)` of the kernel's Gaussian factor in
    /// landing position.
    #[inline]
    pub fn sigma(&self) -> f64 {
        self.h * self.epsilon.sqrt()
    }

    #[inline]
    pub fn momentum(&self) -> &[f64] {
        &self.momentum
    }

    #[inline]
    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.momentum.len()
    }

    pub fn with_potential(&self, potential: PotentialSpec) -> Result<Self> {
        Self::new(self.epsilon, self.h, self.momentum.clone(), potential)
    }

    pub fn with_scales(&self, epsilon: f64, h: f64) -> Result<Self> {
        Self::new(epsilon, h, self.momentum.clone(), self.potential.clone())
    }

    /// Rejects grids too coarse to resolve the kernel: `h sqrt(eps) >= 3/m`.
    pub fn check_resolution(&self, grid: &TorusGrid) -> Result<()> {
        if grid.dim() != self.dim() {
            return Err(Error::config(
                "dimension",
                format!("grid has n={} but momentum has {} entries", grid.dim(), self.dim()),
            ));
        }
        let need = 3.0 * grid.spacing();
        if self.sigma() < need {
            return Err(Error::config(
                "grid_points",
                format!(
                    "kernel width h*sqrt(epsilon) = {:.6} is below 3 grid cells ({need:.6}); increase grid_points",
                    self.sigma()
                ),
            ));
        }
        Ok(())
    }
}
