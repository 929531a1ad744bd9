//! Simulation of the stationary chains driven by `K` (forward) and `Q`
//! (backward) on the grid.

use std::io::{Read, Write};

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::Direction;
use crate::output::format_float;
use crate::spectral::StochasticKernel;
use crate::torus::{minimal_image, ScalarField, TorusGrid};

/// Magic bytes opening a binary trajectory file.
pub const TRAJECTORY_MAGIC: &[u8; 8] = b"EPMTRAJ1";

/// Kernel steps are only summarized as displacements when `h sqrt(eps)` is
/// below this; wider kernels wrap around the torus too often.
pub const MAX_DISPLACEMENT_SIGMA: f64 = 0.15;

/// Alias sampler over the support of one probability vector.
#[derive(Debug, Clone)]
pub struct DiscreteSampler {
    support: Vec<u32>,
    alias: Option<WeightedAliasIndex<f64>>,
}

impl DiscreteSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let mut support = Vec::new();
        let mut w = Vec::new();
        for (j, &p) in weights.iter().enumerate() {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::Domain(format!("invalid probability {p} at index {j}")));
            }
            if p > 0.0 {
                support.push(j as u32);
                w.push(p);
            }
        }
        match support.len() {
            0 => Err(Error::Domain("distribution has no mass".into())),
            1 => Ok(Self {
                support,
                alias: None,
            }),
            _ => {
                let alias = WeightedAliasIndex::new(w)
                    .map_err(|e| Error::Numeric(format!("alias table: {e}")))?;
                Ok(Self {
                    support,
                    alias: Some(alias),
                })
            }
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.alias {
            Some(a) => self.support[a.sample(rng)] as usize,
            None => self.support[0] as usize,
        }
    }
}

/// One alias sampler per kernel row.
#[derive(Debug, Clone)]
pub struct SamplerTable {
    grid: TorusGrid,
    direction: Direction,
    rows: Vec<DiscreteSampler>,
}

impl SamplerTable {
    pub fn new(kernel: &StochasticKernel) -> Result<Self> {
        let rows = (0..kernel.size())
            .into_par_iter()
            .map(|i| DiscreteSampler::new(kernel.row(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: *kernel.grid(),
            direction: kernel.direction(),
            rows,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }
}

/// Draws index `i` with probability `theta[i]`. Repeated draws should build a
/// [`DiscreteSampler`] once instead.
pub fn sample_initial<R: Rng + ?Sized>(theta: &ScalarField, rng: &mut R) -> Result<usize> {
    Ok(DiscreteSampler::new(theta.values())?.sample(rng))
}

/// One transition from state `i`.
pub fn step<R: Rng + ?Sized>(table: &SamplerTable, i: usize, rng: &mut R) -> Result<usize> {
    let row = table
        .rows
        .get(i)
        .ok_or_else(|| Error::Usage(format!("state {i} outside grid of {} points", table.rows.len())))?;
    Ok(row.sample(rng))
}

/// States `X_0, ..., X_T` of one chain run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub grid: TorusGrid,
    pub direction: Direction,
    pub seed: u64,
    pub states: Vec<u32>,
}

impl Trajectory {
    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.grid.dim();
        let mut header = vec!["step".to_string(), "flat_index".to_string()];
        header.extend((0..dim).map(|d| format!("x{d}")));
        writeln!(out, "{}", header.join(","))?;
        let mut x = vec![0.0; dim];
        for (t, &s) in self.states.iter().enumerate() {
            self.grid.point_into(s as usize, &mut x);
            write!(out, "{t},{s}")?;
            for c in &x {
                write!(out, ",{}", format_float(*c))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// `EPMTRAJ1`, then the grid size `N` as u64, then every state as u32;
    /// all little-endian.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(TRAJECTORY_MAGIC)?;
        out.write_all(&(self.grid.size() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * self.states.len());
        for s in &self.states {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    /// Reads the states of a binary trajectory back, checking the header
    /// against `grid`.
    pub fn read_binary<R: Read>(mut input: R, grid: TorusGrid) -> Result<Vec<u32>> {
        let mut head = [0u8; 16];
        input.read_exact(&mut head)?;
        if &head[..8] != TRAJECTORY_MAGIC {
            return Err(Error::Usage("not a trajectory file (bad magic)".into()));
        }
        let n = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes"));
        if n != grid.size() as u64 {
            return Err(Error::shape(grid.size(), n));
        }
        let mut body = Vec::new();
        input.read_to_end(&mut body)?;
        if body.len() % 4 != 0 {
            return Err(Error::Usage("truncated trajectory body".into()));
        }
        let states: Vec<u32> = body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(bad) = states.iter().find(|&&s| s as u64 >= n) {
            return Err(Error::Domain(format!("state {bad} outside grid of {n} points")));
        }
        Ok(states)
    }

    /// Fraction of time spent in each grid cell.
    pub fn occupation(&self) -> ScalarField {
        let mut counts = vec![0.0; self.grid.size()];
        for &s in &self.states {
            counts[s as usize] += 1.0;
        }
        let total = self.states.len() as f64;
        counts.iter_mut().for_each(|c| *c /= total);
        ScalarField::new(self.grid, counts).expect("sized from grid")
    }
}

/// Runs `T` steps from `X_0 ~ theta` with a ChaCha8 stream seeded by `seed`.
pub fn simulate(kernel: &StochasticKernel, theta: &ScalarField, steps: usize, seed: u64) -> Result<Trajectory> {
    let table = SamplerTable::new(kernel)?;
    simulate_with(&table, &DiscreteSampler::new(theta.values())?, steps, seed)
}

/// [`simulate`] with prebuilt samplers.
pub fn simulate_with(
    table: &SamplerTable,
    initial: &DiscreteSampler,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(steps + 1);
    let mut cur = initial.sample(&mut rng);
    if cur >= table.rows.len() {
        return Err(Error::shape(table.rows.len(), cur + 1));
    }
    states.push(cur as u32);
    for _ in 0..steps {
        cur = table.rows[cur].sample(&mut rng);
        states.push(cur as u32);
    }
    Ok(Trajectory {
        grid: table.grid,
        direction: table.direction,
        seed,
        states,
    })
}

/// `count` independent runs; run `r` uses seed `base_seed + r`.
pub fn simulate_many(
    kernel: &StochasticKernel,
    theta: &ScalarField,
    steps: usize,
    base_seed: u64,
    count: usize,
) -> Result<Vec<Trajectory>> {
    let table = SamplerTable::new(kernel)?;
    let initial = DiscreteSampler::new(theta.values())?;
    (0..count)
        .into_par_iter()
        .map(|r| simulate_with(&table, &initial, steps, base_seed.wrapping_add(r as u64)))
        .collect()
}

/// Per-axis statistics of single-step minimal-image displacements.
#[derive(Debug, Clone, Serialize)]
pub struct DisplacementStats {
    pub steps: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `sqrt(variance / steps)`, which assumes uncorrelated steps.
    pub stderr: Vec<f64>,
}

pub fn displacement_stats(traj: &Trajectory) -> Result<DisplacementStats> {
    let steps = traj.steps();
    if steps < 2 {
        return Err(Error::InsufficientData {
            usable: steps,
            required: 2,
        });
    }
    let dim = traj.grid.dim();
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    for w in traj.states.windows(2) {
        traj.grid.point_into(w[0] as usize, &mut a);
        traj.grid.point_into(w[1] as usize, &mut b);
        for d in 0..dim {
            let z = minimal_image(b[d] - a[d]);
            sum[d] += z;
            sq[d] += z * z;
        }
    }
    let t = steps as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / t).collect();
    let variance: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / t - m * m) * t / (t - 1.0))
        .collect();
    let stderr = variance.iter().map(|v| (v / t).sqrt()).collect();
    Ok(DisplacementStats {
        steps,
        mean,
        variance,
        stderr,
    })
}
