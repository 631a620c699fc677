//! Matched filtering: direct and FFT cross-correlation, peak picking and the
//! rotation sweep.
//!
//! For a query `q` of shape `Hq × Wq` and a reference `r`, the surface value at
//! reference cell `(i, j)` is
//!
//! ```text
//! Σ q(a, b) · r(a + i − ci, b + j − cj),   (ci, cj) = (⌊Hq/2⌋, ⌊Wq/2⌋)
//! ```
//!
//! with reference cells outside the grid contributing zero: the query center is
//! slid over every reference cell. Scores are raw sums of products with no
//! normalization.

use rayon::prelude::*;

use crate::descriptor::{rotate_descriptor, BevDescriptor};
use crate::error::{LprError, Result};
use crate::fft::{SpectralCorrelator, Workspace};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSurface {
    pub values: Grid,
    /// Query rotation in degrees that produced this surface.
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakResult {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
    pub score: f64,
}

pub(crate) fn check_cells(q: &BevDescriptor, r: &BevDescriptor) -> Result<()> {
    let tol = 1e-9 * q.cell_size.abs().max(r.cell_size.abs());
    if (q.cell_size - r.cell_size).abs() > tol {
        return Err(LprError::param(format!(
            "cell size mismatch: query {} vs reference {}",
            q.cell_size, r.cell_size
        )));
    }
    Ok(())
}

/// Brute-force double loop over reference cells and query cells.
pub fn correlate_grids_direct(q: &Grid, r: &Grid) -> Grid {
    let (hq, wq) = q.shape();
    let (hr, wr) = r.shape();
    let (ci, cj) = ((hq / 2) as isize, (wq / 2) as isize);
    let mut out = Grid::zeros(hr, wr);
    for ir in 0..hr {
        for jr in 0..wr {
            let mut acc = 0.0;
            for iq in 0..hq {
                let ri = iq as isize + ir as isize - ci;
                if ri < 0 || ri >= hr as isize {
                    continue;
                }
                for jq in 0..wq {
                    let rj = jq as isize + jr as isize - cj;
                    if rj < 0 || rj >= wr as isize {
                        continue;
                    }
                    acc += q[(iq, jq)] * r[(ri as usize, rj as usize)];
                }
            }
            out[(ir, jr)] = acc;
        }
    }
    out
}

pub fn correlate_direct(q: &BevDescriptor, r: &BevDescriptor) -> Result<CorrelationSurface> {
    check_cells(q, r)?;
    Ok(CorrelationSurface {
        values: correlate_grids_direct(&q.grid, &r.grid),
        theta: 0.0,
    })
}

pub fn correlate_fft(q: &BevDescriptor, r: &BevDescriptor) -> Result<CorrelationSurface> {
    check_cells(q, r)?;
    Ok(CorrelationSurface {
        values: SpectralCorrelator::<f64>::new(&r.grid, q.shape()).correlate(&q.grid),
        theta: 0.0,
    })
}

/// Maximal cell of a grid; ties go to the smallest `(i, j)` in row-major order.
pub fn argmax_grid(g: &Grid) -> Option<(usize, usize, f64)> {
    let cols = g.cols();
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in g.as_slice().iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, v)| (k / cols, k % cols, v))
}

/// Peak of a surface. `None` only for an empty surface.
pub fn argmax_surface(s: &CorrelationSurface) -> Option<PeakResult> {
    argmax_grid(&s.values).map(|(i, j, score)| PeakResult {
        i,
        j,
        theta: s.theta,
        score,
    })
}

/// The sweep angles `0, k, 2k, …, 360 − k`. `k` must divide 360.
pub fn sweep_angles(k: f64) -> Result<Vec<f64>> {
    if !(k > 0.0 && k <= 360.0) {
        return Err(LprError::param(format!("rotation step must be in (0, 360], got {k}")));
    }
    let n = (360.0 / k).round();
    if (n * k - 360.0).abs() > 1e-9 {
        return Err(LprError::param(format!("rotation step {k} does not divide 360")));
    }
    Ok((0..n as usize).map(|t| t as f64 * k).collect())
}

/// A query descriptor at every sweep angle.
#[derive(Debug, Clone)]
pub struct RotationFamily {
    step: f64,
    members: Vec<(f64, BevDescriptor)>,
}

impl RotationFamily {
    /// Rotates `desc` by every multiple of `k`.
    pub fn new(desc: &BevDescriptor, k: f64) -> Result<Self> {
        Self::from_fn(k, |theta| rotate_descriptor(desc, theta))
    }

    /// Builds each member with `make(theta)`; all members must share a shape.
    pub fn from_fn(k: f64, make: impl Fn(f64) -> BevDescriptor + Sync) -> Result<Self> {
        let angles = sweep_angles(k)?;
        let members: Vec<(f64, BevDescriptor)> =
            angles.into_par_iter().map(|t| (t, make(t))).collect();
        let shape = members[0].1.shape();
        if members.iter().any(|(_, d)| d.shape() != shape) {
            return Err(LprError::Dimension("rotation family members differ in shape".into()));
        }
        Ok(Self { step: k, members })
    }

    /// Single member at theta 0, equivalent to a step of 360°.
    pub fn identity(desc: &BevDescriptor) -> Self {
        Self {
            step: 360.0,
            members: vec![(0.0, desc.clone())],
        }
    }

    /// Applies `f` to every member, keeping the angles.
    pub fn map(&self, f: impl Fn(&BevDescriptor) -> BevDescriptor + Sync) -> Result<Self> {
        let members: Vec<(f64, BevDescriptor)> =
            self.members.par_iter().map(|(t, d)| (*t, f(d))).collect();
        let shape = members[0].1.shape();
        if members.iter().any(|(_, d)| d.shape() != shape) {
            return Err(LprError::Dimension("rotation family members differ in shape".into()));
        }
        Ok(Self { step: self.step, members })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[(f64, BevDescriptor)] {
        &self.members
    }

    pub fn shape(&self) -> (usize, usize) {
        self.members[0].1.shape()
    }

    pub fn cell_size(&self) -> f64 {
        self.members[0].1.cell_size
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub best: PeakResult,
    pub surfaces: Vec<CorrelationSurface>,
}

/// Keeps the strictly better peak; with members visited in increasing theta
/// this resolves ties to the smallest theta.
pub(crate) fn better(current: Option<PeakResult>, cand: PeakResult) -> Option<PeakResult> {
    match current {
        Some(c) if cand.score <= c.score => Some(c),
        _ => Some(cand),
    }
}

/// Correlates every member of `family` against `r` and returns the overall
/// best peak plus the per-angle surfaces.
pub fn rotation_sweep(family: &RotationFamily, r: &BevDescriptor) -> Result<SweepResult> {
    check_cells(&family.members[0].1, r)?;
    let prepared = SpectralCorrelator::<f64>::new(&r.grid, family.shape());
    let surfaces: Vec<CorrelationSurface> = family
        .members
        .par_iter()
        .map_init(Workspace::new, |work, (theta, q)| {
            let mut values = Grid::zeros(r.rows(), r.cols());
            prepared.correlate_into(&q.grid, work, &mut values);
            CorrelationSurface { values, theta: *theta }
        })
        .collect();
    let best = surfaces
        .iter()
        .filter_map(argmax_surface)
        .fold(None, better)
        .ok_or_else(|| LprError::Dimension("empty reference grid".into()))?;
    Ok(SweepResult { best, surfaces })
}
