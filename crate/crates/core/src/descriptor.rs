//! Bird's-eye-view occupancy descriptors.
//!
//! A descriptor is built in five steps: crop and voxelize the scan, count
//! occupied height voxels per x-y column, threshold the counts into an
//! occupied/unoccupied grid, thin dense patches (references only) and finally
//! average-pool into a coarse grid for the global search.
//!
//! Grid layout: row `i` follows the sensor x axis and column `j` the sensor y
//! axis, both increasing away from the `(-wx, -wy)` corner. Rotations are about
//! the geometric grid center, which coincides with the sensor whenever
//! `2·wx / vx` is an integer.
//!
//! # Patch thinning rng protocol
//!
//! Thinning must be reproducible across runs and across implementations, so
//! the selection procedure is fixed:
//!
//! 1. The generator is ChaCha8 keyed by `rng_seed` expanded with the
//!    SplitMix-based `seed_from_u64`, with its stream set to the scan id.
//! 2. Patches are visited row-major starting at the top-left corner; ragged
//!    edge patches are visited like full ones.
//! 3. Inside a patch the occupied cells are listed row-major. When there are
//!    more than `c`, a partial Fisher-Yates shuffle runs for `t = 0..c`:
//!    `r = t + next_u64() % (len - t)`, swap entries `t` and `r`. The first
//!    `c` entries stay occupied, the rest are demoted.
//! 4. Patches with at most `c` occupied cells draw nothing from the generator.

use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LprError, Result};
use crate::geometry::{crop_window, sin_cos_deg, voxelize, CropWindow, PointCloud, VoxelSet};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    High,
    Low,
}

/// Which side of the matched filter a descriptor is built for. Queries
/// carry the negative unoccupied weight, references a plain zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Query,
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevDescriptor {
    pub grid: Grid,
    pub cell_size: f64,
    pub resolution: Resolution,
    pub occupied_value: f64,
    pub unoccupied_value: f64,
}

impl BevDescriptor {
    pub fn rows(&self) -> usize {
        self.grid.rows()
    }

    pub fn cols(&self) -> usize {
        self.grid.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }

    pub fn occupied_count(&self) -> usize {
        let occ = self.occupied_value;
        self.grid.count_where(|v| v == occ)
    }

    /// Serializes as `H W cell_size` followed by one line per row.
    pub fn to_dump(&self) -> String {
        dump_grid(&self.grid, self.cell_size)
    }
}

/// Text dump of a grid: header `H W cell_size`, then row-major values.
pub fn dump_grid(grid: &Grid, cell_size: f64) -> String {
    let mut out = String::with_capacity(grid.rows() * grid.cols() * 4 + 32);
    let _ = writeln!(out, "{} {} {}", grid.rows(), grid.cols(), cell_size);
    for i in 0..grid.rows() {
        let row = grid.row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`dump_grid`]. Errors carry a human-readable reason.
pub fn parse_grid_dump(text: &str) -> std::result::Result<(Grid, f64), String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty dump")?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(format!("bad header {header:?}"));
    }
    let rows: usize = fields[0].parse().map_err(|_| "bad row count")?;
    let cols: usize = fields[1].parse().map_err(|_| "bad column count")?;
    let cell: f64 = fields[2].parse().map_err(|_| "bad cell size")?;
    let mut data = Vec::with_capacity(rows * cols);
    for (n, line) in lines.enumerate().take(rows) {
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(tok.parse::<f64>().map_err(|_| format!("bad value {tok:?} in row {n}"))?);
        }
        if data.len() - before != cols {
            return Err(format!("row {n} has {} values, expected {cols}", data.len() - before));
        }
    }
    Grid::from_vec(rows, cols, data)
        .map(|g| (g, cell))
        .ok_or_else(|| format!("expected {rows} rows"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorParams {
    /// Columns with more than this many occupied height voxels are occupied.
    pub density_threshold: u32,
    /// Value of unoccupied cells in query descriptors.
    pub unoccupied_weight: f64,
    /// Patch edge in cells used by reference thinning.
    pub patch_size: usize,
    /// Maximum occupied cells kept per patch.
    pub patch_max_occupied: usize,
    /// Average pooling edge in cells.
    pub pool_size: usize,
    pub rng_seed: u64,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            density_threshold: 2,
            unoccupied_weight: -0.15,
            patch_size: 10,
            patch_max_occupied: 20,
            pool_size: 2,
            rng_seed: 0,
        }
    }
}

impl DescriptorParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(LprError::param("patch size must be >= 1"));
        }
        if self.pool_size == 0 {
            return Err(LprError::param("pool size must be >= 1"));
        }
        if !self.unoccupied_weight.is_finite() {
            return Err(LprError::param("unoccupied weight must be finite"));
        }
        Ok(())
    }
}

/// Per-column count of occupied height voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightDensityMap {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub counts: Vec<u32>,
}

impl HeightDensityMap {
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.cols + j]
    }
}

pub fn height_density_map(v: &VoxelSet) -> HeightDensityMap {
    let [nx, ny, _] = v.dims;
    let mut counts = vec![0u32; nx * ny];
    for vox in &v.voxels {
        counts[vox.ix as usize * ny + vox.iy as usize] += 1;
    }
    HeightDensityMap {
        rows: nx,
        cols: ny,
        cell_size: v.vx,
        counts,
    }
}

pub fn threshold_occupancy(
    hdm: &HeightDensityMap,
    params: &DescriptorParams,
    polarity: Polarity,
) -> BevDescriptor {
    let unocc = match polarity {
        Polarity::Query => params.unoccupied_weight,
        Polarity::Reference => 0.0,
    };
    let data = hdm
        .counts
        .iter()
        .map(|&n| if n > params.density_threshold { 1.0 } else { unocc })
        .collect();
    BevDescriptor {
        grid: Grid::from_vec(hdm.rows, hdm.cols, data).expect("hdm shape"),
        cell_size: hdm.cell_size,
        resolution: Resolution::High,
        occupied_value: 1.0,
        unoccupied_value: unocc,
    }
}

/// Generator used for patch thinning of scan `stream`.
pub fn thinning_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Caps every `m × m` patch at `c` occupied cells, picking survivors with a
/// seeded partial shuffle.
pub fn patch_downsample<R: RngCore>(
    desc: &BevDescriptor,
    params: &DescriptorParams,
    rng: &mut R,
) -> BevDescriptor {
    let m = params.patch_size.max(1);
    let c = params.patch_max_occupied;
    let (rows, cols) = desc.shape();
    let mut out = desc.clone();
    let mut occupied: Vec<(usize, usize)> = Vec::with_capacity(m * m);
    for pi in (0..rows).step_by(m) {
        for pj in (0..cols).step_by(m) {
            occupied.clear();
            for i in pi..(pi + m).min(rows) {
                for j in pj..(pj + m).min(cols) {
                    if desc.grid[(i, j)] == desc.occupied_value {
                        occupied.push((i, j));
                    }
                }
            }
            let len = occupied.len();
            if len <= c {
                continue;
            }
            for t in 0..c {
                let r = t + (rng.next_u64() % (len - t) as u64) as usize;
                occupied.swap(t, r);
            }
            for &(i, j) in &occupied[c..] {
                out.grid[(i, j)] = desc.unoccupied_value;
            }
        }
    }
    out
}

/// Mean of each `u × u` block. Edges are padded with the unoccupied value
/// when they do not divide evenly.
pub fn average_pool(desc: &BevDescriptor, u: usize) -> BevDescriptor {
    let u = u.max(1);
    let (rows, cols) = desc.shape();
    let (out_rows, out_cols) = (rows.div_ceil(u), cols.div_ceil(u));
    let inv = 1.0 / (u * u) as f64;
    let mut grid = Grid::zeros(out_rows, out_cols);
    for oi in 0..out_rows {
        for oj in 0..out_cols {
            let mut acc = 0.0;
            for p in 0..u {
                for q in 0..u {
                    acc += desc
                        .grid
                        .get(oi * u + p, oj * u + q)
                        .unwrap_or(desc.unoccupied_value);
                }
            }
            grid[(oi, oj)] = acc * inv;
        }
    }
    BevDescriptor {
        grid,
        cell_size: desc.cell_size * u as f64,
        resolution: Resolution::Low,
        occupied_value: desc.occupied_value,
        unoccupied_value: desc.unoccupied_value,
    }
}

/// Rotates the grid content by `theta` degrees (counter-clockwise in the
/// x-y plane) about the grid center, sampling the source with nearest
/// neighbour. Cells that map outside the source get the unoccupied value.
pub fn rotate_descriptor(desc: &BevDescriptor, theta: f64) -> BevDescriptor {
    let (rows, cols) = desc.shape();
    let (s, c) = sin_cos_deg(theta);
    if s == 0.0 && c == 1.0 {
        return desc.clone();
    }
    let (hr, hc) = (rows as f64 / 2.0, cols as f64 / 2.0);
    let mut grid = Grid::filled(rows, cols, desc.unoccupied_value);
    for i in 0..rows {
        let x = i as f64 + 0.5 - hr;
        for j in 0..cols {
            let y = j as f64 + 0.5 - hc;
            let si = (c * x + s * y + hr).floor();
            let sj = (-s * x + c * y + hc).floor();
            if si >= 0.0 && sj >= 0.0 && (si as usize) < rows && (sj as usize) < cols {
                grid[(i, j)] = desc.grid[(si as usize, sj as usize)];
            }
        }
    }
    BevDescriptor {
        grid,
        cell_size: desc.cell_size,
        resolution: desc.resolution,
        occupied_value: desc.occupied_value,
        unoccupied_value: desc.unoccupied_value,
    }
}

/// High- and low-resolution descriptors of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorPair {
    pub high: BevDescriptor,
    pub low: BevDescriptor,
}

fn high_res(
    cloud: &PointCloud,
    win: &CropWindow,
    vx: f64,
    params: &DescriptorParams,
    polarity: Polarity,
) -> Result<BevDescriptor> {
    win.validate()?;
    params.validate()?;
    let cropped = crop_window(cloud, win);
    let voxels = voxelize(&cropped, win, vx)?;
    Ok(threshold_occupancy(&height_density_map(&voxels), params, polarity))
}

/// Reference path: threshold at reference polarity, thin patches with the
/// generator for scan `stream`, then pool.
pub fn make_reference_descriptors(
    cloud: &PointCloud,
    win: &CropWindow,
    vx: f64,
    params: &DescriptorParams,
    stream: u64,
) -> Result<DescriptorPair> {
    let dense = high_res(cloud, win, vx, params, Polarity::Reference)?;
    let high = patch_downsample(&dense, params, &mut thinning_rng(params.rng_seed, stream));
    let low = average_pool(&high, params.pool_size);
    Ok(DescriptorPair { high, low })
}

/// Query path: threshold at query polarity and pool; no patch thinning.
pub fn make_query_descriptors(
    cloud: &PointCloud,
    win: &CropWindow,
    vx: f64,
    params: &DescriptorParams,
) -> Result<DescriptorPair> {
    let high = high_res(cloud, win, vx, params, Polarity::Query)?;
    let low = average_pool(&high, params.pool_size);
    Ok(DescriptorPair { high, low })
}
