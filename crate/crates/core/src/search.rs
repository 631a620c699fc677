//! Two-stage place search.
//!
//! Every reference contributes a low-resolution tile to one contiguous mosaic.
//! The global stage slides the rotated low-resolution query over the whole
//! mosaic, one FFT correlation per angle, and keeps each reference's best
//! score. The top candidates are then re-ranked by correlating the
//! high-resolution query against each candidate's own high-resolution
//! descriptor, and the winning peak gives the in-frame shift.
//!
//! The mosaic correlation runs in single precision since it only ranks
//! candidates; the local stage and everything scored against an oracle runs in
//! double precision.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::config::Config;
use crate::correlation::{check_cells, rotation_sweep, CorrelationSurface, RotationFamily};
use crate::descriptor::{
    average_pool, dump_grid, make_query_descriptors, make_reference_descriptors, parse_grid_dump,
    BevDescriptor, DescriptorPair, Resolution,
};
use crate::error::{LprError, Result};
use crate::fft::{SpectralCorrelator, Workspace};
use crate::geometry::{format_poses_csv, parse_poses_csv, PointCloud, Pose2D};
use crate::grid::Grid;
use crate::pose_metrics::{shift_to_pose, PoseEstimate};

/// Version written to and required from index manifests.
pub const INDEX_FORMAT_VERSION: u32 = 1;

/// Tiled low-resolution mosaic plus the per-reference high-resolution
/// descriptors and poses. Immutable once built.
pub struct ReferenceIndex {
    config: Config,
    ids: Vec<u64>,
    poses: Vec<Pose2D>,
    high: Vec<BevDescriptor>,
    positions: HashMap<u64, usize>,
    mosaic: Grid,
    tile_shape: (usize, usize),
    tile_grid: (usize, usize),
    high_cell: f64,
    low_cell: f64,
    prepared: OnceLock<SpectralCorrelator<f32>>,
}

impl std::fmt::Debug for ReferenceIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReferenceIndex")
            .field("references", &self.ids.len())
            .field("tile_shape", &self.tile_shape)
            .field("tile_grid", &self.tile_grid)
            .field("high_cell", &self.high_cell)
            .field("low_cell", &self.low_cell)
            .finish()
    }
}

/// Best global-stage match of one reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub reference_id: u64,
    /// Query rotation in degrees.
    pub theta: f64,
    /// Peak offset from the tile center in low-resolution cells, `(rows, cols)`.
    pub shift: (isize, isize),
    pub score: f64,
}

/// Per-tile maximum of one correlation surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileMaximum {
    pub reference_id: u64,
    pub score: f64,
    /// Peak offset from the tile center in low-resolution cells, `(rows, cols)`.
    pub shift: (isize, isize),
}

/// Outcome of the high-resolution stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub reference_id: u64,
    /// Yaw of the query relative to the reference, in `[0, 360)`.
    pub theta_match: f64,
    /// Query position in the reference frame, meters, `(x, y)`.
    pub shift: (f64, f64),
    /// Peak cell in the reference descriptor.
    pub peak: (usize, usize),
    pub score: f64,
    pub global_score: f64,
}

/// Everything `localize` computed on the way to its estimate.
#[derive(Debug, Clone)]
pub struct Localization {
    pub estimate: PoseEstimate,
    pub matched: MatchResult,
    pub candidates: Vec<Candidate>,
    pub query: DescriptorPair,
}

/// Keeps a pose when it is the first one or lies at least `spacing` from the
/// last kept pose.
fn keeps(last: Option<&Pose2D>, pose: &Pose2D, spacing: f64) -> bool {
    last.is_none_or(|l| l.distance(pose) >= spacing)
}

/// Streams scans into an index, thinning by distance and dropping each cloud
/// once its descriptors are built.
pub struct ReferenceIndexBuilder {
    config: Config,
    seen: HashSet<u64>,
    ids: Vec<u64>,
    poses: Vec<Pose2D>,
    pairs: Vec<DescriptorPair>,
}

impl ReferenceIndexBuilder {
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            seen: HashSet::new(),
            ids: Vec::new(),
            poses: Vec::new(),
            pairs: Vec::new(),
        })
    }

    /// Whether a scan at `pose` would be kept by the spacing rule.
    pub fn would_keep(&self, pose: &Pose2D) -> bool {
        keeps(self.poses.last(), pose, self.config.reference_spacing)
    }

    /// Offers one scan in path order; returns whether it was kept. The cloud
    /// is only produced for scans that are kept.
    pub fn add_with(
        &mut self,
        id: u64,
        pose: Pose2D,
        cloud: impl FnOnce() -> Result<PointCloud>,
    ) -> Result<bool> {
        if !self.seen.insert(id) {
            return Err(LprError::Index(format!("duplicate reference id {id}")));
        }
        if !self.would_keep(&pose) {
            return Ok(false);
        }
        let c = &self.config;
        let pair = make_reference_descriptors(
            &cloud()?,
            &c.crop_window(),
            c.voxel_size,
            &c.descriptor_params(),
            id,
        )?;
        self.ids.push(id);
        self.poses.push(pose);
        self.pairs.push(pair);
        Ok(true)
    }

    pub fn add(&mut self, id: u64, cloud: &PointCloud, pose: Pose2D) -> Result<bool> {
        self.add_with(id, pose, || Ok(cloud.clone()))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn finish(self) -> Result<ReferenceIndex> {
        let (high, low): (Vec<_>, Vec<_>) = self.pairs.into_iter().map(|p| (p.high, p.low)).unzip();
        ReferenceIndex::assemble(self.config, self.ids, self.poses, high, &low)
    }
}

/// Indices of the scans kept by greedy spacing thinning along path order.
/// Rejects an empty path and repeated ids.
pub fn thin_path(poses: &[(u64, Pose2D)], spacing: f64) -> Result<Vec<usize>> {
    if poses.is_empty() {
        return Err(LprError::Index("no scans to index".into()));
    }
    let mut seen = HashSet::new();
    let mut kept: Vec<usize> = Vec::new();
    for (k, (id, pose)) in poses.iter().enumerate() {
        if !seen.insert(*id) {
            return Err(LprError::Index(format!("duplicate reference id {id}")));
        }
        if keeps(kept.last().map(|&l| &poses[l].1), pose, spacing) {
            kept.push(k);
        }
    }
    Ok(kept)
}

/// Builds an index from poses given in path order, asking `load` for the
/// cloud of each kept scan only. Clouds are loaded and reduced in parallel.
pub fn build_reference_index_with(
    poses: &[(u64, Pose2D)],
    config: &Config,
    load: impl Fn(u64) -> Result<PointCloud> + Sync,
) -> Result<ReferenceIndex> {
    config.validate()?;
    let kept = thin_path(poses, config.reference_spacing)?;
    let (win, params) = (config.crop_window(), config.descriptor_params());
    let pairs = kept
        .par_iter()
        .map(|&k| {
            let id = poses[k].0;
            make_reference_descriptors(&load(id)?, &win, config.voxel_size, &params, id)
        })
        .collect::<Result<Vec<_>>>()?;
    let (high, low): (Vec<_>, Vec<_>) = pairs.into_iter().map(|p| (p.high, p.low)).unzip();
    ReferenceIndex::assemble(
        config.clone(),
        kept.iter().map(|&k| poses[k].0).collect(),
        kept.iter().map(|&k| poses[k].1).collect(),
        high,
        &low,
    )
}

/// Builds an index from scans given in path order: thins them to the
/// configured spacing, builds reference descriptors and tiles the mosaic.
pub fn build_reference_index(scans: &[(u64, PointCloud, Pose2D)], config: &Config) -> Result<ReferenceIndex> {
    config.validate()?;
    let poses: Vec<(u64, Pose2D)> = scans.iter().map(|s| (s.0, s.2)).collect();
    let kept = thin_path(&poses, config.reference_spacing)?;
    let (win, params) = (config.crop_window(), config.descriptor_params());
    let pairs = kept
        .par_iter()
        .map(|&k| make_reference_descriptors(&scans[k].1, &win, config.voxel_size, &params, scans[k].0))
        .collect::<Result<Vec<_>>>()?;
    let (high, low): (Vec<_>, Vec<_>) = pairs.into_iter().map(|p| (p.high, p.low)).unzip();
    ReferenceIndex::assemble(
        config.clone(),
        kept.iter().map(|&k| scans[k].0).collect(),
        kept.iter().map(|&k| scans[k].2).collect(),
        high,
        &low,
    )
}

/// Near-square tile layout: `⌈√n⌉` columns and as many rows as needed.
pub fn tile_layout(n: usize) -> (usize, usize) {
    let mut cols = n.isqrt();
    if cols * cols < n {
        cols += 1;
    }
    let cols = cols.max(1);
    (n.div_ceil(cols).max(1), cols)
}

/// For each position along one mosaic axis, the tile whose center is
/// nearest; equidistant positions go to the lower tile.
fn nearest_tiles(len: usize, tile: usize, count: usize) -> Vec<(usize, isize)> {
    let center = (tile / 2) as isize;
    (0..len)
        .map(|p| {
            let d = p as isize - center;
            let mut t = d.div_euclid(tile as isize);
            if 2 * d.rem_euclid(tile as isize) > tile as isize {
                t += 1;
            }
            let t = t.clamp(0, count as isize - 1);
            (t as usize, p as isize - (t * tile as isize + center))
        })
        .collect()
}

impl ReferenceIndex {
    fn assemble(
        config: Config,
        ids: Vec<u64>,
        poses: Vec<Pose2D>,
        high: Vec<BevDescriptor>,
        low: &[BevDescriptor],
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(LprError::Index("no references to index".into()));
        }
        let tile_shape = low[0].shape();
        if low.iter().any(|d| d.shape() != tile_shape) || high.iter().any(|d| d.shape() != high[0].shape()) {
            return Err(LprError::Dimension("reference descriptors differ in shape".into()));
        }
        let tile_grid = tile_layout(ids.len());
        let mut mosaic = Grid::zeros(tile_grid.0 * tile_shape.0, tile_grid.1 * tile_shape.1);
        for (t, d) in low.iter().enumerate() {
            mosaic.blit(&d.grid, (t / tile_grid.1) * tile_shape.0, (t % tile_grid.1) * tile_shape.1);
        }
        let positions = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        Ok(Self {
            high_cell: high[0].cell_size,
            low_cell: low[0].cell_size,
            config,
            ids,
            poses,
            high,
            positions,
            mosaic,
            tile_shape,
            tile_grid,
            prepared: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Configuration the index was built with.
    pub fn config(&self) -> &Config {
        &self.config
    }

    /// Reference ids in tile order.
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn poses(&self) -> &[Pose2D] {
        &self.poses
    }

    pub fn mosaic(&self) -> &Grid {
        &self.mosaic
    }

    /// Shape of one low-resolution tile in cells.
    pub fn tile_shape(&self) -> (usize, usize) {
        self.tile_shape
    }

    /// Number of tile rows and columns in the mosaic.
    pub fn tile_grid(&self) -> (usize, usize) {
        self.tile_grid
    }

    pub fn high_cell_size(&self) -> f64 {
        self.high_cell
    }

    pub fn low_cell_size(&self) -> f64 {
        self.low_cell
    }

    pub fn pose(&self, id: u64) -> Option<Pose2D> {
        self.positions.get(&id).map(|&k| self.poses[k])
    }

    pub fn high_descriptor(&self, id: u64) -> Option<&BevDescriptor> {
        self.positions.get(&id).map(|&k| &self.high[k])
    }

    /// Low-resolution descriptor of `id`, cut out of the mosaic.
    pub fn low_descriptor(&self, id: u64) -> Option<BevDescriptor> {
        let k = *self.positions.get(&id)?;
        let (th, tw) = self.tile_shape;
        let grid = self
            .mosaic
            .sub_grid((k / self.tile_grid.1) * th, (k % self.tile_grid.1) * tw, th, tw);
        Some(BevDescriptor {
            grid,
            cell_size: self.low_cell,
            resolution: Resolution::Low,
            occupied_value: 1.0,
            unoccupied_value: 0.0,
        })
    }

    /// The same index with reference `id` removed.
    pub fn without(&self, id: u64) -> Result<ReferenceIndex> {
        if !self.positions.contains_key(&id) {
            return Err(LprError::Missing(format!("reference {id} is not in the index")));
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&k| self.ids[k] != id).collect();
        let low: Vec<BevDescriptor> = keep
            .iter()
            .map(|&k| self.low_descriptor(self.ids[k]).expect("known id"))
            .collect();
        Self::assemble(
            self.config.clone(),
            keep.iter().map(|&k| self.ids[k]).collect(),
            keep.iter().map(|&k| self.poses[k]).collect(),
            keep.iter().map(|&k| self.high[k].clone()).collect(),
            &low,
        )
    }

    /// Transforms the mosaic for the global stage. Done lazily by the first
    /// search otherwise; calling it up front keeps that cost out of query
    /// latency.
    pub fn prepare(&self) {
        self.prepared();
    }

    fn prepared(&self) -> &SpectralCorrelator<f32> {
        self.prepared
            .get_or_init(|| SpectralCorrelator::new(&self.mosaic, self.tile_shape))
    }

    /// Writes the index directory: `manifest.txt`, `mosaic.txt`,
    /// `poses.csv` and one `refs/<id>.txt` per reference.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let refs = dir.join("refs");
        fs::create_dir_all(&refs).map_err(|e| LprError::io(&refs, e))?;
        let write = |path: &Path, text: &str| fs::write(path, text).map_err(|e| LprError::io(path, e));
        write(&dir.join("manifest.txt"), &self.manifest())?;
        write(&dir.join("mosaic.txt"), &dump_grid(&self.mosaic, self.low_cell))?;
        let rows: Vec<(u64, Pose2D)> = self.ids.iter().copied().zip(self.poses.iter().copied()).collect();
        write(&dir.join("poses.csv"), &format_poses_csv(&rows))?;
        for (id, d) in self.ids.iter().zip(&self.high) {
            write(&refs.join(format!("{id}.txt")), &d.to_dump())?;
        }
        Ok(())
    }

    /// Manifest text: format version, counts and sizes, then the canonical
    /// configuration with every key prefixed by `config.`.
    pub fn manifest(&self) -> String {
        let mut out = format!(
            "format_version = {INDEX_FORMAT_VERSION}\n\
             references = {}\n\
             tile_rows = {}\ntile_cols = {}\n\
             mosaic_tile_rows = {}\nmosaic_tile_cols = {}\n\
             high_cell_size = {}\nlow_cell_size = {}\n",
            self.len(),
            self.tile_shape.0,
            self.tile_shape.1,
            self.tile_grid.0,
            self.tile_grid.1,
            self.high_cell,
            self.low_cell,
        );
        for line in self.config.canonical().lines() {
            out.push_str("config.");
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<ReferenceIndex> {
        let dir = dir.as_ref();
        let read = |path: &Path| fs::read_to_string(path).map_err(|e| LprError::io(path, e));
        let manifest_path = dir.join("manifest.txt");
        let manifest = read(&manifest_path)?;
        let mut fields = HashMap::new();
        let mut config_text = String::new();
        for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| LprError::MalformedFile {
                path: manifest_path.clone(),
                reason: format!("bad line {line:?}"),
            })?;
            match k.trim().strip_prefix("config.") {
                Some(key) => config_text.push_str(&format!("{key} = {}\n", v.trim())),
                None => {
                    fields.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
        }
        let field = |name: &str| -> Result<&String> {
            fields.get(name).ok_or_else(|| LprError::MalformedFile {
                path: manifest_path.clone(),
                reason: format!("missing `{name}`"),
            })
        };
        let version = field("format_version")?;
        if version.parse::<u32>().ok() != Some(INDEX_FORMAT_VERSION) {
            return Err(LprError::Index(format!(
                "unsupported index format version {version}, expected {INDEX_FORMAT_VERSION}"
            )));
        }
        let count: usize = field("references")?.parse().map_err(|_| LprError::MalformedFile {
            path: manifest_path.clone(),
            reason: "bad reference count".into(),
        })?;
        let config = Config::parse(&config_text, &manifest_path)?;

        let poses_path = dir.join("poses.csv");
        let rows = parse_poses_csv(&read(&poses_path)?, &poses_path)?;
        if rows.len() != count {
            return Err(LprError::MalformedFile {
                path: poses_path,
                reason: format!("{} poses for {count} references", rows.len()),
            });
        }
        let mosaic_path = dir.join("mosaic.txt");
        let (mosaic, low_cell) = parse_grid_dump(&read(&mosaic_path)?).map_err(|reason| LprError::MalformedFile {
            path: mosaic_path.clone(),
            reason,
        })?;
        let high = rows
            .par_iter()
            .map(|(id, _)| {
                let path = dir.join("refs").join(format!("{id}.txt"));
                let (grid, cell_size) =
                    parse_grid_dump(&read(&path)?).map_err(|reason| LprError::MalformedFile { path, reason })?;
                Ok(BevDescriptor {
                    grid,
                    cell_size,
                    resolution: Resolution::High,
                    occupied_value: 1.0,
                    unoccupied_value: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let (ids, poses): (Vec<u64>, Vec<Pose2D>) = rows.into_iter().unzip();
        let tile_shape = high[0].shape();
        let pooled = (
            tile_shape.0.div_ceil(config.pool_size),
            tile_shape.1.div_ceil(config.pool_size),
        );
        let tile_grid = tile_layout(count);
        if mosaic.shape() != (tile_grid.0 * pooled.0, tile_grid.1 * pooled.1) {
            return Err(LprError::MalformedFile {
                path: mosaic_path,
                reason: format!("mosaic shape {:?} does not fit {count} tiles of {pooled:?}", mosaic.shape()),
            });
        }
        let low: Vec<BevDescriptor> = (0..count)
            .map(|k| BevDescriptor {
                grid: mosaic.sub_grid((k / tile_grid.1) * pooled.0, (k % tile_grid.1) * pooled.1, pooled.0, pooled.1),
                cell_size: low_cell,
                resolution: Resolution::Low,
                occupied_value: 1.0,
                unoccupied_value: 0.0,
            })
            .collect();
        Self::assemble(config, ids, poses, high, &low)
    }
}

/// For every reference, the largest value of `surface` among the cells whose
/// nearest tile center is that reference's tile.
pub fn per_tile_maxima(surface: &CorrelationSurface, index: &ReferenceIndex) -> Result<Vec<TileMaximum>> {
    if surface.values.shape() != index.mosaic.shape() {
        return Err(LprError::Dimension(format!(
            "surface {:?} vs mosaic {:?}",
            surface.values.shape(),
            index.mosaic.shape()
        )));
    }
    Ok(tile_maxima(&surface.values, index))
}

/// A run of mosaic columns sharing one nearest tile column.
#[derive(Debug, Clone, Copy)]
struct ColumnRun {
    tile_col: usize,
    start: usize,
    end: usize,
    /// Column offset from the tile center at `start`.
    offset: isize,
}

/// Nearest tile and offset from its center for every row, and the runs of
/// columns attributed to each tile column.
struct TileMap {
    rows: Vec<(usize, isize)>,
    runs: Vec<ColumnRun>,
    tile_cols: usize,
    used: usize,
}

/// Largest value of a nonempty slice, in lanes so that it vectorizes.
fn slice_max(values: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [f64::NEG_INFINITY; LANES];
    let chunks = values.chunks_exact(LANES);
    let rest = chunks.remainder();
    for chunk in chunks {
        for (a, &v) in acc.iter_mut().zip(chunk) {
            *a = if v > *a { v } else { *a };
        }
    }
    acc.iter().chain(rest).fold(f64::NEG_INFINITY, |m, &v| if v > m { v } else { m })
}

impl TileMap {
    fn new(index: &ReferenceIndex) -> Self {
        let (tr, tc) = index.tile_grid;
        let cols = nearest_tiles(index.mosaic.cols(), index.tile_shape.1, tc);
        let mut runs: Vec<ColumnRun> = Vec::new();
        for (j, &(tile_col, offset)) in cols.iter().enumerate() {
            match runs.last_mut() {
                Some(run) if run.tile_col == tile_col => run.end = j + 1,
                _ => runs.push(ColumnRun {
                    tile_col,
                    start: j,
                    end: j + 1,
                    offset,
                }),
            }
        }
        Self {
            rows: nearest_tiles(index.mosaic.rows(), index.tile_shape.0, tr),
            runs,
            tile_cols: tc,
            used: index.len(),
        }
    }

    fn empty(&self) -> Vec<(f64, (isize, isize))> {
        vec![(f64::NEG_INFINITY, (0, 0)); self.used]
    }

    /// Folds row `i` into the running maxima; the first occurrence of a
    /// value wins.
    fn visit(&self, best: &mut [(f64, (isize, isize))], i: usize, row: &[f64]) {
        let (ti, di) = self.rows[i];
        let base = ti * self.tile_cols;
        for run in &self.runs {
            let t = base + run.tile_col;
            if t >= self.used {
                break;
            }
            let seg = &row[run.start..run.end];
            let m = slice_max(seg);
            if m > best[t].0 {
                let p = seg.iter().position(|&v| v == m).expect("maximum is in the slice");
                best[t] = (m, (di, run.offset + p as isize));
            }
        }
    }

    /// Merges per-block maxima given in row order.
    fn merge(&self, blocks: Vec<Vec<(f64, (isize, isize))>>) -> Vec<(f64, (isize, isize))> {
        let mut best = self.empty();
        for block in blocks {
            for (b, m) in best.iter_mut().zip(block) {
                if m.0 > b.0 {
                    *b = m;
                }
            }
        }
        best
    }
}

fn tile_maxima(values: &Grid, index: &ReferenceIndex) -> Vec<TileMaximum> {
    let map = TileMap::new(index);
    let mut best = map.empty();
    for i in 0..values.rows() {
        map.visit(&mut best, i, values.row(i));
    }
    best.into_iter()
        .zip(&index.ids)
        .map(|((score, shift), &reference_id)| TileMaximum {
            reference_id,
            score,
            shift,
        })
        .collect()
}

/// Global stage with the query rotated at low resolution.
pub fn global_search(index: &ReferenceIndex, q_low: &BevDescriptor, k: f64, n: usize) -> Result<Vec<Candidate>> {
    global_search_family(index, &RotationFamily::new(q_low, k)?, n)
}

/// Global stage over a prepared low-resolution rotation family: each
/// reference keeps its best angle, and the `n` best references are returned
/// by descending score, ties in tile order.
pub fn global_search_family(index: &ReferenceIndex, family: &RotationFamily, n: usize) -> Result<Vec<Candidate>> {
    if n == 0 {
        return Err(LprError::param("top_n must be at least 1"));
    }
    let tol = 1e-9 * index.low_cell.abs();
    if (family.cell_size() - index.low_cell).abs() > tol {
        return Err(LprError::param(format!(
            "cell size mismatch: query {} vs mosaic {}",
            family.cell_size(),
            index.low_cell
        )));
    }
    if family.shape() != index.tile_shape {
        return Err(LprError::Dimension(format!(
            "low-resolution query {:?} vs tile {:?}",
            family.shape(),
            index.tile_shape
        )));
    }
    let prepared = index.prepared();
    let map = TileMap::new(index);
    let mut work = Workspace::new();
    let mut best: Vec<Option<Candidate>> = vec![None; index.len()];
    for (theta, q) in family.members() {
        let blocks = prepared.correlate_fold(&q.grid, &mut work, || map.empty(), |acc, i, row| map.visit(acc, i, row));
        for ((slot, (score, shift)), &reference_id) in best.iter_mut().zip(map.merge(blocks)).zip(&index.ids) {
            if slot.is_none_or(|c| score > c.score) {
                *slot = Some(Candidate {
                    reference_id,
                    theta: *theta,
                    shift,
                    score,
                });
            }
        }
    }
    let mut ranked: Vec<Candidate> = best.into_iter().flatten().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    ranked.truncate(n);
    Ok(ranked)
}

/// Local stage with the query rotated at high resolution.
pub fn local_search(
    index: &ReferenceIndex,
    q_high: &BevDescriptor,
    candidates: &[Candidate],
    k: f64,
) -> Result<MatchResult> {
    local_search_family(index, &RotationFamily::new(q_high, k)?, candidates)
}

/// Re-ranks `candidates` by their high-resolution sweep peak. Ties go to
/// the higher global score, then the lower reference id.
pub fn local_search_family(
    index: &ReferenceIndex,
    family: &RotationFamily,
    candidates: &[Candidate],
) -> Result<MatchResult> {
    if candidates.is_empty() {
        return Err(LprError::param("no candidates to re-rank"));
    }
    let (hq, wq) = family.shape();
    let (ci, cj) = ((hq / 2) as isize, (wq / 2) as isize);
    let mut results = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let reference = index
            .high_descriptor(cand.reference_id)
            .ok_or_else(|| LprError::Missing(format!("reference {} is not in the index", cand.reference_id)))?;
        check_cells(&family.members()[0].1, reference)?;
        let peak = rotation_sweep(family, reference)?.best;
        let cell = reference.cell_size;
        results.push(MatchResult {
            reference_id: cand.reference_id,
            theta_match: peak.theta,
            shift: (
                (peak.i as isize - ci) as f64 * cell,
                (peak.j as isize - cj) as f64 * cell,
            ),
            peak: (peak.i, peak.j),
            score: peak.score,
            global_score: cand.score,
        });
    }
    let ranks_before = |a: &MatchResult, b: &MatchResult| {
        a.score
            .total_cmp(&b.score)
            .then(a.global_score.total_cmp(&b.global_score))
            .then(b.reference_id.cmp(&a.reference_id))
    };
    Ok(results
        .into_iter()
        .reduce(|a, b| if ranks_before(&b, &a).is_gt() { b } else { a })
        .expect("nonempty candidates"))
}

/// Query descriptors, global stage, local stage and pose correction.
pub fn localize(index: &ReferenceIndex, cloud: &PointCloud, config: &Config) -> Result<PoseEstimate> {
    localize_verbose(index, cloud, config).map(|l| l.estimate)
}

/// [`localize`] keeping the intermediate results.
pub fn localize_verbose(index: &ReferenceIndex, cloud: &PointCloud, config: &Config) -> Result<Localization> {
    let mismatched = config.descriptor_mismatches(&index.config);
    if !mismatched.is_empty() {
        return Err(LprError::Config(format!(
            "query configuration differs from the index in: {}",
            mismatched.join(", ")
        )));
    }
    let query = make_query_descriptors(cloud, &config.crop_window(), config.voxel_size, &config.descriptor_params())?;
    let high_family = RotationFamily::new(&query.high, config.rotation_step)?;
    let low_family = high_family.map(|d| average_pool(d, config.pool_size))?;
    let candidates = global_search_family(index, &low_family, config.top_n)?;
    let matched = local_search_family(index, &high_family, &candidates)?;
    let reference_pose = index.pose(matched.reference_id).expect("candidate from index");
    let estimate = PoseEstimate {
        pose: shift_to_pose(&reference_pose, matched.shift, matched.theta_match),
        reference_id: matched.reference_id,
        reference_pose,
        theta_match: matched.theta_match,
        score: matched.score,
        low_confidence: query.high.occupied_count() == 0,
    };
    Ok(Localization {
        estimate,
        matched,
        candidates,
        query,
    })
}

/// High-resolution correlation surface behind `matched`, for debugging.
pub fn matched_surface(index: &ReferenceIndex, query_high: &BevDescriptor, matched: &MatchResult) -> Result<CorrelationSurface> {
    let reference = index
        .high_descriptor(matched.reference_id)
        .ok_or_else(|| LprError::Missing(format!("reference {} is not in the index", matched.reference_id)))?;
    let rotated = crate::descriptor::rotate_descriptor(query_high, matched.theta_match);
    let mut s = crate::correlation::correlate_fft(&rotated, reference)?;
    s.theta = matched.theta_match;
    Ok(s)
}
