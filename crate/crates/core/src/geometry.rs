//! Point clouds, scan file formats, planar poses, cropping and voxelization.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{LprError, Result};

/// Tolerance used when turning a metric extent into a whole number of cells,
/// so that e.g. 36 m / 0.3 m yields 120 cells and not 121.
const CELL_EPS: f64 = 1e-9;

/// Number of cells of edge `cell` needed to cover `extent`, at least one.
pub fn cells_for(extent: f64, cell: f64) -> usize {
    ((extent / cell - CELL_EPS).ceil() as usize).max(1)
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn normalize_yaw(deg: f64) -> f64 {
    let mut y = (deg + 180.0).rem_euclid(360.0) - 180.0;
    if y >= 180.0 {
        y -= 360.0;
    }
    y
}

/// Sine and cosine of an angle in degrees, exact at multiples of 90°.
pub fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        r.to_radians().sin_cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            intensity: 0.0,
        }
    }

    pub fn with_intensity(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Frame {
    #[default]
    Sensor,
    World,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: Frame) -> Self {
        Self { points, frame }
    }

    pub fn sensor(points: Vec<Point3>) -> Self {
        Self::new(points, Frame::Sensor)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Axis-aligned crop box around the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub wx: f64,
    pub wy: f64,
    pub h1: f64,
    pub h2: f64,
    pub intensity_min: f64,
}

impl CropWindow {
    pub fn new(wx: f64, wy: f64, h1: f64, h2: f64) -> Result<Self> {
        Self::with_intensity(wx, wy, h1, h2, f64::NEG_INFINITY)
    }

    pub fn with_intensity(wx: f64, wy: f64, h1: f64, h2: f64, intensity_min: f64) -> Result<Self> {
        let w = Self {
            wx,
            wy,
            h1,
            h2,
            intensity_min,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wx > 0.0 && self.wx.is_finite()) || !(self.wy > 0.0 && self.wy.is_finite()) {
            return Err(LprError::param(format!(
                "crop half-extents must be positive, got wx={} wy={}",
                self.wx, self.wy
            )));
        }
        if !(self.h1 < self.h2) || !self.h1.is_finite() || !self.h2.is_finite() {
            return Err(LprError::param(format!(
                "crop heights need h1 < h2, got h1={} h2={}",
                self.h1, self.h2
            )));
        }
        if self.intensity_min.is_nan() {
            return Err(LprError::param("intensity_min is NaN"));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, p: &Point3) -> bool {
        p.x >= -self.wx
            && p.x <= self.wx
            && p.y >= -self.wy
            && p.y <= self.wy
            && p.z >= self.h1
            && p.z <= self.h2
            && p.intensity >= self.intensity_min
    }

    /// Voxel grid dimensions `(nx, ny, nz)` for edge `vx`.
    pub fn grid_dims(&self, vx: f64) -> [usize; 3] {
        [
            cells_for(2.0 * self.wx, vx),
            cells_for(2.0 * self.wy, vx),
            cells_for(self.h2 - self.h1, vx),
        ]
    }
}

/// Planar pose: position in meters, yaw in degrees within `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_yaw(yaw),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Maps a planar point from this pose's local frame to its parent frame.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = sin_cos_deg(self.yaw);
        (c * x - s * y + self.x, s * x + c * y + self.y)
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = sin_cos_deg(self.yaw);
        Self::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.yaw)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose2D) -> Self {
        let (x, y) = self.apply(other.x, other.y);
        Self::new(x, y, self.yaw + other.yaw)
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One occupied voxel and the number of points that fell into it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Voxel {
    pub ix: u32,
    pub iy: u32,
    pub iz: u32,
    pub count: u32,
}

/// Occupied voxels of a cropped cloud, sorted by `(ix, iy, iz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSet {
    pub vx: f64,
    pub dims: [usize; 3],
    pub voxels: Vec<Voxel>,
}

impl VoxelSet {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

pub fn load_pointcloud_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| LprError::io(path, e))?;
    parse_pointcloud_bin(&bytes).map_err(|reason| LprError::MalformedFile {
        path: path.to_path_buf(),
        reason,
    })
}

/// Decodes little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn parse_pointcloud_bin(bytes: &[u8]) -> std::result::Result<PointCloud, String> {
    if !bytes.len().is_multiple_of(16) {
        return Err(format!(
            "size {} bytes is not a multiple of 16",
            bytes.len()
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (idx, rec) in bytes.chunks_exact(16).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        let p = Point3::with_intensity(f(0), f(1), f(2), f(3));
        if !p.is_finite() {
            return Err(format!("non-finite value in record {idx}"));
        }
        points.push(p);
    }
    Ok(PointCloud::sensor(points))
}

pub fn encode_pointcloud_bin(pc: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(pc.len() * 16);
    for p in &pc.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_pointcloud_bin(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pointcloud_bin(pc)).map_err(|e| LprError::io(path, e))
}

pub fn load_pointcloud_ascii(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| LprError::io(path, e))?;
    parse_pointcloud_ascii(&text).map_err(|(line, reason)| LprError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    })
}

/// Parses `x y z [intensity]` lines; `#` starts a comment. Errors carry a
/// 1-based line number.
pub fn parse_pointcloud_ascii(text: &str) -> std::result::Result<PointCloud, (usize, String)> {
    let mut points = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| (n + 1, format!("bad number: {e}")))?;
        let p = match vals[..] {
            [x, y, z] => Point3::new(x, y, z),
            [x, y, z, i] => Point3::with_intensity(x, y, z, i),
            _ => return Err((n + 1, format!("expected 3 or 4 values, found {}", vals.len()))),
        };
        if !p.is_finite() {
            return Err((n + 1, "non-finite value".into()));
        }
        points.push(p);
    }
    Ok(PointCloud::sensor(points))
}

pub fn write_pointcloud_ascii(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| LprError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in &pc.points {
        writeln!(w, "{} {} {} {}", p.x, p.y, p.z, p.intensity).map_err(|e| LprError::io(path, e))?;
    }
    w.flush().map_err(|e| LprError::io(path, e))
}

/// Loads a scan, choosing the binary decoder for `.bin` files and the ASCII
/// one otherwise.
pub fn load_pointcloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("bin") => load_pointcloud_bin(path),
        _ => load_pointcloud_ascii(path),
    }
}

pub fn crop_window(pc: &PointCloud, win: &CropWindow) -> PointCloud {
    PointCloud::new(
        pc.points.iter().filter(|p| win.contains(p)).copied().collect(),
        pc.frame,
    )
}

/// Quantizes a cropped cloud into cubic voxels anchored at `(-wx, -wy, h1)`.
/// Indices are clamped into the grid so boundary points stay in range.
pub fn voxelize(pc: &PointCloud, win: &CropWindow, vx: f64) -> Result<VoxelSet> {
    if !(vx > 0.0 && vx.is_finite()) {
        return Err(LprError::param(format!("voxel size must be positive, got {vx}")));
    }
    let dims = win.grid_dims(vx);
    let [nx, ny, nz] = dims;
    let clamp = |v: f64, n: usize| -> u64 { (v.floor().max(0.0) as u64).min(n as u64 - 1) };

    let mut keys: Vec<u64> = pc
        .points
        .iter()
        .map(|p| {
            let ix = clamp((p.x + win.wx) / vx, nx);
            let iy = clamp((p.y + win.wy) / vx, ny);
            let iz = clamp((p.z - win.h1) / vx, nz);
            (ix * ny as u64 + iy) * nz as u64 + iz
        })
        .collect();
    keys.sort_unstable();

    let mut voxels: Vec<Voxel> = Vec::new();
    for key in keys {
        let iz = (key % nz as u64) as u32;
        let rest = key / nz as u64;
        let iy = (rest % ny as u64) as u32;
        let ix = (rest / ny as u64) as u32;
        match voxels.last_mut() {
            Some(v) if (v.ix, v.iy, v.iz) == (ix, iy, iz) => v.count += 1,
            _ => voxels.push(Voxel { ix, iy, iz, count: 1 }),
        }
    }
    Ok(VoxelSet { vx, dims, voxels })
}

/// Rotates each point's x-y by `pose.yaw`, then translates by `(pose.x, pose.y)`.
pub fn transform_cloud(pc: &PointCloud, pose: &Pose2D) -> PointCloud {
    let points = pc
        .points
        .iter()
        .map(|p| {
            let (x, y) = pose.apply(p.x, p.y);
            Point3 { x, y, ..*p }
        })
        .collect();
    PointCloud::new(points, pc.frame)
}

/// Header line of pose and ground-truth tables.
pub const POSES_HEADER: &str = "id,x,y,yaw";

/// Renders `id,x,y,yaw` rows; values use the shortest exact decimal form.
pub fn format_poses_csv(rows: &[(u64, Pose2D)]) -> String {
    let mut out = String::from(POSES_HEADER);
    out.push('\n');
    for (id, p) in rows {
        out.push_str(&format!("{id},{},{},{}\n", p.x, p.y, p.yaw));
    }
    out
}

pub fn write_poses_csv(path: impl AsRef<Path>, rows: &[(u64, Pose2D)]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_poses_csv(rows)).map_err(|e| LprError::io(path, e))
}

/// Parses an `id,x,y,yaw` table. The header is required and ids must be
/// unique; rows keep file order.
pub fn parse_poses_csv(text: &str, origin: &Path) -> Result<Vec<(u64, Pose2D)>> {
    let err = |line: usize, reason: String| LprError::Parse {
        path: origin.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim().replace(' ', "") == POSES_HEADER => {}
        Some((n, h)) => return Err(err(n + 1, format!("expected header `{POSES_HEADER}`, got `{h}`"))),
        None => return Err(err(1, format!("missing header `{POSES_HEADER}`"))),
    }
    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(err(n + 1, format!("expected 4 fields, got {}", f.len())));
        }
        let id: u64 = f[0].parse().map_err(|_| err(n + 1, format!("bad id `{}`", f[0])))?;
        let mut v = [0.0; 3];
        for (k, tok) in f[1..].iter().enumerate() {
            v[k] = tok
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(n + 1, format!("bad number `{tok}`")))?;
        }
        if !seen.insert(id) {
            return Err(err(n + 1, format!("duplicate id {id}")));
        }
        rows.push((id, Pose2D::new(v[0], v[1], v[2])));
    }
    Ok(rows)
}

pub fn load_poses_csv(path: impl AsRef<Path>) -> Result<Vec<(u64, Pose2D)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| LprError::io(path, e))?;
    parse_poses_csv(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn win18() -> CropWindow {
        CropWindow::new(18.0, 18.0, 1.0, 3.0).unwrap()
    }

    #[test]
    fn bin_single_record() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let pc = parse_pointcloud_bin(&bytes).unwrap();
        assert_eq!(pc.points, vec![Point3::with_intensity(1.0, 2.0, 3.0, 0.5)]);
        assert_eq!(pc.frame, Frame::Sensor);
    }

    #[test]
    fn bin_empty_and_bad_sizes() {
        assert!(parse_pointcloud_bin(&[]).unwrap().is_empty());
        let err = parse_pointcloud_bin(&[0u8; 24]).unwrap_err();
        assert!(err.contains("multiple of 16"));
    }

    #[test]
    fn bin_non_finite_names_record() {
        let mut bytes = vec![0u8; 16];
        for v in [0.0f32, f32::NAN, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let err = parse_pointcloud_bin(&bytes).unwrap_err();
        assert!(err.contains("record 1"), "{err}");
    }

    #[test]
    fn bin_file_errors_are_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, [0u8; 24]).unwrap();
        assert!(matches!(
            load_pointcloud_bin(&path),
            Err(LprError::MalformedFile { .. })
        ));
    }

    #[test]
    fn ascii_examples() {
        assert_eq!(parse_pointcloud_ascii("0 0 0\n1 1 1").unwrap().len(), 2);
        let pc = parse_pointcloud_ascii("# comment\n1 2 3 9").unwrap();
        assert_eq!(pc.points, vec![Point3::with_intensity(1.0, 2.0, 3.0, 9.0)]);
        assert_eq!(parse_pointcloud_ascii("1 2").unwrap_err().0, 1);
        assert_eq!(parse_pointcloud_ascii("1 2 3\n\nfoo 1 2").unwrap_err().0, 3);
    }

    #[test]
    fn crop_examples() {
        let w = win18();
        let pc = PointCloud::sensor(vec![
            Point3::new(0.0, 0.0, 2.0),
            Point3::new(19.0, 0.0, 2.0),
            Point3::new(18.0, 18.0, 3.0),
            Point3::new(0.0, 0.0, 0.5),
        ]);
        let out = crop_window(&pc, &w);
        assert_eq!(
            out.points,
            vec![Point3::new(0.0, 0.0, 2.0), Point3::new(18.0, 18.0, 3.0)]
        );
    }

    #[test]
    fn crop_intensity_threshold() {
        let w = CropWindow::with_intensity(5.0, 5.0, 0.0, 1.0, 10.0).unwrap();
        let pc = PointCloud::sensor(vec![
            Point3::with_intensity(0.0, 0.0, 0.5, 9.9),
            Point3::with_intensity(0.0, 0.0, 0.5, 10.0),
        ]);
        assert_eq!(crop_window(&pc, &w).len(), 1);
    }

    #[test]
    fn window_validation() {
        assert!(CropWindow::new(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(CropWindow::new(1.0, 1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn grid_dims_are_exact_for_default_sizes() {
        assert_eq!(win18().grid_dims(0.3), [120, 120, 7]);
        let urban = CropWindow::new(45.0, 45.0, -1.0, 5.0).unwrap();
        assert_eq!(urban.grid_dims(0.75), [120, 120, 8]);
    }

    #[test]
    fn voxelize_merges_close_points() {
        let w = win18();
        let pc = PointCloud::sensor(vec![Point3::new(0.05, 0.05, 1.05), Point3::new(0.15, 0.05, 1.05)]);
        let v = voxelize(&pc, &w, 0.3).unwrap();
        assert_eq!(v.voxels, vec![Voxel { ix: 60, iy: 60, iz: 0, count: 2 }]);
    }

    #[test]
    fn voxelize_clamps_upper_boundary() {
        let w = win18();
        let pc = PointCloud::sensor(vec![Point3::new(18.0, -18.0, 3.0)]);
        let v = voxelize(&pc, &w, 0.3).unwrap();
        assert_eq!((v.voxels[0].ix, v.voxels[0].iy, v.voxels[0].iz), (119, 0, 6));
    }

    #[test]
    fn voxelize_rejects_bad_edge() {
        assert!(voxelize(&PointCloud::default(), &win18(), 0.0).is_err());
        assert!(voxelize(&PointCloud::default(), &win18(), -1.0).is_err());
    }

    #[test]
    fn transform_examples() {
        let pc = PointCloud::sensor(vec![Point3::new(1.0, 0.0, 0.0)]);
        let p = transform_cloud(&pc, &Pose2D::new(0.0, 0.0, 90.0)).points[0];
        assert_eq!((p.x, p.y, p.z), (0.0, 1.0, 0.0));
        assert_eq!(transform_cloud(&pc, &Pose2D::identity()), pc);
        let p = transform_cloud(&pc, &Pose2D::new(5.0, 5.0, 180.0)).points[0];
        assert_eq!((p.x, p.y, p.z), (4.0, 5.0, 0.0));
    }

    #[test]
    fn yaw_normalization() {
        assert_eq!(normalize_yaw(180.0), -180.0);
        assert_eq!(normalize_yaw(-180.0), -180.0);
        assert_eq!(normalize_yaw(370.0), 10.0);
        assert_eq!(normalize_yaw(-190.0), 170.0);
        let y = normalize_yaw(-1e-17);
        assert!((-180.0..180.0).contains(&y));
    }

    fn arb_point() -> impl Strategy<Value = Point3> {
        (-25.0..25.0f64, -25.0..25.0f64, -1.0..5.0f64, 0.0..100.0f64)
            .prop_map(|(x, y, z, i)| Point3::with_intensity(x, y, z, i))
    }

    fn arb_pose() -> impl Strategy<Value = Pose2D> {
        (-50.0..50.0f64, -50.0..50.0f64, -720.0..720.0f64).prop_map(|(x, y, t)| Pose2D::new(x, y, t))
    }

    proptest! {
        #[test]
        fn crop_is_idempotent(pts in prop::collection::vec(arb_point(), 0..200)) {
            let pc = PointCloud::sensor(pts);
            let once = crop_window(&pc, &win18());
            prop_assert_eq!(crop_window(&once, &win18()), once);
        }

        #[test]
        fn voxelize_is_order_invariant(pts in prop::collection::vec(arb_point(), 0..200), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let w = win18();
            let pc = crop_window(&PointCloud::sensor(pts), &w);
            let mut shuffled = pc.clone();
            shuffled.points.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(voxelize(&pc, &w, 0.3).unwrap(), voxelize(&shuffled, &w, 0.3).unwrap());
        }

        #[test]
        fn transform_inverse_roundtrip(pts in prop::collection::vec(arb_point(), 1..50), pose in arb_pose()) {
            let pc = PointCloud::sensor(pts);
            let back = transform_cloud(&transform_cloud(&pc, &pose), &pose.inverse());
            for (a, b) in pc.points.iter().zip(&back.points) {
                prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
                prop_assert_eq!(a.z, b.z);
            }
        }

        #[test]
        fn bin_roundtrip(raw in prop::collection::vec((any::<f32>(), any::<f32>(), any::<f32>(), any::<f32>()), 0..64)) {
            let pts: Vec<Point3> = raw
                .into_iter()
                .filter(|(a, b, c, d)| a.is_finite() && b.is_finite() && c.is_finite() && d.is_finite())
                .map(|(a, b, c, d)| Point3::with_intensity(a as f64, b as f64, c as f64, d as f64))
                .collect();
            let pc = PointCloud::sensor(pts);
            prop_assert_eq!(parse_pointcloud_bin(&encode_pointcloud_bin(&pc)).unwrap(), pc);
        }

        #[test]
        fn yaw_always_in_range(pose in arb_pose()) {
            prop_assert!((-180.0..180.0).contains(&pose.yaw));
            prop_assert!((-180.0..180.0).contains(&pose.inverse().yaw));
        }
    }

    #[test]
    fn poses_csv_roundtrip_and_errors() {
        let rows = vec![(3, Pose2D::new(1.5, -2.25, 190.0)), (7, Pose2D::new(0.1, 0.2, -45.0))];
        let text = format_poses_csv(&rows);
        assert!(text.starts_with("id,x,y,yaw\n"));
        assert_eq!(parse_poses_csv(&text, Path::new("p.csv")).unwrap(), rows);
        let origin = Path::new("p.csv");
        assert!(matches!(parse_poses_csv("1,2,3,4\n", origin), Err(LprError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_poses_csv("id,x,y,yaw\n1,0,0,0\n1,0,0,0\n", origin),
            Err(LprError::Parse { line: 3, .. })
        ));
        assert!(parse_poses_csv("id,x,y,yaw\n1,0,nan,0\n", origin).is_err());
    }
}
