//! Seeded synthetic worlds of vertical landmarks and a scan renderer, used to
//! produce benchmarks with exact ground truth.
//!
//! Landmark surfaces are sampled from a generator keyed by the world seed and
//! the landmark index, so every scan of a world sees the same surface points.
//! Sensor noise and dropout come from a separate per-scan seed.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::Config;
use crate::error::{LprError, Result};
use crate::geometry::{format_poses_csv, write_pointcloud_bin, Point3, PointCloud, Pose2D};

/// Placement attempts per landmark before giving up.
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LandmarkShape {
    Cylinder,
    /// Square footprint with half-side equal to the radius, turned by `yaw`
    /// degrees.
    Box { yaw: f64 },
}

/// A vertical structure standing on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub shape: LandmarkShape,
    /// Surface points per square meter.
    pub density: f64,
}

impl Landmark {
    fn lateral_area(&self) -> f64 {
        let h = self.z_max - self.z_min;
        match self.shape {
            LandmarkShape::Cylinder => 2.0 * std::f64::consts::PI * self.radius * h,
            LandmarkShape::Box { .. } => 8.0 * self.radius * h,
        }
    }
}

/// Axis-aligned world bounds in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldParams {
    pub landmarks: usize,
    pub extent: Extent,
    /// Minimum gap between landmark footprints, meters.
    pub min_separation: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub height_min: f64,
    pub height_max: f64,
    pub surface_density: f64,
}

impl WorldParams {
    fn validate(&self) -> Result<()> {
        let e = &self.extent;
        if !(e.x_min < e.x_max && e.y_min < e.y_max) {
            return Err(LprError::param("world extent is empty"));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return Err(LprError::param("landmark radii need 0 < min <= max"));
        }
        if !(self.height_min > 0.0 && self.height_min <= self.height_max) {
            return Err(LprError::param("landmark heights need 0 < min <= max"));
        }
        if !(self.surface_density > 0.0) || !(self.min_separation >= 0.0) {
            return Err(LprError::param("surface density must be positive and separation non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub max_range: f64,
    /// Fraction of points dropped, in `[0, 1)`.
    pub dropout: f64,
    /// Standard deviation of the per-coordinate Gaussian noise, meters.
    pub noise: f64,
    /// Points kept per scan at most.
    pub max_points: usize,
}

impl SensorModel {
    pub fn noiseless(max_range: f64) -> Self {
        Self {
            max_range,
            dropout: 0.0,
            noise: 0.0,
            max_points: usize::MAX,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0) || !(0.0..1.0).contains(&self.dropout) || !(self.noise >= 0.0) {
            return Err(LprError::param(format!("invalid sensor model {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct WorldModel {
    pub seed: u64,
    pub extent: Extent,
    pub landmarks: Vec<Landmark>,
    bucket: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

fn bucket_of(x: f64, y: f64, size: f64) -> (i64, i64) {
    ((x / size).floor() as i64, (y / size).floor() as i64)
}

/// Seeds a generator for one scan or landmark from a base seed and a stream.
fn keyed_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Places `params.landmarks` landmarks uniformly with rejection of any whose
/// footprint comes closer than `min_separation` to an earlier one.
pub fn generate_world(seed: u64, params: &WorldParams) -> Result<WorldModel> {
    params.validate()?;
    let e = params.extent;
    let bucket = 2.0 * params.radius_max + params.min_separation;
    let mut rng = keyed_rng(seed, 0);
    let mut landmarks: Vec<Landmark> = Vec::with_capacity(params.landmarks);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for k in 0..params.landmarks {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let radius = rng.random_range(params.radius_min..=params.radius_max);
            let (x_lo, x_hi) = (e.x_min + radius, e.x_max - radius);
            let (y_lo, y_hi) = (e.y_min + radius, e.y_max - radius);
            if x_lo > x_hi || y_lo > y_hi {
                continue;
            }
            let x = rng.random_range(x_lo..=x_hi);
            let y = rng.random_range(y_lo..=y_hi);
            let (bx, by) = bucket_of(x, y, bucket);
            let clear = (bx - 1..=bx + 1)
                .flat_map(|i| (by - 1..=by + 1).map(move |j| (i, j)))
                .filter_map(|b| buckets.get(&b))
                .flatten()
                .all(|&o| {
                    let l = &landmarks[o];
                    (l.x - x).hypot(l.y - y) >= l.radius + radius + params.min_separation
                });
            let height = rng.random_range(params.height_min..=params.height_max);
            let shape = if rng.random::<bool>() {
                LandmarkShape::Cylinder
            } else {
                LandmarkShape::Box {
                    yaw: rng.random_range(0.0..90.0),
                }
            };
            if !clear {
                continue;
            }
            buckets.entry((bx, by)).or_default().push(k);
            landmarks.push(Landmark {
                x,
                y,
                radius,
                z_min: 0.0,
                z_max: height,
                shape,
                density: params.surface_density,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(LprError::param(format!(
                "could not place landmark {k} of {} with separation {} m",
                params.landmarks, params.min_separation
            )));
        }
    }
    Ok(WorldModel {
        seed,
        extent: e,
        landmarks,
        bucket,
        buckets,
    })
}

impl WorldModel {
    /// Surface points of landmark `index` in world coordinates; identical on
    /// every call.
    pub fn surface_points(&self, index: usize) -> Vec<Point3> {
        let l = &self.landmarks[index];
        let mut rng = keyed_rng(self.seed, index as u64 + 1);
        let count = (l.lateral_area() * l.density).round() as usize;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let z = rng.random_range(l.z_min..=l.z_max);
            let (x, y) = match l.shape {
                LandmarkShape::Cylinder => {
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    (l.x + l.radius * a.cos(), l.y + l.radius * a.sin())
                }
                LandmarkShape::Box { yaw } => {
                    let face = rng.random_range(0..4u8);
                    let t = rng.random_range(-l.radius..=l.radius);
                    let (u, v) = match face {
                        0 => (l.radius, t),
                        1 => (-l.radius, t),
                        2 => (t, l.radius),
                        _ => (t, -l.radius),
                    };
                    Pose2D::new(l.x, l.y, yaw).apply(u, v)
                }
            };
            out.push(Point3::with_intensity(x, y, z, rng.random::<f64>()));
        }
        out
    }

    /// Indices of landmarks whose footprint may reach within `range` of
    /// `(x, y)`, ascending.
    fn landmarks_near(&self, x: f64, y: f64, range: f64) -> Vec<usize> {
        let reach = (range / self.bucket).ceil() as i64 + 1;
        let (bx, by) = bucket_of(x, y, self.bucket);
        let mut found: Vec<usize> = (bx - reach..=bx + reach)
            .flat_map(|i| (by - reach..=by + reach).map(move |j| (i, j)))
            .filter_map(|b| self.buckets.get(&b))
            .flatten()
            .copied()
            .filter(|&k| {
                let l = &self.landmarks[k];
                (l.x - x).hypot(l.y - y) <= range + l.radius * std::f64::consts::SQRT_2
            })
            .collect();
        found.sort_unstable();
        found
    }
}

/// Scan seen from `sensor_pose`: landmark points within range, moved into the
/// sensor frame, with seeded dropout and noise.
pub fn render_scan(world: &WorldModel, sensor_pose: &Pose2D, sensor: &SensorModel, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (sensor.noise > 0.0).then(|| Normal::new(0.0, sensor.noise).expect("finite sigma"));
    let to_sensor = sensor_pose.inverse();
    let mut points = Vec::new();
    for k in world.landmarks_near(sensor_pose.x, sensor_pose.y, sensor.max_range) {
        for p in world.surface_points(k) {
            if (p.x - sensor_pose.x).hypot(p.y - sensor_pose.y) > sensor.max_range {
                continue;
            }
            if sensor.dropout > 0.0 && rng.random::<f64>() < sensor.dropout {
                continue;
            }
            let (mut x, mut y, mut z) = (p.x, p.y, p.z);
            if let Some(n) = &noise {
                x += n.sample(&mut rng);
                y += n.sample(&mut rng);
                z += n.sample(&mut rng);
            }
            let (sx, sy) = to_sensor.apply(x, y);
            points.push(Point3::with_intensity(sx, sy, z, p.intensity));
        }
    }
    if points.len() > sensor.max_points {
        let mut keep = sample(&mut rng, points.len(), sensor.max_points).into_vec();
        keep.sort_unstable();
        points = keep.into_iter().map(|i| points[i]).collect();
    }
    PointCloud::sensor(points)
}

/// Shape of a synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkLayout {
    /// Reference scans along the path, before any thinning.
    pub reference_scans: usize,
    /// Distance between consecutive reference scans along x, meters.
    pub scan_spacing: f64,
    pub queries: usize,
    /// Largest query offset from its anchor scan along each axis, meters.
    pub max_offset: f64,
    /// Query yaw offsets are multiples of this step, degrees.
    pub yaw_step: f64,
    pub path_amplitude: f64,
    pub path_wavelength: f64,
    /// Landmarks per square meter.
    pub landmark_density: f64,
    pub min_separation: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub height_min: f64,
    pub height_max: f64,
    pub surface_density: f64,
}

impl BenchmarkLayout {
    pub fn from_config(c: &Config) -> Self {
        Self {
            reference_scans: c.synth_reference_scans,
            scan_spacing: c.synth_scan_spacing,
            queries: c.synth_queries,
            max_offset: c.synth_max_offset,
            yaw_step: c.synth_yaw_step,
            path_amplitude: c.synth_path_amplitude,
            path_wavelength: c.synth_path_wavelength,
            landmark_density: c.synth_landmark_density,
            min_separation: c.synth_min_separation,
            radius_min: c.synth_radius_min,
            radius_max: c.synth_radius_max,
            height_min: c.synth_height_min,
            height_max: c.synth_height_max,
            surface_density: c.synth_surface_density,
        }
    }

    /// Pose of reference scan `k`: a sinusoid along x, heading along its
    /// tangent.
    pub fn path_pose(&self, k: usize) -> Pose2D {
        let x = k as f64 * self.scan_spacing;
        let w = std::f64::consts::TAU / self.path_wavelength;
        let y = self.path_amplitude * (w * x).sin();
        let slope = self.path_amplitude * w * (w * x).cos();
        Pose2D::new(x, y, slope.atan().to_degrees())
    }
}

impl SensorModel {
    pub fn from_config(c: &Config) -> Self {
        Self {
            max_range: c.sensor_range,
            dropout: c.sensor_dropout,
            noise: c.sensor_noise,
            max_points: c.sensor_max_points,
        }
    }
}

/// A query pose with the reference scan it was derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedQuery {
    pub id: u64,
    pub pose: Pose2D,
    pub anchor: u64,
    /// Nearest reference scan and its distance, meters.
    pub nearest: u64,
    pub nearest_distance: f64,
}

/// Poses and world of a benchmark, before rendering.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub world: WorldModel,
    pub references: Vec<(u64, Pose2D)>,
    pub queries: Vec<PlannedQuery>,
}

/// Scan seed of reference (`kind` 0) or query (`kind` 1) scan `id`.
pub fn scan_seed(seed: u64, kind: u64, id: u64) -> u64 {
    seed ^ (kind << 63) ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Lays out the world, the reference path and the query poses.
pub fn plan_benchmark(seed: u64, layout: &BenchmarkLayout, sensor: &SensorModel) -> Result<Benchmark> {
    sensor.validate()?;
    if layout.reference_scans == 0 {
        return Err(LprError::param("benchmark needs at least one reference scan"));
    }
    let references: Vec<(u64, Pose2D)> = (0..layout.reference_scans)
        .map(|k| (k as u64, layout.path_pose(k)))
        .collect();
    let margin = sensor.max_range + layout.max_offset;
    let extent = Extent {
        x_min: -margin,
        x_max: references.last().map_or(0.0, |r| r.1.x) + margin,
        y_min: -layout.path_amplitude - margin,
        y_max: layout.path_amplitude + margin,
    };
    let params = WorldParams {
        landmarks: (layout.landmark_density * extent.area()).round() as usize,
        extent,
        min_separation: layout.min_separation,
        radius_min: layout.radius_min,
        radius_max: layout.radius_max,
        height_min: layout.height_min,
        height_max: layout.height_max,
        surface_density: layout.surface_density,
    };
    let world = generate_world(seed, &params)?;

    let steps = (360.0 / layout.yaw_step).round() as u64;
    let mut rng = keyed_rng(seed, u64::MAX);
    let queries = (0..layout.queries as u64)
        .map(|id| {
            let anchor = rng.random_range(0..references.len());
            let a = references[anchor].1;
            let m = layout.max_offset;
            let (dx, dy) = if m > 0.0 {
                (rng.random_range(-m..=m), rng.random_range(-m..=m))
            } else {
                (0.0, 0.0)
            };
            let dyaw = rng.random_range(0..steps.max(1)) as f64 * layout.yaw_step;
            let pose = Pose2D::new(a.x + dx, a.y + dy, a.yaw + dyaw);
            let (nearest, nearest_distance) = references
                .iter()
                .map(|(rid, rp)| (*rid, rp.distance(&pose)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty references");
            PlannedQuery {
                id,
                pose,
                anchor: anchor as u64,
                nearest,
                nearest_distance,
            }
        })
        .collect();
    Ok(Benchmark {
        world,
        references,
        queries,
    })
}

impl Benchmark {
    pub fn render_reference(&self, id: u64, sensor: &SensorModel, seed: u64) -> PointCloud {
        render_scan(&self.world, &self.references[id as usize].1, sensor, scan_seed(seed, 0, id))
    }

    pub fn render_query(&self, q: &PlannedQuery, sensor: &SensorModel, seed: u64) -> PointCloud {
        render_scan(&self.world, &q.pose, sensor, scan_seed(seed, 1, q.id))
    }
}

/// Counts reported by [`generate_benchmark`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkSummary {
    pub landmarks: usize,
    pub references: usize,
    pub queries: usize,
}

/// Renders a benchmark into `out_dir`: `ref/` and `query/` scan files named
/// `<id:06>.bin`, `ref_poses.csv`, `query_gt.csv` and `associations.csv`.
pub fn generate_benchmark(
    seed: u64,
    layout: &BenchmarkLayout,
    sensor: &SensorModel,
    out_dir: impl AsRef<Path>,
) -> Result<BenchmarkSummary> {
    use rayon::prelude::*;

    let out = out_dir.as_ref();
    let bench = plan_benchmark(seed, layout, sensor)?;
    for sub in ["ref", "query"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| LprError::io(&d, e))?;
    }
    bench.references.par_iter().try_for_each(|(id, _)| {
        let cloud = bench.render_reference(*id, sensor, seed);
        write_pointcloud_bin(out.join("ref").join(format!("{id:06}.bin")), &cloud)
    })?;
    bench.queries.par_iter().try_for_each(|q| {
        let cloud = bench.render_query(q, sensor, seed);
        write_pointcloud_bin(out.join("query").join(format!("{:06}.bin", q.id)), &cloud)
    })?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| LprError::io(&p, e))
    };
    write("ref_poses.csv", format_poses_csv(&bench.references))?;
    let gt: Vec<(u64, Pose2D)> = bench.queries.iter().map(|q| (q.id, q.pose)).collect();
    write("query_gt.csv", format_poses_csv(&gt))?;
    let mut assoc = String::from("query_id,anchor_ref_id,nearest_ref_id,nearest_distance\n");
    for q in &bench.queries {
        assoc.push_str(&format!("{},{},{},{}\n", q.id, q.anchor, q.nearest, q.nearest_distance));
    }
    write("associations.csv", assoc)?;
    Ok(BenchmarkSummary {
        landmarks: bench.world.landmarks.len(),
        references: bench.references.len(),
        queries: bench.queries.len(),
    })
}
