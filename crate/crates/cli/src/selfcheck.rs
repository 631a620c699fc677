//! Built-in checks: FFT correlation against the direct oracle, metric
//! fixtures and a miniature end-to-end localization.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lpr_core::config::Config;
use lpr_core::correlation::{
    argmax_surface, correlate_direct, correlate_fft, rotation_sweep, CorrelationSurface, RotationFamily,
};
use lpr_core::descriptor::{rotate_descriptor, BevDescriptor, Resolution};
use lpr_core::error::Result;
use lpr_core::geometry::Pose2D;
use lpr_core::grid::Grid;
use lpr_core::pose_metrics::{rre, rte, shift_to_pose};
use lpr_core::search::{build_reference_index, localize};
use lpr_core::synth::{generate_world, render_scan, Extent, SensorModel, WorldParams};

/// Edge lengths of the random oracle pairs: powers of two, an odd prime and
/// a small size.
pub const ORACLE_EDGES: [usize; 4] = [8, 16, 31, 32];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Options {
    /// Test hook: perturbs every FFT surface so the oracle check must fail.
    pub fft_fault: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {} ({:.2} s): {}", self.name, self.seconds, self.detail)
    }
}

/// A descriptor of uniform random values in `[-1, 1)`.
pub fn random_descriptor(rng: &mut impl Rng, rows: usize, cols: usize) -> BevDescriptor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    BevDescriptor {
        grid: Grid::from_vec(rows, cols, data).expect("length matches shape"),
        cell_size: 0.3,
        resolution: Resolution::High,
        occupied_value: 1.0,
        unoccupied_value: 0.0,
    }
}

/// Largest `|fft − direct| / (1 + max|direct|)` over `pairs` seeded random
/// pairs with edges drawn from [`ORACLE_EDGES`].
pub fn fft_oracle_error(
    seed: u64,
    pairs: usize,
    fft: impl Fn(&BevDescriptor, &BevDescriptor) -> Result<CorrelationSurface>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let mut edge = || ORACLE_EDGES[rng.random_range(0..ORACLE_EDGES.len())];
        let (qh, qw, rh, rw) = (edge(), edge(), edge(), edge());
        let q = random_descriptor(&mut rng, qh, qw);
        let r = random_descriptor(&mut rng, rh, rw);
        let direct = correlate_direct(&q, &r)?.values;
        let fast = fft(&q, &r)?.values;
        let scale = 1.0 + direct.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = direct
            .as_slice()
            .iter()
            .zip(fast.as_slice())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}

fn timed(name: &'static str, f: impl FnOnce() -> std::result::Result<String, String>) -> Check {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Check {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn fft_check(options: Options) -> Check {
    timed("fft-vs-direct", || {
        let fft = |q: &BevDescriptor, r: &BevDescriptor| {
            let mut s = correlate_fft(q, r)?;
            if options.fft_fault {
                s.values[(0, 0)] += 1.0;
            }
            Ok(s)
        };
        let worst = fft_oracle_error(0x5e1f, 60, fft).map_err(|e| e.to_string())?;
        let detail = format!("60 pairs, worst relative error {worst:.2e}");
        if worst <= 1e-6 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

fn sweep_check() -> Check {
    timed("rotation-sweep", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5e20);
        let q = random_descriptor(&mut rng, 16, 16);
        let r = random_descriptor(&mut rng, 24, 24);
        let family = RotationFamily::new(&q, 30.0).map_err(|e| e.to_string())?;
        let swept = rotation_sweep(&family, &r).map_err(|e| e.to_string())?.best;
        let mut best: Option<(f64, f64)> = None;
        for theta in (0..12).map(|t| t as f64 * 30.0) {
            let s = correlate_direct(&rotate_descriptor(&q, theta), &r).map_err(|e| e.to_string())?;
            let peak = argmax_surface(&s).ok_or("empty surface")?;
            if best.is_none_or(|(_, b)| peak.score > b) {
                best = Some((theta, peak.score));
            }
        }
        let (theta, score) = best.ok_or("no angles")?;
        let detail = format!("best angle {} (direct {theta})", swept.theta);
        if swept.theta == theta && (swept.score - score).abs() <= 1e-9 * (1.0 + score.abs()) {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

fn metrics_check() -> Check {
    timed("metrics", || {
        let wrap = rre(&Pose2D::new(0.0, 0.0, 10.0), &Pose2D::new(0.0, 0.0, 350.0));
        let pose = shift_to_pose(&Pose2D::new(2.0, 3.0, 180.0), (1.0, 1.0), 30.0);
        let dist = rte(&Pose2D::new(0.0, 0.0, 0.0), &Pose2D::new(3.0, 4.0, 0.0));
        let ok = (wrap - 20.0).abs() < 1e-12
            && (pose.x - 1.0).abs() < 1e-12
            && (pose.y - 2.0).abs() < 1e-12
            && (pose.yaw + 150.0).abs() < 1e-12
            && dist == 5.0;
        let detail = format!("rre {wrap}, corrected pose ({:.3}, {:.3}, {:.1}), rte {dist}", pose.x, pose.y, pose.yaw);
        if ok {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

fn localization_check() -> Check {
    timed("end-to-end", || {
        let extent = Extent {
            x_min: -35.0,
            x_max: 95.0,
            y_min: -35.0,
            y_max: 35.0,
        };
        let world = generate_world(
            0x5e21,
            &WorldParams {
                landmarks: (0.02 * extent.area()) as usize,
                extent,
                min_separation: 1.0,
                radius_min: 0.3,
                radius_max: 1.0,
                height_min: 3.0,
                height_max: 6.0,
                surface_density: 40.0,
            },
        )
        .map_err(|e| e.to_string())?;
        let sensor = SensorModel::noiseless(30.0);
        let config = Config::default();
        let scans: Vec<_> = (0..3u64)
            .map(|k| {
                let pose = Pose2D::new(30.0 * k as f64, 0.0, 20.0 * k as f64);
                (k, render_scan(&world, &pose, &sensor, 0), pose)
            })
            .collect();
        let index = build_reference_index(&scans, &config).map_err(|e| e.to_string())?;
        let truth = scans[1].2.compose(&Pose2D::new(1.5, -1.0, 40.0));
        let e = localize(&index, &render_scan(&world, &truth, &sensor, 1), &config).map_err(|e| e.to_string())?;
        let (t, r) = (rte(&e.pose, &truth), rre(&e.pose, &truth));
        let detail = format!("reference {}, rte {t:.3} m, rre {r:.2} deg", e.reference_id);
        if e.reference_id == 1 && t <= 2f64.sqrt() * config.voxel_size && r <= config.rotation_step / 2.0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

/// Runs every check in order.
pub fn run(options: Options) -> Vec<Check> {
    vec![fft_check(options), sweep_check(), metrics_check(), localization_check()]
}
