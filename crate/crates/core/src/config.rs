//! Flat `key = value` configuration shared by every command.
//!
//! Blank lines and `#` comments are ignored, keys are case-sensitive and
//! unknown or repeated keys are rejected. [`Config::canonical`] renders every
//! key in a fixed order, which is what index manifests echo.

use std::path::Path;
use std::str::FromStr;

use crate::correlation::sweep_angles;
use crate::descriptor::DescriptorParams;
use crate::error::{LprError, Result};
use crate::geometry::CropWindow;
use crate::pose_metrics::SuccessCriteria;

macro_rules! config_fields {
    ($($(#[$doc:meta])* $name:ident: $ty:ty = $default:expr;)*) => {
        /// Every tunable of the pipeline, the synthetic generator included.
        #[derive(Debug, Clone, PartialEq)]
        pub struct Config {
            $($(#[$doc])* pub $name: $ty,)*
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $($name: $default,)* }
            }
        }

        impl Config {
            /// All recognised keys, in canonical order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name),)*];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($name) => {
                        self.$name = parse_value::<$ty>(key, value)?;
                    })*
                    _ => return Err(LprError::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// `(key, value)` pairs in canonical order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($name), self.$name.to_string()),)*]
            }
        }
    };
}

config_fields! {
    /// Half-extent of the crop window along x, meters.
    window_x: f64 = 18.0;
    /// Half-extent of the crop window along y, meters.
    window_y: f64 = 18.0;
    height_min: f64 = 1.0;
    height_max: f64 = 3.0;
    intensity_min: f64 = f64::NEG_INFINITY;
    voxel_size: f64 = 0.3;
    density_threshold: u32 = 2;
    unoccupied_weight: f64 = -0.15;
    patch_size: usize = 10;
    patch_max_occupied: usize = 20;
    pool_size: usize = 2;
    /// Seed of the reference patch thinning.
    rng_seed: u64 = 0;
    /// Rotation sweep increment, degrees.
    rotation_step: f64 = 10.0;
    /// Number of global-stage candidates re-ranked at high resolution.
    top_n: usize = 2;
    /// Minimum distance between consecutive kept references, meters.
    reference_spacing: f64 = 2.0;
    recall_threshold: f64 = 3.0;
    sr_max_rte: f64 = 2.0;
    sr_max_rre: f64 = 5.0;
    /// Score the matched reference position instead of the corrected pose.
    score_uncorrected: bool = false;
    synth_seed: u64 = 1;
    synth_reference_scans: usize = 200;
    synth_scan_spacing: f64 = 1.0;
    synth_queries: usize = 50;
    synth_max_offset: f64 = 4.0;
    synth_yaw_step: f64 = 10.0;
    synth_path_amplitude: f64 = 6.0;
    synth_path_wavelength: f64 = 80.0;
    /// Landmarks per square meter of world area.
    synth_landmark_density: f64 = 0.02;
    synth_min_separation: f64 = 1.0;
    synth_radius_min: f64 = 0.3;
    synth_radius_max: f64 = 1.0;
    synth_height_min: f64 = 3.0;
    synth_height_max: f64 = 6.0;
    /// Sampled points per square meter of landmark surface.
    synth_surface_density: f64 = 40.0;
    sensor_range: f64 = 30.0;
    sensor_dropout: f64 = 0.0;
    sensor_noise: f64 = 0.0;
    sensor_max_points: usize = 200_000;
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| LprError::Config(format!("invalid value `{value}` for `{key}`")))
}

impl Config {
    /// Parses config text on top of the defaults. `origin` names the source
    /// in error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| LprError::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value).map_err(|e| err(e.to_string()))?;
            seen.push(key);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LprError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Applies `key=value` overrides, then validates.
    pub fn with_overrides<'a>(mut self, overrides: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| LprError::Config(format!("override `{item}` is not key=value")))?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()?;
        Ok(self)
    }

    /// One `key = value` line per key, in canonical order.
    pub fn canonical(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn crop_window(&self) -> CropWindow {
        CropWindow {
            wx: self.window_x,
            wy: self.window_y,
            h1: self.height_min,
            h2: self.height_max,
            intensity_min: self.intensity_min,
        }
    }

    pub fn descriptor_params(&self) -> DescriptorParams {
        DescriptorParams {
            density_threshold: self.density_threshold,
            unoccupied_weight: self.unoccupied_weight,
            patch_size: self.patch_size,
            patch_max_occupied: self.patch_max_occupied,
            pool_size: self.pool_size,
            rng_seed: self.rng_seed,
        }
    }

    pub fn success_criteria(&self) -> SuccessCriteria {
        SuccessCriteria {
            max_rte: self.sr_max_rte,
            max_rre: self.sr_max_rre,
        }
    }

    /// Keys whose values shape the descriptors; an index and the queries run
    /// against it must agree on all of them.
    pub const DESCRIPTOR_KEYS: &'static [&'static str] = &[
        "window_x",
        "window_y",
        "height_min",
        "height_max",
        "intensity_min",
        "voxel_size",
        "density_threshold",
        "pool_size",
    ];

    /// Names of descriptor keys on which `self` and `other` disagree.
    pub fn descriptor_mismatches(&self, other: &Config) -> Vec<&'static str> {
        let (a, b) = (self.entries(), other.entries());
        a.iter()
            .zip(&b)
            .filter(|((k, va), (_, vb))| Self::DESCRIPTOR_KEYS.contains(k) && va != vb)
            .map(|((k, _), _)| *k)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LprError::Config(msg));
        self.crop_window()
            .validate()
            .map_err(|e| LprError::Config(e.to_string()))?;
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad(format!("voxel_size must be positive, got {}", self.voxel_size));
        }
        self.descriptor_params()
            .validate()
            .map_err(|e| LprError::Config(e.to_string()))?;
        sweep_angles(self.rotation_step).map_err(|e| LprError::Config(e.to_string()))?;
        if self.top_n == 0 {
            return bad("top_n must be at least 1".into());
        }
        for (key, v) in [
            ("reference_spacing", self.reference_spacing),
            ("synth_scan_spacing", self.synth_scan_spacing),
            ("synth_max_offset", self.synth_max_offset),
            ("synth_path_amplitude", self.synth_path_amplitude),
            ("synth_landmark_density", self.synth_landmark_density),
            ("synth_min_separation", self.synth_min_separation),
            ("sensor_noise", self.sensor_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{key} must be finite and non-negative, got {v}"));
            }
        }
        for (key, v) in [
            ("recall_threshold", self.recall_threshold),
            ("sr_max_rte", self.sr_max_rte),
            ("sr_max_rre", self.sr_max_rre),
            ("synth_path_wavelength", self.synth_path_wavelength),
            ("synth_radius_min", self.synth_radius_min),
            ("synth_height_min", self.synth_height_min),
            ("synth_surface_density", self.synth_surface_density),
            ("sensor_range", self.sensor_range),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{key} must be positive, got {v}"));
            }
        }
        if self.synth_radius_max < self.synth_radius_min {
            return bad("synth_radius_max must be at least synth_radius_min".into());
        }
        if self.synth_height_max < self.synth_height_min {
            return bad("synth_height_max must be at least synth_height_min".into());
        }
        sweep_angles(self.synth_yaw_step).map_err(|e| LprError::Config(format!("synth_yaw_step: {e}")))?;
        if !(0.0..1.0).contains(&self.sensor_dropout) {
            return bad(format!("sensor_dropout must be in [0, 1), got {}", self.sensor_dropout));
        }
        Ok(())
    }
}
