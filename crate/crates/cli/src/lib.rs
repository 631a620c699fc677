//! Command implementations behind the `lpr` binary. Each command returns a
//! value for the caller to print, or a [`CliError`] carrying its exit code.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lpr_core::config::Config;
use lpr_core::descriptor::dump_grid;
use lpr_core::error::LprError;
use lpr_core::geometry::{load_pointcloud, load_poses_csv, Pose2D};
use lpr_core::pose_metrics::{aggregate, report_csv, EvalRecord, EvalReport, PoseEstimate};
use lpr_core::search::{build_reference_index_with, localize_verbose, matched_surface, ReferenceIndex};
use lpr_core::synth::{generate_benchmark, BenchmarkLayout, BenchmarkSummary, SensorModel};

pub mod selfcheck;

/// Exit status classes of the binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or configuration: exit 1.
    Usage,
    /// Missing, malformed or inconsistent input data: exit 2.
    Data,
    /// A self-check failed: exit 3.
    Check,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Check => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ErrorKind::Usage,
            error: error.into(),
        }
    }

    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ErrorKind::Data,
            error: error.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl From<LprError> for CliError {
    fn from(e: LprError) -> Self {
        match e {
            LprError::Config(_) => Self::usage(e),
            _ => Self::data(e),
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, CliError>;

/// Layers a config file (or `base`, or the defaults) and `key=value`
/// overrides. Every failure here is a usage error.
pub fn resolve_config(file: Option<&Path>, overrides: &[String], base: Option<&Config>) -> CmdResult<Config> {
    let config = match (file, base) {
        (Some(path), _) => Config::load(path).map_err(CliError::usage)?,
        (None, Some(c)) => c.clone(),
        (None, None) => Config::default(),
    };
    config
        .with_overrides(overrides.iter().map(String::as_str))
        .map_err(CliError::usage)
}

/// Loads an index and builds its search workspace up front.
pub fn load_index(dir: &Path) -> CmdResult<ReferenceIndex> {
    let index = ReferenceIndex::load(dir)?;
    index.prepare();
    Ok(index)
}

/// Scan files of a directory keyed by the numeric file stem. Both `.bin` and
/// ASCII scans are accepted; a repeated id is an error.
pub fn scan_files(dir: &Path) -> CmdResult<BTreeMap<u64, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::data(LprError::Io {
        path: dir.to_path_buf(),
        source: e,
    }))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::data(LprError::Io {
                path: dir.to_path_buf(),
                source: e,
            }))?
            .path();
        if !path.is_file() {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        if let Some(prev) = out.insert(id, path.clone()) {
            return Err(CliError::data(anyhow::anyhow!(
                "scan id {id} appears twice: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub scans: usize,
    pub references: usize,
    pub seconds: f64,
}

pub fn cmd_build_index(config: &Config, scan_dir: &Path, poses_csv: &Path, out_dir: &Path) -> CmdResult<BuildReport> {
    let start = Instant::now();
    let files = scan_files(scan_dir)?;
    if files.is_empty() {
        return Err(CliError::data(anyhow::anyhow!("no scan files in {}", scan_dir.display())));
    }
    let poses = load_poses_csv(poses_csv)?;
    if let Some((id, _)) = poses.iter().find(|(id, _)| !files.contains_key(id)) {
        return Err(CliError::data(LprError::Missing(format!(
            "no scan file for pose id {id} in {}",
            scan_dir.display()
        ))));
    }
    let index = build_reference_index_with(&poses, config, |id| load_pointcloud(&files[&id]))?;
    index.save(out_dir)?;
    Ok(BuildReport {
        scans: poses.len(),
        references: index.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// One machine-readable line: `ref_id x y yaw score`.
pub fn format_estimate(e: &PoseEstimate) -> String {
    format!(
        "{} {:.6} {:.6} {:.6} {:.6}",
        e.reference_id, e.pose.x, e.pose.y, e.pose.yaw, e.score
    )
}

/// Localizes one scan. With `dump_surface`, the matched high-resolution
/// correlation surface is written there as a text grid.
pub fn cmd_localize(
    config: &Config,
    index: &ReferenceIndex,
    scan_path: &Path,
    dump_surface: Option<&Path>,
) -> CmdResult<PoseEstimate> {
    let cloud = load_pointcloud(scan_path)?;
    let run = localize_verbose(index, &cloud, config)?;
    if run.estimate.low_confidence {
        log::warn!("{}: query has no occupied cells, estimate is arbitrary", scan_path.display());
    }
    if let Some(path) = dump_surface {
        let surface = matched_surface(index, &run.query.high, &run.matched)?;
        fs::write(path, dump_grid(&surface.values, index.high_cell_size())).map_err(|e| {
            CliError::data(LprError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })?;
    }
    Ok(run.estimate)
}

/// Summary file written next to an evaluation report.
pub fn summary_path(out_csv: &Path) -> PathBuf {
    out_csv.with_extension("summary.txt")
}

/// Localizes every scan of `query_dir` in id order and writes the report CSV
/// and its summary.
pub fn cmd_evaluate(
    config: &Config,
    index: &ReferenceIndex,
    query_dir: &Path,
    gt_csv: &Path,
    out_csv: &Path,
) -> CmdResult<EvalReport> {
    let gt: BTreeMap<u64, Pose2D> = load_poses_csv(gt_csv)?.into_iter().collect();
    let files = scan_files(query_dir)?;
    if files.is_empty() {
        return Err(CliError::data(anyhow::anyhow!("no query scans in {}", query_dir.display())));
    }
    if let Some(id) = files.keys().find(|id| !gt.contains_key(id)) {
        return Err(CliError::data(LprError::Missing(format!(
            "no ground-truth row for query {id} in {}",
            gt_csv.display()
        ))));
    }
    let mut records = Vec::with_capacity(files.len());
    for (id, path) in &files {
        let cloud = load_pointcloud(path)?;
        let estimate = localize_verbose(index, &cloud, config)?.estimate;
        let scored = if config.score_uncorrected {
            estimate.uncorrected()
        } else {
            estimate.pose
        };
        records.push(EvalRecord::scoring(*id, estimate, scored, gt[id], config.recall_threshold));
    }
    let report = aggregate(&records, config.recall_threshold, &config.success_criteria())?;
    let write = |path: &Path, text: String| {
        fs::write(path, text).map_err(|e| {
            CliError::data(LprError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })
    };
    write(out_csv, report_csv(&records))?;
    write(&summary_path(out_csv), report.summary())?;
    Ok(report)
}

pub fn cmd_synth(config: &Config, out_dir: &Path) -> CmdResult<BenchmarkSummary> {
    let summary = generate_benchmark(
        config.synth_seed,
        &BenchmarkLayout::from_config(config),
        &SensorModel::from_config(config),
        out_dir,
    )?;
    if summary.landmarks == 0 {
        log::warn!("synthetic world has no landmarks; every scan is empty");
    }
    Ok(summary)
}
