use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lpr_cli::{
    cmd_build_index, cmd_evaluate, cmd_localize, cmd_synth, format_estimate, load_index, resolve_config,
    selfcheck, summary_path, CliError, CmdResult, ErrorKind,
};

/// LiDAR place recognition with BEV matched filtering.
#[derive(Parser)]
#[command(name = "lpr", version)]
struct Cli {
    /// Config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a reference index from scans and their poses.
    BuildIndex {
        scan_dir: PathBuf,
        poses_csv: PathBuf,
        out_dir: PathBuf,
    },
    /// Localize one scan against an index.
    Localize {
        index_dir: PathBuf,
        scan: PathBuf,
        /// Write the matched correlation surface as a text grid.
        #[arg(long, value_name = "PATH")]
        dump_surface: Option<PathBuf>,
    },
    /// Localize a directory of query scans and score them against ground truth.
    Evaluate {
        index_dir: PathBuf,
        query_dir: PathBuf,
        gt_csv: PathBuf,
        out_csv: PathBuf,
    },
    /// Generate a synthetic benchmark dataset.
    Synth { out_dir: PathBuf },
    /// Run the built-in correctness checks.
    Selfcheck {
        #[arg(long, hide = true)]
        inject_fft_fault: bool,
    },
}

/// Worker threads from `LPR_THREADS`; 0 or unset leaves rayon's default.
fn configure_threads() -> CmdResult<()> {
    let Ok(value) = std::env::var("LPR_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::usage(anyhow::anyhow!("LPR_THREADS must be a non-negative integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(CliError::usage)
}

fn run(cli: Cli) -> CmdResult<()> {
    configure_threads()?;
    let overrides = &cli.overrides;
    match cli.command {
        Command::BuildIndex {
            scan_dir,
            poses_csv,
            out_dir,
        } => {
            let config = resolve_config(cli.config.as_deref(), overrides, None)?;
            let r = cmd_build_index(&config, &scan_dir, &poses_csv, &out_dir)?;
            println!(
                "indexed {} of {} scans into {} in {:.2} s",
                r.references,
                r.scans,
                out_dir.display(),
                r.seconds
            );
        }
        Command::Localize {
            index_dir,
            scan,
            dump_surface,
        } => {
            let index = load_index(&index_dir)?;
            let config = resolve_config(cli.config.as_deref(), overrides, Some(index.config()))?;
            let e = cmd_localize(&config, &index, &scan, dump_surface.as_deref())?;
            println!("{}", format_estimate(&e));
        }
        Command::Evaluate {
            index_dir,
            query_dir,
            gt_csv,
            out_csv,
        } => {
            let index = load_index(&index_dir)?;
            let config = resolve_config(cli.config.as_deref(), overrides, Some(index.config()))?;
            let report = cmd_evaluate(&config, &index, &query_dir, &gt_csv, &out_csv)?;
            print!("{}", report.summary());
            println!("report: {}", out_csv.display());
            println!("summary: {}", summary_path(&out_csv).display());
        }
        Command::Synth { out_dir } => {
            let config = resolve_config(cli.config.as_deref(), overrides, None)?;
            let s = cmd_synth(&config, &out_dir)?;
            println!(
                "wrote {} reference and {} query scans of a {}-landmark world to {}",
                s.references,
                s.queries,
                s.landmarks,
                out_dir.display()
            );
        }
        Command::Selfcheck { inject_fft_fault } => {
            let checks = selfcheck::run(selfcheck::Options {
                fft_fault: inject_fft_fault,
            });
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError {
                    kind: ErrorKind::Check,
                    error: anyhow::anyhow!("{failed} of {} checks failed", checks.len()),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code())
        }
    }
}
