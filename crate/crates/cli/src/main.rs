//! `hypersolve` command line: run experiments from TOML configs, compare runs, inspect checkpoints.
//!
//! Exit codes: 0 success, 1 bad input (config, arguments, incompatible runs), 2 runtime failure.

mod compare;
mod config;
mod experiments;
mod inspect;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::output::{RunDir, Summary};

#[derive(Parser)]
#[command(
    name = "hypersolve",
    version,
    about = "Hypersolver pre-training and control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config (or a previous run's summary.json).
    Run {
        config: PathBuf,
        /// Use the full-scale settings from the config's `[full]` table.
        #[arg(long)]
        full: bool,
        /// Write into this directory instead of the configured `output_dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare the metrics of finished runs.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Print the structure of a checkpoint as JSON.
    Inspect { checkpoint: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            full,
            out_dir,
        } => run(&config, full, out_dir),
        Command::Compare { runs, out } => compare_runs(&runs, &out),
        Command::Inspect { checkpoint } => match inspect::inspect(&checkpoint) {
            Ok(v) => {
                println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}

/// `--out-dir` wins, then `HYPERSOLVE_OUT_DIR/<last component of output_dir>`, then `output_dir`.
fn output_root(configured: &Path, flag: Option<PathBuf>) -> PathBuf {
    if let Some(p) = flag {
        return p;
    }
    match std::env::var_os("HYPERSOLVE_OUT_DIR") {
        Some(root) if !root.is_empty() => {
            PathBuf::from(root).join(configured.file_name().unwrap_or(configured.as_os_str()))
        }
        _ => configured.to_path_buf(),
    }
}

fn run(path: &Path, full: bool, out_dir: Option<PathBuf>) -> ExitCode {
    let loaded = match config::load(path, full) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cfg = loaded.config;
    let root = output_root(&cfg.output_dir, out_dir);
    let dir = match RunDir::create(root.clone()) {
        Ok(d) => d,
        Err(e) => {
            eprintln!(
                "error: stage `setup` failed: cannot create {}: {e}",
                root.display()
            );
            return ExitCode::from(2);
        }
    };
    let start = Instant::now();
    let outcome = match experiments::run(&cfg, &dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let summary = Summary {
        kind: cfg.kind.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        git_describe: output::git_describe(),
        config: cfg,
        compat: outcome.compat,
        metrics: outcome.metrics,
        results: outcome.results,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    if let Err(e) = dir.write_summary(&summary) {
        eprintln!("error: stage `write` failed: {e}");
        return ExitCode::from(2);
    }
    print!("{}", output::bundle_table(&summary.metrics).to_csv_string());
    eprintln!("wrote {} in {:.1}s", root.display(), summary.wall_time_s);
    ExitCode::SUCCESS
}

fn compare_runs(runs: &[PathBuf], out: &Path) -> ExitCode {
    let rows = match compare::compare(runs) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let table = compare::table(&rows);
    let written = std::fs::create_dir_all(out)
        .and_then(|_| table.write(&out.join("comparison.csv")))
        .and_then(|_| {
            let json = serde_json::to_string_pretty(&rows).map_err(std::io::Error::other)?;
            std::fs::write(out.join("comparison.json"), json + "\n")
        });
    if let Err(e) = written {
        eprintln!("error: cannot write {}: {e}", out.display());
        return ExitCode::from(2);
    }
    print!("{}", table.to_csv_string());
    ExitCode::SUCCESS
}
