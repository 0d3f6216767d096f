use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use collider_bell::runner::{
    apply_override, compare, run_with, write_outputs, ConfigError, ReportDocument, RunConfig, RunError, RunOptions,
};

#[derive(Parser)]
#[command(name = "collider-bell", version, about = "Collider-bias models of Bell correlations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario from a config file.
    Run {
        /// TOML or JSON config; a JSON report's manifest works too.
        #[arg(long)]
        config: PathBuf,
        /// Override any config key by dotted path, e.g. params.p_a=0.05.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report path (stdout when omitted).
        #[arg(long)]
        out: Option<String>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Also write every trial, discarded ones included, to <out>.raw.csv.
        #[arg(long)]
        emit_raw: bool,
        /// Worker threads (default: all cores). Results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        /// Record the wall-clock time in the manifest.
        #[arg(long)]
        timestamp: bool,
    },
    /// Compare two JSON reports setting pair by setting pair.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, set, seed, out, format, emit_raw, threads, timestamp } => {
            match run_cmd(config, set, seed, out, format, emit_raw, threads, timestamp) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::Compare { a, b, tolerance } => compare_cmd(&a, &b, tolerance),
    };
    ExitCode::from(code as u8)
}

#[allow(clippy::too_many_arguments)]
fn run_cmd(
    config: PathBuf,
    set: Vec<String>,
    seed: Option<u64>,
    out: Option<String>,
    format: Option<Format>,
    emit_raw: bool,
    threads: Option<usize>,
    timestamp: bool,
) -> Result<(), RunError> {
    let mut tree = RunConfig::load_tree(&config)?;
    for s in &set {
        apply_override(&mut tree, s)?;
    }
    if let Some(seed) = seed {
        set_key(&mut tree, "seed", Value::from(seed))?;
    }
    if let Some(out) = out {
        set_key(&mut tree, "output_path", Value::from(out))?;
    }
    if let Some(f) = format {
        let name = match f {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        set_key(&mut tree, "output_format", Value::from(name))?;
    }
    if emit_raw {
        set_key(&mut tree, "emit_raw", Value::Bool(true))?;
    }
    let cfg = RunConfig::from_value(tree)?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(ConfigError::new("--threads", "must be positive").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError::new("--threads", e.to_string()))?;
    }
    let artifacts = run_with(&cfg, RunOptions { timestamp })?;
    let written = write_outputs(&artifacts)?;
    for p in [written.report, written.summary, written.raw].into_iter().flatten() {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn set_key(tree: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    tree.as_object_mut()
        .ok_or_else(|| ConfigError::new("config", "top level must be a table"))?
        .insert(key.to_string(), value);
    Ok(())
}

fn load_report(path: &PathBuf) -> Result<ReportDocument, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    ReportDocument::from_json(&text).map_err(|e| format!("{} is not a JSON report: {e}", path.display()))
}

fn compare_cmd(a: &PathBuf, b: &PathBuf, tolerance: f64) -> i32 {
    let (ra, rb) = match (load_report(a), load_report(b)) {
        (Ok(ra), Ok(rb)) => (ra, rb),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match compare(&ra, &rb, tolerance) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            if summary.within_tolerance {
                0
            } else {
                eprintln!("max TV {} / max E delta {} exceed tolerance {tolerance}", summary.max_tv, summary.max_e_delta);
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
