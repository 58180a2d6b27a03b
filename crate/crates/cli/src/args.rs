//! Command-line surface and the `--config` expansion.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "rmt-eed",
    version,
    about = "Random-matrix early event detection for multivariate sensor streams",
    arg_required_else_help = true,
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario as CSV.
    Simulate(SimulateArgs),
    /// Sweep moving windows, compute LES indicators and extract events.
    Analyze(AnalyzeArgs),
    /// Print theoretical E, D and coefficient of variation per test function.
    Theory(TheoryArgs),
    /// Pilot-sensor PCA baseline.
    #[command(name = "pca-baseline")]
    PcaBaseline(PcaArgs),
    /// Interpolate indicators onto map frames.
    Mapframes(MapArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Analyze(_) => "analyze",
            Command::Theory(_) => "theory",
            Command::PcaBaseline(_) => "pca-baseline",
            Command::Mapframes(_) => "mapframes",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Simulate(a) => a.seed,
            Command::Analyze(a) => a.seed,
            _ => None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SimulateArgs {
    /// Built-in scenario.
    #[arg(long, value_parser = ["table3"], conflicts_with = "scenario")]
    pub preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long = "n", visible_alias = "N", default_value_t = 118)]
    pub n: usize,
    #[arg(long = "t", visible_alias = "T", default_value_t = 1500)]
    pub t: usize,
    /// Base seed (falls back to RMT_EED_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV; the partition (presets) and run.json go beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Region partition JSON.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Window length.
    #[arg(long = "T", visible_alias = "t", default_value_t = 240)]
    pub window: usize,
    /// Ring product depth.
    #[arg(long = "L", visible_alias = "l", default_value_t = 1)]
    pub depth: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Comma-separated test functions.
    #[arg(long, default_value = "MSR")]
    pub functions: String,
    #[arg(long, default_value_t = 3.0)]
    pub k: f64,
    /// `theoretical` or `calib:START:END`.
    #[arg(long, default_value = "theoretical")]
    pub reference: String,
    /// Null draws for the theoretical variance.
    #[arg(long, default_value_t = 200)]
    pub mc_draws: usize,
    /// Missing cells: error, forward-fill or row-mean.
    #[arg(long, default_value = "error")]
    pub missing: String,
    /// Constant rows in a window: error or jitter.
    #[arg(long, default_value = "error")]
    pub degenerate: String,
    /// Comma-separated node ids to keep.
    #[arg(long)]
    pub nodes: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub gap: usize,
    #[arg(long, default_value_t = 3)]
    pub min_duration: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TheoryArgs {
    #[arg(long = "N", visible_alias = "n")]
    pub n: usize,
    #[arg(long = "T", visible_alias = "t")]
    pub t: usize,
    #[arg(long = "L", visible_alias = "l", default_value_t = 1)]
    pub depth: usize,
    /// Fourth cumulant of the entries (0 for Gaussian).
    #[arg(long, default_value_t = 0.0)]
    pub kappa4: f64,
    /// Also write theory.json and run.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct PcaArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Training samples START:END (end exclusive).
    #[arg(long)]
    pub train: String,
    /// Principal subspace dimension (default: 95% of variance).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long = "m-prime", default_value_t = 3)]
    pub m_prime: usize,
    #[arg(long, default_value_t = 3.0)]
    pub k: f64,
    /// Samples per judged window.
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    #[arg(long, default_value = "error")]
    pub missing: String,
    #[arg(long, default_value_t = 2)]
    pub gap: usize,
    #[arg(long, default_value_t = 3)]
    pub min_duration: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct MapArgs {
    /// Directory written by `analyze`.
    #[arg(long)]
    pub report: PathBuf,
    /// Node layout JSON (bare map or partition file with "layout").
    #[arg(long)]
    pub layout: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    /// Function whose series is mapped (default: first in the report).
    #[arg(long)]
    pub function: Option<String>,
    /// eta or raw.
    #[arg(long, default_value = "eta")]
    pub quantity: String,
    #[arg(long, default_value_t = 2.0)]
    pub power: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Replaces `--config FILE` with the flags it lists, placed right after the
/// subcommand so explicit flags (later on the line) override them.
///
/// The file is a JSON object `{"flag": value}`; `true` becomes a bare flag,
/// `false`/`null` are dropped and arrays are comma-joined.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            let path = it.next().ok_or("--config needs a file")?;
            config = Some(PathBuf::from(path));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut flags = Vec::new();
    for (key, value) in obj {
        let flag = OsString::from(format!("--{key}"));
        let text = match value {
            serde_json::Value::Bool(true) => {
                flags.push(flag);
                continue;
            }
            serde_json::Value::Bool(false) | serde_json::Value::Null => continue,
            serde_json::Value::String(s) => s,
            serde_json::Value::Array(items) => items
                .iter()
                .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()))
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        };
        flags.push(flag);
        flags.push(OsString::from(text));
    }
    let mut sub = rest.len();
    let mut i = 1;
    while i < rest.len() {
        let a = rest[i].to_string_lossy();
        if a == "--jobs" || a == "--log-level" {
            i += 2;
        } else if a.starts_with('-') {
            i += 1;
        } else {
            sub = i + 1;
            break;
        }
    }
    rest.splice(sub..sub, flags);
    Ok(rest)
}
