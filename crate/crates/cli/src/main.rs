//! `usct`: phantoms, simulation, inversion, evaluation and rendering.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 for runtime or
//! solver failures. Errors are reported on stderr as one JSON object.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod image;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use usct_core::BreastType;

use config::{CbsFlags, FileConfig, StepName};

#[derive(Debug, Parser)]
#[command(name = "usct", version, about = "Frequency-domain ultrasound computed tomography toolkit")]
struct Cli {
    /// TOML file with default parameters; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel solves.
    #[arg(long, global = true, env = "USCT_THREADS")]
    threads: Option<usize>,
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate breast phantoms as sound speed maps with previews.
    Phantom(PhantomArgs),
    /// Simulate ring measurements for one phantom.
    Simulate(SimulateArgs),
    /// Reconstruct a sound speed map from measurements.
    Invert(InvertArgs),
    /// Compare a reconstruction or field against a reference.
    Evaluate(EvaluateArgs),
    /// Render a map, field or tensor as grayscale PGM images.
    Render(RenderArgs),
    /// Generate a resumable corpus of phantoms, wavefields and tensors.
    Export(ExportArgs),
}

fn parse_breast_type(s: &str) -> Result<BreastType, String> {
    s.to_ascii_uppercase().parse::<BreastType>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Default, Args)]
pub struct GridFlags {
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    /// Grid spacing in meters.
    #[arg(long)]
    pub h: Option<f64>,
    /// Radius of the region where the medium may differ from water, meters.
    #[arg(long)]
    pub roi_radius: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RingFlags {
    /// Number of ring transducers; every element transmits once.
    #[arg(long)]
    pub sources: Option<usize>,
    /// Ring diameter in meters.
    #[arg(long)]
    pub ring_diameter: Option<f64>,
    /// Frequencies in Hz, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub freqs: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Breast density category.
    #[arg(long = "type", value_parser = parse_breast_type, default_value = "HET")]
    pub breast_type: BreastType,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridFlags,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Sound speed map to simulate.
    #[arg(long)]
    pub phantom: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub ring: RingFlags,
    /// Write every wavefield as a dataset entry.
    #[arg(long)]
    pub dump_fields: bool,
    /// Only write the manifest describing the run.
    #[arg(long)]
    pub plan_only: bool,
    #[command(flatten)]
    pub cbs: CbsFlags,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    /// Measurement tensor to invert.
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Starting model; water by default.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Frequency schedule in Hz; all tensor frequencies by default.
    #[arg(long, value_delimiter = ',')]
    pub freqs: Option<Vec<f64>>,
    /// Descent iterations per frequency.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, value_enum)]
    pub step_rule: Option<StepName>,
    /// First update of each frequency moves the model by this fraction of c0.
    #[arg(long)]
    pub initial_step: Option<f64>,
    #[arg(long)]
    pub min_speed: Option<f64>,
    #[arg(long)]
    pub max_speed: Option<f64>,
    /// Transmit events to use, comma separated; all by default.
    #[arg(long, value_delimiter = ',')]
    pub source_subset: Option<Vec<usize>>,
    #[command(flatten)]
    pub cbs: CbsFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub recon: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output image. Complex inputs produce `<stem>_abs.pgm` and `<stem>_re.pgm`.
    #[arg(long)]
    pub out: PathBuf,
    /// Frequency index for tensors.
    #[arg(long, default_value_t = 0)]
    pub freq_index: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long = "type", value_parser = parse_breast_type, default_value = "HET")]
    pub breast_type: BreastType,
    /// Number of phantoms.
    #[arg(long, default_value_t = 1)]
    pub phantoms: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridFlags,
    #[command(flatten)]
    pub ring: RingFlags,
    #[command(flatten)]
    pub cbs: CbsFlags,
}

/// Failure classes that map to exit codes.
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<usct_core::Error> for Failure {
    fn from(e: usct_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn runtime_json(e: &anyhow::Error) -> serde_json::Value {
    let core = e.chain().find_map(|c| c.downcast_ref::<usct_core::Error>());
    let mut v = json!({ "error": "runtime", "message": format!("{e:#}") });
    if let Some(err) = core {
        let kind = format!("{err:?}");
        let kind = kind.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string();
        v["kind"] = json!(kind);
        if let usct_core::Error::NotConverged { source_index, frequency_index, iterations, final_update } = err {
            v["source_index"] = json!(source_index);
            v["frequency_index"] = json!(frequency_index);
            v["iterations"] = json!(iterations);
            v["final_update"] = json!(final_update);
        }
    }
    v
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = FileConfig::load(cli.config.as_deref()).map_err(|e| Failure::Usage(format!("{e:#}")))?;
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(anyhow::anyhow!("thread pool: {e}")))?;
    }
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    match cli.command {
        Command::Phantom(a) => commands::phantom(&a, &file, seed),
        Command::Simulate(a) => commands::simulate(&a, &file, seed),
        Command::Invert(a) => commands::invert(&a, &file),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Render(a) => commands::render(&a),
        Command::Export(a) => commands::export(&a, &file, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            eprintln!("{}", json!({ "error": "usage", "message": msg.trim() }));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("{}", json!({ "error": "usage", "message": msg }));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("{}", runtime_json(&e));
            ExitCode::from(2)
        }
    }
}
