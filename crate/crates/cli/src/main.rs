mod commands;
mod manifest;

use std::io::{IsTerminal, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::RunManifest;

/// Layer characterization, scheduling and simulation for heterogeneous edge
/// NN accelerators.
#[derive(Parser, Debug)]
#[command(name = "mensa-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run-manifest log that every invocation appends to.
    #[arg(long, global = true, default_value = "mensa-runs.jsonl")]
    manifest: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchetypeArg {
    Cnn,
    Lstm,
    Transducer,
    Rcnn,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output file; standard output when omitted.
    #[arg(short, long)]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Technology table (JSON) replacing the platform's coefficients.
    #[arg(long)]
    pub tech: Option<PathBuf>,

    /// Energy weight (1/W) of the phase-2 mapping objective.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,

    /// Stream the LSTM hidden matrix from DRAM every timestep on the decoupled
    /// dataflow.
    #[arg(long)]
    pub hidden_refetch: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic model file.
    Synth {
        #[arg(long, value_enum)]
        archetype: ArchetypeArg,
        #[arg(long)]
        depth: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        scale: u32,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Per-unit MACs, footprints and intensities.
    Characterize {
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Cluster assignment of every unit.
    Cluster {
        model: PathBuf,
        #[arg(long, default_value = "mensa")]
        platform: String,
        #[command(flatten)]
        common: Common,
    },
    /// Dataflow traffic and cycle counters of every unit on every compatible
    /// accelerator.
    Cost {
        model: PathBuf,
        #[arg(long, default_value = "mensa")]
        platform: String,
        #[command(flatten)]
        common: Common,
    },
    /// Two-phase mapping of units to accelerators.
    Schedule {
        model: PathBuf,
        #[arg(long, default_value = "mensa")]
        platform: String,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate one model on one platform (JSON report).
    Simulate {
        model: PathBuf,
        #[arg(long, default_value = "mensa")]
        platform: String,
        /// Also write the per-unit trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare platforms, normalized to the first one.
    Compare {
        #[arg(required = true)]
        models: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "baseline,base-hb,mensa")]
        platforms: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Throughput and energy roofline sweeps.
    Roofline {
        #[arg(long, default_value = "mensa")]
        platform: String,
        /// Smallest intensity, as a power of two.
        #[arg(long, default_value_t = -4, allow_negative_numbers = true)]
        min_exp: i32,
        /// Largest intensity, as a power of two.
        #[arg(long, default_value_t = 16, allow_negative_numbers = true)]
        max_exp: i32,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure classes, mapped to exit codes 2 and 3.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Input(e) | Failure::Internal(e) => format!("{e:#}"),
        }
    }
}

fn report_error(msg: &str) {
    let styled = std::env::var_os("MENSA_SIM_NO_COLOR").is_none() && std::io::stderr().is_terminal();
    let mut err = std::io::stderr().lock();
    if styled {
        let _ = writeln!(err, "\x1b[1;31merror:\x1b[0m {msg}");
    } else {
        let _ = writeln!(err, "error: {msg}");
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let name = argv.get(1).cloned().unwrap_or_default();
    let mut manifest = RunManifest::new(&name, argv);
    let result = commands::run(cli.command, &mut manifest);
    let code = match &result {
        Ok(()) => 0,
        Err(f) => {
            report_error(&f.message());
            f.code()
        }
    };
    manifest.exit_code = code;
    if let Err(e) = manifest.append_to(&cli.manifest) {
        report_error(&format!("could not append run manifest to {}: {e}", cli.manifest.display()));
    }
    ExitCode::from(code as u8)
}
