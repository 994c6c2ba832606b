use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod artifact;
mod commands;

use ozone_core::microsim::Mode;

#[derive(Parser)]
#[command(name = "ozone", version, about = "Fixed-latency execution toolchain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// If-convert every function of an IR file.
    Transform {
        input: PathBuf,
        /// Write here instead of standard output.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check control and memory rules for fixed-latency execution.
    Verify {
        input: PathBuf,
        #[command(flatten)]
        layout: LayoutArgs,
        /// Also write the violations as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a kernel over a set of inputs.
    Simulate(SimulateArgs),
    /// Timing attack on a kernel's key.
    Attack(AttackArgs),
    /// Baseline and Ozone cycles, leakage and slowdown for every kernel.
    Report(ReportArgs),
    /// Write the kernel catalog as IR text and sample input vectors.
    Kernels {
        #[arg(long, default_value = "kernels")]
        dir: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
pub struct LayoutArgs {
    #[arg(long, value_parser = parse_u64)]
    pub ispm_base: Option<u64>,
    #[arg(long, value_parser = parse_u64)]
    pub ispm_size: Option<u64>,
    #[arg(long, value_parser = parse_u64)]
    pub dspm_base: Option<u64>,
    #[arg(long, value_parser = parse_u64)]
    pub dspm_size: Option<u64>,
    #[arg(long, value_parser = parse_u64)]
    pub stack_base: Option<u64>,
    #[arg(long, value_parser = parse_u64)]
    pub stack_size: Option<u64>,
    /// Take the scratchpads from a config file; the flags above override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Microarchitecture config (key = value lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Baseline,
    Ozone,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Ozone => Mode::Ozone,
        }
    }
}

#[derive(Args, Clone)]
pub struct SimulateArgs {
    #[arg(long)]
    pub kernel: String,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub common: Common,
    /// Number of random inputs.
    #[arg(long, default_value_t = 256)]
    pub count: usize,
    /// Sweep this data byte through 0..=255 under a key drawn from the seed.
    #[arg(long, conflicts_with = "inputs")]
    pub sweep_byte: Option<usize>,
    /// Hex CSV input vectors, one per line.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    /// Ozone watchdog budget: a cycle count or `auto` to calibrate.
    #[arg(long, default_value = "auto")]
    pub declared_cycles: String,
    /// Baseline only: run each input once untimed before measuring.
    #[arg(long)]
    pub warm: bool,
}

#[derive(Args, Clone)]
pub struct AttackArgs {
    #[arg(long, default_value = "aes-cbc")]
    pub kernel: String,
    #[arg(long, value_enum, default_value = "baseline")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 64)]
    pub trials: usize,
    /// Attack one key byte instead of all sixteen.
    #[arg(long)]
    pub sweep_byte: Option<usize>,
    /// Succeed only if every position shows no timing signal.
    #[arg(long)]
    pub expect_no_signal: bool,
}

#[derive(Args, Clone)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Random inputs per kernel and mode.
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(&h.replace('_', ""), 16),
        None => s.replace('_', "").parse(),
    };
    r.map_err(|e| format!("`{s}`: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Transform { input, output } => commands::transform(&input, output.as_deref()),
        Command::Verify { input, layout, csv } => commands::verify(&input, &layout, csv.as_deref()),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Attack(a) => commands::attack(&a),
        Command::Report(a) => commands::report(&a),
        Command::Kernels { dir } => commands::kernels(&dir),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ozone: {f}");
            ExitCode::from(f.code())
        }
    }
}
