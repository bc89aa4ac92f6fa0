//! `wcert` certifies genuine multipartite entanglement and nonlocal
//! measurement back-action for W-state-type systems from the command
//! line: it reproduces the threshold tables and figure datasets,
//! evaluates both witnesses on declarative state files or photocount
//! files, lists block structures, and runs Monte Carlo shot-noise
//! estimates.
//!
//! Exit codes: 0 after a completed run, 1 for usage errors and invalid
//! inputs, 2 for computations refused by a safety cap, 3 for I/O
//! failures.

mod commands;
mod render;
mod statefile;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use render::Format;

/// Process failure carrying the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Invalid arguments or malformed input files.
    Usage(String),
    /// Computation refused because a safety cap would be exceeded.
    Refused(String),
    /// An input could not be read or an output could not be written.
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Refused(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Refused(m) | Failure::Io(m) => m,
        }
    }
}

impl From<wcert_core::Error> for Failure {
    fn from(e: wcert_core::Error) -> Self {
        match e {
            wcert_core::Error::DimensionCap { .. } | wcert_core::Error::EnumerationCap(_) => {
                Failure::Refused(e.to_string())
            }
            other => Failure::Usage(other.to_string()),
        }
    }
}

/// Witness certification for W-state-type systems.
#[derive(Debug, Parser)]
#[command(
    name = "wcert",
    version,
    about = "Certifies genuine multipartite entanglement and nonlocal measurement back-action \
             for W-state-type systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalOpts,
}

/// Options shared by every subcommand.
#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Weighted tail mass the adaptive Fock cutoff keeps below this target.
    #[arg(long, global = true, default_value_t = 1e-9, value_name = "MASS")]
    pub cutoff_tail: f64,

    /// Residual tolerance for threshold root finding.
    #[arg(long, global = true, default_value_t = 1e-9, value_name = "TOL")]
    pub tol: f64,

    /// Master seed for Monte Carlo sampling streams.
    #[arg(long, global = true, default_value_t = 0x77ce57, value_name = "SEED")]
    pub seed: u64,

    /// Shots per observable for Monte Carlo estimates.
    #[arg(long, global = true, default_value_t = 100_000, value_name = "SHOTS")]
    pub shots: u64,

    /// Output file; stdout when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Output format; tabular subcommands default to csv, reports to json.
    #[arg(long, global = true, value_enum, value_name = "FORMAT")]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Emit a pair-count or threshold table.
    Tables {
        /// Table to emit: I (separable pair maxima), II (entanglement
        /// thresholds), III (nonlocality thresholds).
        #[arg(value_enum)]
        which: TableId,
    },
    /// Emit a figure dataset.
    Figures {
        /// Dataset to emit: 3 (entanglement thresholds over N), 4
        /// (nonlocality thresholds over N), 5 (largest certifiable N over
        /// a thermal occupation grid).
        #[arg(value_enum)]
        which: FigureId,
    },
    /// Evaluate the entanglement witness on a state or photocount file.
    Witness(WitnessArgs),
    /// Evaluate the nonlocality witness on prepared or explicit states.
    Nonlocality(NonlocalityArgs),
    /// List irreducible block structures with their separable pair counts.
    Structures(StructuresArgs),
    /// Run Monte Carlo shot-noise estimates of either witness.
    Mc(McArgs),
}

/// Table selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableId {
    /// Maximal separable pair counts.
    #[value(name = "I", alias = "1", alias = "i")]
    One,
    /// Thermal entanglement thresholds.
    #[value(name = "II", alias = "2", alias = "ii")]
    Two,
    /// Thermal nonlocality thresholds.
    #[value(name = "III", alias = "3", alias = "iii")]
    Three,
}

impl TableId {
    /// Roman-numeral label used in rendered output.
    pub fn label(self) -> &'static str {
        match self {
            TableId::One => "I",
            TableId::Two => "II",
            TableId::Three => "III",
        }
    }
}

/// Figure dataset selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FigureId {
    /// Entanglement thresholds over N at M = N-1, both mode kinds.
    #[value(name = "3")]
    Three,
    /// Nonlocality thresholds over N at M = N-1, both mode kinds.
    #[value(name = "4")]
    Four,
    /// Largest certifiable N over a thermal occupation grid, all four
    /// witness and mode-kind combinations.
    #[value(name = "5")]
    Five,
}

/// Arguments of the witness subcommand.
#[derive(Debug, Args)]
pub struct WitnessArgs {
    /// State description file (JSON).
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "counts",
        conflicts_with = "counts"
    )]
    pub state: Option<PathBuf>,

    /// Photocount record file (JSON), evaluated optically.
    #[arg(long, value_name = "FILE")]
    pub counts: Option<PathBuf>,

    /// Largest block size M of the separability model to refute.
    #[arg(long, short = 'm', value_name = "M")]
    pub max_block: usize,

    /// Evaluation mode for state input; defaults to exact.
    #[arg(long, value_enum)]
    pub mode: Option<WitnessMode>,

    /// Stokes power gain G_S^2 used when forming photocounts.
    #[arg(long, value_name = "GAIN")]
    pub g_s_sq: Option<f64>,

    /// Anti-Stokes power gain G_AS^2 used when forming photocounts.
    #[arg(long, value_name = "GAIN")]
    pub g_as_sq: Option<f64>,
}

/// Witness evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WitnessMode {
    /// Exact moments of the truncated state.
    Exact,
    /// Translate to photocounts first, then evaluate on counts.
    Optical,
    /// Sample photon counting statistics and propagate shot noise.
    Mc,
}

/// Arguments of the nonlocality subcommand.
#[derive(Debug, Args)]
pub struct NonlocalityArgs {
    /// Preparation file: thermal base plus particle addition (JSON).
    #[arg(
        long,
        value_name = "FILE",
        conflicts_with_all = ["base", "prepared"],
        required_unless_present_any = ["base", "prepared"]
    )]
    pub prep: Option<PathBuf>,

    /// Initial-state file, paired with --prepared (JSON).
    #[arg(long, value_name = "FILE", requires = "prepared")]
    pub base: Option<PathBuf>,

    /// Conditioned-state file, paired with --base (JSON).
    #[arg(long, value_name = "FILE", requires = "base")]
    pub prepared: Option<PathBuf>,

    /// Largest block size M of the semilocal model to refute.
    #[arg(long, short = 'm', value_name = "M")]
    pub max_block: usize,
}

/// Arguments of the structures subcommand.
#[derive(Debug, Args)]
pub struct StructuresArgs {
    /// Number of modes.
    #[arg(long, short = 'n', value_name = "N")]
    pub n: usize,

    /// Largest admissible block size M.
    #[arg(long, short = 'm', value_name = "M")]
    pub max_block: usize,
}

/// Arguments of the mc subcommand.
#[derive(Debug, Args)]
pub struct McArgs {
    #[command(subcommand)]
    pub target: McTarget,
}

/// Witness sampled by the mc subcommand.
#[derive(Debug, Subcommand)]
pub enum McTarget {
    /// Sample the entanglement witness observables.
    Witness {
        /// State description file (JSON).
        #[arg(long, value_name = "FILE")]
        state: PathBuf,
        /// Largest block size M of the separability model to refute.
        #[arg(long, short = 'm', value_name = "M")]
        max_block: usize,
    },
    /// Sample the nonlocality witness observables on both states.
    Nonlocality {
        /// Preparation file: thermal base plus particle addition (JSON).
        #[arg(long, value_name = "FILE")]
        prep: PathBuf,
        /// Largest block size M of the semilocal model to refute.
        #[arg(long, short = 'm', value_name = "M")]
        max_block: usize,
    },
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    let text = match &cli.command {
        Command::Tables { which } => commands::tables(*which, g)?,
        Command::Figures { which } => commands::figures(*which, g)?,
        Command::Witness(args) => commands::witness(args, g)?,
        Command::Nonlocality(args) => commands::nonlocality(args, g)?,
        Command::Structures(args) => commands::structures(args, g)?,
        Command::Mc(args) => commands::mc(args, g)?,
    };
    render::emit(&text, g.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap routes help to stdout and errors to stderr.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}
