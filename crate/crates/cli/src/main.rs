//! `sef`: command-line front-end for election fingerprints and the
//! comparative voter-rigging test.

mod commands;
mod error;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::{CliError, ErrorReport};

#[derive(Parser)]
#[command(
    name = "sef",
    version,
    about = "Standardized election fingerprints and a comparative voter-rigging test"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an election file against the record rules and inclusion criteria.
    Validate(ValidateArgs),
    /// Unit count, mean and standard deviation of electors per election.
    Summarize(SummarizeArgs),
    /// Z-scores, elliptical outliers and the smoothed fingerprint grid.
    Sef(SefArgs),
    /// Comparative rigging test over three or more elections.
    Test(TestArgs),
    /// Cumulative winner share with units added from largest to smallest.
    Cumulative(CumulativeArgs),
    /// Generate a synthetic election in the input file format.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
pub struct InputOpts {
    /// Field delimiter of election files.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

#[derive(Args, Clone)]
pub struct StrataOpts {
    /// Include each unit in its own neighborhood statistics.
    #[arg(long)]
    pub inclusive_strata: bool,
    /// Skip the 95% elliptical outlier removal.
    #[arg(long)]
    pub no_ellipse: bool,
}

#[derive(Args)]
pub struct ValidateArgs {
    pub input: PathBuf,
    /// Election name; defaults to the file name up to its first dot.
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub input_opts: InputOpts,
    /// Directory for the validation report and the canonical election JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SummarizeArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub input_opts: InputOpts,
    /// Directory for summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SefArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub input_opts: InputOpts,
    #[command(flatten)]
    pub strata: StrataOpts,
    /// Histogram bins per axis.
    #[arg(long, default_value_t = sef_core::sef::DEFAULT_BINS)]
    pub bins: usize,
    /// Histogram range on both axes, as `lo:hi`.
    #[arg(long, default_value = "-5:5", allow_hyphen_values = true)]
    pub range: String,
    /// Number of contour levels.
    #[arg(long, default_value_t = 10)]
    pub levels: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TestArgs {
    /// Election files or Z-score files (detected by their header).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub input_opts: InputOpts,
    #[command(flatten)]
    pub strata: StrataOpts,
    /// Significance level of the Tau test and of reference-set membership.
    #[arg(long, default_value_t = sef_core::rigging::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Percentile grid as `start:step:end`.
    #[arg(long, default_value = "0.5:0.5:90")]
    pub p_grid: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CumulativeArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub input_opts: InputOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SynthArgs {
    /// JSON generator config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rig the smallest 10% of units by 1.5 neighborhood standard deviations
    /// unless the config already sets rigging.
    #[arg(long)]
    pub rigged: bool,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate(a) => commands::validate(&a),
        Command::Summarize(a) => commands::summarize(&a),
        Command::Sef(a) => commands::sef(&a),
        Command::Test(a) => commands::test(&a),
        Command::Cumulative(a) => commands::cumulative(&a),
        Command::Synth(a) => commands::synth(&a),
    }
}

fn fail(code: &str, message: String, exit: u8) -> ExitCode {
    let report = ErrorReport::new(code, message);
    eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
    ExitCode::from(exit)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("INVALID_ARGUMENTS", e.render().to_string().trim_end().to_string(), 2),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), e.to_string(), e.exit_code() as u8),
    }
}
