use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcal_core::binning::{BinningMode, BinningScheme, DEFAULT_BINS};
use pcal_core::calibrators::CalibratorKind;
use pcal_core::report::ReportFormat;
use pcal_core::resample::DEFAULT_REPEATS;

#[derive(Debug, Parser)]
#[command(
    name = "pcal",
    version,
    about = "Calibration metrics for pronoun-resolution confidence scores",
    after_help = "Exit codes: 0 success, 1 usage, 2 data validation, 3 numerical failure.\n\
                  Set RUST_LOG (e.g. RUST_LOG=info) to change log verbosity."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Metric report (ECE, MacroCE, ICE, Brier, Gender-ECE, human alignment)
    /// per model and dataset.
    Evaluate(CommonArgs),
    /// Fit a post-hoc calibrator on a validation split and report test metrics
    /// before and after.
    Calibrate(CalibrateArgs),
    /// Reliability diagram (SVG) and bin table (CSV) per model and dataset.
    Diagram(CommonArgs),
    /// ECE mean and standard deviation over repeated subsamples.
    Ablate(AblateArgs),
    /// Check record files and print a manifest per model and dataset.
    Validate(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BinningArg {
    EqualWidth,
    EqualSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Table,
    Machine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Beta,
    Isotonic,
    Platt,
    Temperature,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Probability-record files (one JSON object per line).
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,

    /// Number of confidence bins.
    #[arg(long, default_value_t = DEFAULT_BINS, value_parser = parse_bins)]
    pub bins: usize,

    #[arg(long, value_enum, default_value = "equal-width")]
    pub binning: BinningArg,

    /// Output directory. Without it, results go to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "table")]
    pub format: FormatArg,
}

fn parse_bins(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(m) => Ok(m),
        Err(e) => Err(e.to_string()),
    }
}

impl CommonArgs {
    pub fn scheme(&self) -> BinningScheme {
        let mode = match self.binning {
            BinningArg::EqualWidth => BinningMode::EqualWidth,
            BinningArg::EqualSize => BinningMode::EqualSize,
        };
        BinningScheme {
            mode,
            bins: self.bins,
        }
    }

    pub fn report_format(&self) -> ReportFormat {
        match self.format {
            FormatArg::Table => ReportFormat::Table,
            FormatArg::Machine => ReportFormat::Machine,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Calibrator family to fit on the validation split.
    #[arg(long, value_enum, required_unless_present = "load")]
    pub method: Option<MethodArg>,

    /// Apply a saved calibrator record instead of fitting one.
    #[arg(long, conflicts_with = "method")]
    pub load: Option<PathBuf>,

    #[arg(long)]
    pub val_count: usize,

    #[arg(long)]
    pub test_count: usize,

    /// Seed of the validation/test shuffle.
    #[arg(long)]
    pub seed: u64,
}

impl CalibrateArgs {
    pub fn kind(&self) -> Option<CalibratorKind> {
        self.method.map(|m| match m {
            MethodArg::Beta => CalibratorKind::Beta,
            MethodArg::Isotonic => CalibratorKind::Isotonic,
            MethodArg::Platt => CalibratorKind::Platt,
            MethodArg::Temperature => CalibratorKind::Temperature,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Subset sizes, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = pcal_core::resample::DEFAULT_SIZES)]
    pub sizes: Vec<usize>,

    /// Draws per size (at least 2).
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    pub repeats: usize,

    #[arg(long)]
    pub seed: u64,
}
