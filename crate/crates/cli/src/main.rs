#![allow(clippy::neg_cmp_op_on_partial_ord)]
mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ldmc::McError;

#[derive(Parser, Debug)]
#[command(
    name = "ldmc",
    version,
    about = "Low-degree multicalibration: train, audit, diagnose"
)]
pub struct Cli {
    /// Output format for reports written to standard output.
    #[arg(long, value_enum, global = true, default_value_t = Format::Text)]
    pub format: Format,

    /// Seed for data generation, chunking, and sweeps.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with a planted fstar column.
    Gen(GenArgs),
    /// Boost a base predictor until the audit passes.
    Train(TrainArgs),
    /// Audit a predictor; exits 1 when the largest violation exceeds --alpha.
    Audit(AuditArgs),
    /// Moment sandwiches, confusion matrices, and covariance flags against fstar.
    Diagnose(DiagnoseArgs),
    /// Compare MA, MC2, and MC-full boosting over sizes and seeds.
    Compare(CompareArgs),
    /// Reproduce the four-point regression counterexample.
    Counterexample(CounterexampleArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Planted,
    Adversarial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LabelModeArg {
    Sampled,
    Exact,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// JSON synthetic spec.
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Class count for the planted preset.
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Sample count for presets.
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = LabelModeArg::Sampled)]
    pub label_mode: LabelModeArg,
    /// Print the resolved spec as JSON and exit.
    #[arg(long)]
    pub print_spec: bool,
    /// Destination CSV.
    #[arg(long, required_unless_present = "print_spec")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset CSV (`x*`, `y`, optional `w`, optional `fstar*`).
    #[arg(long)]
    pub data: PathBuf,
    /// Class count, when it cannot be inferred from the file.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Predict all class probabilities even for binary data.
    #[arg(long)]
    pub vector: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ClassArgs {
    /// Calibration class: `cols:0,1`, `edges:0,1`, `stumps:COL:t1,t2`, inline JSON, or `@file.json`.
    #[arg(long = "class")]
    pub class: String,
}

#[derive(Args, Debug, Clone)]
pub struct FamilyArgs {
    /// Weight family: ma, degree, interval, lipschitz, inline JSON, or `@file.json`.
    #[arg(long, default_value = "degree")]
    pub family: String,
    /// Degree k of the polynomial family (default 2).
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Approximation radius of the Lipschitz basis.
    #[arg(long)]
    pub basis_eta: Option<f64>,
    /// Largest Lipschitz basis the command may enumerate.
    #[arg(long)]
    pub basis_cap: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub class: ClassArgs,
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub alpha: f64,
    /// Step size (default alpha / 2).
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Consume a fresh chunk of the data per update.
    #[arg(long)]
    pub chunks: Option<usize>,
    #[arg(long, default_value = "exhaustive")]
    pub learner: String,
    /// Starting predictor: `half`, `columns:START`, or `l2`.
    #[arg(long, default_value = "half")]
    pub base: String,
    /// Renormalize vector predictions onto the simplex when reporting.
    #[arg(long)]
    pub simplex: bool,
    /// Destination for the trained predictor JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Destination for the per-update trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub class: ClassArgs,
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Predictor JSON, or `fstar` to audit the stored ground truth.
    #[arg(long)]
    pub predictor: String,
    /// Gate: exit 1 when the largest violation exceeds this.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Sampled,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub class: ClassArgs,
    /// Predictor JSON, or `fstar`.
    #[arg(long)]
    pub predictor: String,
    /// Highest moment order checked.
    #[arg(long, default_value_t = 2)]
    pub degree: usize,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    /// Skip groups lighter than this (default 2 alpha).
    #[arg(long)]
    pub min_mass: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// JSON comparison config (spec, sizes, seeds, alphas).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Destination for the long-format CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CounterexampleArgs {
    /// Mass on each `x1 = 1` point (1/6 gives the base example).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Also write the dataset CSV here.
    #[arg(long)]
    pub write_data: Option<PathBuf>,
    /// Also write the least-squares fit as predictor JSON here.
    #[arg(long)]
    pub write_predictor: Option<PathBuf>,
}

fn exit_code(e: &McError) -> u8 {
    match e {
        McError::NonTermination { .. } | McError::NoConvergence { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
