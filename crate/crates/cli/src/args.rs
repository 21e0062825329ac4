use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Loss landscapes, toy training runs and numerical checks for the DPO
/// family of preference losses.
#[derive(Debug, Parser)]
#[command(name = "prefopt", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate loss grids over (π(y_w|x), π(y_l|x)).
    Contour(ContourArgs),
    /// Train the toy MLP policy with one or more losses.
    Toy(ToyArgs),
    /// Run numerical verification suites.
    Verify(VerifyArgs),
    /// Train one toy run per hyperparameter value.
    Sweep(SweepArgs),
}

/// Flags accepted by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// NLL weight; a comma-separated list for `sweep`.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    /// DPOP penalty weight; a comma-separated list for `sweep`.
    #[arg(long, allow_hyphen_values = true)]
    pub penalty: Option<String>,
    /// BDPO mixture weight; a comma-separated list for `sweep`.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Backtrack every step until the objective decreases.
    #[arg(long)]
    pub line_search: bool,
    /// Also write SVG renderings of contour grids.
    #[arg(long)]
    pub svg: bool,
    /// JSON or TOML file with defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ContourArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Preset: 1 = four losses, 2 = NLL-weight sweep.
    #[arg(long, conflicts_with = "loss")]
    pub figure: Option<u8>,
    /// Evaluate a single loss instead of a preset.
    #[arg(long)]
    pub loss: Option<String>,
    /// Reference probabilities `r_w,r_l`.
    #[arg(long = "ref", value_name = "R_W,R_L")]
    pub reference: Option<String>,
    #[arg(long)]
    pub pw_min: Option<f64>,
    #[arg(long)]
    pub pw_max: Option<f64>,
    #[arg(long)]
    pub pl_min: Option<f64>,
    #[arg(long)]
    pub pl_max: Option<f64>,
    /// Samples per axis, `N` or `N_PW,N_PL`.
    #[arg(long)]
    pub resolution: Option<String>,
    /// Mask cells with p_w + p_l > 1.
    #[arg(long)]
    pub mask_simplex: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskModeArg {
    MainText,
    AppendixB1,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated losses (default: all four).
    #[arg(long, conflicts_with = "loss")]
    pub losses: Option<String>,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long, value_enum)]
    pub task_mode: Option<TaskModeArg>,
    #[arg(long)]
    pub trace_every: Option<usize>,
    /// `adam` or `gd`.
    #[arg(long)]
    pub optimizer: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Theorem1,
    Theorem2,
    Corollary1,
    Gradients,
    Backprop,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(value_enum)]
    pub suite: Suite,
    /// Number of seeds for the seeded suites.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Random points per loss for the gradient suite.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub trace_every: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<String>,
}
