use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Format, MethodName, ModelFamily};

#[derive(Debug, Parser)]
#[command(name = "benchsim", version, about = "Exact simulation, density inversion and real-world pricing under the minimal market model")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every command. Precedence: preset or config file,
/// then these flags.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "FILE", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Embedded configuration: stylized, bivariate or wishart.
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true, value_name = "N")]
    pub paths: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodName>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Model family; switching family loads its stylized parameters.
    #[arg(long, global = true, value_enum)]
    pub model: Option<ModelFamily>,
    /// Horizon or maturity in years.
    #[arg(long = "T", global = true, value_name = "YEARS")]
    pub maturity: Option<f64>,
    /// Strike of the priced or validated payoff.
    #[arg(long, global = true)]
    pub strike: Option<f64>,
    /// Bivariate correlation; selects the bivariate model.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate paths and write path and summary files.
    Simulate(SimulateArgs),
    /// Price a payoff and write an estimate and a ledger row.
    Price(PriceArgs),
    /// Invert the joint density of (Y_T, ∫dt/Y_t) on a grid.
    Density(DensityArgs),
    /// Classify a drift against the three symmetry families.
    CheckSymmetry(SymmetryArgs),
    /// Run oracle suites and report pass/fail per check.
    Validate(ValidateArgs),
    /// Print the JSON schema of the run configuration.
    Schema,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    /// Wishart drift multiple; selects the Wishart model.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Wishart dimension; selects the Wishart model.
    #[arg(long)]
    pub d: Option<usize>,
    /// Time steps per path.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PayoffArg {
    IndexCall,
    IndexPut,
    Zcb,
    VolPut,
    VolCall,
    FxCall,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PriceArgs {
    #[arg(long, value_enum)]
    pub payoff: Option<PayoffArg>,
    /// MLMC target root mean square error.
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DensityArgs {
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub nv: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum DriftArg {
    /// BESQ(δ): γ = 1, b = 2, f = δ.
    Besq,
    /// dY = (1 − ηY)dt + √Y dW killed at rate μ/Y.
    SquareRoot,
    /// u_t = b u_xx.
    Heat,
    /// γ = 1, b = 2, f(x) = c·x.
    Linear,
}

#[derive(Debug, Clone, Args)]
pub struct SymmetryArgs {
    #[arg(long, value_enum)]
    pub drift: DriftArg,
    #[arg(long, default_value_t = 4.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Normalization,
    Moments,
    Symmetry,
    CrossMethod,
    FxOracle,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(value_enum)]
    pub suite: Suite,
}
