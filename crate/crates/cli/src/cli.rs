//! Command-line flags. Every flag overrides the matching config-file field.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "pepsvqe", version, about = "Tensor-network pre-optimization of brickwall SO(4) circuits for the TFIM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize circuit parameters with L-BFGS against a PEPS (or exact) energy.
    Optimize(OptimizeArgs),
    /// Variance scan of the energy around a warm start; locates r_max.
    Diagnose(DiagnoseArgs),
    /// Error-versus-time benchmark over bond dimensions and its power-law fit.
    Scaling(ScalingArgs),
    /// Ground-state reference energy by imaginary-time evolution.
    IteReference(IteArgs),
    /// Quick self-checks of the simulator against exact oracles.
    Validate(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML config file (or a persisted `metadata.json`).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// `square:RxC` or `heavyhex:N`.
    #[arg(long)]
    pub lattice: Option<String>,
    /// Transverse field (default: the lattice family's critical value).
    #[arg(long, allow_hyphen_values = true)]
    pub g: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: number of cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// PEPS bond dimension.
    #[arg(long)]
    pub chi: Option<usize>,
    /// Boundary bond dimension rule: `square` or `fixed:K`.
    #[arg(long = "chie-rule", value_name = "RULE")]
    pub chi_e_rule: Option<String>,
    /// Expectation method: auto | su | boundary-mps | statevector.
    #[arg(long)]
    pub method: Option<String>,
    /// SU-regauging after each layer (true|false).
    #[arg(long)]
    pub regauge: Option<bool>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Circuit depth D.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Comma-separated depths, optimized in order with warm-start chaining.
    #[arg(long = "depth-list", value_delimiter = ',')]
    pub depth_list: Option<Vec<usize>>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub gtol: Option<f64>,
    #[arg(long)]
    pub ftol: Option<f64>,
    /// zeros | small-random | uniform-pi | warm:PATH
    #[arg(long)]
    pub init: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct WarmArgs {
    /// Checkpoint with the warm-start parameters (otherwise D* is optimized first).
    #[arg(long, value_name = "PATH")]
    pub warm: Option<PathBuf>,
    /// Warm-start depth D* when no checkpoint is given.
    #[arg(long = "warm-depth")]
    pub warm_depth: Option<usize>,
    /// Total circuit depth D.
    #[arg(long = "depth-total")]
    pub depth_total: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub warm: WarmArgs,
    /// `log:LO:HI:N` or a comma-separated list of half-widths.
    #[arg(long = "r-grid")]
    pub r_grid: Option<String>,
    /// Samples per grid point.
    #[arg(long)]
    pub samples: Option<usize>,
    /// 200 samples per grid point.
    #[arg(long)]
    pub fast: bool,
    /// Scan evaluator: auto | su | boundary-mps | statevector.
    #[arg(long)]
    pub evaluator: Option<String>,
    /// Also record mean squared gradient norms.
    #[arg(long)]
    pub gradients: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ScalingArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub warm: WarmArgs,
    /// Hypercube half-width of the sampled parameters.
    #[arg(long)]
    pub rmax: Option<f64>,
    /// Take r_max from a `rmax.json` written by `diagnose`.
    #[arg(long = "rmax-from", value_name = "PATH", conflicts_with = "rmax")]
    pub rmax_from: Option<PathBuf>,
    /// Number of sampled parameter vectors.
    #[arg(long)]
    pub points: Option<usize>,
    /// Comma-separated bond dimensions.
    #[arg(long = "chi-list", value_delimiter = ',')]
    pub chi_list: Option<Vec<usize>>,
    /// statevector | converged-tn
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct IteArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated, decreasing imaginary-time steps.
    #[arg(long = "dtau-schedule", value_delimiter = ',')]
    pub dtau_schedule: Option<Vec<f64>>,
    #[arg(long = "max-sweeps")]
    pub max_sweeps: Option<usize>,
    #[arg(long = "energy-tol")]
    pub energy_tol: Option<f64>,
}
