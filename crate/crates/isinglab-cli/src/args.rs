//! Command-line surface. Every argument struct derives both `clap::Args`
//! and serde traits: the same types are parsed from the command line and
//! round-tripped through run manifests, so a manifest is always a complete,
//! re-executable record of a run.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "isinglab",
    version,
    about = "Simulation and inverse inference for asynchronous kinetic Ising \
             models and epistatic Wright-Fisher dynamics",
    after_help = "Exit codes: 0 success, 2 malformed request, 3 numerical \
                  failure (diagnostics JSON written next to the output). \
                  Set ISINGLAB_THREADS to bound worker-pool parallelism."
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Serialize, Deserialize, Clone)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Cmd {
    /// Draw a random-coupling model and write it as JSON.
    Gen(GenArgs),
    /// Run asynchronous spin dynamics on a model.
    Simulate(SimulateArgs),
    /// Reconstruct fields and couplings from data.
    Infer(InferArgs),
    /// Score a reconstruction against a reference model.
    Eval(EvalArgs),
    /// Wright-Fisher evolution and fitness reconstruction.
    #[command(subcommand)]
    Popgen(PopgenCmd),
    /// Turn recorded event or volume CSV data into spin configurations.
    #[command(subcommand)]
    Binarize(BinarizeCmd),
    /// Reconstruction-error curves across a parameter axis.
    Sweep(SweepArgs),
    /// Re-execute a previously recorded run.
    RerunFromManifest(RerunArgs),
}

#[derive(Args, Serialize, Deserialize, Clone)]
pub struct GenArgs {
    /// Number of spins.
    #[arg(long = "L")]
    pub l: usize,
    /// Coupling scale: off-diagonal entries have variance g²/L.
    #[arg(long, allow_hyphen_values = true)]
    pub g: f64,
    /// Symmetry mix: 0 symmetric, 1 fully asymmetric.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub k: f64,
    #[arg(long)]
    pub seed: u64,
    /// Draw uniform fields in [theta-lo, theta-hi] (default: zero fields).
    #[arg(long, allow_hyphen_values = true, requires = "theta_hi")]
    pub theta_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true, requires = "theta_lo")]
    pub theta_hi: Option<f64>,
    /// Seed for the field draw (default: seed + 1).
    #[arg(long)]
    pub theta_seed: Option<u64>,
    /// Output model file (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, PartialEq, Eq, Debug)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    /// Exact event-driven continuous-time simulation.
    Gillespie,
    /// Discrete steps; each spin flips with probability ω δt.
    PerSpinBernoulli,
    /// Discrete steps; each spin is heat-bath resampled with probability γ δt.
    RandomPick,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, PartialEq, Eq, Debug)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    AllUp,
    AllDown,
    /// Independent fair ±1 per spin, drawn from init-seed.
    Random,
}

#[derive(Args, Serialize, Deserialize, Clone)]
pub struct SimulateArgs {
    /// Model file written by `gen` (or any model JSON).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = SchemeArg::Gillespie)]
    pub scheme: SchemeArg,
    /// Flip-attempt rate γ.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Grid step for the discrete schemes (requires γ δt ≤ 0.1).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Simulated duration.
    #[arg(long)]
    pub t_end: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    pub init: InitArg,
    /// Seed for the random initial configuration (default: seed + 1).
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Output trajectory file.
    #[arg(long)]
    pub out: PathBuf,
    /// Additionally sample configurations into a table file.
    #[arg(long, requires_all = ["n_snapshots", "snapshot_interval"])]
    pub snapshots_out: Option<PathBuf>,
    #[arg(long)]
    pub n_snapshots: Option<usize>,
    #[arg(long)]
    pub snapshot_interval: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub snapshot_burn_in: f64,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, PartialEq, Eq, Debug)]
#[serde(rename_all = "kebab-case")]
pub enum Dc0Arg {
    /// Exact event-based limit of the correlation derivative (unbiased).
    EventLimit,
    /// Least-squares slope over lags {0, 0.2, 0.4, 0.6}/γ (biased low on
    /// curved decays; kept for comparison with grid-style analyses).
    LinearFit,
}

#[derive(Args, Serialize, Deserialize, Clone)]
pub struct InferArgs {
    /// One of: nmf, tap, plm, bm, asyn-nmf, asyn-tap, sho, ave.
    #[arg(long)]
    pub method: String,
    /// Event trajectory input (any method).
    #[arg(long, conflicts_with_all = ["table", "moments"])]
    pub trajectory: Option<PathBuf>,
    /// Sample-table input (moment- and row-based methods).
    #[arg(long, conflicts_with = "moments")]
    pub table: Option<PathBuf>,
    /// Precomputed moments input (moment-based methods).
    #[arg(long)]
    pub moments: Option<PathBuf>,
    /// Method hyperparameters as a JSON object, e.g. '{"lambda": 0.01}'.
    #[arg(long, default_value = "{}")]
    pub options: String,
    /// Flip rate override (default: the value recorded with the data).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Initial trajectory span to discard.
    #[arg(long, default_value_t = 0.0)]
    pub burn_in: f64,
    /// Moment regularization toward the uniform distribution, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub pseudocount: f64,
    /// Correlation-derivative estimator for kinetic methods.
    #[arg(long, value_enum, default_value_t = Dc0Arg::EventLimit)]
    pub dc0: Dc0Arg,
    /// Grid step for transition-based learning (default: 0.1/γ).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Grid-halving budget when hidden events are detected. Each halving
    /// doubles the decomposition cost; remaining hidden events are counted
    /// in the diagnostics unless --strict-conservation is set.
    #[arg(long, default_value_t = 2)]
    pub max_refine: u32,
    /// Fail instead of accepting a grid that still hides events.
    #[arg(long, default_value_t = false)]
    pub strict_conservation: bool,
    /// Output reconstruction file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the computed moments (trajectory/table inputs only).
    #[arg(long)]
    pub moments_out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone)]
pub struct EvalArgs {
    /// Reconstruction file (or a model file) to score.
    #[arg(long)]
    pub result: PathBuf,
    /// Reference model file (or another reconstruction).
    #[arg(long)]
    pub truth: PathBuf,
    /// Top-k size for the strong-coupling recovery rate (default: L).
    #[arg(long)]
    pub k: Option<usize>,
    /// Output report file (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Serialize, Deserialize, Clone)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum PopgenCmd {
    /// Run Wright-Fisher dynamics under an epistatic fitness landscape.
    Evolve(EvolveArgs),
    /// Reconstruct epistatic fitness from recorded populations.
    Infer(PopgenInferArgs),
    /// Reconstruction-quality grid over (mutation or epistasis) × outcrossing.
    PhaseDiagram(PhaseDiagramArgs),
}

#[derive(Args, Serialize, Deserialize, Clone)]
pub struct EvolveArgs {
    /// Fitness parameters file; alternative to --sigma/--fitness-seed.
    #[arg(long, conflicts_with_all = ["sigma", "fitness_seed"])]
    pub fitness: Option<PathBuf>,
    /// Number of loci (required with --sigma).
    #[arg(long = "L")]
    pub l: Option<usize>,
    /// Std of the random Gaussian epistasis draw.
    #[arg(long, requires = "fitness_seed")]
    pub sigma: Option<f64>,
    #[arg(long, requires = "sigma")]
    pub fitness_seed: Option<u64>,
    #[arg(long)]
    pub n_pop: usize,
    #[arg(long)]
    pub n_generations: usize,
    /// Outcrossing probability per offspring.
    #[arg(long)]
    pub r: f64,
    /// Crossover switch probability between adjacent loci.
    #[arg(long)]
    pub rho: f64,
    /// Per-locus mutation probability per generation.
    #[arg(long)]
    pub mu: f64,
    #[arg(long)]
    pub seed: u64,
    /// Record every k-th generation.
    #[arg(long, default_value_t = 1)]
    pub snapshot_every: usize,
    /// Output population-series file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the generating fitness parameters (JSON).
    #[arg(long)]
    pub fitness_out: Option<PathBuf>,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, PartialEq, Eq, Debug)]
#[serde(rename_all = "kebab-case")]
pub enum KnsModeArg {
    /// Infer per snapshot, then average the couplings.
    Singletime,
    /// Pool all production snapshots, infer once.
    Alltime,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, PartialEq, Eq, Debug)]
#[serde(rename_all = "kebab-case")]
pub enum DcaArg {
    Nmf,
    Plm,
}

#[derive(Args, Serialize, Deserialize, Clone)]
pub struct PopgenInferArgs {
    /// Population-series file written by `popgen evolve`.
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long, value_enum, default_value_t = KnsModeArg::Alltime)]
    pub mode: KnsModeArg,
    #[arg(long, value_enum, default_value_t = DcaArg::Nmf)]
    pub dca: DcaArg,
    /// Moment regularization (default: 1/population size).
    #[arg(long)]
    pub pseudocount: Option<f64>,
    /// Fraction of early generations discarded.
    #[arg(long, default_value_t = 0.2)]
    pub burn_in_fraction: f64,
    /// Output reconstruction file (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, PartialEq, Eq, Debug)]
#[serde(rename_all = "kebab-case")]
pub enum AxisArg {
    /// Sweep the per-locus mutation rate.
    Mu,
    /// Sweep the epistasis strength.
    Sigma,
}

#[derive(Args, Serialize, Deserialize, Clone)]
pub struct PhaseDiagramArgs {
    #[arg(long = "L")]
    pub l: usize,
    /// Epistasis strength (used when the swept axis is mu).
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, value_enum)]
    pub axis: AxisArg,
    /// Values of the swept axis, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub axis_values: Vec<f64>,
    /// Outcrossing rates of the second axis, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub r_values: Vec<f64>,
    #[arg(long)]
    pub n_pop: usize,
    #[arg(long)]
    pub n_generations: usize,
    #[arg(long)]
    pub rho: f64,
    /// Base mutation rate (overridden per cell when the axis is mu).
    #[arg(long)]
    pub mu: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub snapshot_every: usize,
    #[arg(long, value_enum, default_value_t = KnsModeArg::Alltime)]
    pub mode: KnsModeArg,
    #[arg(long, value_enum, default_value_t = DcaArg::Nmf)]
    pub dca: DcaArg,
    #[arg(long)]
    pub pseudocount: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub burn_in_fraction: f64,
    /// Output grid file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional long-format CSV of the same grid.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Subcommand, Serialize, Deserialize, Clone)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum BinarizeCmd {
    /// Point events: `unit_id,time_s` CSV in, spin table out.
    Events(BinarizeEventsArgs),
    /// Volume series: `instrument_id,time_s,volume` CSV in, spin table out.
    Volumes(BinarizeVolumesArgs),
}

#[derive(Args, Serialize, Deserialize, Clone)]
pub struct BinarizeEventsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Decay rate of the post-event active interval (mean lifetime 1/γ).
    #[arg(long)]
    pub gamma: f64,
    /// Sampling grid step.
    #[arg(long)]
    pub dt: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub t0: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub t1: f64,
    #[arg(long)]
    pub seed: u64,
    /// Output table file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize, Deserialize, Clone)]
pub struct BinarizeVolumesArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Window length over which volume is summed.
    #[arg(long)]
    pub window: f64,
    /// Spacing between window starts (overlap allowed).
    #[arg(long, default_value_t = 1.0)]
    pub shift: f64,
    /// Activity threshold in units of the unit's average volume per window.
    #[arg(long, default_value_t = 1.0)]
    pub chi: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub t0: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub t1: f64,
    /// Output table file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, PartialEq, Eq, Debug)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxisArg {
    /// Event budget of the recording.
    DataLength,
    /// Number of spins (the event budget scales proportionally).
    Size,
    /// Uniform external field applied to every spin.
    Field,
    /// Coupling scale g.
    G,
}

#[derive(Args, Serialize, Deserialize, Clone)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: SweepAxisArg,
    /// Values of the swept axis, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Methods to compare, comma separated (any registered name).
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<String>,
    /// Independent repetitions per axis value. Replica seeds are derived as
    /// seed + 2·(cell·replicas + replica) for the model draw and the next
    /// integer for the simulation, so runs are reproducible regardless of
    /// scheduling.
    #[arg(long, default_value_t = 3)]
    pub replicas: usize,
    /// Base number of spins.
    #[arg(long = "L", default_value_t = 10)]
    pub l: usize,
    /// Base coupling scale.
    #[arg(long, default_value_t = 0.3)]
    pub g: f64,
    /// Coupling symmetry mix.
    #[arg(long, default_value_t = 0.0)]
    pub k: f64,
    /// Base uniform field on every spin.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub theta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Base event budget; the duration is events/(γL/2), the mean flip rate
    /// at weak coupling.
    #[arg(long, default_value_t = 1e6)]
    pub events: f64,
    /// Discarded initial span, before the measured window starts.
    #[arg(long, default_value_t = 10.0)]
    pub burn_in: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Dc0Arg::EventLimit)]
    pub dc0: Dc0Arg,
    /// Moment regularization for table-based estimates.
    #[arg(long, default_value_t = 0.0)]
    pub pseudocount: f64,
    /// Output CSV: one row per (axis value, method).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize, Deserialize, Clone)]
pub struct RerunArgs {
    /// Manifest file from a previous run.
    pub manifest: PathBuf,
}
