mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ehpc", version, about = "Learned online power control for energy-harvesting multiple access")]
struct Cli {
    /// Worker threads for episode solving and evaluation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// System parameters. Flags override keys of `--config`, which override the
/// built-in defaults.
#[derive(Args, Clone, Debug, Default)]
pub struct SystemArgs {
    /// Flat key/value config file (`k`, `b_max`, `p_max`, `harvest_mean`,
    /// `harvest_var`, `b_init`, `seed`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub b_max: Option<f64>,
    #[arg(long)]
    pub p_max: Option<f64>,
    #[arg(long, alias = "mean")]
    pub harvest_mean: Option<f64>,
    #[arg(long, alias = "var")]
    pub harvest_var: Option<f64>,
    #[arg(long)]
    pub b_init: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve offline instances and write the supervised dataset.
    GenData(GenDataArgs),
    /// Train the network on a dataset.
    Train(TrainArgs),
    /// Evaluate a policy against the offline benchmark.
    Eval(EvalArgs),
    /// Solve the discretized single-node MDP.
    MdpSolve(MdpSolveArgs),
    /// Merge evaluation reports into a sweep table.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, default_value_t = 10_000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 20)]
    pub horizon: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset CSV written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Separate validation dataset; without it a random split of `--data`
    /// is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Held-out points when splitting (default: 20% of the data).
    #[arg(long)]
    pub val_size: Option<usize>,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u32).range(1..))]
    pub hidden_layers: u32,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 5.0)]
    pub grad_clip: f64,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    /// Feed raw features to the network.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path; learning curves go to `<out>.curves.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Baseline {
    Greedy,
    Zero,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("policy").required(true).args(["checkpoint", "mdp_policy", "baseline"])))]
pub struct EvalArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub mdp_policy: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long, default_value_t = 1_000_000)]
    pub slots: usize,
    /// Fail on raw infeasible policy outputs instead of clamping them.
    #[arg(long)]
    pub strict: bool,
    /// Report JSON; a one-row CSV goes to `<out>.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct MdpSolveArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, default_value_t = 1.0)]
    pub battery_step: f64,
    #[arg(long, default_value_t = 1.0)]
    pub power_step: f64,
    #[arg(long, default_value_t = 8)]
    pub harvest_levels: usize,
    #[arg(long, default_value_t = 8)]
    pub channel_levels: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Policy JSON; the lookup table goes to `<out>.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SweepArg {
    M,
    V,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Report JSON files written by `eval`.
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub sweep: SweepArg,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            std::process::exit(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("global thread pool is configured once");
    }
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::MdpSolve(a) => commands::mdp_solve(a),
        Command::Report(a) => commands::report(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
