use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

mod artifacts;
mod checks;
mod config;

use config::FileConfig;

#[derive(Parser)]
#[command(name = "cfshap", version)]
#[command(about = "Contrastive Shapley explanations over shift-predictor counterfactuals")]
struct Cli {
    /// TOML file with per-subcommand defaults; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a synthetic world and write it to a file
    World(WorldArgs),
    /// Train a shift predictor against a world's attribute classifier
    Train(TrainArgs),
    /// Explain the prediction gap between a latent and its counterfactual
    Explain(ExplainArgs),
    /// Run randomised Shapley axiom suites
    Axioms(AxiomsArgs),
    /// Check the published reference attributions for efficiency
    AuditPaper(AuditArgs),
    /// Time exact enumeration and measure sampling error
    Bench(BenchArgs),
    /// Answer oracle protocol requests on stdin/stdout
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct WorldArgs {
    /// Latent dimension d [default: 16]
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Image dimension n [default: 32]
    #[arg(long)]
    pub image_dim: Option<usize>,
    /// Number of attributes m [default: 5]
    #[arg(long)]
    pub num_attrs: Option<usize>,
    /// World seed [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output world file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// World file
    #[arg(long)]
    pub world: PathBuf,
    /// Output shift-predictor file
    #[arg(long)]
    pub out: PathBuf,
    /// Faithfulness factor γ [default: 0.09]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Faithfulness term: squared-norm or norm [default: squared-norm]
    #[arg(long)]
    pub faithfulness: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Cosine-decay floor as a fraction of the learning rate
    #[arg(long)]
    pub final_lr_fraction: Option<f64>,
    /// Probability of conditioning each attribute in a training spec
    #[arg(long)]
    pub p_cond: Option<f64>,
    /// Training seed [default: 17]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden widths, comma separated [default: 64,64]
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Per-epoch losses as CSV
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Held-out samples for the post-training flip/drift report [default: 500]
    #[arg(long)]
    pub eval_samples: Option<usize>,
}

#[derive(Args)]
pub struct ExplainArgs {
    /// World file for the in-process oracle
    #[arg(long, required_unless_present = "oracle_cmd", conflicts_with = "oracle_cmd")]
    pub world: Option<PathBuf>,
    /// External oracle command line (whitespace separated, no shell quoting)
    #[arg(long)]
    pub oracle_cmd: Option<String>,
    /// Shift-predictor file; optional with --oracle-cmd when the server shifts
    #[arg(long, required_unless_present = "oracle_cmd")]
    pub shift: Option<PathBuf>,
    /// Seed for drawing z from a standard normal [default: 0]
    #[arg(long, conflicts_with = "z_file")]
    pub z_seed: Option<u64>,
    /// JSON array holding z
    #[arg(long)]
    pub z_file: Option<PathBuf>,
    /// Grand direction, e.g. "+1,-1,+1,-1,+1"
    #[arg(long, allow_hyphen_values = true)]
    pub direction: Option<String>,
    /// Attribute names, comma separated [default: attr0,attr1,...]
    #[arg(long, value_delimiter = ',')]
    pub names: Option<Vec<String>>,
    /// exact or sampled [default: exact]
    #[arg(long)]
    pub method: Option<String>,
    /// Permutations for the sampled method [default: 1000]
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Seed for the sampled method [default: 0]
    #[arg(long)]
    pub permutation_seed: Option<u64>,
    /// Disable the coalition value cache
    #[arg(long)]
    pub no_cache: bool,
    /// Structured (JSON) explanation output
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV explanation output
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct AxiomsArgs {
    /// Number of random games [default: 1000]
    #[arg(long)]
    pub games: Option<usize>,
    #[arg(long)]
    pub min_players: Option<usize>,
    #[arg(long)]
    pub max_players: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Negative control: replace the Shapley coefficients by 1/2^(m-1)
    #[arg(long, hide = true)]
    pub inject_broken_weight: bool,
}

#[derive(Args)]
pub struct AuditArgs {
    /// Efficiency tolerance [default: 0.025]
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Predictions for a row, IMAGE=ORIGINAL:COUNTERFACTUAL (repeatable)
    #[arg(long = "predictions")]
    pub predictions: Vec<String>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Smallest player count for exact timing [default: 2]
    #[arg(long)]
    pub min_players: Option<usize>,
    /// Largest player count for exact timing [default: 20]
    #[arg(long)]
    pub max_players: Option<usize>,
    /// Permutation counts for the sampling ladder [default: 10,100,1000,10000]
    #[arg(long, value_delimiter = ',')]
    pub ladder: Option<Vec<usize>>,
    /// Players in the ladder game [default: 10]
    #[arg(long)]
    pub ladder_players: Option<usize>,
    /// Seeds averaged per ladder rung [default: 10]
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct ServeArgs {
    /// World file
    #[arg(long)]
    pub world: PathBuf,
    /// Shift-predictor file; without it shift and non-bypassed value fail
    #[arg(long)]
    pub shift: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::World(a) => artifacts::world(a, &cfg.world).map(|_| true),
        Command::Train(a) => artifacts::train(a, &cfg.train).map(|_| true),
        Command::Explain(a) => artifacts::explain(a, &cfg.explain).map(|_| true),
        Command::Serve(a) => artifacts::serve(a).map(|_| true),
        Command::Axioms(a) => checks::axioms(a, &cfg.axioms),
        Command::AuditPaper(a) => checks::audit(a, &cfg.audit),
        Command::Bench(a) => checks::bench(a, &cfg.bench),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
