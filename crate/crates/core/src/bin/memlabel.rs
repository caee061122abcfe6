use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memlabel::cli::{self, AggregateMethod, AggregateSection, Overrides, ProviderMode, RunConfig};
use memlabel::{GroundTruth, LabelSpace};

#[derive(Parser)]
#[command(name = "memlabel", version, about = "Weak labeling from expert-labeled memories")]
struct Cli {
    /// Run config (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for distance and memory search
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Comma-separated seeds replacing `memory.seeds` (or the synth seed)
    #[arg(long, global = true, value_delimiter = ',')]
    seed_override: Option<Vec<u64>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline
    Run,
    /// Memory sets for every seed
    Memories,
    /// Expert labels, partitions and the weak-label matrix
    Partition,
    /// Aggregate weak labels into probabilistic labels
    Aggregate(AggregateArgs),
    /// Score a probabilistic-label file against ground truth
    Score(ScoreArgs),
    /// Threshold sweep with the oracle provider
    Ablate,
    /// Full pipeline with labels collected over HTTP
    Serve {
        /// Listen address, e.g. 127.0.0.1:8080
        #[arg(long)]
        bind: Option<String>,
    },
    /// Generate a synthetic dataset
    Synth {
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Args)]
struct AggregateArgs {
    /// External weak-label matrix; skips the run config
    #[arg(long, requires = "labels")]
    matrix: Option<PathBuf>,
    /// Label-space file (with --matrix)
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    method: Method,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Method {
    Majority,
    LabelModel,
    Both,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Positive class index for binary F1
    #[arg(long)]
    positive: Option<usize>,
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let Some(path) = &cli.config else {
        anyhow::bail!("--config is required for this command");
    };
    let mut cfg = RunConfig::load(path).map_err(|e| anyhow::anyhow!("[config] {e}"))?;
    Overrides {
        out: cli.out.clone(),
        seeds: cli.seed_override.clone(),
    }
    .apply(&mut cfg)
    .map_err(|e| anyhow::anyhow!("[config] {e}"))?;
    Ok(cfg)
}

fn main_inner(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let mut log = io::stderr();
    match &cli.command {
        Command::Run => cli::cmd_run(&load_config(&cli)?, &mut log),
        Command::Memories => cli::cmd_memories(&load_config(&cli)?, &mut log),
        Command::Partition => cli::cmd_partition(&load_config(&cli)?, &mut log),
        Command::Ablate => cli::cmd_ablate(&load_config(&cli)?, &mut log),
        Command::Serve { bind } => {
            let mut cfg = load_config(&cli)?;
            cfg.provider.mode = ProviderMode::Serve;
            if bind.is_some() {
                cfg.provider.bind = bind.clone();
            }
            cli::cmd_run(&cfg, &mut log)
        }
        Command::Aggregate(args) => match &args.matrix {
            None => cli::cmd_aggregate(&load_config(&cli)?, &mut log),
            Some(matrix) => {
                let section = AggregateSection {
                    method: match args.method {
                        Method::Majority => AggregateMethod::Majority,
                        Method::LabelModel => AggregateMethod::LabelModel,
                        Method::Both => AggregateMethod::Both,
                    },
                    ..AggregateSection::default()
                };
                let labels = LabelSpace::load(args.labels.as_ref().expect("clap requires --labels"))?;
                let gt = args.ground_truth.as_ref().map(GroundTruth::load).transpose()?;
                let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
                cli::cmd_aggregate_matrix(&section, matrix, &labels, gt.as_ref(), &out, &mut log)
            }
        },
        Command::Score(args) => {
            let labels = LabelSpace::load(&args.labels)?;
            let gt = GroundTruth::load(&args.ground_truth)?;
            let table = cli::cmd_score(&args.predictions, &gt, &labels, args.positive, cli.out.as_deref())?;
            print!("{table}");
            Ok(())
        }
        Command::Synth { spec } => {
            let seed = cli.seed_override.as_ref().and_then(|s| s.first().copied());
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let path = cli::cmd_synth(spec, seed, &dir)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
