//! graft: train small GNNs, explain them with exemplar-based integrated
//! gradients, evaluate the profiles, and verbalise them as rules.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::Ctx;
use config::{load_config, Overrides};

#[derive(Parser, Debug)]
#[command(
    name = "graft",
    version,
    about = "Global feature-importance profiles for graph neural networks"
)]
struct Cli {
    /// TOML configuration file; flags override individual keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Dataset: "planted" or a bundle directory.
    #[arg(long, global = true)]
    dataset: Option<String>,

    /// Architectures (gcn, sage, gin, gat), comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    arch: Option<Vec<String>>,

    /// Training seeds, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Exemplars per class.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Features kept in each profile summary.
    #[arg(long = "top-k", global = true)]
    top_k: Option<usize>,

    /// Integration steps for integrated gradients.
    #[arg(long, global = true)]
    steps: Option<usize>,

    /// Quadrature: gauss-legendre or riemann-midpoint.
    #[arg(long, global = true)]
    quadrature: Option<String>,

    /// Aggregation: mean, conf-weighted, median, or max.
    #[arg(long, global = true)]
    aggregation: Option<String>,

    /// Bias strength for the audit.
    #[arg(long, global = true)]
    sigma: Option<f64>,

    /// Class targeted by the injected bias.
    #[arg(long = "target-class", global = true)]
    target_class: Option<usize>,

    /// Dump rule prompts to files instead of calling the endpoint.
    #[arg(long = "offline-rules", global = true)]
    offline_rules: bool,

    /// Output directory root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for independent jobs.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Train one model per (architecture, seed) and save checkpoints.
    Train,
    /// Compute per-class feature-importance profiles from checkpoints.
    Explain,
    /// Masking fidelity of the profiles against a random baseline.
    Fidelity,
    /// Cross-seed Jaccard stability of the profiles.
    Stability,
    /// Cross-architecture consensus of the profiles.
    Consensus,
    /// Logistic-probe transfer accuracy of the profile features.
    Transfer,
    /// Bias-injection audit (retrains on a biased copy).
    Audit,
    /// Verbalise profiles as natural-language rules.
    Rules,
    /// Ablation grids: profile size, method, aggregation, exemplar mode.
    Ablate,
    /// Full pipeline: train, explain, fidelity, transfer, summary.
    Run,
    /// Collect per-run artifacts into summary.tsv.
    Summary,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outcomes, not usage errors.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let overrides = Overrides {
        dataset: cli.dataset,
        arch: cli.arch,
        seeds: cli.seeds,
        k: cli.k,
        top_k: cli.top_k,
        steps: cli.steps,
        quadrature: cli.quadrature,
        aggregation: cli.aggregation,
        sigma: cli.sigma,
        target_class: cli.target_class,
        offline_rules: cli.offline_rules,
        out: cli.out,
        workers: cli.workers,
    };

    let config = match load_config(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 1;
        }
    };

    let ctx = match Ctx::new(config) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {}", e.message());
            return e.exit_code();
        }
    };

    let result = match cli.command {
        Command::Train => commands::cmd_train(&ctx),
        Command::Explain => commands::cmd_explain(&ctx),
        Command::Fidelity => commands::cmd_fidelity(&ctx),
        Command::Stability => commands::cmd_stability(&ctx),
        Command::Consensus => commands::cmd_consensus(&ctx),
        Command::Transfer => commands::cmd_transfer(&ctx),
        Command::Audit => commands::cmd_audit(&ctx),
        Command::Rules => commands::cmd_rules(&ctx),
        Command::Ablate => commands::cmd_ablate(&ctx),
        Command::Run => commands::cmd_run(&ctx),
        Command::Summary => commands::cmd_summary(&ctx),
    };

    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
