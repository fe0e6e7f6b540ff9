//! Command-line front end: loads a config, applies flag overrides, runs one
//! experiment mode and prints where the artifacts went.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use route_sim::harness::{self, ExperimentConfig, HarnessError, RunArtifacts, RunMode};

#[derive(Parser)]
#[command(
    name = "route-sim",
    version,
    about = "Joint next-hop and radio-resource routing: train a DQN agent, \
             evaluate it, bench it against baselines, or solve instances exactly"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the routing agent and write a checkpoint.
    Train(RunArgs),
    /// Evaluate the configured policy on held-out topologies.
    Eval(RunArgs),
    /// Compare every policy on the same held-out topologies.
    Bench(RunArgs),
    /// Solve held-out topologies exactly by exhaustive search.
    Oracle(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's worker-thread count (never affects results).
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::Train(a) => (RunMode::Train, a),
        Command::Eval(a) => (RunMode::Eval, a),
        Command::Bench(a) => (RunMode::Bench, a),
        Command::Oracle(a) => (RunMode::Oracle, a),
    };
    match execute(mode, args) {
        Ok(artifacts) => {
            report(&artifacts);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(mode: RunMode, args: &RunArgs) -> Result<RunArtifacts, HarnessError> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    harness::run(&cfg, mode)
}

fn report(artifacts: &RunArtifacts) {
    let summary = &artifacts.summary;
    println!(
        "run {} ({}) → {}",
        artifacts.run_id,
        summary.mode,
        artifacts.dir.display()
    );
    if let Some(t) = &summary.training {
        println!(
            "  trained {} episodes; last {}: mean reward {:.4}, delivered {:.1}%",
            t.episodes,
            t.window,
            t.mean_reward_last_window,
            100.0 * t.delivery_ratio_last_window
        );
    }
    if !summary.policies.is_empty() {
        println!(
            "  {:<14} {:>6} {:>10} {:>12} {:>12}",
            "policy", "topos", "delivered", "mean Mbit/s", "p50 Mbit/s"
        );
        for p in &summary.policies {
            println!(
                "  {:<14} {:>6} {:>9.1}% {:>12.3} {:>12.3}",
                p.policy,
                p.topologies,
                100.0 * p.delivery_ratio,
                p.mean_rate_mbps,
                p.p50_rate_mbps
            );
        }
    }
    if let Some(o) = &summary.oracle {
        println!(
            "  oracle: {}/{} feasible, mean optimum {:.3} Mbit/s, mean hops {:.2}",
            o.feasible, o.topologies, o.mean_rate_mbps, o.mean_hops
        );
    }
}
