use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use entsim::{run, Command, RunManifest};
use entsim_core::baselines::BaselineKind;

#[derive(Parser)]
#[command(name = "entsim", version, about = "Elastic-topology ISAC simulator with multi-agent PPO")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the proposed hierarchical policy.
    Train(Common),
    /// Roll out a saved policy greedily and write per-frame detail.
    Eval(Common),
    /// Run a comparison scheme (ccn, cfn or random).
    Baseline(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; an optional [learner] table sets training parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    episodes: usize,
    /// Output directory.
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,
    /// Checkpoint to load (eval) or final checkpoint path (train, baseline).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Save an intermediate checkpoint every N episodes; 0 disables.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Comparison scheme: ccn, cfn or random.
    #[arg(long)]
    baseline: Option<BaselineKind>,
    /// Window of the moving-average USR reported at the end.
    #[arg(long, default_value_t = 40)]
    ma_window: usize,
    /// Write 0 to the wall_ms column so repeated runs produce identical files.
    #[arg(long)]
    no_wall_time: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, c) = match cli.command {
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Baseline(c) => (Command::Baseline, c),
    };
    let manifest = RunManifest {
        command,
        config: c.config,
        seed: c.seed,
        episodes: c.episodes,
        out: c.out,
        checkpoint: c.checkpoint,
        checkpoint_every: c.checkpoint_every,
        baseline: c.baseline,
        ma_window: c.ma_window,
        wall_time: !c.no_wall_time,
    };
    match run(&manifest) {
        Ok(summary) => {
            println!("wrote {}", summary.csv.display());
            if let Some(ck) = &summary.checkpoint {
                println!("checkpoint {}", ck.display());
            }
            println!("final MA-{} USR {:.6}", manifest.ma_window, summary.final_ma_usr);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("entsim: {e}");
            ExitCode::FAILURE
        }
    }
}
