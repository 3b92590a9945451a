use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use log::error;

use rrpo_core::regularization::RegFlags;
use rrpo_harness::config::{ConfigError, RunConfig};
use rrpo_harness::pipeline;

#[derive(Parser, Debug)]
#[command(
    name = "rrpo",
    version,
    about = "Reward-model robustness and differentiable policy optimization lab"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for `ablate`.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the pretrain, finetune, held-out, eval-shifted and oracle corpora.
    GenData,
    /// Train the oracle judge on the oracle corpus.
    TrainOracle,
    /// Pretrain the vanilla reward model on the shortcut-correlated corpus.
    PretrainRm,
    /// Fine-tune the vanilla reward model with the chosen regularizers.
    FinetuneRm(FlagArgs),
    /// SFT warm-up followed by reward-gradient policy optimization.
    TrainPolicy {
        /// Reward model to optimize against (`vanilla`, `base`, `ls`, `ls-eam`, `full`).
        #[arg(long)]
        rm: Option<String>,
    },
    /// Hacking-gap evaluation of trained policies.
    Eval,
    /// Fine-tune every cumulative flag set over the configured seeds.
    Ablate,
}

#[derive(Args, Debug)]
struct FlagArgs {
    #[arg(long)]
    ls: bool,
    #[arg(long)]
    eam: bool,
    #[arg(long)]
    adv: bool,
}

fn load_config(common: &Common) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    let force = cli.common.force;
    match cli.command {
        Command::FinetuneRm(ref f) => {
            if f.ls || f.eam || f.adv {
                cfg.ls = f.ls;
                cfg.eam = f.eam;
                cfg.adv = f.adv;
            }
        }
        Command::TrainPolicy { rm: Some(ref rm) } => cfg.policy_rm = rm.clone(),
        _ => {}
    }
    cfg.validate()?;
    match cli.command {
        Command::GenData => pipeline::gen_data(&cfg, force),
        Command::TrainOracle => pipeline::run_train_oracle(&cfg, force).map(drop),
        Command::PretrainRm => pipeline::pretrain_rm(&cfg, force),
        Command::FinetuneRm(_) => pipeline::finetune_rm(
            &cfg,
            RegFlags {
                ls: cfg.ls,
                eam: cfg.eam,
                adv: cfg.adv,
            },
            force,
        )
        .map(drop),
        Command::TrainPolicy { .. } => pipeline::train_policy(&cfg, force).map(drop),
        Command::Eval => pipeline::eval(&cfg, force).map(drop),
        Command::Ablate => pipeline::ablate(&cfg, force, cli.common.jobs).map(drop),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.is::<ConfigError>()) {
        return 2;
    }
    let numerical = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<rrpo_core::Error>(),
            Some(rrpo_core::Error::NonFinite(_))
        )
    });
    if numerical {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RRPO_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
