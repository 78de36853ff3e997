use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use instenc_cli::config::{AttackMode, Experiment, ExperimentConfig};
use instenc_cli::pipeline::{run, RunOptions};
use instenc_cli::{exit_code, CliError};

#[derive(Parser)]
#[command(name = "instenc", version, about = "Score, encode, attack and train with randomized instance encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Master seed; overrides the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Cap on enumerated outcomes for exact scores; overrides the config's.
    #[arg(long, global = true)]
    budget: Option<u128>,
    /// Directory for encoder parameters; must lie outside --out.
    #[arg(long, global = true)]
    key_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact privacy, decomposition and utility scores.
    Score { config: PathBuf },
    /// Random composition sweep.
    Compose { config: PathBuf },
    /// Encode an image set.
    Encode { config: PathBuf },
    /// Run an attack against an encoded image set.
    Attack {
        #[arg(value_enum)]
        mode: ModeArg,
        config: PathBuf,
    },
    /// Single-owner and combined training.
    Train { config: PathBuf },
    /// Any config, including multi-stage pipelines.
    Run { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mmd,
    Sensitive,
    Match,
}

fn expect_kind(config: &ExperimentConfig, kind: &str) -> Result<(), CliError> {
    let found = config.experiment.kind();
    if found == kind {
        Ok(())
    } else {
        Err(CliError::Config(format!("this subcommand runs `{kind}` configs, found `{found}`")))
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let (path, kind) = match &cli.command {
        Command::Score { config } => (config, Some("score")),
        Command::Compose { config } => (config, Some("compose_sweep")),
        Command::Encode { config } => (config, Some("encode")),
        Command::Attack { config, .. } => (config, Some("attack")),
        Command::Train { config } => (config, Some("train")),
        Command::Run { config } => (config, None),
    };
    let mut config = ExperimentConfig::load(path)?;
    if let Some(k) = kind {
        expect_kind(&config, k)?;
    }
    if let (Command::Attack { mode, .. }, Experiment::Attack(a)) = (&cli.command, &mut config.experiment) {
        a.mode = match mode {
            ModeArg::Mmd => AttackMode::Mmd,
            ModeArg::Sensitive => AttackMode::Sensitive,
            ModeArg::Match => AttackMode::Match,
        };
    }
    if let Some(s) = cli.common.seed {
        config.seed = s;
    }
    if let Some(b) = cli.common.budget {
        config.budget = Some(b);
    }
    Ok(config)
}

fn execute(cli: &Cli) -> Result<()> {
    let config = load(cli)?;
    let options = RunOptions {
        out: cli.common.out.clone(),
        key_out: cli.common.key_out.clone(),
    };
    let go = || run(&config, &options);
    let outcome = match cli.common.workers {
        Some(0) => return Err(CliError::Config("--workers must be at least 1".into()).into()),
        Some(1) => instenc_core::exec::sequential(go)?,
        #[cfg(feature = "parallel")]
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| anyhow::anyhow!("building the worker pool: {e}"))?
            .install(go)?,
        #[cfg(not(feature = "parallel"))]
        Some(_) => instenc_core::exec::sequential(go)?,
        None => go()?,
    };
    for row in outcome.rows() {
        println!("{}\t{}\t{}\t{}\t{}", row.stage, row.setting, row.task, row.seed, row.value);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
