//! Command-line interface for the cluster ranking pipeline. Every subcommand
//! runs its stage (plus whatever earlier stages it needs) from a TOML config,
//! resuming from cached artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use iun_core::runner::{self, Config, RunEnv, Stage};

#[derive(Parser)]
#[command(name = "iun", version, about = "Rank news clusters by importance and urgency")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Override the config's cache directory.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Override the config's output directory.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
    /// Override the config's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's worker count.
    #[arg(long, short = 'j')]
    parallelism: Option<usize>,
    /// Base URL for scorer/embedding endpoints not set in the config
    /// (falls back to IUN_API_BASE).
    #[arg(long)]
    api_base: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Slice corpora and extract the leading chunk of every text.
    Chunk(CommonArgs),
    /// Acquire embeddings and reduce them (PCA, passthrough, or external).
    Reduce(CommonArgs),
    /// Run the clustering grid (kmeans, ward, external assignments).
    Cluster(CommonArgs),
    /// Compute distance-percentile feature tables for valid cases.
    Features(CommonArgs),
    /// Score document chunks (LLM, NLI, or import score files).
    Score(CommonArgs),
    /// Correlate cluster features with cluster scores across the grid.
    Correlate(CommonArgs),
    /// Emit the report bundle from cached artifacts.
    Report(CommonArgs),
    /// Run the pipeline end to end.
    Run(CommonArgs),
    /// Show the task grid and what the cache already satisfies.
    Plan(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Chunk(a)
            | Command::Reduce(a)
            | Command::Cluster(a)
            | Command::Features(a)
            | Command::Score(a)
            | Command::Correlate(a)
            | Command::Report(a)
            | Command::Run(a)
            | Command::Plan(a) => a,
        }
    }

    fn target(&self) -> Option<Stage> {
        match self {
            Command::Chunk(_) => Some(Stage::Chunk),
            Command::Reduce(_) => Some(Stage::Reduce),
            Command::Cluster(_) => Some(Stage::Cluster),
            Command::Features(_) => Some(Stage::Features),
            Command::Score(_) => Some(Stage::Score),
            Command::Correlate(_) => Some(Stage::Correlate),
            Command::Report(_) | Command::Run(_) => Some(Stage::Report),
            Command::Plan(_) => None,
        }
    }
}

fn load(common: &CommonArgs) -> Result<(Config, RunEnv)> {
    let mut config = Config::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(cache) = &common.cache_dir {
        config.run.cache_dir = cache.clone();
    }
    if let Some(output) = &common.output {
        config.run.output_dir = output.clone();
    }
    if let Some(seed) = common.seed {
        config.run.seed = seed;
    }
    if let Some(p) = common.parallelism {
        config.run.parallelism = p;
    }
    if let Some(base) = &common.api_base {
        for scorer in &mut config.scorers {
            if scorer.endpoint.is_none() && scorer.kind != "file" {
                scorer.endpoint = Some(base.clone());
            }
        }
        for emb in &mut config.embeddings {
            if emb.endpoint.is_none() && emb.matrices.is_empty() {
                emb.endpoint = Some(base.clone());
            }
        }
    }
    config.validate()?;
    let base = common
        .config
        .parent()
        .map(|p| p.to_path_buf())
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let env = RunEnv::new(&config, base);
    Ok((config, env))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn execute(command: &Command) -> Result<ExitCode> {
    let (config, env) = load(command.common())?;

    if let Command::Plan(_) = command {
        let plan = runner::plan(&config, &env)?;
        println!("{:<12} {:>8} {:>8}", "stage", "tasks", "cached");
        for stage in runner::ALL_STAGES {
            let total = plan.count(stage);
            if total == 0 {
                continue;
            }
            let cached = total - plan.runnable(stage);
            println!("{:<12} {total:>8} {cached:>8}", stage.name());
        }
        return Ok(ExitCode::SUCCESS);
    }

    let target = command.target().expect("plan handled above");
    let outcome = runner::run(&config, &env, target)?;
    log::info!(
        "run complete: {} done, {} failed, {} skipped, {} rejected",
        outcome.done,
        outcome.failed,
        outcome.skipped,
        outcome.rejected
    );
    println!(
        "done: {} tasks ({} failed, {} skipped, {} validity-rejected); manifest: {}",
        outcome.done,
        outcome.failed,
        outcome.skipped,
        outcome.rejected,
        env.manifest_path().display()
    );
    if outcome.failed > 0 || outcome.skipped > 0 {
        Ok(ExitCode::from(2))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}
