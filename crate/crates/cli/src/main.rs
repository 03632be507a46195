mod error;
mod report;
mod settings;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use log::LevelFilter;

use crate::error::CliError;
use crate::stages::Context;

/// Lead-lag mutual-information graphs fused into dynamic asset embeddings.
#[derive(Debug, Parser)]
#[command(name = "leadlag-fuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run directory.
    #[arg(long, global = true, env = "LEADLAG_FUSE_OUT", value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override a configuration key, e.g. `graphs.p_value=0.05`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Cap on worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[arg(long, global = true, value_name = "INT")]
    seed_data: Option<u64>,

    #[arg(long, global = true, value_name = "INT")]
    seed_split: Option<u64>,

    #[arg(long, global = true, value_name = "INT")]
    seed_init: Option<u64>,

    /// Only report errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,

    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load per-asset price files into the aligned panel cache.
    Ingest,
    /// Build lead-lag graphs for every window end and spec.
    Graphs,
    /// Train the fusion autoencoder and write embeddings.
    Fuse,
    /// Similarity time series and PCA projection of the embeddings.
    Postprocess,
    /// Run ingest, graphs, fuse and postprocess in order.
    RunAll,
    /// Generate the synthetic planted-lag price set.
    Synth,
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => LevelFilter::Error,
        (false, 0) => LevelFilter::Warn,
        (false, 1) => LevelFilter::Info,
        (false, _) => LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli, config_path: PathBuf) -> Result<(), CliError> {
    let out = cli
        .out
        .ok_or_else(|| CliError::Config("--out DIR or LEADLAG_FUSE_OUT is required".into()))?;
    let loaded = settings::load(&config_path, &cli.overrides)?;
    let mut config = loaded.config;
    if let Some(s) = cli.seed_data {
        config.seeds.data = s;
    }
    if let Some(s) = cli.seed_split {
        config.seeds.split = s;
    }
    if let Some(s) = cli.seed_init {
        config.seeds.init = s;
    }
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    config
        .synth
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(out.clone(), e))?;

    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    }
    let ctx = Context {
        config,
        base_dir: loaded.base_dir,
        out,
    };
    match cli.command {
        Command::Ingest => stages::ingest(&ctx),
        Command::Graphs => stages::graphs(&ctx),
        Command::Fuse => stages::fuse_stage(&ctx),
        Command::Postprocess => stages::postprocess(&ctx),
        Command::RunAll => stages::run_all(&ctx),
        Command::Synth => stages::synth(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config_path) = cli.config.clone() else {
        Cli::command()
            .error(
                ErrorKind::MissingRequiredArgument,
                "--config PATH is required",
            )
            .exit();
    };
    init_logging(&cli);
    match run(cli, config_path) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
