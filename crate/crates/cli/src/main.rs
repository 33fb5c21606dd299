//! `plancompose`: solve queries, run benchmarks and ablations, analyze traces,
//! inspect cassettes and serve the local tool stub.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Exit 2: bad flags, config, inputs or credentials.
    Config(String),
    /// Exit 1: the harness itself failed.
    Crash(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Crash(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "plancompose", version, about = "Plan-and-execute runs over composable tool modules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct RunArgs {
    /// Task: scienceqa or tabmwp
    #[arg(long)]
    task: Option<String>,
    /// Gateway mode: live, record or replay (default replay)
    #[arg(long)]
    mode: Option<String>,
    /// Cassette file for record and replay modes
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fixed plan that bypasses the planner, e.g. '["Solution_Generator","Answer_Generator"]'
    #[arg(long)]
    plan: Option<String>,
    /// Output directory (default runs)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent queries (default 4 live, all cores in replay)
    #[arg(long)]
    jobs: Option<usize>,
    /// Store query and cache snapshots after every step
    #[arg(long)]
    full_trace: bool,
    /// Module to ablate; repeatable
    #[arg(long = "disable", value_name = "MODULE")]
    disable: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> config::Overrides {
        config::Overrides {
            task: self.task.clone(),
            mode: self.mode.clone(),
            cassette: self.cassette.clone(),
            out: self.out.clone(),
            jobs: self.jobs,
            full_trace: self.full_trace,
            disable: self.disable.clone(),
        }
    }
}

#[derive(Debug, Args)]
struct QueryArgs {
    /// JSON file holding one query record (benchmark field names)
    #[arg(long, conflicts_with = "question")]
    query: Option<PathBuf>,
    /// Question text, for an inline query
    #[arg(long)]
    question: Option<String>,
    /// Answer option; repeatable
    #[arg(long = "choice", value_name = "TEXT")]
    choices: Vec<String>,
    /// Context passage
    #[arg(long)]
    context: Option<String>,
    /// Pipe-separated table text, rows separated by newlines
    #[arg(long)]
    table: Option<String>,
    #[arg(long)]
    table_title: Option<String>,
    #[arg(long)]
    unit: Option<String>,
    /// Image path
    #[arg(long)]
    image: Option<String>,
    /// Query identifier (default "query")
    #[arg(long)]
    id: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan and execute one query, printing each step and the answer
    Solve {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Run a benchmark file and write traces plus an accuracy report
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Benchmark file: JSON array or JSON lines
        benchmark: PathBuf,
    },
    /// Run a benchmark with and without the --disable modules
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        benchmark: PathBuf,
    },
    /// Tool usage, transition graph and program statistics over trace files
    Analyze {
        /// Output directory (default runs)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Inspect recorded cassettes
    Cassette {
        #[command(subcommand)]
        action: CassetteAction,
    },
    /// Serve the deterministic vision/search/chat stub until interrupted
    StubServer {
        /// TOML stub configuration (captions, ocr, search, chat rules)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: String,
    },
}

#[derive(Debug, Subcommand)]
enum CassetteAction {
    /// One line per record: digest, model, response preview
    List { cassette: PathBuf },
    /// Parse the whole file and print its metadata
    Check { cassette: PathBuf },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { run, query } => commands::solve(&run, &query),
        Command::Bench { run, benchmark } => commands::bench(&run, &benchmark),
        Command::Ablate { run, benchmark } => commands::ablate(&run, &benchmark),
        Command::Analyze { out, traces } => commands::analyze(out.as_deref(), &traces),
        Command::Cassette { action: CassetteAction::List { cassette } } => commands::cassette_list(&cassette),
        Command::Cassette { action: CassetteAction::Check { cassette } } => commands::cassette_check(&cassette),
        Command::StubServer { config, addr } => commands::stub_server(config.as_deref(), &addr),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Config(_) => 2,
                CliError::Crash(_) => 1,
            })
        }
    }
}
