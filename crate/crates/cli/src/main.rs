mod commands;
mod config;
mod exit;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::Utc;
use clap::{Parser, Subcommand};

use commands::{BenchArgs, CrawlArgs, ExtractArgs, GatewayMode, StatsArgs, VisionArgs};
use config::{BackendKind, Config, FileConfig, Overrides};
use exit::{status_of, ExitStatus};
use run_manifest::{manifest_path, timestamp, RunLog, RunManifest, TEMPLATES};

/// Construction-safety hazard pipelines over chat-completion model endpoints.
#[derive(Debug, Parser)]
#[command(name = "sitehazard", version)]
struct Cli {
    /// TOML config file. Must not contain credentials.
    #[arg(long, global = true, env = "SITEHAZARD_CONFIG")]
    config: Option<PathBuf>,
    /// Model backend: live or replay.
    #[arg(long, global = true, env = "SITEHAZARD_BACKEND")]
    backend: Option<BackendKind>,
    /// Fixture file (JSON lines) for replay and recording.
    #[arg(long, global = true, env = "SITEHAZARD_FIXTURE")]
    fixture: Option<PathBuf>,
    /// Chat-completions endpoint URL.
    #[arg(long, global = true, env = "SITEHAZARD_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, global = true, env = "SITEHAZARD_MODEL")]
    model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[arg(long, global = true, env = "SITEHAZARD_TOKEN_ENV")]
    token_env: Option<String>,
    /// Model requests per minute.
    #[arg(long, global = true, env = "SITEHAZARD_RATE_LIMIT")]
    rate_limit: Option<u32>,
    #[arg(long, global = true, env = "SITEHAZARD_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "SITEHAZARD_CORPUS_DIR")]
    corpus_dir: Option<PathBuf>,
    /// Minimum delay between page fetches while crawling, in milliseconds.
    #[arg(long, global = true, env = "SITEHAZARD_POLITENESS_MS")]
    politeness_ms: Option<u64>,
    /// Run batches on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Crawl the accident search for a date window into the corpus.
    Crawl(CrawlArgs),
    /// Extract structured records from corpus reports.
    Extract(ExtractArgs),
    /// Hazard frequency tables from extraction records.
    Stats(StatsArgs),
    /// Run the image hazard pipeline and draw annotations.
    Vision(VisionArgs),
    /// Evaluate the safety-rule benchmark.
    Bench(BenchArgs),
    /// Run a model-backed command live, appending every new response to --fixture.
    ReplayRecord {
        #[command(subcommand)]
        command: Recordable,
    },
}

#[derive(Debug, Subcommand)]
enum Recordable {
    Extract(ExtractArgs),
    Vision(VisionArgs),
    Bench(BenchArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Crawl(_) => "crawl",
            Command::Extract(_) => "extract",
            Command::Stats(_) => "stats",
            Command::Vision(_) => "vision",
            Command::Bench(_) => "bench",
            Command::ReplayRecord { command } => match command {
                Recordable::Extract(_) => "replay-record-extract",
                Recordable::Vision(_) => "replay-record-vision",
                Recordable::Bench(_) => "replay-record-bench",
            },
        }
    }
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            backend: self.backend,
            fixture_path: self.fixture.clone(),
            endpoint_url: self.endpoint.clone(),
            auth_token_env: self.token_env.clone(),
            model_name: self.model.clone(),
            rate_limit_rpm: self.rate_limit,
            corpus_dir: self.corpus_dir.clone(),
            output_dir: self.output_dir.clone(),
            politeness_delay_ms: self.politeness_ms,
            sequential: self.sequential,
        }
    }

    fn config(&self) -> Result<Config, exit::Fatal> {
        let file = match &self.config {
            Some(p) => config::load_file(p)?,
            None => FileConfig::default(),
        };
        Config::resolve(self.overrides(), file)
    }
}

fn dispatch(cmd: &Command, cfg: &Config, log: &mut RunLog) -> anyhow::Result<ExitStatus> {
    use GatewayMode::{Configured, Recording};
    match cmd {
        Command::Crawl(a) => commands::cmd_crawl(cfg, a, log),
        Command::Extract(a) => commands::cmd_extract(cfg, a, Configured, log),
        Command::Stats(a) => commands::cmd_stats(cfg, a, log),
        Command::Vision(a) => commands::cmd_vision(cfg, a, Configured, log),
        Command::Bench(a) => commands::cmd_bench(cfg, a, Configured, log),
        Command::ReplayRecord { command } => match command {
            Recordable::Extract(a) => commands::cmd_extract(cfg, a, Recording, log),
            Recordable::Vision(a) => commands::cmd_vision(cfg, a, Recording, log),
            Recordable::Bench(a) => commands::cmd_bench(cfg, a, Recording, log),
        },
    }
}

fn run(cli: &Cli) -> ExitStatus {
    let cfg = match cli.config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.status;
        }
    };
    let started = Utc::now();
    let mut log = RunLog::default();
    let (status, error) = match dispatch(&cli.command, &cfg, &mut log) {
        Ok(s) => (s, None),
        Err(e) => {
            eprintln!("error: {e:#}");
            (status_of(&e), Some(format!("{e:#}")))
        }
    };
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = cli.command.name();
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        command: name,
        args: &args,
        config: &cfg,
        parallel_build: sitehazard::Execution::parallel_available(),
        template_versions: TEMPLATES,
        started_at: timestamp(started),
        finished_at: timestamp(Utc::now()),
        exit_status: status,
        exit_code: status.code(),
        error,
        usage: log.usage,
        outputs: &log.outputs,
        summary: &log.summary,
    };
    let path = manifest_path(&cfg.output_dir, name);
    if let Err(e) = manifest.write(&path) {
        eprintln!("warning: cannot write run manifest {}: {e}", path.display());
    }
    status
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    ExitCode::from(run(&cli).code())
}
