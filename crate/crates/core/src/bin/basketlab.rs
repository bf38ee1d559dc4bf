use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use basketlab::analysis::report::{parse_metrics, write_report};
use basketlab::analysis::{build_report, load_inputs, AnalysisOptions};
use basketlab::experiment::{Condition, Experiment};
use basketlab::harness::fewshot::{render_example, sample_fewshot};
use basketlab::harness::protocol::Protocol;
use basketlab::harness::transport::{
    AnthropicTransport, OpenAiTransport, RateLimitedTransport, RateLimiter, RetryingTransport,
};
use basketlab::harness::{
    Agent, ChatTransport, FullRevealPolicy, LlmAgent, LlmConfig, PolicyAgent, RandomPolicy, ReplayAgent, RrPolicy,
    TakeDefaultPolicy,
};
use basketlab::rr::OptimalNudger;
use basketlab::runner::{
    build_schedule, ingest_human_data, participant_id, read_records, run_experiment, run_schedule, Mapping, RunSpec,
};
use basketlab::service::{ServiceConfig, SessionManager};

#[derive(Parser)]
#[command(name = "basketlab", version, about = "Baskets-and-prizes decision game: runs, ingestion, analysis and human play")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentChoice {
    Random,
    TakeDefault,
    FullReveal,
    Rr,
    Replay,
    Llm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Openai,
    Anthropic,
}

#[derive(Subcommand)]
enum Command {
    /// Play an experiment with one agent and write records to a run directory
    /// (re-running the same command resumes an interrupted run).
    Run {
        #[arg(long)]
        experiment: Experiment,
        #[arg(long, value_enum)]
        agent: AgentChoice,
        /// Test trials (two practice trials are added).
        #[arg(long)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Records to re-play (replay agent).
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, value_enum, default_value = "openai")]
        provider: Provider,
        #[arg(long)]
        base_url: Option<String>,
        #[arg(long, default_value = "base")]
        condition: Condition,
        #[arg(long)]
        temperature: Option<f64>,
        /// Records to draw few-shot examples from.
        #[arg(long)]
        fewshot_db: Vec<PathBuf>,
        /// Request rate limit for the model API.
        #[arg(long)]
        rps: Option<f64>,
        /// Instruction and quiz texts replacing the built-in ones.
        #[arg(long)]
        protocol: Option<PathBuf>,
    },
    /// Convert a human-data table into validated records.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a trial schedule as JSON lines.
    Schedule {
        #[arg(long)]
        experiment: Experiment,
        #[arg(long)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Require a whole number of blocks.
        #[arg(long)]
        strict: bool,
    },
    /// Compute metric tables from record directories.
    Analyze {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "all")]
        metrics: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = basketlab::analysis::stats::DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long)]
        include_incomplete: bool,
        #[arg(long)]
        include_practice: bool,
    },
    /// Serve the human play API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        out: PathBuf,
        /// Directory of a built UI to serve alongside the API.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Test trials per session (default: one schedule block).
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn transport(provider: Provider, base_url: Option<String>, rps: Option<f64>) -> Result<Arc<dyn ChatTransport>> {
    let inner: Box<dyn ChatTransport> = match provider {
        Provider::Openai => Box::new(RetryingTransport::new(OpenAiTransport::from_env(base_url)?)),
        Provider::Anthropic => Box::new(RetryingTransport::new(AnthropicTransport::from_env(base_url)?)),
    };
    Ok(match rps {
        Some(r) => Arc::new(RateLimitedTransport::new(inner, Arc::new(RateLimiter::new(r, 1)))),
        None => Arc::from(inner),
    })
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<basketlab::record::TrialRecord>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_records(p).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    experiment: Experiment,
    choice: AgentChoice,
    trials: usize,
    seed: u64,
    out: PathBuf,
    run_id: Option<String>,
    workers: usize,
    replay: Option<PathBuf>,
    model: Option<String>,
    provider: Provider,
    base_url: Option<String>,
    condition: Condition,
    temperature: Option<f64>,
    fewshot_db: Vec<PathBuf>,
    rps: Option<f64>,
    protocol: Option<PathBuf>,
) -> Result<()> {
    let spec = RunSpec { run_id, workers: workers.max(1), ..RunSpec::new(experiment, trials, seed, out) };
    let agent: Box<dyn Agent> = match choice {
        AgentChoice::Random => Box::new(PolicyAgent::new(RandomPolicy)),
        AgentChoice::TakeDefault => Box::new(PolicyAgent::new(TakeDefaultPolicy)),
        AgentChoice::FullReveal => Box::new(PolicyAgent::new(FullRevealPolicy)),
        AgentChoice::Rr => Box::new(PolicyAgent::new(RrPolicy)),
        AgentChoice::Replay => {
            let path = replay.context("--replay DIR is required for the replay agent")?;
            Box::new(ReplayAgent::new(read_records(&path)?))
        }
        AgentChoice::Llm => {
            let model = model.context("--model is required for the llm agent")?;
            let mut config = LlmConfig::new(model, condition);
            if let Some(t) = temperature {
                config.temperature = t;
            }
            let protocol = match protocol {
                Some(p) => Protocol::load(&p).map_err(anyhow::Error::msg)?,
                None => Protocol::builtin().clone(),
            };
            let mut agent = LlmAgent::new(transport(provider, base_url, rps)?, config).with_protocol(protocol.clone());
            if condition == Condition::FewShot {
                if fewshot_db.is_empty() {
                    bail!("--fewshot-db is required for the fewshot condition");
                }
                let db = load_all(&fewshot_db)?;
                let pid = participant_id(&agent.summary(), &spec.run_id());
                let examples = sample_fewshot(&db, experiment, &pid, seed)?
                    .iter()
                    .map(|r| render_example(r, &protocol))
                    .collect::<Result<Vec<_>, _>>()?;
                agent = agent.with_fewshot(examples);
            }
            Box::new(agent)
        }
    };
    let optimizer = OptimalNudger::default();
    let summary = run_experiment(&spec, agent, Some(&optimizer))?;
    println!(
        "{}: {} complete, {} aborted, {} already recorded -> {}",
        summary.participant_id,
        summary.complete,
        summary.aborted,
        summary.resumed,
        summary.dir.display()
    );
    Ok(())
}

fn cmd_analyze(
    inputs: &[PathBuf],
    metrics: &str,
    out: &Path,
    opts: AnalysisOptions,
) -> Result<()> {
    let metrics = parse_metrics(metrics).map_err(anyhow::Error::msg)?;
    let records = load_inputs(inputs)?;
    let report = build_report(&records, &metrics, &opts)?;
    for path in write_report(&report, out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            experiment,
            agent,
            trials,
            seed,
            out,
            run_id,
            workers,
            replay,
            model,
            provider,
            base_url,
            condition,
            temperature,
            fewshot_db,
            rps,
            protocol,
        } => cmd_run(
            experiment, agent, trials, seed, out, run_id, workers, replay, model, provider, base_url, condition,
            temperature, fewshot_db, rps, protocol,
        ),
        Command::Ingest { input, mapping, out } => (|| {
            let mapping = Mapping::load(&mapping)?;
            let report = ingest_human_data(&input, &mapping, &out)?;
            println!("{} rows accepted, {} rejected", report.accepted, report.rejected.len());
            for r in &report.rejected {
                println!("  row {}: {}", r.row, r.reason);
            }
            Ok(())
        })(),
        Command::Schedule { experiment, trials, seed, strict } => (|| {
            let specs = if strict { build_schedule(experiment, trials, seed)? } else { run_schedule(experiment, trials, seed) };
            for s in specs {
                println!("{}", serde_json::to_string(&s)?);
            }
            Ok(())
        })(),
        Command::Analyze { inputs, metrics, out, seed, resamples, include_incomplete, include_practice } => {
            cmd_analyze(&inputs, &metrics, &out, AnalysisOptions { resamples, seed, include_incomplete, include_practice })
        }
        Command::Serve { port, host, out, static_dir, trials } => (|| {
            let manager = SessionManager::open(ServiceConfig { default_trials: trials, ..ServiceConfig::new(out) })?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(basketlab::service::serve(SocketAddr::new(host, port), manager, static_dir))?;
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
