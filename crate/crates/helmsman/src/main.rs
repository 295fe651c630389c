use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use helmsman::app::{self, Runtime};
use helmsman::server::{self, ServiceState};
use helmsman_core::ats::FrameManifest;
use helmsman_core::backends::Role;
use helmsman_core::config::SystemConfig;
use helmsman_core::dataset::{compute_stats, DatasetManifest, Split};
use helmsman_core::engine::{AskOverrides, Engine};
use helmsman_core::eval::{run_eval, EvalOptions, EvalRun};
use helmsman_core::knowledge::{load_corpus_dir, retrieve, KnowledgeBase};
use helmsman_core::report::{self, ReportFormat};
use helmsman_core::router::RoutePath;
use helmsman_core::trace::Session;
use helmsman_core::{Error, Result};

/// Question answering over waterway video clips.
#[derive(Debug, Parser)]
#[command(name = "helmsman", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Append stage records to this JSONL file.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Store full prompt bodies in the trace instead of digests.
    #[arg(long, global = true)]
    trace_full: bool,
    /// Serve every backend role from this mock script; no network calls are made.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Answer one question about a clip.
    Ask(AskArgs),
    /// Evaluate a dataset split and print the report tables.
    Eval(EvalArgs),
    /// Knowledge base maintenance.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Dataset statistics.
    Stats(StatsArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct AskArgs {
    /// Frame manifest JSON for the clip.
    #[arg(long, conflicts_with_all = ["dataset", "clip_id"])]
    clip: Option<PathBuf>,
    /// Dataset manifest holding the clip.
    #[arg(long, requires = "clip_id")]
    dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    clip_id: Option<String>,
    #[arg(long, short)]
    question: String,
    /// Skip the router and take this path.
    #[arg(long)]
    route: Option<RoutePath>,
    #[arg(long, conflicts_with = "no_verify")]
    verify: bool,
    #[arg(long)]
    no_verify: bool,
    /// Print the full outcome as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Write the EvalRun JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
    /// Carry over scored samples from an earlier EvalRun JSON.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    no_judge: bool,
}

#[derive(Debug, Subcommand)]
enum KbCommand {
    /// Chunk and embed a directory of regulation documents.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Show the rules closest to a query.
    Search {
        #[arg(long, short)]
        query: String,
        #[arg(short, default_value_t = 4)]
        k: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<String>,
}

fn load_config(path: Option<&Path>) -> Result<SystemConfig> {
    match path {
        Some(p) => SystemConfig::load(p),
        None => {
            let mut cfg = SystemConfig::default();
            cfg.apply_env(|k| std::env::var(k).ok());
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

async fn ask(cli: &Cli, rt: &Runtime, args: &AskArgs) -> Result<()> {
    let clip = match (&args.clip, &args.dataset, &args.clip_id) {
        (Some(p), _, _) => Some(FrameManifest::load(p)?),
        (None, Some(d), Some(id)) => {
            let ds = DatasetManifest::load(d)?;
            let clip = ds
                .clip(id)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("clip {id:?} is not in {}", d.display())))?;
            Some(clip)
        }
        _ => None,
    };
    let kb = app::load_kb(rt).await?;
    let engine = Engine::new(rt.backends.clone(), Arc::new(kb), rt.config.engine_config());
    let sink = app::trace_sink(cli.trace.as_ref().or(rt.config.trace.path.as_ref()))?;
    let session = Session::new(uuid::Uuid::new_v4().to_string(), rt.clock(), sink)
        .with_full_prompts(cli.trace_full || rt.config.trace.full);
    let overrides = AskOverrides {
        route: args.route,
        verify: match (args.verify, args.no_verify) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        },
    };
    let out = engine.answer(&session, &args.question, clip.as_ref(), overrides).await?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(());
    }
    println!("{}", out.answer);
    let verified = match out.verified {
        Some(true) => "verified",
        Some(false) => "unverified",
        None => "not checked",
    };
    let scores: Vec<String> = out.score_history.iter().map(|g| format!("{:.2}", g.score)).collect();
    eprintln!(
        "route {}{}, {verified}, retries {}, scores [{}], {} ms",
        out.route.path,
        if out.route.used_fallback { " (fallback)" } else { "" },
        out.retries,
        scores.join(", "),
        out.latency_ms
    );
    for h in &out.hits {
        eprintln!("  {:.4} {}", h.score, h.chunk.chunk_id);
    }
    Ok(())
}

async fn eval(cli: &Cli, rt: &Runtime, args: &EvalArgs) -> Result<()> {
    let dataset = DatasetManifest::load(&args.dataset)?;
    let previous = args.resume.as_ref().filter(|p| p.exists()).map(EvalRun::load).transpose()?;
    let kb = app::load_kb(rt).await?;
    let engine = Engine::new(rt.backends.clone(), Arc::new(kb), rt.config.engine_config());
    let mut opts = EvalOptions::new(app::trace_sink(cli.trace.as_ref().or(rt.config.trace.path.as_ref()))?);
    opts.split = args.split;
    opts.concurrency = args.concurrency.unwrap_or(rt.config.eval.concurrency);
    opts.judge = rt.config.eval.judge && !args.no_judge;
    opts.clock = rt.clock();
    opts.full_prompts = cli.trace_full || rt.config.trace.full;
    let run = run_eval(&engine, &dataset, &opts, previous.as_ref()).await?;
    if let Some(out) = &args.out {
        std::fs::write(out, run.to_json()?).map_err(|e| Error::io(out, e))?;
    }
    write_output(args.report.as_deref(), &report::render(&run, args.format)?)?;
    let failed = run.records.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        tracing::warn!("{failed} sample(s) failed; see the error field of their records");
    }
    Ok(())
}

async fn kb(rt: &Runtime, cmd: &KbCommand) -> Result<()> {
    match cmd {
        KbCommand::Ingest { corpus, out } => {
            let docs = load_corpus_dir(corpus)?;
            let kb = KnowledgeBase::ingest(&docs, rt.config.rag.chunking, rt.backends.client(Role::Embedder)?).await?;
            kb.save(out)?;
            println!(
                "{} chunks from {} documents, dimension {}, written to {}",
                kb.len(),
                docs.len(),
                kb.dimension(),
                out.display()
            );
        }
        KbCommand::Search { query, k, json } => {
            let kb = app::load_kb(rt).await?;
            let r = retrieve(&kb, query, *k, rt.backends.client(Role::Embedder)?).await?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&r.context)?);
            } else {
                for h in &r.context.hits {
                    let label = h.chunk.section_label.as_deref().unwrap_or(&h.chunk.source_doc);
                    println!("{:.4}  {}  [{label}]", h.score, h.chunk.chunk_id);
                    println!("        {}", h.chunk.text.replace('\n', " "));
                }
            }
        }
    }
    Ok(())
}

fn stats(args: &StatsArgs) -> Result<()> {
    let ds = DatasetManifest::load(&args.dataset)?;
    let s = compute_stats(&ds);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        print!("{}", s.render_text());
    }
    Ok(())
}

async fn serve(cli: &Cli, rt: Runtime, args: &ServeArgs) -> Result<()> {
    let kb = app::load_kb(&rt).await?;
    let clips = rt.config.service.clips.as_ref().map(DatasetManifest::load).transpose()?;
    let bind = args.bind.clone().unwrap_or_else(|| rt.config.service.bind.clone());
    let sink = app::trace_sink(cli.trace.as_ref().or(rt.config.trace.path.as_ref()))?;
    let state = Arc::new(ServiceState::new(
        rt.backends.clone(),
        kb,
        rt.config.engine_config(),
        rt.config.rag.chunking,
        clips,
        sink,
        rt.clock(),
        cli.trace_full || rt.config.trace.full,
        rt.mock.is_some(),
    ));
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| Error::invalid(format!("cannot bind {bind}: {e}")))?;
    tracing::info!("listening on {bind}");
    axum::serve(listener, server::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::InvalidState(format!("server: {e}")))
}

async fn run(cli: Cli) -> Result<()> {
    if let Command::Stats(args) = &cli.command {
        return stats(args);
    }
    let config = load_config(cli.config.as_deref())?;
    let rt = app::build_runtime(config, cli.mock_script.as_deref())?;
    match &cli.command {
        Command::Ask(args) => ask(&cli, &rt, args).await,
        Command::Eval(args) => eval(&cli, &rt, args).await,
        Command::Kb(cmd) => kb(&rt, cmd).await,
        Command::Serve(args) => serve(&cli, rt, args).await,
        Command::Stats(_) => unreachable!(),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = app::exit_code(&e);
            eprintln!("error: {e}");
            if let Some(role) = e.failed_role().filter(|_| e.is_backend()) {
                eprintln!("failed backend role: {role}");
            }
            ExitCode::from(code)
        }
    }
}
