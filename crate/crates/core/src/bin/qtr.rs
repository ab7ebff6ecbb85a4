//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when sessions fail or a replay diverges,
//! 2 on configuration or usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use qtr_core::backends::framefile::FrameFileVision;
use qtr_core::backends::remote::{EndpointConfig, RemoteClient};
use qtr_core::backends::scripted::{ScriptedLlm, ScriptedVision};
use qtr_core::backends::{LlmPort, Ports, VisionPort};
use qtr_core::controller::{replay_session, run_session, Ablation, SessionConfig, SessionTrace};
use qtr_core::harness::report::{render_ablation, render_oracle, render_run, render_sweep};
use qtr_core::harness::{
    ablate, brute_force_oracle, builtin, default_suite, duration_sweep, grade, load_suite, run_suite,
    OutputFormat, RunOptions, SuiteWorld,
};

#[derive(Parser)]
#[command(name = "qtr", version, about = "Query-driven temporal reasoning over long videos")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Session configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Components to disable: no-rtp, no-tm, no-tcr.
    #[arg(long, global = true, value_delimiter = ',')]
    ablation: Vec<Ablation>,
    /// Output directory for traces and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "text")]
    format: OutputFormat,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question of a suite.
    Run {
        #[arg(long)]
        question: String,
        /// Suite file or directory; the built-in suite when omitted.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Use a live chat endpoint (JSON endpoint config) instead of the scripted LLM.
        #[arg(long)]
        llm_endpoint: Option<PathBuf>,
        /// Use precomputed frame vectors from this directory instead of scripted vision.
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Run every question of a suite.
    Suite {
        #[arg(long)]
        suite: Option<PathBuf>,
    },
    /// Frame fraction of one world stretched to several durations.
    Sweep {
        /// Single-video world document; the built-in sweep world when omitted.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "30,300,1200,3000")]
        durations: Vec<f64>,
    },
    /// Full engine against each single-component ablation.
    Ablate {
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Seeds 0..N.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Re-run a recorded trace and check it reproduces.
    Replay { trace: PathBuf },
    /// Brute-force localisation over whole timelines.
    Oracle {
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long)]
        question: Option<String>,
    },
    /// Write the built-in suite documents to a directory.
    ExportSuite { dir: PathBuf },
}

enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn session_config(g: &Global) -> anyhow::Result<SessionConfig> {
    let mut cfg = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SessionConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.ablation.extend(g.ablation.iter().copied());
    cfg.validate()?;
    Ok(cfg)
}

fn suite_from(path: &Option<PathBuf>) -> anyhow::Result<Vec<SuiteWorld>> {
    match path {
        Some(p) => Ok(load_suite(p)?),
        None => Ok(default_suite()),
    }
}

fn emit(g: &Global, name: &str, text: &str) -> anyhow::Result<()> {
    print!("{text}");
    if let Some(dir) = &g.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}

fn opts(g: &Global) -> RunOptions {
    RunOptions {
        threads: g.threads,
        trace_dir: g.out.clone(),
    }
}

fn report_name(g: &Global, stem: &str) -> String {
    let ext = match g.format {
        OutputFormat::Text => "txt",
        OutputFormat::Delimited => "tsv",
        OutputFormat::Structured => "json",
    };
    format!("{stem}.{ext}")
}

fn cmd_run(
    g: &Global,
    question: &str,
    suite: &Option<PathBuf>,
    llm_endpoint: &Option<PathBuf>,
    frames: &Option<PathBuf>,
) -> Result<(), Failure> {
    let cfg = session_config(g).map_err(usage)?;
    let suite = suite_from(suite).map_err(usage)?;
    let (world, q) = suite
        .iter()
        .find_map(|w| w.question(question).map(|q| (w, q)))
        .ok_or_else(|| usage(anyhow!("no question {question:?} in the suite")))?;
    let shared = Arc::new(world.world.clone());
    let video = shared
        .video(&q.query.video)
        .map_err(usage)?
        .descriptor
        .clone();
    let llm: Arc<dyn LlmPort> = match llm_endpoint {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(usage)?;
            let ep: EndpointConfig = serde_json::from_str(&text).map_err(usage)?;
            Arc::new(RemoteClient::from_env(ep).map_err(usage)?)
        }
        None => Arc::new(ScriptedLlm::new(Arc::clone(&shared), &video.id)),
    };
    let vision: Arc<dyn VisionPort> = match frames {
        Some(dir) => Arc::new(FrameFileVision::load(dir).map_err(usage)?),
        None => Arc::new(ScriptedVision::new(Arc::clone(&shared))),
    };
    let result = run_session(&q.query, &video, &cfg, &Ports::new(llm, vision));
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            if let (qtr_core::error::Error::SessionAborted { trace, .. }, Some(dir)) = (&e, &g.out) {
                let _ = trace.write(dir.join(&q.id).join("trace.ndjson"));
            }
            return Err(Failure::Run(e.into()));
        }
    };
    if let Some(dir) = &g.out {
        result
            .trace
            .write(dir.join(&q.id).join("trace.ndjson"))
            .map_err(|e| Failure::Run(e.into()))?;
    }
    let correct = grade(&result.final_answer.answer, &q.gold_answer, &q.query);
    let text = match g.format {
        OutputFormat::Structured => {
            let mut v = serde_json::to_value(&result).map_err(|e| Failure::Run(e.into()))?;
            v["trace"] = serde_json::Value::String(result.trace.hash());
            v["correct"] = serde_json::Value::Bool(correct);
            format!("{}\n", serde_json::to_string_pretty(&v).expect("json"))
        }
        _ => {
            let sep = if g.format == OutputFormat::Delimited { "\t" } else { ": " };
            let rows = [
                ("question", q.query.formatted()),
                ("answer", result.final_answer.answer.clone()),
                ("gold", q.gold_answer.clone()),
                ("correct", correct.to_string()),
                ("confidence", result.final_answer.confidence.score.to_string()),
                ("iterations", result.iterations_used.to_string()),
                ("frames", result.total_frames.to_string()),
                ("terminated_by", result.terminated_by.to_string()),
                (
                    "interval",
                    result.answer_interval.map_or("-".into(), |i| i.to_string()),
                ),
                ("trace_hash", result.trace.hash()),
            ];
            rows.iter().map(|(k, v)| format!("{k}{sep}{v}\n")).collect()
        }
    };
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Run {
            question,
            suite,
            llm_endpoint,
            frames,
        } => cmd_run(g, question, suite, llm_endpoint, frames),
        Command::Suite { suite } => {
            let cfg = session_config(g).map_err(usage)?;
            let suite = suite_from(suite).map_err(usage)?;
            let report = run_suite(&suite, &cfg, &opts(g)).map_err(|e| Failure::Run(e.into()))?;
            emit(g, &report_name(g, "report"), &render_run(&report, g.format)).map_err(Failure::Run)?;
            if report.failures > 0 {
                return Err(Failure::Run(anyhow!("{} session(s) failed", report.failures)));
            }
            Ok(())
        }
        Command::Sweep { world, durations } => {
            let cfg = session_config(g).map_err(usage)?;
            let base = match world {
                Some(p) => {
                    let mut worlds = load_suite(p).map_err(usage)?;
                    if worlds.len() != 1 {
                        return Err(usage(anyhow!("sweep takes exactly one world document")));
                    }
                    worlds.remove(0)
                }
                None => builtin::sweep_world(),
            };
            if durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return Err(usage(anyhow!("durations must be positive")));
            }
            let points = duration_sweep(&base, durations, &cfg, &opts(g)).map_err(|e| Failure::Run(e.into()))?;
            emit(g, &report_name(g, "sweep"), &render_sweep(&points, g.format)).map_err(Failure::Run)
        }
        Command::Ablate { suite, seeds } => {
            let cfg = session_config(g).map_err(usage)?;
            let suite = suite_from(suite).map_err(usage)?;
            let seeds: Vec<u64> = (0..*seeds).collect();
            let run_opts = RunOptions {
                threads: g.threads,
                trace_dir: None,
            };
            let rows = ablate(&suite, &cfg, &seeds, &run_opts).map_err(|e| Failure::Run(e.into()))?;
            emit(g, &report_name(g, "ablation"), &render_ablation(&rows, g.format)).map_err(Failure::Run)
        }
        Command::Replay { trace } => {
            let recorded = SessionTrace::read(trace).map_err(usage)?;
            let replayed = replay_session(&recorded).map_err(|e| Failure::Run(e.into()))?;
            let hash = replayed.trace.hash();
            if hash != recorded.hash() {
                return Err(Failure::Run(anyhow!("replayed trace hash {hash} differs from {}", recorded.hash())));
            }
            println!("replay ok: {} records, hash {hash}", recorded.records.len());
            Ok(())
        }
        Command::Oracle { suite, question } => {
            let cfg = session_config(g).map_err(usage)?;
            let suite = suite_from(suite).map_err(usage)?;
            let mut results = Vec::new();
            for w in &suite {
                for q in &w.questions {
                    if question.as_ref().is_some_and(|id| *id != q.id) {
                        continue;
                    }
                    let r = brute_force_oracle(&w.world, q, cfg.budget.max_segment_s, cfg.frames_per_segment)
                        .map_err(|e| Failure::Run(e.into()))?;
                    results.push(r);
                }
            }
            if results.is_empty() {
                return Err(usage(anyhow!("no matching questions")));
            }
            emit(g, &report_name(g, "oracle"), &render_oracle(&results, g.format)).map_err(Failure::Run)
        }
        Command::ExportSuite { dir } => export(dir).map_err(Failure::Run),
    }
}

fn export(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    for w in builtin::generate_default_suite() {
        let path = dir.join(format!("{}.json", w.world.name));
        let mut text = serde_json::to_string_pretty(&w)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
