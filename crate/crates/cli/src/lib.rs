//! The `cameo` command line.

use cameo_core::builtins::Registry;
use cameo_core::demo::{write_demo, Formulation};
use cameo_core::executor::{resolve_workdir, run_workflow, FinalState, RunError, RunOptions, RunResult};
use cameo_core::provenance::{aggregate_stats, render_provenance_report};
use cameo_core::workflow::{build_dag, parse_workflow, plan_tasks, resolve_sources, validate_workflow, Plan, ProcessGraph};
use clap::{Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Parser)]
#[command(name = "cameo", version, about = "Run battery co-design sweeps as cached, resumable workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a workflow document against the component contracts.
    Validate { workflow: PathBuf },
    /// Print how many tasks each process would run.
    Plan { workflow: PathBuf },
    /// Execute a workflow.
    Run {
        workflow: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
        /// Root for work, cache, runs and results (default: $CAMEO_WORKDIR, else .cameo next to the workflow).
        #[arg(long)]
        workdir: Option<PathBuf>,
        /// Overrides the workflow's seed parameter.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-attempt time limit in seconds.
        #[arg(long)]
        timeout: Option<f64>,
    },
    /// Write stats.csv and report.html for a finished run directory.
    Report { rundir: PathBuf },
    /// Generate synthetic inputs and run a shipped pipeline end to end.
    Demo {
        formulation: Which,
        /// Output directory (default: ./demo-a or ./demo-b).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        exec: ExecArgs,
    },
}

#[derive(Debug, clap::Args)]
struct ExecArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    max_parallel: Option<u64>,
    /// Reuse cached results of earlier runs.
    #[arg(long)]
    resume: bool,
    /// Stop dispatching after N executed successes, as if interrupted.
    #[arg(long, hide = true)]
    abort_after: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Which {
    A,
    B,
}

/// Parses `argv` (program name first) and runs the command.
pub fn cli_main(argv: &[String]) -> i32 {
    run_cli(argv, &mut std::io::stdout(), &mut std::io::stderr(), None)
}

/// Like [`cli_main`] with explicit streams and an optional interrupt flag.
pub fn run_cli(argv: &[String], out: &mut dyn Write, err: &mut dyn Write, cancel: Option<Arc<AtomicBool>>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render().ansi());
                    2
                }
            };
        }
    };
    match dispatch(cli.command, out, err, cancel) {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write, cancel: Option<Arc<AtomicBool>>) -> Result<i32, String> {
    match cmd {
        Command::Validate { workflow } => validate(&workflow, out),
        Command::Plan { workflow } => {
            let (_, plan) = load(&workflow, err)?;
            for (name, n) in &plan.counts {
                w(out, format!("{name}: {n}"));
            }
            Ok(0)
        }
        Command::Run { workflow, exec, workdir, seed, timeout } => {
            let (graph, plan) = load(&workflow, err)?;
            let base = base_dir(&workflow);
            let mut opts = RunOptions::new(resolve_workdir(workdir.as_deref(), &base.join(".cameo")), base);
            opts.seed = seed;
            if let Some(t) = timeout {
                if !(t.is_finite() && t > 0.0) {
                    return Err("--timeout must be a positive number of seconds".into());
                }
                opts.timeout = Some(Duration::from_secs_f64(t));
            }
            exec.apply(&mut opts, cancel);
            execute(&graph, &plan, &opts, out, err).map(|(code, _)| code)
        }
        Command::Report { rundir } => {
            let trace = rundir.join("trace.tsv");
            let stats = aggregate_stats(&trace).map_err(|e| format!("{}: {e}", trace.display()))?;
            let bundle = render_provenance_report(&stats, &trace, &rundir).map_err(|e| e.to_string())?;
            w(out, format!("wrote {}", bundle.csv.display()));
            w(out, format!("wrote {}", bundle.html.display()));
            Ok(0)
        }
        Command::Demo { formulation, out: dir, seed, exec } => {
            let f = match formulation {
                Which::A => Formulation::A,
                Which::B => Formulation::B,
            };
            let dir = dir.unwrap_or_else(|| PathBuf::from(match f {
                Formulation::A => "demo-a",
                Formulation::B => "demo-b",
            }));
            let workflow = write_demo(&dir, f, seed).map_err(|e| format!("{}: {e}", dir.display()))?;
            let (graph, plan) = load(&workflow, err)?;
            let mut opts = RunOptions::new(dir.clone(), dir.clone());
            opts.seed = Some(seed);
            exec.apply(&mut opts, cancel);
            let (code, run) = execute(&graph, &plan, &opts, out, err)?;
            if code == 0 {
                if let Some(run) = run {
                    let stats = aggregate_stats(&run.trace).map_err(|e| e.to_string())?;
                    let bundle = render_provenance_report(&stats, &run.trace, &dir.join("report")).map_err(|e| e.to_string())?;
                    w(out, format!("report: {}", bundle.html.display()));
                }
            }
            Ok(code)
        }
    }
}

impl ExecArgs {
    fn apply(&self, opts: &mut RunOptions, cancel: Option<Arc<AtomicBool>>) {
        if let Some(n) = self.max_parallel {
            opts.max_parallel = n as usize;
        }
        opts.resume = self.resume;
        opts.stop_after_successes = self.abort_after;
        opts.cancel = cancel;
    }
}

fn w(out: &mut dyn Write, line: String) {
    let _ = writeln!(out, "{line}");
}

fn base_dir(workflow: &Path) -> PathBuf {
    match workflow.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn validate(path: &Path, out: &mut dyn Write) -> Result<i32, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let spec = parse_workflow(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let report = validate_workflow(&spec, &Registry::standard().contracts());
    for f in &report.findings {
        w(out, f.to_string());
    }
    if report.is_ok() {
        w(out, format!("{}: ok", path.display()));
        Ok(0)
    } else {
        w(out, format!("{}: {} error(s)", path.display(), report.error_count()));
        Ok(1)
    }
}

/// Parses, validates and plans a workflow. Validation errors go to `err`.
fn load(path: &Path, err: &mut dyn Write) -> Result<(ProcessGraph, Plan), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let spec = parse_workflow(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let report = validate_workflow(&spec, &Registry::standard().contracts());
    if !report.is_ok() {
        for f in &report.findings {
            let _ = writeln!(err, "{f}");
        }
        return Err(format!("{} is not valid", path.display()));
    }
    let graph = build_dag(&spec).map_err(|e| e.to_string())?;
    let sources = resolve_sources(&spec, &base_dir(path)).map_err(|e| e.to_string())?;
    let plan = plan_tasks(&graph, &sources).map_err(|e| e.to_string())?;
    Ok((graph, plan))
}

fn summary(out: &mut dyn Write, run: &RunResult) {
    w(
        out,
        format!(
            "{}: {} succeeded, {} cached, {} failed, {} skipped, {} not run",
            run.run_dir.display(),
            run.count(FinalState::Succeeded),
            run.count(FinalState::Cached),
            run.count(FinalState::FailedPermanent),
            run.count(FinalState::Skipped),
            run.count(FinalState::NotRun),
        ),
    );
}

fn execute(
    graph: &ProcessGraph,
    plan: &Plan,
    opts: &RunOptions,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(i32, Option<RunResult>), String> {
    match run_workflow(graph, plan, &Registry::standard(), opts) {
        Ok(run) => {
            summary(out, &run);
            for t in run.tasks.iter().filter(|t| t.state == FinalState::FailedPermanent) {
                let _ = writeln!(err, "{} failed after {} attempt(s): {}", t.task_id, t.attempts, t.error.as_deref().unwrap_or("unknown error"));
            }
            for p in &run.published {
                w(out, format!("published {}", p.display()));
            }
            let code = if run.is_success() { 0 } else { 1 };
            Ok((code, Some(run)))
        }
        Err(RunError::RunAborted(run)) => {
            summary(out, &run);
            let _ = writeln!(err, "{}", RunError::RunAborted(run));
            Ok((1, None))
        }
        Err(e) => Err(e.to_string()),
    }
}
