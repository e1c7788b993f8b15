//! Running one task attempt.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fs::File;
use std::os::unix::process::CommandExt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::resources::{
    charged_to, current_tid, peak_resident, sample_resources, thread_cpu_seconds, tracking_installed, Account, ProcessSource,
    ResourceSample, StatsSource, ThreadSource, Unavailable,
};
use super::{cache_key, now_ms, work_dir, write_atomic};
use crate::builtins::{BuiltinContext, BuiltinFn, Ports, Registry};
use crate::canonical::digest_value;
use crate::workflow::validate::template_placeholders;
use crate::workflow::{FileRef, ProcessDef, ProcessKind, TypeExpr};

/// A planned task with its inputs resolved to concrete values.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTask {
    pub task_id: String,
    pub process: String,
    /// `op@version` for builtins, `exec:<template>` for commands.
    pub version: String,
    pub attempt: u32,
    pub tag: String,
    pub inputs: Ports,
    /// Only the workflow parameters this process declares or references.
    pub params: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeStatus {
    Succeeded,
    Failed,
    Cached,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error("{0}")]
    TaskFailed(String),
    #[error("timed out after {} ms", .0.as_millis())]
    Timeout(Duration),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub status: OutcomeStatus,
    pub outputs: Ports,
    pub error: Option<TaskError>,
    pub workdir: PathBuf,
    pub started_ms: u64,
    pub completed_ms: u64,
    /// Mean CPU use over the attempt, in cores.
    pub cpu_fraction: Option<f64>,
    pub peak_bytes: Option<u64>,
    pub samples: Vec<ResourceSample>,
}

/// What a task attempt may touch.
pub struct ExecEnv<'a> {
    pub registry: &'a Registry,
    /// Directory that relative file references resolve against.
    pub base_dir: &'a Path,
    /// Root holding `work/`, `cache/`, `runs/` and `results/`.
    pub root: &'a Path,
    /// Full workflow parameters, for `emits` lengths.
    pub workflow_params: &'a BTreeMap<String, Value>,
    pub timeout: Option<Duration>,
    /// When false, CPU and memory are reported absent.
    pub measure: bool,
    pub sample_interval: Duration,
}

struct Measured {
    result: Result<Ports, TaskError>,
    cpu_fraction: Option<f64>,
    peak_bytes: Option<u64>,
    samples: Vec<ResourceSample>,
}

pub fn execute_task(task: &ResolvedTask, process: &ProcessDef, env: &ExecEnv) -> TaskOutcome {
    let started_ms = now_ms();
    let key = match cache_key(task) {
        Ok(k) => k,
        Err(e) => {
            return TaskOutcome {
                status: OutcomeStatus::Failed,
                outputs: Ports::new(),
                error: Some(TaskError::TaskFailed(e.to_string())),
                workdir: PathBuf::new(),
                started_ms,
                completed_ms: now_ms(),
                cpu_fraction: None,
                peak_bytes: None,
                samples: Vec::new(),
            }
        }
    };
    let dir = work_dir(env.root, &key);
    let prepared = (|| {
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)
    })();
    let measured = match prepared {
        Err(e) => Measured {
            result: Err(TaskError::TaskFailed(format!("{}: {e}", dir.display()))),
            cpu_fraction: None,
            peak_bytes: None,
            samples: Vec::new(),
        },
        Ok(()) => match &process.kind {
            ProcessKind::Builtin(op) => match env.registry.get(op) {
                None => Measured {
                    result: Err(TaskError::TaskFailed(format!("unknown operation {op}"))),
                    cpu_fraction: None,
                    peak_bytes: None,
                    samples: Vec::new(),
                },
                Some(b) => run_builtin(b.run, task, &dir, env),
            },
            ProcessKind::Exec(template) => run_command(template, task, process, &dir, env),
        },
    };
    let result = measured.result.and_then(|out| check_outputs(process, env.workflow_params, out).map_err(TaskError::TaskFailed));
    let completed_ms = now_ms().max(started_ms);
    let (status, outputs, error) = match result {
        Ok(out) => (OutcomeStatus::Succeeded, out, None),
        Err(e) => (OutcomeStatus::Failed, Ports::new(), Some(e)),
    };
    let outcome = TaskOutcome {
        status,
        outputs,
        error,
        workdir: dir,
        started_ms,
        completed_ms,
        cpu_fraction: if env.measure { measured.cpu_fraction } else { None },
        peak_bytes: if env.measure { measured.peak_bytes } else { None },
        samples: measured.samples,
    };
    if let Err(e) = write_manifest(task, &key, &outcome) {
        let mut failed = outcome;
        failed.status = OutcomeStatus::Failed;
        failed.outputs.clear();
        failed.error = Some(TaskError::TaskFailed(format!("cannot write .outcome: {e}")));
        return failed;
    }
    outcome
}

fn write_manifest(task: &ResolvedTask, key: &str, o: &TaskOutcome) -> std::io::Result<()> {
    let digests: BTreeMap<&String, String> = o.outputs.iter().map(|(k, v)| (k, digest_value(v))).collect();
    let manifest = json!({
        "task_id": task.task_id,
        "process": task.process,
        "version": task.version,
        "attempt": task.attempt,
        "cache_key": key,
        "status": o.status,
        "error": o.error.as_ref().map(|e| e.to_string()),
        "outputs": digests,
        "timing": {
            "started_ms": o.started_ms,
            "completed_ms": o.completed_ms,
            "duration_ms": o.completed_ms - o.started_ms,
            "cpu_fraction": o.cpu_fraction,
            "peak_bytes": o.peak_bytes,
            "samples": o.samples.len(),
        },
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&o.workdir.join(".outcome"), text.as_bytes())
}

fn check_outputs(process: &ProcessDef, params: &BTreeMap<String, Value>, mut out: Ports) -> Result<Ports, String> {
    let mut kept = Ports::new();
    for (port, decl) in &process.outputs {
        let v = out.remove(port).ok_or_else(|| format!("declared output {port} was not produced"))?;
        if decl.ty.element().is_some() {
            let xs = v.as_array().ok_or_else(|| format!("output {port} must be a list"))?;
            if let Some(n) = decl.emits.as_ref().and_then(|e| e.resolve(params)) {
                if xs.len() as u64 != n {
                    return Err(format!("output {port} has {} elements, declared {n}", xs.len()));
                }
            }
        }
        kept.insert(port.clone(), v);
    }
    Ok(kept)
}

fn run_builtin(run: BuiltinFn, task: &ResolvedTask, dir: &Path, env: &ExecEnv) -> Measured {
    let params = task.params.clone();
    let inputs = task.inputs.clone();
    let base = env.base_dir.to_path_buf();
    let dir = dir.to_path_buf();
    let (measure, interval) = (env.measure, env.sample_interval);
    let call = move || measured_builtin(run, &params, &base, &dir, &inputs, measure, interval);
    match env.timeout {
        None => call(),
        Some(limit) => {
            let (tx, rx) = crossbeam_channel::bounded(1);
            std::thread::spawn(move || {
                let _ = tx.send(call());
            });
            rx.recv_timeout(limit).unwrap_or(Measured {
                result: Err(TaskError::Timeout(limit)),
                cpu_fraction: None,
                peak_bytes: None,
                samples: Vec::new(),
            })
        }
    }
}

fn measured_builtin(
    run: BuiltinFn,
    params: &BTreeMap<String, Value>,
    base_dir: &Path,
    task_dir: &Path,
    inputs: &Ports,
    measure: bool,
    interval: Duration,
) -> Measured {
    let ctx = BuiltinContext { params, base_dir, task_dir };
    let account = Arc::new(Account::default());
    let tracked = tracking_installed();
    let sampler = measure.then(|| {
        let source = ThreadSource { tid: current_tid(), account: tracked.then(|| account.clone()) };
        sample_resources(Box::new(source), interval)
    });
    let t0 = Instant::now();
    let cpu0 = thread_cpu_seconds();
    let result = catch_unwind(AssertUnwindSafe(|| charged_to(&account, || run(&ctx, inputs))));
    let cpu1 = thread_cpu_seconds();
    let wall = t0.elapsed().as_secs_f64();
    let samples = sampler.map(|s| s.finish()).unwrap_or_default();
    let result = match result {
        Ok(r) => r.map_err(TaskError::TaskFailed),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "operation panicked".into());
            Err(TaskError::TaskFailed(format!("panic: {msg}")))
        }
    };
    let cpu_fraction = match (cpu0, cpu1) {
        (Some(a), Some(b)) if wall > 0.0 => Some((b - a).max(0.0) / wall),
        _ => None,
    };
    Measured { result, cpu_fraction, peak_bytes: tracked.then(|| account.peak()), samples }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn as_file_ref(v: &Value) -> Option<FileRef> {
    match v {
        Value::Object(m) if m.len() == 2 => serde_json::from_value(v.clone()).ok(),
        _ => None,
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Expands `{port}` and `{params.name}` placeholders.
pub fn render_command(template: &str, task: &ResolvedTask, base_dir: &Path) -> Result<String, String> {
    let mut out = template.to_string();
    for ph in template_placeholders(template) {
        let value = if let Some(name) = ph.strip_prefix("params.") {
            shell_quote(&scalar_text(task.params.get(name).ok_or_else(|| format!("unknown parameter {name}"))?))
        } else {
            let v = task.inputs.get(&ph).ok_or_else(|| format!("unknown input {ph}"))?;
            match as_file_ref(v) {
                Some(r) => shell_quote(&r.resolve(base_dir).to_string_lossy()),
                None => shell_quote(&format!("{ph}.in.json")),
            }
        };
        out = out.replace(&format!("{{{ph}}}"), &value);
    }
    Ok(out)
}

fn run_command(template: &str, task: &ResolvedTask, process: &ProcessDef, dir: &Path, env: &ExecEnv) -> Measured {
    let fail = |m: String| Measured { result: Err(TaskError::TaskFailed(m)), cpu_fraction: None, peak_bytes: None, samples: Vec::new() };
    for (port, v) in &task.inputs {
        if let Err(e) = std::fs::write(dir.join(format!("{port}.in.json")), serde_json::to_vec_pretty(v).expect("json")) {
            return fail(format!("cannot materialize input {port}: {e}"));
        }
    }
    let command = match render_command(template, task, env.base_dir) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let (Ok(stdout), Ok(stderr)) = (File::create(dir.join(".command.out")), File::create(dir.join(".command.err"))) else {
        return fail("cannot create output capture files".into());
    };
    let t0 = Instant::now();
    let child = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(stdout)
        .stderr(stderr)
        .process_group(0)
        .spawn();
    let pid = match child {
        Ok(c) => c.id() as i32,
        Err(e) => return fail(format!("cannot start sh: {e}")),
    };
    let source: Box<dyn StatsSource> = if env.measure { Box::new(ProcessSource { pid }) } else { Box::new(Unavailable) };
    let sampler = sample_resources(source, env.sample_interval);
    let waited = wait_child(pid, env.timeout.map(|d| t0 + d));
    let wall = t0.elapsed().as_secs_f64();
    let samples = sampler.finish();
    let (status, usage, timed_out) = match waited {
        Ok(w) => w,
        Err(e) => return fail(format!("wait failed: {e}")),
    };
    let cpu = usage.ru_utime.tv_sec as f64 + usage.ru_utime.tv_usec as f64 * 1e-6 + usage.ru_stime.tv_sec as f64 + usage.ru_stime.tv_usec as f64 * 1e-6;
    let cpu_fraction = (wall > 0.0).then(|| cpu / wall);
    let rusage_peak = (usage.ru_maxrss > 0).then(|| usage.ru_maxrss as u64 * 1024);
    let peak_bytes = rusage_peak.max(peak_resident(&samples));
    let result = if timed_out {
        Err(TaskError::Timeout(env.timeout.unwrap_or_default()))
    } else if libc::WIFEXITED(status) && libc::WEXITSTATUS(status) == 0 {
        read_command_outputs(process, dir, env.base_dir).map_err(TaskError::TaskFailed)
    } else if libc::WIFEXITED(status) {
        Err(TaskError::TaskFailed(format!("exit code {}", libc::WEXITSTATUS(status))))
    } else {
        Err(TaskError::TaskFailed(format!("killed by signal {}", libc::WTERMSIG(status))))
    };
    Measured { result, cpu_fraction, peak_bytes, samples }
}

fn wait_child(pid: i32, deadline: Option<Instant>) -> std::io::Result<(i32, libc::rusage, bool)> {
    let mut status = 0;
    // SAFETY: rusage is plain data.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let mut timed_out = false;
    loop {
        let flags = if deadline.is_some() && !timed_out { libc::WNOHANG } else { 0 };
        // SAFETY: valid out-pointers; pid is our child.
        let r = unsafe { libc::wait4(pid, &mut status, flags, &mut usage) };
        if r == pid {
            return Ok((status, usage, timed_out));
        }
        if r == -1 {
            let e = std::io::Error::last_os_error();
            if e.kind() == std::io::ErrorKind::Interrupted {
                continue;
            }
            return Err(e);
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            // SAFETY: signals the child's own process group.
            unsafe { libc::kill(-pid, libc::SIGKILL) };
            timed_out = true;
        } else {
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

/// Reads `<port>.out.json` for every declared output. A `FileRef` port may
/// hold a plain path relative to the task directory.
fn read_command_outputs(process: &ProcessDef, dir: &Path, base_dir: &Path) -> Result<Ports, String> {
    let mut out = Ports::new();
    for (port, decl) in &process.outputs {
        let path = dir.join(format!("{port}.out.json"));
        let text = std::fs::read_to_string(&path).map_err(|_| format!("declared output {port} was not produced ({port}.out.json)"))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| format!("{port}.out.json: {e}"))?;
        let to_ref = |v: Value| -> Result<Value, String> {
            match v {
                Value::String(p) => {
                    let r = FileRef::new(base_dir, &dir.join(&p)).map_err(|e| format!("output {port}: {p}: {e}"))?;
                    Ok(serde_json::to_value(r).expect("file ref"))
                }
                other => Ok(other),
            }
        };
        let file_ref = TypeExpr::Base(crate::workflow::BaseType::FileRef);
        let v = if decl.ty == file_ref {
            to_ref(v)?
        } else if decl.ty.element() == Some(&file_ref) {
            match v {
                Value::Array(xs) => Value::Array(xs.into_iter().map(to_ref).collect::<Result<_, _>>()?),
                other => other,
            }
        } else {
            v
        };
        out.insert(port.clone(), v);
    }
    Ok(out)
}
