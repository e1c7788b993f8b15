//! Runs a planned workflow: bounded worker pool, retries, content-addressed
//! cache with resume, and a trace line per attempt.
//!
//! Layout under the workdir root:
//!
//! ```text
//! work/<k2>/<k62>/      task directories (inputs, captured output, .outcome)
//! cache/<k2>/<k62>.json cache entries of succeeded tasks
//! runs/run-NNNN/        trace.tsv and scheduler.log of each run
//! results/              published files
//! ```

pub mod resources;
pub mod task;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crate::builtins::{Ports, Registry};
use crate::canonical::{canonical_string, sha256_hex, to_payload, SerializationError};
use crate::provenance::{append_trace, TraceError, TraceRecord, TraceStatus};
use crate::workflow::validate::template_placeholders;
use crate::workflow::{FileRef, Plan, ProcessGraph, ProcessKind};

pub use resources::{sample_resources, ResourceSample, StatsSource, TrackingAlloc};
pub use task::{execute_task, render_command, ExecEnv, OutcomeStatus, ResolvedTask, TaskError, TaskOutcome};

/// Environment variable naming the default workdir root.
pub const WORKDIR_ENV: &str = "CAMEO_WORKDIR";

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Hex digest over process name, version and canonical payload. Attempt,
/// tag and timing do not participate.
pub fn cache_key(task: &ResolvedTask) -> Result<String, SerializationError> {
    let payload = json!({
        "process": task.process,
        "version": task.version,
        "payload": {
            "inputs": to_payload(&task.inputs)?,
            "params": to_payload(&task.params)?,
        },
    });
    Ok(sha256_hex(canonical_string(&payload).as_bytes()))
}

pub fn work_dir(root: &Path, key: &str) -> PathBuf {
    root.join("work").join(&key[..2]).join(&key[2..])
}

fn cache_path(root: &Path, key: &str) -> PathBuf {
    root.join("cache").join(&key[..2]).join(format!("{}.json", &key[2..]))
}

/// Write to a temporary sibling, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub version: String,
    pub process: String,
    pub outputs: Ports,
    pub completed_at: String,
}

pub fn store_cache_entry(root: &Path, entry: &CacheEntry) -> std::io::Result<()> {
    let text = serde_json::to_vec(entry).expect("cache entry serializes");
    write_atomic(&cache_path(root, &entry.key), &text)
}

fn file_refs<'a>(v: &'a Value, out: &mut Vec<FileRef>) {
    match v {
        Value::Object(m) if m.len() == 2 && m.contains_key("path") && m.contains_key("sha256") => {
            if let Ok(r) = serde_json::from_value(v.clone()) {
                out.push(r);
            }
        }
        Value::Object(m) => m.values().for_each(|x| file_refs(x, out)),
        Value::Array(xs) => xs.iter().for_each(|x| file_refs(x, out)),
        _ => {}
    }
}

/// A usable entry: present, complete, and every referenced file unchanged.
pub fn lookup_cache(root: &Path, base_dir: &Path, key: &str) -> Option<CacheEntry> {
    let bytes = std::fs::read(cache_path(root, key)).ok()?;
    let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
    if entry.key != key || !work_dir(root, key).join(".outcome").is_file() {
        return None;
    }
    let mut refs = Vec::new();
    entry.outputs.values().for_each(|v| file_refs(v, &mut refs));
    for r in refs {
        let data = std::fs::read(r.resolve(base_dir)).ok()?;
        if sha256_hex(&data) != r.sha256 {
            return None;
        }
    }
    Some(entry)
}

// --- retries ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetryDecision {
    Retry(Duration),
    FailPermanent,
}

/// `attempt` is the number of the attempt that just failed, from 1.
pub fn apply_retry_policy(outcome: &TaskOutcome, policy: &RetryPolicy, attempt: u32, rng: &mut impl Rng) -> RetryDecision {
    debug_assert_eq!(outcome.status, OutcomeStatus::Failed);
    if attempt == 0 || attempt > policy.max_retries {
        return RetryDecision::FailPermanent;
    }
    let nominal = policy.base_delay_ms as f64 * 2f64.powi(attempt as i32 - 1);
    let jitter = rng.gen_range(-0.1..=0.1);
    RetryDecision::Retry(Duration::from_secs_f64(nominal * (1.0 + jitter) / 1000.0))
}

// --- tags ------------------------------------------------------------------------------

fn find_key<'a>(v: &'a Value, key: &str) -> Option<&'a Value> {
    match v {
        Value::Object(m) => {
            if let Some(x) = m.get(key).filter(|x| !x.is_object() && !x.is_array()) {
                return Some(x);
            }
            m.values().find_map(|x| find_key(x, key))
        }
        Value::Array(xs) => xs.iter().find_map(|x| find_key(x, key)),
        _ => None,
    }
}

/// Fills `{name}` from a scalar input port, `{params.name}` from the
/// workflow parameters, and otherwise from the first field called `name`
/// found in the inputs.
pub fn render_tag(template: &str, inputs: &Ports, params: &BTreeMap<String, Value>) -> String {
    let text = |v: &Value| match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let mut out = template.to_string();
    for ph in template_placeholders(template) {
        let v = match ph.strip_prefix("params.") {
            Some(p) => params.get(p),
            None => inputs
                .get(&ph)
                .filter(|v| !v.is_object() && !v.is_array())
                .or_else(|| inputs.values().find_map(|v| find_key(v, &ph))),
        };
        if let Some(v) = v {
            out = out.replace(&format!("{{{ph}}}"), &text(v));
        }
    }
    out
}

// --- runs ------------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub max_parallel: usize,
    pub resume: bool,
    /// Root for work, cache, runs and results.
    pub workdir: PathBuf,
    /// Directory that relative file references resolve against.
    pub base_dir: PathBuf,
    /// Overrides the workflow's `seed` parameter.
    pub seed: Option<u64>,
    pub retry_base_ms: u64,
    pub timeout: Option<Duration>,
    /// False reports CPU and memory as absent.
    pub measure: bool,
    pub sample_interval: Duration,
    pub cancel: Option<Arc<AtomicBool>>,
    /// Stop dispatching after this many executed successes, finish what is
    /// running, and report the run as aborted.
    pub stop_after_successes: Option<usize>,
}

impl RunOptions {
    pub fn new(workdir: impl Into<PathBuf>, base_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            max_parallel: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            resume: false,
            workdir: workdir.into(),
            base_dir: base_dir.into(),
            seed: None,
            retry_base_ms: 500,
            timeout: None,
            measure: true,
            sample_interval: resources::SAMPLE_INTERVAL,
            cancel: None,
            stop_after_successes: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalState {
    Succeeded,
    Cached,
    FailedPermanent,
    Skipped,
    /// Never started because the run was aborted.
    NotRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskReport {
    pub task_id: String,
    pub process: String,
    pub state: FinalState,
    pub attempts: u32,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_dir: PathBuf,
    pub trace: PathBuf,
    pub scheduler_log: PathBuf,
    pub tasks: Vec<TaskReport>,
    /// Outputs of succeeded and cached tasks, by task id.
    pub outputs: BTreeMap<String, Ports>,
    pub published: Vec<PathBuf>,
}

impl RunResult {
    pub fn count(&self, state: FinalState) -> usize {
        self.tasks.iter().filter(|t| t.state == state).count()
    }

    pub fn is_success(&self) -> bool {
        self.tasks.iter().all(|t| matches!(t.state, FinalState::Succeeded | FinalState::Cached))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("run aborted; {} tasks finished, state kept for --resume", .0.count(FinalState::Succeeded) + .0.count(FinalState::Cached))]
    RunAborted(Box<RunResult>),
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

fn new_run_dir(root: &Path) -> std::io::Result<PathBuf> {
    let runs = root.join("runs");
    std::fs::create_dir_all(&runs)?;
    let mut n = std::fs::read_dir(&runs)?
        .filter_map(|e| e.ok()?.file_name().to_str()?.strip_prefix("run-")?.parse::<u32>().ok())
        .max()
        .unwrap_or(0);
    loop {
        n += 1;
        let dir = runs.join(format!("run-{n:04}"));
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
}

/// Start/end events of worker execution with the number running.
struct SchedulerLog {
    state: Mutex<(File, usize)>,
}

impl SchedulerLog {
    fn event(&self, event: &str, task: &str) {
        let mut g = self.state.lock().unwrap_or_else(|p| p.into_inner());
        if event == "start" {
            g.1 += 1;
        } else {
            g.1 -= 1;
        }
        let line = format!("{}\t{event}\t{task}\trunning={}\n", now_ms(), g.1);
        let _ = g.0.write_all(line.as_bytes());
    }
}

/// Peak of the `running=` column of a scheduler log.
pub fn peak_concurrency(log: &str) -> usize {
    log.lines().filter_map(|l| l.rsplit_once("running=")?.1.trim().parse().ok()).max().unwrap_or(0)
}

struct Job {
    idx: usize,
    key: String,
    task: ResolvedTask,
}

struct Done {
    idx: usize,
    key: String,
    task: ResolvedTask,
    outcome: TaskOutcome,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Waiting,
    Ready,
    Running,
    Retrying,
    Done(FinalState),
}

struct Coordinator<'a> {
    graph: &'a ProcessGraph,
    plan: &'a Plan,
    registry: &'a Registry,
    opts: &'a RunOptions,
    params: BTreeMap<String, Value>,
    trace: PathBuf,
    proc_index: Vec<usize>,
    dependents: Vec<Vec<usize>>,
    remaining: Vec<usize>,
    state: Vec<State>,
    attempts: Vec<u32>,
    submit_ms: Vec<u64>,
    errors: Vec<Option<String>>,
    outputs: HashMap<String, Ports>,
    ready: BTreeSet<usize>,
    /// Keys being executed; equal keys share a work directory.
    inflight: BTreeSet<String>,
    delayed: Vec<(Instant, usize)>,
    published: Vec<PathBuf>,
    successes: usize,
    rng: ChaCha8Rng,
}

impl Coordinator<'_> {
    fn declared_params(&self, pi: usize) -> BTreeMap<String, Value> {
        let p = &self.graph.spec.processes[pi];
        let names: Vec<String> = match &p.kind {
            ProcessKind::Builtin(op) => self
                .registry
                .get(op)
                .map(|b| b.contract.params.iter().map(|s| s.name.clone()).collect())
                .unwrap_or_default(),
            ProcessKind::Exec(t) => template_placeholders(t).iter().filter_map(|x| x.strip_prefix("params.")).map(String::from).collect(),
        };
        names.into_iter().filter_map(|n| self.params.get(&n).map(|v| (n, v.clone()))).collect()
    }

    fn resolve(&self, idx: usize) -> Result<ResolvedTask, String> {
        let t = &self.plan.tasks[idx];
        let pi = self.proc_index[idx];
        let lookup = |task: &str, port: &str| self.outputs.get(task).and_then(|p| p.get(port));
        let mut inputs = Ports::new();
        for (port, item) in &t.inputs {
            inputs.insert(port.clone(), item.resolve(&lookup)?);
        }
        let version = match &self.graph.spec.processes[pi].kind {
            ProcessKind::Builtin(op) => op.clone(),
            ProcessKind::Exec(t) => format!("exec:{t}"),
        };
        Ok(ResolvedTask {
            task_id: t.task_id.clone(),
            process: t.process.clone(),
            version,
            attempt: self.attempts[idx] + 1,
            tag: render_tag(&t.tag, &inputs, &self.params),
            inputs,
            params: self.declared_params(pi),
        })
    }

    fn record(&self, task: &ResolvedTask, status: TraceStatus, submit: u64, start: u64, complete: u64, o: Option<&TaskOutcome>) -> Result<(), RunError> {
        let start = start.max(submit);
        let complete = complete.max(start);
        let rec = TraceRecord {
            task_id: task.task_id.clone(),
            process: task.process.clone(),
            tag: task.tag.clone(),
            status,
            attempt: task.attempt,
            submit_ms: submit,
            start_ms: start,
            complete_ms: complete,
            duration_ms: complete - start,
            cpu_fraction: o.and_then(|o| o.cpu_fraction),
            peak_rss_bytes: o.and_then(|o| o.peak_bytes),
            cache_hit: status == TraceStatus::Cached,
            workdir: o.map(|o| o.workdir.clone()),
        };
        append_trace(&rec, &self.trace)?;
        Ok(())
    }

    fn publish(&mut self, idx: usize, outputs: &Ports) -> Result<(), RunError> {
        if !self.graph.spec.processes[self.proc_index[idx]].publish {
            return Ok(());
        }
        let dest = self.opts.workdir.join("results");
        std::fs::create_dir_all(&dest)?;
        let mut refs = Vec::new();
        outputs.values().for_each(|v| file_refs(v, &mut refs));
        for r in refs {
            let src = r.resolve(&self.opts.base_dir);
            let name = src.file_name().map(|n| n.to_owned()).unwrap_or_default();
            let to = dest.join(name);
            std::fs::copy(&src, &to)?;
            self.published.push(to);
        }
        Ok(())
    }

    fn finish(&mut self, idx: usize, outputs: Ports, state: FinalState, work: &mut Vec<usize>) -> Result<(), RunError> {
        self.publish(idx, &outputs)?;
        self.outputs.insert(self.plan.tasks[idx].task_id.clone(), outputs);
        self.state[idx] = State::Done(state);
        for &d in &self.dependents[idx] {
            self.remaining[d] -= 1;
            if self.remaining[d] == 0 && self.state[d] == State::Waiting {
                work.push(d);
            }
        }
        Ok(())
    }

    fn fail_permanently(&mut self, idx: usize, error: String) {
        self.state[idx] = State::Done(FinalState::FailedPermanent);
        self.errors[idx] = Some(error);
        let mut stack = self.dependents[idx].clone();
        while let Some(d) = stack.pop() {
            if self.state[d] == State::Waiting {
                self.state[d] = State::Done(FinalState::Skipped);
                self.errors[d] = Some(format!("upstream {} failed", self.plan.tasks[idx].task_id));
                stack.extend(self.dependents[d].iter().copied());
            }
        }
    }

    /// Moves newly unblocked tasks to Ready, serving cache hits on the way.
    fn settle(&mut self, mut work: Vec<usize>) -> Result<(), RunError> {
        work.sort_unstable_by(|a, b| b.cmp(a));
        while let Some(idx) = work.pop() {
            let submit = now_ms();
            self.submit_ms[idx] = submit;
            if self.opts.resume {
                let task = match self.resolve(idx) {
                    Ok(t) => t,
                    Err(e) => {
                        self.fail_permanently(idx, e);
                        continue;
                    }
                };
                let key = cache_key(&task).map_err(|e| RunError::Setup(e.to_string()))?;
                if let Some(entry) = lookup_cache(&self.opts.workdir, &self.opts.base_dir, &key) {
                    self.record(&task, TraceStatus::Cached, submit, submit, now_ms(), None)?;
                    self.attempts[idx] = task.attempt;
                    let mut more = Vec::new();
                    self.finish(idx, entry.outputs, FinalState::Cached, &mut more)?;
                    work.extend(more);
                    work.sort_unstable_by(|a, b| b.cmp(a));
                    continue;
                }
            }
            self.state[idx] = State::Ready;
            self.ready.insert(idx);
        }
        Ok(())
    }

    fn handle(&mut self, done: Done) -> Result<(), RunError> {
        let Done { idx, key, task, outcome } = done;
        self.inflight.remove(&key);
        self.attempts[idx] = task.attempt;
        let submit = self.submit_ms[idx];
        match outcome.status {
            OutcomeStatus::Succeeded | OutcomeStatus::Cached => {
                store_cache_entry(
                    &self.opts.workdir,
                    &CacheEntry {
                        key,
                        version: task.version.clone(),
                        process: task.process.clone(),
                        outputs: outcome.outputs.clone(),
                        completed_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                    },
                )?;
                self.record(&task, TraceStatus::Succeeded, submit, outcome.started_ms, outcome.completed_ms, Some(&outcome))?;
                self.successes += 1;
                let mut work = Vec::new();
                self.finish(idx, outcome.outputs, FinalState::Succeeded, &mut work)?;
                self.settle(work)?;
            }
            OutcomeStatus::Failed => {
                self.record(&task, TraceStatus::Failed, submit, outcome.started_ms, outcome.completed_ms, Some(&outcome))?;
                let policy = RetryPolicy {
                    max_retries: self.graph.spec.processes[self.proc_index[idx]].retries,
                    base_delay_ms: self.opts.retry_base_ms,
                };
                let error = outcome.error.as_ref().map(|e| e.to_string()).unwrap_or_default();
                match apply_retry_policy(&outcome, &policy, task.attempt, &mut self.rng) {
                    RetryDecision::Retry(delay) => {
                        self.state[idx] = State::Retrying;
                        self.errors[idx] = Some(error);
                        self.delayed.push((Instant::now() + delay, idx));
                    }
                    RetryDecision::FailPermanent => self.fail_permanently(idx, error),
                }
            }
        }
        Ok(())
    }

    fn report(&self) -> Vec<TaskReport> {
        self.plan
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| TaskReport {
                task_id: t.task_id.clone(),
                process: t.process.clone(),
                state: match self.state[i] {
                    State::Done(s) => s,
                    _ => FinalState::NotRun,
                },
                attempts: self.attempts[i],
                error: self.errors[i].clone(),
            })
            .collect()
    }
}

/// Executes every task of `plan`, at most `max_parallel` at a time.
pub fn run_workflow(graph: &ProcessGraph, plan: &Plan, registry: &Registry, opts: &RunOptions) -> Result<RunResult, RunError> {
    if opts.max_parallel == 0 {
        return Err(RunError::Setup("max-parallel must be at least 1".into()));
    }
    std::fs::create_dir_all(&opts.workdir)?;
    let run_dir = new_run_dir(&opts.workdir)?;
    let trace = run_dir.join("trace.tsv");
    let scheduler_log = run_dir.join("scheduler.log");
    let log = SchedulerLog { state: Mutex::new((OpenOptions::new().create(true).append(true).open(&scheduler_log)?, 0)) };

    let mut params = graph.spec.params.clone();
    if let Some(seed) = opts.seed {
        params.insert("seed".into(), Value::from(seed));
    }
    let n = plan.tasks.len();
    let mut proc_index = Vec::with_capacity(n);
    for t in &plan.tasks {
        proc_index.push(
            graph.spec.process_index(&t.process).ok_or_else(|| RunError::Setup(format!("plan names unknown process {}", t.process)))?,
        );
    }
    let mut dependents = vec![Vec::new(); n];
    for (i, t) in plan.tasks.iter().enumerate() {
        for &d in &t.deps {
            dependents[d].push(i);
        }
    }
    let mut c = Coordinator {
        graph,
        plan,
        registry,
        opts,
        rng: ChaCha8Rng::seed_from_u64(params.get("seed").and_then(Value::as_u64).unwrap_or(0)),
        params,
        trace,
        proc_index,
        dependents,
        remaining: plan.tasks.iter().map(|t| t.deps.len()).collect(),
        state: vec![State::Waiting; n],
        attempts: vec![0; n],
        submit_ms: vec![0; n],
        errors: vec![None; n],
        outputs: HashMap::new(),
        ready: BTreeSet::new(),
        inflight: BTreeSet::new(),
        delayed: Vec::new(),
        published: Vec::new(),
        successes: 0,
    };
    let workflow_params = c.params.clone();
    let env = ExecEnv {
        registry,
        base_dir: &opts.base_dir,
        root: &opts.workdir,
        workflow_params: &workflow_params,
        timeout: opts.timeout,
        measure: opts.measure,
        sample_interval: opts.sample_interval,
    };

    let worker_proc_index = c.proc_index.clone();
    let (job_tx, job_rx) = crossbeam_channel::unbounded::<Job>();
    let (done_tx, done_rx) = crossbeam_channel::unbounded::<Done>();
    let mut aborted = false;
    let outcome: Result<(), RunError> = std::thread::scope(|s| {
        for _ in 0..opts.max_parallel {
            let (job_rx, done_tx, env, log) = (job_rx.clone(), done_tx.clone(), &env, &log);
            let procs = &graph.spec.processes;
            let proc_index = &worker_proc_index;
            s.spawn(move || {
                for job in job_rx {
                    log.event("start", &job.task.task_id);
                    let outcome = execute_task(&job.task, &procs[proc_index[job.idx]], env);
                    log.event("end", &job.task.task_id);
                    if done_tx.send(Done { idx: job.idx, key: job.key, task: job.task, outcome }).is_err() {
                        break;
                    }
                }
            });
        }
        drop(done_tx);

        let result = (|| {
            let initial: Vec<usize> = (0..n).filter(|&i| c.remaining[i] == 0).collect();
            c.settle(initial)?;
            let mut running = 0usize;
            let mut stopping = false;
            loop {
                if opts.cancel.as_ref().is_some_and(|f| f.load(Ordering::SeqCst)) {
                    stopping = true;
                }
                let now = Instant::now();
                let (due, later): (Vec<_>, Vec<_>) = c.delayed.drain(..).partition(|(t, _)| *t <= now);
                c.delayed = later;
                for (_, idx) in due {
                    c.settle(vec![idx])?;
                }
                let mut held = Vec::new();
                while !stopping && running < opts.max_parallel {
                    let Some(idx) = c.ready.pop_first() else { break };
                    let resolved = c.resolve(idx).and_then(|t| Ok((cache_key(&t).map_err(|e| e.to_string())?, t)));
                    match resolved {
                        Ok((key, _)) if c.inflight.contains(&key) => held.push(idx),
                        Ok((key, task)) => {
                            c.state[idx] = State::Running;
                            c.inflight.insert(key.clone());
                            running += 1;
                            job_tx.send(Job { idx, key, task }).expect("workers alive");
                        }
                        Err(e) => c.fail_permanently(idx, e),
                    }
                }
                c.ready.extend(held);
                if running == 0 && (stopping || (c.ready.is_empty() && c.delayed.is_empty())) {
                    aborted = stopping && c.state.iter().any(|s| !matches!(s, State::Done(_)));
                    return Ok(());
                }
                let wait = c
                    .delayed
                    .iter()
                    .map(|(t, _)| t.saturating_duration_since(now))
                    .min()
                    .unwrap_or(Duration::from_millis(100))
                    .min(Duration::from_millis(100));
                match done_rx.recv_timeout(wait) {
                    Ok(done) => {
                        running -= 1;
                        c.handle(done)?;
                        if opts.stop_after_successes.is_some_and(|k| c.successes >= k) {
                            stopping = true;
                        }
                    }
                    Err(crossbeam_channel::RecvTimeoutError::Timeout) => {}
                    Err(crossbeam_channel::RecvTimeoutError::Disconnected) => {
                        return Err(RunError::Setup("worker pool exited".into()));
                    }
                }
            }
        })();
        drop(job_tx);
        // Drain whatever is still running so its state is recorded.
        for done in done_rx.iter() {
            if result.is_ok() {
                c.handle(done)?;
            }
        }
        result
    });
    outcome?;
    let run = RunResult {
        run_dir,
        trace: c.trace.clone(),
        scheduler_log,
        tasks: c.report(),
        outputs: c.outputs.into_iter().collect(),
        published: c.published,
    };
    if aborted {
        return Err(RunError::RunAborted(Box::new(run)));
    }
    Ok(run)
}

/// Workdir root: an explicit choice, else `CAMEO_WORKDIR`, else `fallback`.
pub fn resolve_workdir(explicit: Option<&Path>, fallback: &Path) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(WORKDIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| fallback.to_path_buf())
}
