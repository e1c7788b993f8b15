//! Expansion of a process graph into task instances.
//!
//! Items produced by tasks are unknown until execution, so channels carry
//! symbolic items that point at task outputs. Everything needed for the task
//! list (counts, ids, dependencies) is fixed before anything runs.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use crate::canonical::{digest_value, sha256_hex, to_payload};
use crate::data::{parse_battery_catalog, parse_sites};

use super::graph::ProcessGraph;
use super::{ChannelOp, Reader, Source, WorkflowSpec};

/// Length information of a task output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Single,
    /// List output; length known when declared with `emits`.
    List(Option<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Item {
    Value(Value),
    /// Whole output port of a task.
    Ref { task: String, port: String, shape: Shape },
    /// One element of a list-valued output port.
    Elem { task: String, port: String, index: usize },
    Tuple(Vec<Item>),
    List(Vec<Item>),
}

impl Item {
    /// Task ids this item reads from.
    pub fn tasks<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Item::Value(_) => {}
            Item::Ref { task, .. } | Item::Elem { task, .. } => {
                out.insert(task);
            }
            Item::Tuple(xs) | Item::List(xs) => xs.iter().for_each(|x| x.tasks(out)),
        }
    }

    /// Replace task references with concrete outputs.
    pub fn resolve<'v>(&self, lookup: &dyn Fn(&str, &str) -> Option<&'v Value>) -> Result<Value, String> {
        Ok(match self {
            Item::Value(v) => v.clone(),
            Item::Ref { task, port, .. } => {
                lookup(task, port).cloned().ok_or_else(|| format!("output {port} of {task} is not available"))?
            }
            Item::Elem { task, port, index } => {
                let list = lookup(task, port).ok_or_else(|| format!("output {port} of {task} is not available"))?;
                list.as_array()
                    .and_then(|xs| xs.get(*index))
                    .cloned()
                    .ok_or_else(|| format!("output {port} of {task} has no element {index}"))?
            }
            Item::Tuple(xs) | Item::List(xs) => {
                Value::Array(xs.iter().map(|x| x.resolve(lookup)).collect::<Result<_, _>>()?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cross needs a second operand")]
pub struct OperatorArity;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    OperatorArity(#[from] OperatorArity),
    #[error("cannot determine fan-out of channel {channel}: {detail}")]
    UnresolvedCardinality { channel: String, detail: String },
    #[error("process {process}: input channels have incompatible lengths {lengths:?}")]
    LengthMismatch { process: String, lengths: BTreeMap<String, usize> },
    #[error("channel {0} has no resolved source contents")]
    MissingSource(String),
    #[error("cannot read source of channel {channel}: {message}")]
    Source { channel: String, message: String },
}

fn flatten_one(item: &Item, out: &mut Vec<Item>) -> Result<(), String> {
    match item {
        Item::Value(Value::Array(xs)) => out.extend(xs.iter().cloned().map(Item::Value)),
        Item::List(xs) => out.extend(xs.iter().cloned()),
        Item::Ref { task, port, shape: Shape::List(Some(n)) } => {
            out.extend((0..*n).map(|index| Item::Elem { task: task.clone(), port: port.clone(), index }))
        }
        Item::Ref { task, port, shape: Shape::List(None) } => {
            return Err(format!("output {port} of {task} is a list of undeclared length (add `emits`)"))
        }
        other => out.push(other.clone()),
    }
    Ok(())
}

/// Applies one channel operator. `cross` is left-major, and tuples on the
/// left are extended rather than nested.
pub fn apply_channel_op(items: &[Item], op: &ChannelOp, other: Option<&[Item]>) -> Result<Vec<Item>, PlanError> {
    match op {
        ChannelOp::Flatten => {
            let mut out = Vec::new();
            for it in items {
                flatten_one(it, &mut out)
                    .map_err(|detail| PlanError::UnresolvedCardinality { channel: String::new(), detail })?;
            }
            Ok(out)
        }
        ChannelOp::Collect => Ok(vec![Item::List(items.to_vec())]),
        ChannelOp::Cross { .. } => {
            let other = other.ok_or(OperatorArity)?;
            let mut out = Vec::with_capacity(items.len() * other.len());
            for a in items {
                for b in other {
                    let mut members = match a {
                        Item::Tuple(xs) => xs.clone(),
                        x => vec![x.clone()],
                    };
                    members.push(b.clone());
                    out.push(Item::Tuple(members));
                }
            }
            Ok(out)
        }
    }
}

/// Reference to a file, relative to the workflow's base directory unless
/// absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    pub fn new(base_dir: &Path, path: &Path) -> std::io::Result<FileRef> {
        let bytes = std::fs::read(base_dir.join(path))?;
        let shown = path.strip_prefix(base_dir).unwrap_or(path);
        Ok(FileRef { path: shown.to_string_lossy().replace('\\', "/"), sha256: sha256_hex(&bytes) })
    }

    pub fn resolve(&self, base_dir: &Path) -> PathBuf {
        base_dir.join(&self.path)
    }
}

/// Contents of literal and file channels, before channel operators.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sources {
    pub channels: BTreeMap<String, Vec<Value>>,
}

pub fn resolve_sources(spec: &WorkflowSpec, base_dir: &Path) -> Result<Sources, PlanError> {
    let mut channels = BTreeMap::new();
    for c in &spec.channels {
        let err = |message: String| PlanError::Source { channel: c.name.clone(), message };
        let values = match &c.source {
            Source::Output { .. } => continue,
            Source::Literal { values, .. } => values.clone(),
            Source::File { path, reader, .. } => {
                let pattern = base_dir.join(path);
                let mut files: Vec<PathBuf> = glob::glob(&pattern.to_string_lossy())
                    .map_err(|e| err(e.to_string()))?
                    .collect::<Result<_, _>>()
                    .map_err(|e| err(e.to_string()))?;
                files.sort();
                if files.is_empty() {
                    return Err(err(format!("no file matches {path}")));
                }
                let mut values = Vec::new();
                for f in &files {
                    let shown = f.strip_prefix(base_dir).unwrap_or(f).to_string_lossy().to_string();
                    let text = || std::fs::read_to_string(f).map_err(|e| err(format!("{shown}: {e}")));
                    match reader {
                        Reader::Path => {
                            let r = FileRef::new(base_dir, f).map_err(|e| err(format!("{shown}: {e}")))?;
                            values.push(serde_json::to_value(r).expect("file ref"));
                        }
                        Reader::Sites => {
                            for s in parse_sites(&shown, &text()?).map_err(|e| err(e.to_string()))? {
                                values.push(to_payload(&s).map_err(|e| err(e.to_string()))?);
                            }
                        }
                        Reader::BatteryCatalog => {
                            for b in parse_battery_catalog(&shown, &text()?).map_err(|e| err(e.to_string()))? {
                                values.push(to_payload(&b).map_err(|e| err(e.to_string()))?);
                            }
                        }
                        Reader::JsonItems => {
                            let v: Value = serde_json::from_str(&text()?).map_err(|e| err(format!("{shown}: {e}")))?;
                            match v {
                                Value::Array(xs) => values.extend(xs),
                                _ => return Err(err(format!("{shown}: expected a JSON array"))),
                            }
                        }
                    }
                }
                values
            }
        };
        channels.insert(c.name.clone(), values);
    }
    Ok(Sources { channels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    /// `<process>#<ordinal>-<8 hex digits of the input digest>`
    pub task_id: String,
    pub process: String,
    pub ordinal: usize,
    pub inputs: BTreeMap<String, Item>,
    /// Indices of the tasks whose outputs this one reads.
    pub deps: Vec<usize>,
    /// Tag template; rendered once inputs are resolved.
    pub tag: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Plan {
    /// Task count per process, in topological order.
    pub counts: Vec<(String, usize)>,
    /// Tasks grouped by process in topological order, ordinals ascending.
    pub tasks: Vec<TaskInstance>,
    pub index: HashMap<String, usize>,
}

impl Plan {
    pub fn count(&self, process: &str) -> Option<usize> {
        self.counts.iter().find(|(p, _)| p == process).map(|(_, n)| *n)
    }
}

struct Planner<'a> {
    spec: &'a WorkflowSpec,
    sources: &'a Sources,
    by_process: BTreeMap<String, Vec<String>>,
    memo: BTreeMap<String, Vec<Item>>,
}

impl Planner<'_> {
    fn channel(&mut self, name: &str) -> Result<Vec<Item>, PlanError> {
        if let Some(items) = self.memo.get(name) {
            return Ok(items.clone());
        }
        let def = self.spec.channel(name).ok_or_else(|| PlanError::MissingSource(name.to_string()))?;
        let mut items: Vec<Item> = match &def.source {
            Source::Output { process, port } => {
                let decl = self
                    .spec
                    .process(process)
                    .and_then(|p| p.outputs.get(port))
                    .ok_or_else(|| PlanError::MissingSource(name.to_string()))?;
                let shape = match decl.ty.element() {
                    None => Shape::Single,
                    Some(_) => Shape::List(
                        decl.emits.as_ref().and_then(|e| e.resolve(&self.spec.params)).map(|n| n as usize),
                    ),
                };
                let tasks = self.by_process.get(process).cloned().unwrap_or_default();
                tasks.into_iter().map(|task| Item::Ref { task, port: port.clone(), shape }).collect()
            }
            _ => self
                .sources
                .channels
                .get(name)
                .ok_or_else(|| PlanError::MissingSource(name.to_string()))?
                .iter()
                .cloned()
                .map(Item::Value)
                .collect(),
        };
        for op in &def.ops {
            let other = match op {
                ChannelOp::Cross { with } => Some(self.channel(with)?),
                _ => None,
            };
            items = apply_channel_op(&items, op, other.as_deref()).map_err(|e| match e {
                PlanError::UnresolvedCardinality { detail, .. } => {
                    PlanError::UnresolvedCardinality { channel: name.to_string(), detail }
                }
                e => e,
            })?;
        }
        self.memo.insert(name.to_string(), items.clone());
        Ok(items)
    }
}

/// Expands every process into tasks without executing anything.
pub fn plan_tasks(graph: &ProcessGraph, sources: &Sources) -> Result<Plan, PlanError> {
    let spec = &graph.spec;
    let mut planner = Planner { spec, sources, by_process: BTreeMap::new(), memo: BTreeMap::new() };
    let mut plan = Plan::default();
    for &pi in &graph.order {
        let p = &spec.processes[pi];
        let mut ports = Vec::with_capacity(p.inputs.len());
        for (port, channel) in &p.inputs {
            ports.push((port.clone(), planner.channel(channel)?));
        }
        let lengths: BTreeSet<usize> = ports.iter().map(|(_, xs)| xs.len()).filter(|&n| n != 1).collect();
        if lengths.len() > 1 {
            return Err(PlanError::LengthMismatch {
                process: p.name.clone(),
                lengths: ports.iter().map(|(port, xs)| (port.clone(), xs.len())).collect(),
            });
        }
        let n = lengths.first().copied().unwrap_or(1);
        let mut ids = Vec::with_capacity(n);
        for k in 0..n {
            let inputs: BTreeMap<String, Item> = ports
                .iter()
                .map(|(port, xs)| (port.clone(), if xs.len() == 1 { xs[0].clone() } else { xs[k].clone() }))
                .collect();
            let digest = digest_value(&serde_json::to_value(&inputs).expect("items serialize"));
            let task_id = format!("{}#{:04}-{}", p.name, k, &digest[..8]);
            let mut refs = BTreeSet::new();
            inputs.values().for_each(|it| it.tasks(&mut refs));
            let deps = refs.iter().map(|t| plan.index[*t]).collect();
            plan.index.insert(task_id.clone(), plan.tasks.len());
            ids.push(task_id.clone());
            plan.tasks.push(TaskInstance { task_id, process: p.name.clone(), ordinal: k, inputs, deps, tag: p.tag.clone() });
        }
        plan.counts.push((p.name.clone(), n));
        planner.by_process.insert(p.name.clone(), ids);
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::super::{build_dag, parse_workflow};
    use super::*;
    use serde_json::json;

    fn vals(xs: &[&str]) -> Vec<Item> {
        xs.iter().map(|s| Item::Value(json!(s))).collect()
    }

    #[test]
    fn cross_is_left_major() {
        let out = apply_channel_op(&vals(&["s1", "s2"]), &ChannelOp::Cross { with: "b".into() }, Some(&vals(&["b1", "b2", "b3"])))
                .unwrap();
        let pairs: Vec<(String, String)> = out
            .iter()
            .map(|it| match it {
                Item::Tuple(xs) => match (&xs[0], &xs[1]) {
                    (Item::Value(a), Item::Value(b)) => (a.as_str().unwrap().into(), b.as_str().unwrap().into()),
                    _ => unreachable!(),
                },
                _ => unreachable!(),
            })
            .collect();
        let expect = [("s1", "b1"), ("s1", "b2"), ("s1", "b3"), ("s2", "b1"), ("s2", "b2"), ("s2", "b3")];
        assert_eq!(pairs, expect.map(|(a, b)| (a.to_string(), b.to_string())));
    }

    #[test]
    fn collect_and_arity() {
        let out = apply_channel_op(&vals(&["x", "y", "z"]), &ChannelOp::Collect, None).unwrap();
        assert_eq!(out, vec![Item::List(vals(&["x", "y", "z"]))]);
        assert_eq!(apply_channel_op(&vals(&["x"]), &ChannelOp::Cross { with: "o".into() }, None), Err(PlanError::OperatorArity(OperatorArity)));
    }

    #[test]
    fn cross_fifty_by_sixteen() {
        let sets: Vec<Item> = (0..50).map(|i| Item::Value(json!(i))).collect();
        let bats: Vec<Item> = (0..16).map(|i| Item::Value(json!(i))).collect();
        let out = apply_channel_op(&sets, &ChannelOp::Cross { with: "b".into() }, Some(&bats)).unwrap();
        assert_eq!(out.len(), 800);
    }

    #[test]
    fn flatten_splices_lists() {
        let items = vec![Item::Value(json!([1, 2])), Item::Value(json!(3)), Item::List(vals(&["a"]))];
        let out = apply_channel_op(&items, &ChannelOp::Flatten, None).unwrap();
        assert_eq!(out, vec![Item::Value(json!(1)), Item::Value(json!(2)), Item::Value(json!(3)), Item::Value(json!("a"))]);
    }

    const FANOUT: &str = r#"{"schema_version":1,"name":"f","params":{"n":3},
      "channels":[
        {"name":"xs","source":{"type":"literal","values":[1,2]}},
        {"name":"ys","source":{"type":"literal","values":["a","b","c","d"]}},
        {"name":"one","source":{"type":"literal","values":["k"]}},
        {"name":"gen","source":{"type":"output","process":"g","port":"out"},"ops":[{"op":"flatten"},{"op":"cross","with":"ys"}]},
        {"name":"all","source":{"type":"output","process":"w","port":"r"},"ops":[{"op":"collect"}]}],
      "processes":[
        {"name":"g","kind":{"exec":"true"},"inputs":{"x":"xs","k":"one"},"outputs":{"out":{"type":"[Scalar]","emits":"n"}}},
        {"name":"w","kind":{"exec":"true"},"inputs":{"c":"gen"},"outputs":{"r":"Scalar"}},
        {"name":"s","kind":{"exec":"true"},"inputs":{"all":"all"}}]}"#;

    #[test]
    fn declared_fanout_counts() {
        let spec = parse_workflow(FANOUT).unwrap();
        let graph = build_dag(&spec).unwrap();
        let sources = resolve_sources(&spec, Path::new(".")).unwrap();
        let plan = plan_tasks(&graph, &sources).unwrap();
        assert_eq!(plan.counts, vec![("g".to_string(), 2), ("w".to_string(), 24), ("s".to_string(), 1)]);
        let s = plan.tasks.last().unwrap();
        assert_eq!(s.deps.len(), 24);
        assert!(plan.tasks[0].task_id.starts_with("g#0000-"));
        // broadcast single-item channel
        assert_eq!(plan.tasks[0].inputs["k"], Item::Value(json!("k")));
    }

    #[test]
    fn undeclared_fanout_is_an_error() {
        let doc = FANOUT.replace(r#"{"type":"[Scalar]","emits":"n"}"#, r#""[Scalar]""#);
        let spec = parse_workflow(&doc).unwrap();
        let graph = build_dag(&spec).unwrap();
        let sources = resolve_sources(&spec, Path::new(".")).unwrap();
        assert!(matches!(plan_tasks(&graph, &sources), Err(PlanError::UnresolvedCardinality { .. })));
    }

    #[test]
    fn empty_workflow_empty_plan() {
        let spec = parse_workflow(r#"{"schema_version":1,"name":"e"}"#).unwrap();
        let plan = plan_tasks(&build_dag(&spec).unwrap(), &Sources::default()).unwrap();
        assert!(plan.tasks.is_empty() && plan.counts.is_empty());
    }

    #[test]
    fn mismatched_lengths() {
        let doc = r#"{"schema_version":1,"name":"m","channels":[
            {"name":"a","source":{"type":"literal","values":[1,2]}},
            {"name":"b","source":{"type":"literal","values":[1,2,3]}}],
          "processes":[{"name":"p","kind":{"exec":"true"},"inputs":{"x":"a","y":"b"}}]}"#;
        let spec = parse_workflow(doc).unwrap();
        let sources = resolve_sources(&spec, Path::new(".")).unwrap();
        assert!(matches!(plan_tasks(&build_dag(&spec).unwrap(), &sources), Err(PlanError::LengthMismatch { .. })));
    }

    #[test]
    fn resolve_items() {
        let outputs: HashMap<(String, String), Value> =
            [(("t".to_string(), "o".to_string()), json!([10, 20]))].into_iter().collect();
        let lookup = |t: &str, p: &str| outputs.get(&(t.to_string(), p.to_string()));
        let item = Item::Tuple(vec![
            Item::Elem { task: "t".into(), port: "o".into(), index: 1 },
            Item::Value(json!("b")),
        ]);
        assert_eq!(item.resolve(&lookup).unwrap(), json!([20, "b"]));
        let bad = Item::Elem { task: "t".into(), port: "o".into(), index: 5 };
        assert!(bad.resolve(&lookup).is_err());
    }
}
