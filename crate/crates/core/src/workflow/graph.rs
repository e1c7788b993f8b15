use std::collections::{BTreeMap, BTreeSet};

use super::{Source, WorkflowSpec};

/// Where the items on an edge come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EdgeSource {
    Process { process: String, port: String },
    /// Literal or file channel.
    External { channel: String },
}

/// One bound input port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub from: EdgeSource,
    pub channel: String,
    pub to_process: String,
    pub to_port: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessGraph {
    pub spec: WorkflowSpec,
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    /// Processes each process depends on, including through `cross` operands.
    pub upstream: Vec<BTreeSet<usize>>,
    /// Topological order as indices into `nodes`.
    pub order: Vec<usize>,
}

impl ProcessGraph {
    pub fn ordered_names(&self) -> Vec<&str> {
        self.order.iter().map(|&i| self.nodes[i].as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("dependency cycle among processes: {}", .processes.join(", "))]
pub struct CycleError {
    pub processes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DagError {
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error("process {process} reads unknown channel {channel}")]
    UnknownChannel { process: String, channel: String },
    #[error("channel {channel} reads output of unknown process {process}")]
    UnknownProcess { channel: String, process: String },
    #[error("channel {0} depends on itself through cross operands")]
    ChannelCycle(String),
}

/// Processes whose outputs flow into `channel`.
pub(crate) fn channel_producers(spec: &WorkflowSpec, channel: &str) -> Result<BTreeSet<usize>, DagError> {
    fn walk<'a>(
        spec: &'a WorkflowSpec,
        channel: &'a str,
        stack: &mut Vec<&'a str>,
        memo: &mut BTreeMap<&'a str, BTreeSet<usize>>,
    ) -> Result<BTreeSet<usize>, DagError> {
        if let Some(done) = memo.get(channel) {
            return Ok(done.clone());
        }
        if stack.contains(&channel) {
            return Err(DagError::ChannelCycle(channel.to_string()));
        }
        let def = spec.channel(channel).ok_or_else(|| DagError::UnknownChannel {
            process: stack.last().map(|s| format!("(via channel {s})")).unwrap_or_default(),
            channel: channel.to_string(),
        })?;
        stack.push(channel);
        let mut out = BTreeSet::new();
        if let Source::Output { process, .. } = &def.source {
            let idx = spec.process_index(process).ok_or_else(|| DagError::UnknownProcess {
                channel: channel.to_string(),
                process: process.clone(),
            })?;
            out.insert(idx);
        }
        for op in &def.ops {
            if let super::ChannelOp::Cross { with } = op {
                out.extend(walk(spec, with, stack, memo)?);
            }
        }
        stack.pop();
        memo.insert(channel, out.clone());
        Ok(out)
    }
    walk(spec, channel, &mut Vec::new(), &mut BTreeMap::new())
}

/// Wires processes through their channels and orders them topologically,
/// breaking ties by declaration order.
pub fn build_dag(spec: &WorkflowSpec) -> Result<ProcessGraph, DagError> {
    let n = spec.processes.len();
    let mut edges = Vec::new();
    let mut upstream = vec![BTreeSet::new(); n];
    for (i, p) in spec.processes.iter().enumerate() {
        for (port, channel) in &p.inputs {
            let def = spec.channel(channel).ok_or_else(|| DagError::UnknownChannel {
                process: p.name.clone(),
                channel: channel.clone(),
            })?;
            let from = match &def.source {
                Source::Output { process, port } => EdgeSource::Process { process: process.clone(), port: port.clone() },
                _ => EdgeSource::External { channel: channel.clone() },
            };
            edges.push(Edge { from, channel: channel.clone(), to_process: p.name.clone(), to_port: port.clone() });
            upstream[i].extend(channel_producers(spec, channel)?);
        }
    }

    let mut indegree: Vec<usize> = upstream.iter().map(|u| u.len()).collect();
    let mut downstream = vec![Vec::new(); n];
    for (i, ups) in upstream.iter().enumerate() {
        for &u in ups {
            downstream[u].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &d in &downstream[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.insert(d);
            }
        }
    }
    if order.len() < n {
        let processes = cycle_members(&upstream, &order).into_iter().map(|i| spec.processes[i].name.clone()).collect();
        return Err(CycleError { processes }.into());
    }
    Ok(ProcessGraph {
        spec: spec.clone(),
        nodes: spec.processes.iter().map(|p| p.name.clone()).collect(),
        edges,
        upstream,
        order,
    })
}

/// Unordered processes, minus those that merely sit downstream of a cycle.
fn cycle_members(upstream: &[BTreeSet<usize>], ordered: &[usize]) -> Vec<usize> {
    let mut left: BTreeSet<usize> = (0..upstream.len()).filter(|i| !ordered.contains(i)).collect();
    loop {
        let feeds_nothing: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| upstream[j].contains(&i)))
            .collect();
        if feeds_nothing.is_empty() {
            return left.into_iter().collect();
        }
        for i in feeds_nothing {
            left.remove(&i);
        }
    }
}
