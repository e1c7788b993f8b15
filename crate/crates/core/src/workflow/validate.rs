use std::collections::{BTreeMap, BTreeSet};

use crate::validation::ValidationReport;

use super::graph::channel_producers;
use super::types::{BaseType, TypeExpr};
use super::{ChannelOp, Contracts, Emits, ProcessKind, Reader, Source, WorkflowSpec};

/// Item type carried by `channel`, or `None` when it cannot be determined
/// (the reason is added to `report`).
pub fn channel_type(spec: &WorkflowSpec, channel: &str, report: &mut ValidationReport) -> Option<TypeExpr> {
    let mut memo = BTreeMap::new();
    infer(spec, channel, &mut Vec::new(), &mut memo, report)
}

fn infer(
    spec: &WorkflowSpec,
    channel: &str,
    stack: &mut Vec<String>,
    memo: &mut BTreeMap<String, Option<TypeExpr>>,
    report: &mut ValidationReport,
) -> Option<TypeExpr> {
    if let Some(t) = memo.get(channel) {
        return t.clone();
    }
    if stack.iter().any(|c| c == channel) {
        report.error(format!("channel {channel}"), "channel depends on itself through cross operands");
        return None;
    }
    let def = spec.channel(channel)?;
    let loc = format!("channel {channel}");
    stack.push(channel.to_string());
    let mut ty = match &def.source {
        Source::Literal { item_type, .. } => Some(item_type.clone().unwrap_or(TypeExpr::Base(BaseType::Scalar))),
        Source::File { reader, item_type, .. } => {
            let fixed = match reader {
                Reader::Path => Some(BaseType::FileRef),
                Reader::Sites => Some(BaseType::WindFarmSite),
                Reader::BatteryCatalog => Some(BaseType::BatteryConfig),
                Reader::JsonItems => None,
            };
            match (fixed, item_type) {
                (Some(b), Some(t)) if *t != TypeExpr::Base(b) => {
                    report.error(&loc, format!("reader yields {} but item_type says {t}", b.name()));
                    None
                }
                (Some(b), _) => Some(TypeExpr::Base(b)),
                (None, t) => Some(t.clone().unwrap_or(TypeExpr::Base(BaseType::Scalar))),
            }
        }
        Source::Output { process, port } => match spec.process(process) {
            None => {
                report.error(&loc, format!("unknown process {process}"));
                None
            }
            Some(p) => match p.outputs.get(port) {
                None => {
                    report.error(&loc, format!("process {process} has no output port {port}"));
                    None
                }
                Some(o) => Some(o.ty.clone()),
            },
        },
    };
    for op in &def.ops {
        let Some(t) = ty.take() else { break };
        ty = match op {
            ChannelOp::Flatten => Some(t.element().cloned().unwrap_or(t)),
            ChannelOp::Collect => Some(TypeExpr::list(t)),
            ChannelOp::Cross { with } => {
                if spec.channel(with).is_none() {
                    report.error(&loc, format!("cross with unknown channel {with}"));
                    None
                } else {
                    infer(spec, with, stack, memo, report).map(|right| {
                        let mut members = match t {
                            TypeExpr::Tuple(items) => items,
                            other => vec![other],
                        };
                        members.push(right);
                        TypeExpr::Tuple(members)
                    })
                }
            }
        };
    }
    stack.pop();
    memo.insert(channel.to_string(), ty.clone());
    ty
}

/// Placeholders `{...}` in a command template.
pub fn template_placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                out.push(after[..close].to_string());
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

pub fn validate_workflow(spec: &WorkflowSpec, contracts: &Contracts) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut used_channels = BTreeSet::new();
    for c in &spec.channels {
        for op in &c.ops {
            if let ChannelOp::Cross { with } = op {
                used_channels.insert(with.clone());
            }
        }
    }

    for p in &spec.processes {
        let loc = format!("process {}", p.name);
        for (port, out) in &p.outputs {
            if let Some(emits) = &out.emits {
                if out.ty.element().is_none() {
                    report.error(format!("{loc}, output {port}"), "emits declared on a non-list output");
                }
                if let Emits::Param(name) = emits {
                    if spec.param_u64(name).is_none() {
                        report.error(format!("{loc}, output {port}"), format!("emits refers to param {name}, which is not a non-negative integer"));
                    }
                }
            }
        }
        let contract = match &p.kind {
            ProcessKind::Builtin(op) => match contracts.get(op) {
                Some(c) => Some(c),
                None => {
                    report.error(&loc, format!("unknown operation {op}"));
                    None
                }
            },
            ProcessKind::Exec(template) => {
                for ph in template_placeholders(template) {
                    let ok = match ph.strip_prefix("params.") {
                        Some(name) => spec.params.contains_key(name),
                        None => p.inputs.contains_key(&ph),
                    };
                    if !ok {
                        report.error(&loc, format!("command template references undeclared {{{ph}}}"));
                    }
                }
                None
            }
        };

        for (port, channel) in &p.inputs {
            let ploc = format!("{loc}, port {port}");
            used_channels.insert(channel.clone());
            if spec.channel(channel).is_none() {
                report.error(&ploc, format!("unknown channel {channel}"));
                continue;
            }
            if let Err(e) = channel_producers(spec, channel) {
                report.error(&ploc, e.to_string());
                continue;
            }
            let Some(contract) = contract else { continue };
            let Some(expected) = contract.inputs.get(port) else {
                report.error(&ploc, format!("{} has no input port {port}", contract.reference()));
                continue;
            };
            if let Some(actual) = channel_type(spec, channel, &mut report) {
                if &actual != expected {
                    report.error(&ploc, format!("port type mismatch: expects {expected}, channel {channel} carries {actual}"));
                }
            }
        }

        let Some(contract) = contract else { continue };
        for port in contract.inputs.keys() {
            if !p.inputs.contains_key(port) {
                report.error(format!("{loc}, port {port}"), "unbound input port");
            }
        }
        for (port, ty) in &contract.outputs {
            match p.outputs.get(port) {
                None => report.error(format!("{loc}, output {port}"), format!("missing output declaration ({ty})")),
                Some(o) if &o.ty != ty => report.error(
                    format!("{loc}, output {port}"),
                    format!("port type mismatch: contract declares {ty}, process declares {}", o.ty),
                ),
                Some(_) => {}
            }
        }
        for port in p.outputs.keys() {
            if !contract.outputs.contains_key(port) {
                report.error(format!("{loc}, output {port}"), format!("{} has no output port {port}", contract.reference()));
            }
        }
        for param in contract.params.iter().filter(|pa| pa.required) {
            if !spec.params.contains_key(&param.name) {
                report.error(&loc, format!("missing param {}", param.name));
            }
        }
    }

    for c in &spec.channels {
        if let Source::Output { .. } = c.source {
            // unknown producers and ports are reported through type inference
            channel_type(spec, &c.name, &mut report);
        }
        if !used_channels.contains(&c.name) {
            report.warning(format!("channel {}", c.name), "channel is never consumed");
        }
    }
    if let Err(e) = super::build_dag(spec) {
        if let super::DagError::Cycle(_) = e {
            report.error("workflow", e.to_string());
        }
    }
    dedup(&mut report);
    report
}

fn dedup(report: &mut ValidationReport) {
    let mut seen = BTreeSet::new();
    report.findings.retain(|f| seen.insert(f.to_string()));
}

#[cfg(test)]
mod tests {
    use super::super::{parse_workflow, ComponentContract};
    use super::*;
    use crate::validation::Severity;

    fn contracts() -> Contracts {
        let c = ComponentContract::new("design_ss", "1")
            .input("case", "(ScenarioSet, BatteryConfig)")
            .output("result", "DesignResult");
        let s = ComponentContract::new("sizer", "1").input("set", "ScenarioSet").output("result", "DesignResult");
        [(c.reference(), c), (s.reference(), s)].into_iter().collect()
    }

    #[test]
    fn battery_channel_into_scenario_port() {
        let doc = r#"{"schema_version":1,"name":"m","channels":[
            {"name":"batteries","source":{"type":"file","path":"b.json","reader":"battery_catalog"}}],
          "processes":[{"name":"p","kind":{"builtin":"sizer@1"},"inputs":{"set":"batteries"},
                        "outputs":{"result":"DesignResult"}}]}"#;
        let r = validate_workflow(&parse_workflow(doc).unwrap(), &contracts());
        let errors: Vec<_> = r.errors().collect();
        assert_eq!(errors.len(), 1, "{errors:?}");
        assert!(errors[0].message.contains("port type mismatch"));
    }

    #[test]
    fn unknown_operation() {
        let doc = r#"{"schema_version":1,"name":"m","processes":[{"name":"p","kind":{"builtin":"design_xx@1"}}]}"#;
        let r = validate_workflow(&parse_workflow(doc).unwrap(), &contracts());
        assert_eq!(r.error_count(), 1);
        assert!(r.findings[0].message.contains("unknown operation"));
    }

    #[test]
    fn unbound_and_extra_ports() {
        let doc = r#"{"schema_version":1,"name":"m","channels":[
            {"name":"x","source":{"type":"literal","values":[1]}}],
          "processes":[{"name":"p","kind":{"builtin":"sizer@1"},"inputs":{"other":"x"},
                        "outputs":{"result":"DesignResult"}}]}"#;
        let r = validate_workflow(&parse_workflow(doc).unwrap(), &contracts());
        let msgs: Vec<String> = r.errors().map(|f| f.message.clone()).collect();
        assert!(msgs.iter().any(|m| m.contains("no input port other")), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("unbound input port")), "{msgs:?}");
    }

    #[test]
    fn crossed_channel_type_and_unused_warning() {
        let doc = r#"{"schema_version":1,"name":"m","channels":[
            {"name":"sets","source":{"type":"literal","values":[],"item_type":"[ScenarioSet]"},"ops":[{"op":"flatten"},{"op":"cross","with":"b"}]},
            {"name":"b","source":{"type":"file","path":"b.json","reader":"battery_catalog"}},
            {"name":"spare","source":{"type":"literal","values":[1]}}],
          "processes":[{"name":"d","kind":{"builtin":"design_ss@1"},"inputs":{"case":"sets"},
                        "outputs":{"result":"DesignResult"}}]}"#;
        let spec = parse_workflow(doc).unwrap();
        let r = validate_workflow(&spec, &contracts());
        assert!(r.is_ok(), "{:?}", r.findings);
        let warnings: Vec<_> = r.findings.iter().filter(|f| f.severity == Severity::Warning).collect();
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].location, "channel spare");
    }

    #[test]
    fn exec_placeholders() {
        let doc = r#"{"schema_version":1,"name":"m","params":{"n":3},"channels":[
            {"name":"x","source":{"type":"literal","values":[1]}}],
          "processes":[{"name":"p","kind":{"exec":"cat {inp} {params.n} {params.missing} {other}"},"inputs":{"inp":"x"}}]}"#;
        let r = validate_workflow(&parse_workflow(doc).unwrap(), &contracts());
        let msgs: Vec<String> = r.errors().map(|f| f.message.clone()).collect();
        assert_eq!(msgs.len(), 2, "{msgs:?}");
        assert!(msgs[0].contains("{params.missing}") && msgs[1].contains("{other}"));
    }

    #[test]
    fn template_scan() {
        assert_eq!(template_placeholders("a {x} b {params.y}{z"), vec!["x", "params.y"]);
    }
}
