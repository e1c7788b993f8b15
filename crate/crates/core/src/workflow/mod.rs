//! Workflow documents: a declarative description of channels (ordered item
//! streams) and the processes that consume and produce them.
//!
//! ```json
//! { "schema_version": 1, "name": "demo", "params": {"n_sets": 10},
//!   "channels": [ {"name": "sites", "source": {"type": "file", "path": "sites.csv", "reader": "sites"}} ],
//!   "processes": [ {"name": "wind", "kind": {"builtin": "wind@1"},
//!                   "inputs": {"site": "sites"}, "outputs": {"history": "HistoricalRecord"}} ] }
//! ```

pub mod contract;
pub mod graph;
pub mod plan;
pub mod types;
pub mod validate;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};

pub use contract::{ComponentContract, Contracts, ParamSpec};
pub use graph::{build_dag, CycleError, DagError, Edge, EdgeSource, ProcessGraph};
pub use plan::{
    apply_channel_op, plan_tasks, resolve_sources, FileRef, Item, OperatorArity, Plan, PlanError, Shape, Sources, TaskInstance,
};
pub use types::{BaseType, TypeExpr};
pub use validate::validate_workflow;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default)]
    pub channels: Vec<ChannelDef>,
    #[serde(default)]
    pub processes: Vec<ProcessDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDef {
    pub name: String,
    pub source: Source,
    #[serde(default)]
    pub ops: Vec<ChannelOp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Source {
    Literal {
        values: Vec<Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        item_type: Option<TypeExpr>,
    },
    /// Glob relative to the workflow's base directory; matches are taken in
    /// sorted path order.
    File {
        path: String,
        #[serde(default)]
        reader: Reader,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        item_type: Option<TypeExpr>,
    },
    Output {
        process: String,
        port: String,
    },
}

/// How a matched file becomes channel items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reader {
    /// One `FileRef` per file.
    #[default]
    Path,
    /// One `WindFarmSite` per row of a sites CSV.
    Sites,
    /// One `BatteryConfig` per catalog entry.
    BatteryCatalog,
    /// One item per element of a JSON array.
    JsonItems,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum ChannelOp {
    Flatten,
    Collect,
    Cross { with: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ProcessKind {
    /// `op@version`
    Builtin(String),
    /// Shell command; `{port}` expands to the input file of that port,
    /// `{params.name}` to a workflow parameter.
    Exec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessDef {
    pub name: String,
    pub kind: ProcessKind,
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub outputs: BTreeMap<String, OutputDecl>,
    #[serde(default)]
    pub retries: u32,
    #[serde(default)]
    pub tag: String,
    /// Copy file outputs into the run's results directory.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub publish: bool,
}

/// Declared output port. `emits` fixes the length of a list-typed output so
/// that downstream fan-out is known before execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "OutputRepr", into = "OutputRepr")]
pub struct OutputDecl {
    pub ty: TypeExpr,
    pub emits: Option<Emits>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Emits {
    Count(u64),
    Param(String),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OutputRepr {
    Short(TypeExpr),
    Full {
        #[serde(rename = "type")]
        ty: TypeExpr,
        emits: Emits,
    },
}

impl From<OutputRepr> for OutputDecl {
    fn from(r: OutputRepr) -> Self {
        match r {
            OutputRepr::Short(ty) => OutputDecl { ty, emits: None },
            OutputRepr::Full { ty, emits } => OutputDecl { ty, emits: Some(emits) },
        }
    }
}

impl From<OutputDecl> for OutputRepr {
    fn from(d: OutputDecl) -> Self {
        match d.emits {
            None => OutputRepr::Short(d.ty),
            Some(emits) => OutputRepr::Full { ty: d.ty, emits },
        }
    }
}

impl OutputDecl {
    pub fn of(ty: TypeExpr) -> Self {
        OutputDecl { ty, emits: None }
    }
}

impl WorkflowSpec {
    pub fn channel(&self, name: &str) -> Option<&ChannelDef> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn process(&self, name: &str) -> Option<&ProcessDef> {
        self.processes.iter().find(|p| p.name == name)
    }

    pub fn process_index(&self, name: &str) -> Option<usize> {
        self.processes.iter().position(|p| p.name == name)
    }

    /// Non-negative integer parameter.
    pub fn param_u64(&self, name: &str) -> Option<u64> {
        self.params.get(name).and_then(Value::as_u64)
    }
}

impl Emits {
    pub fn resolve(&self, params: &BTreeMap<String, Value>) -> Option<u64> {
        match self {
            Emits::Count(n) => Some(*n),
            Emits::Param(p) => params.get(p).and_then(Value::as_u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    SyntaxError { line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    SchemaError(String),
}

pub fn parse_workflow(text: &str) -> Result<WorkflowSpec, ParseError> {
    use serde_json::error::Category;
    let spec: WorkflowSpec = serde_json::from_str(text).map_err(|e| match e.classify() {
        Category::Syntax | Category::Eof | Category::Io => {
            ParseError::SyntaxError { line: e.line(), column: e.column(), message: e.to_string() }
        }
        Category::Data => ParseError::SchemaError(e.to_string()),
    })?;
    check_schema(&spec).map_err(ParseError::SchemaError)?;
    Ok(spec)
}

pub fn serialize_workflow(spec: &WorkflowSpec) -> String {
    serde_json::to_string_pretty(spec).expect("workflow specs always serialize")
}

pub fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn check_schema(spec: &WorkflowSpec) -> Result<(), String> {
    if spec.schema_version != SCHEMA_VERSION {
        return Err(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", spec.schema_version));
    }
    if !is_identifier(&spec.name) {
        return Err(format!("invalid workflow name {:?}", spec.name));
    }
    for (k, v) in &spec.params {
        let scalar = |v: &Value| matches!(v, Value::Bool(_) | Value::Number(_) | Value::String(_));
        let ok = scalar(v) || matches!(v, Value::Array(xs) if xs.iter().all(scalar));
        if !ok {
            return Err(format!("param {k} must be a scalar or a list of scalars"));
        }
    }
    let mut seen = BTreeSet::new();
    for c in &spec.channels {
        if !is_identifier(&c.name) {
            return Err(format!("invalid channel name {:?}", c.name));
        }
        if !seen.insert(c.name.as_str()) {
            return Err(format!("duplicate channel name {:?}", c.name));
        }
    }
    let mut seen = BTreeSet::new();
    for p in &spec.processes {
        if !is_identifier(&p.name) {
            return Err(format!("invalid process name {:?}", p.name));
        }
        if !seen.insert(p.name.as_str()) {
            return Err(format!("duplicate process name {:?}", p.name));
        }
        for port in p.inputs.keys().chain(p.outputs.keys()) {
            if !is_identifier(port) {
                return Err(format!("process {}: invalid port name {:?}", p.name, port));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document() {
        let spec = parse_workflow(r#"{"schema_version":1,"name":"a","channels":[],"processes":[]}"#).unwrap();
        assert_eq!(spec.name, "a");
        assert!(spec.channels.is_empty() && spec.processes.is_empty() && spec.params.is_empty());
    }

    #[test]
    fn duplicate_process_name() {
        let doc = r#"{"schema_version":1,"name":"a","processes":[
            {"name":"p","kind":{"exec":"true"}},
            {"name":"p","kind":{"exec":"true"}}]}"#;
        match parse_workflow(doc) {
            Err(ParseError::SchemaError(m)) => assert!(m.contains("duplicate process name"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        let doc = "{\n  \"schema_version\": 1,\n  \"name\": \"a\",,\n}";
        match parse_workflow(doc) {
            Err(ParseError::SyntaxError { line, column, .. }) => assert_eq!((line, column), (3, 15)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_operators_rejected() {
        let doc = r#"{"schema_version":1,"name":"a","extra":1}"#;
        assert!(matches!(parse_workflow(doc), Err(ParseError::SchemaError(_))));
        let doc = r#"{"schema_version":1,"name":"a","channels":[
            {"name":"c","source":{"type":"literal","values":[1]},"ops":[{"op":"zip"}]}]}"#;
        match parse_workflow(doc) {
            Err(ParseError::SchemaError(m)) => assert!(m.contains("zip"), "{m}"),
            other => panic!("{other:?}"),
        }
        let doc = r#"{"schema_version":1,"name":"a","processes":[
            {"name":"p","kind":{"exec":"true"},"outputs":{"o":"Widget"}}]}"#;
        assert!(matches!(parse_workflow(doc), Err(ParseError::SchemaError(_))));
        let doc = r#"{"schema_version":2,"name":"a"}"#;
        assert!(matches!(parse_workflow(doc), Err(ParseError::SchemaError(_))));
    }

    #[test]
    fn output_forms() {
        let doc = r#"{"schema_version":1,"name":"a","processes":[
            {"name":"p","kind":{"builtin":"scen_set@1"},
             "outputs":{"sets":{"type":"[ScenarioSet]","emits":"n_sets"},"x":"Scalar"}}]}"#;
        let spec = parse_workflow(doc).unwrap();
        let p = &spec.processes[0];
        assert_eq!(p.outputs["sets"].emits, Some(Emits::Param("n_sets".into())));
        assert_eq!(p.outputs["x"].emits, None);
        assert_eq!(parse_workflow(&serialize_workflow(&spec)).unwrap(), spec);
    }
}
