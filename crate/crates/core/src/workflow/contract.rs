use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::types::TypeExpr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub required: bool,
}

/// Port schema of one builtin operation. Schemas are closed: a process may
/// bind exactly the declared input ports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentContract {
    pub op_id: String,
    pub version: String,
    pub inputs: BTreeMap<String, TypeExpr>,
    pub outputs: BTreeMap<String, TypeExpr>,
    /// Workflow parameters the operation reads; only these enter cache keys.
    pub params: Vec<ParamSpec>,
}

impl ComponentContract {
    pub fn new(op_id: &str, version: &str) -> Self {
        ComponentContract {
            op_id: op_id.into(),
            version: version.into(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            params: Vec::new(),
        }
    }

    pub fn input(mut self, port: &str, ty: &str) -> Self {
        self.inputs.insert(port.into(), ty.parse().expect("contract type"));
        self
    }

    pub fn output(mut self, port: &str, ty: &str) -> Self {
        self.outputs.insert(port.into(), ty.parse().expect("contract type"));
        self
    }

    pub fn param(mut self, name: &str, required: bool) -> Self {
        self.params.push(ParamSpec { name: name.into(), required });
        self
    }

    /// `op@version`, the form used in workflow documents.
    pub fn reference(&self) -> String {
        format!("{}@{}", self.op_id, self.version)
    }
}

/// Contracts keyed by `op@version`.
pub type Contracts = BTreeMap<String, ComponentContract>;
