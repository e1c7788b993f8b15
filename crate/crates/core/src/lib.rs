pub mod canonical;
pub mod data;
pub mod optimizer;
pub mod scenario;
pub mod validation;
pub mod workflow;
pub mod builtins;
pub mod reporting;
pub mod provenance;
pub mod executor;
pub mod demo;
