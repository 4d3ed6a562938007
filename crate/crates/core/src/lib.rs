//! Diagnostic workflow engine.
//!
//! Criteria are retrieved from a reference corpus and compiled into a plan of
//! `(object, tool, action)` steps. The orchestrator runs the plan against a
//! patient case through a tool gateway, the summarizer turns tool outputs into
//! indicator statuses, and a decider combines them into a diagnosis.

pub mod cli;
pub mod codec;
pub mod decider;
pub mod engine;
pub mod evaluation;
pub mod gateway;
pub mod imaging;
pub mod knowledge;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod plan;
mod prompts;
pub mod service;
pub mod summarizer;
pub mod synth;

pub use engine::{DeciderKind, Engine, EngineConfig, EngineError, PlanBackend};
pub use model::{Diagnosis, DiagnosisLabel, IndicatorResult, IndicatorStatus, PatientCase};
pub use plan::DiagnosticPlan;
