//! Diagnostic plans: `(object, tool, action)` steps over named artifacts.
//!
//! A plan is a DAG. Every step names the artifact it produces; later steps
//! refer to earlier artifacts by that name. Indicator bindings say which
//! artifact holds the finding for each indicator.

pub(crate) mod compile;
mod registry;
mod template;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecError, ParseMode};
use crate::knowledge::RetrievedCriterion;
use crate::llm::ChatError;
use crate::model::Modality;

pub use compile::{compile_plan_llm, parse_plan_block, render_plan_block, PLAN_PROMPT_VERSION};
pub use registry::{
    default_registry, load_registry, validate_registry, Endpoint, RegistryError, ToolDescriptor, ToolKind,
};
pub use template::{compile_plan_template, criteria_query, SUPPORTED_DISEASES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    /// Primary input artifact.
    pub object: String,
    /// Additional input artifacts, in the order the tool expects them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub with: Vec<String>,
    pub tool: String,
    pub action: String,
    pub produces: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

impl PlanStep {
    pub fn new(object: &str, tool: &str, action: &str, produces: &str) -> Self {
        Self {
            object: object.into(),
            with: Vec::new(),
            tool: tool.into(),
            action: action.into(),
            produces: produces.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_input(mut self, artifact: &str) -> Self {
        self.with.push(artifact.into());
        self
    }

    pub fn param(mut self, key: &str, value: &str) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    /// All input artifacts: the object first, then `with`.
    pub fn inputs(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.object.as_str()).chain(self.with.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticPlan {
    pub disease_id: String,
    pub declared_inputs: IndexMap<String, Modality>,
    pub steps: Vec<PlanStep>,
    pub indicator_bindings: IndexMap<String, String>,
    #[serde(default)]
    pub criteria: Vec<RetrievedCriterion>,
}

impl DiagnosticPlan {
    pub fn digest(&self) -> String {
        codec::json_digest(self)
    }

    pub fn load(path: &Path) -> Result<Self, CodecError> {
        codec::read_json(path, ParseMode::Strict)
    }

    pub fn indicator_names(&self) -> Vec<String> {
        self.indicator_bindings.keys().cloned().collect()
    }

    /// Index of the step producing `artifact`.
    pub fn producer(&self, artifact: &str) -> Option<usize> {
        self.steps.iter().position(|s| s.produces == artifact)
    }

    /// Type tag of an artifact: the modality of a declared input, or the
    /// producing tool's output type.
    pub fn artifact_type<'a>(&'a self, artifact: &str, registry: &'a [ToolDescriptor]) -> Option<&'a str> {
        if let Some(m) = self.declared_inputs.get(artifact) {
            return Some(m.as_str());
        }
        let step = &self.steps[self.producer(artifact)?];
        registry.iter().find(|t| t.tool_id == step.tool).map(|t| t.produces.as_str())
    }
}

/// One validation violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "snake_case")]
pub enum Finding {
    UnknownTool { step: usize, tool: String },
    TypeMismatch { step: usize, artifact: String, artifact_type: String, tool: String },
    UnresolvedObject { step: usize, artifact: String },
    ForwardReference { step: usize, artifact: String },
    CycleDetected { steps: Vec<usize> },
    UnboundIndicator { indicator: String, artifact: String },
    DuplicateProduces { artifact: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FindingCategory {
    UnknownTool,
    TypeMismatch,
    UnresolvedObject,
    ForwardReference,
    CycleDetected,
    UnboundIndicator,
    DuplicateProduces,
}

impl Finding {
    pub fn category(&self) -> FindingCategory {
        match self {
            Finding::UnknownTool { .. } => FindingCategory::UnknownTool,
            Finding::TypeMismatch { .. } => FindingCategory::TypeMismatch,
            Finding::UnresolvedObject { .. } => FindingCategory::UnresolvedObject,
            Finding::ForwardReference { .. } => FindingCategory::ForwardReference,
            Finding::CycleDetected { .. } => FindingCategory::CycleDetected,
            Finding::UnboundIndicator { .. } => FindingCategory::UnboundIndicator,
            Finding::DuplicateProduces { .. } => FindingCategory::DuplicateProduces,
        }
    }
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Finding::UnknownTool { step, tool } => write!(f, "step {step}: unknown tool `{tool}`"),
            Finding::TypeMismatch { step, artifact, artifact_type, tool } => {
                write!(f, "step {step}: tool `{tool}` does not accept `{artifact}` of type {artifact_type}")
            }
            Finding::UnresolvedObject { step, artifact } => {
                write!(f, "step {step}: `{artifact}` is neither a declared input nor produced by any step")
            }
            Finding::ForwardReference { step, artifact } => {
                write!(f, "step {step}: `{artifact}` is produced by a later step")
            }
            Finding::CycleDetected { steps } => write!(f, "dependency cycle through steps {steps:?}"),
            Finding::UnboundIndicator { indicator, artifact } => {
                write!(f, "indicator `{indicator}` bound to `{artifact}`, which no step produces")
            }
            Finding::DuplicateProduces { artifact } => write!(f, "artifact `{artifact}` is defined more than once"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn categories(&self) -> BTreeSet<FindingCategory> {
        self.findings.iter().map(Finding::category).collect()
    }

    pub fn contains(&self, category: FindingCategory) -> bool {
        self.findings.iter().any(|f| f.category() == category)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for finding in &self.findings {
            writeln!(f, "- {finding}")?;
        }
        Ok(())
    }
}

/// Collects every violation; an empty report means the plan is valid.
pub fn validate_plan(plan: &DiagnosticPlan, registry: &[ToolDescriptor]) -> ValidationReport {
    let mut findings = Vec::new();
    let tools: HashMap<&str, &ToolDescriptor> = registry.iter().map(|t| (t.tool_id.as_str(), t)).collect();

    let mut defined: BTreeMap<&str, usize> = BTreeMap::new();
    for name in plan.declared_inputs.keys() {
        *defined.entry(name).or_default() += 1;
    }
    let mut producer: HashMap<&str, usize> = HashMap::new();
    for (i, step) in plan.steps.iter().enumerate() {
        *defined.entry(&step.produces).or_default() += 1;
        producer.entry(&step.produces).or_insert(i);
    }
    for (name, count) in &defined {
        if *count > 1 {
            findings.push(Finding::DuplicateProduces { artifact: name.to_string() });
        }
    }

    for (i, step) in plan.steps.iter().enumerate() {
        let tool = tools.get(step.tool.as_str());
        if tool.is_none() {
            findings.push(Finding::UnknownTool { step: i, tool: step.tool.clone() });
        }
        for input in step.inputs() {
            let ty = if let Some(m) = plan.declared_inputs.get(input) {
                Some(m.as_str().to_string())
            } else if let Some(&p) = producer.get(input) {
                if p >= i {
                    findings.push(Finding::ForwardReference { step: i, artifact: input.to_string() });
                }
                tools.get(plan.steps[p].tool.as_str()).map(|t| t.produces.clone())
            } else {
                findings.push(Finding::UnresolvedObject { step: i, artifact: input.to_string() });
                None
            };
            if let (Some(tool), Some(ty)) = (tool, ty) {
                if !tool.accepts(&ty) {
                    findings.push(Finding::TypeMismatch {
                        step: i,
                        artifact: input.to_string(),
                        artifact_type: ty,
                        tool: tool.tool_id.clone(),
                    });
                }
            }
        }
    }

    let cyclic = steps_in_cycles(plan, &producer);
    if !cyclic.is_empty() {
        findings.push(Finding::CycleDetected { steps: cyclic });
    }

    for (indicator, artifact) in &plan.indicator_bindings {
        if !producer.contains_key(artifact.as_str()) {
            findings.push(Finding::UnboundIndicator { indicator: indicator.clone(), artifact: artifact.clone() });
        }
    }
    ValidationReport { findings }
}

/// Steps lying on a dependency cycle (self-loops included).
fn steps_in_cycles(plan: &DiagnosticPlan, producer: &HashMap<&str, usize>) -> Vec<usize> {
    let n = plan.steps.len();
    let deps: Vec<Vec<usize>> = plan
        .steps
        .iter()
        .map(|s| {
            s.inputs()
                .filter(|a| !plan.declared_inputs.contains_key(*a))
                .filter_map(|a| producer.get(a).copied())
                .collect()
        })
        .collect();
    // a step is on a cycle iff it can reach itself
    (0..n)
        .filter(|&start| {
            let mut stack: Vec<usize> = deps[start].clone();
            let mut seen = vec![false; n];
            while let Some(v) = stack.pop() {
                if v == start {
                    return true;
                }
                if !std::mem::replace(&mut seen[v], true) {
                    stack.extend(&deps[v]);
                }
            }
            false
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("tool registry is empty")]
    EmptyRegistry,
    #[error("unknown disease `{0}`")]
    UnknownDisease(String),
    #[error("registry has no {kind} tool for {role}")]
    MissingTool { kind: ToolKind, role: &'static str },
    #[error("could not parse a plan from the model reply: {reason}")]
    Parse { reason: String, raw: String },
    #[error("plan failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Chat(#[from] ChatError),
}
