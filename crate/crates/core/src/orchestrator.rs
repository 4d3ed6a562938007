//! Runs a plan against one patient case: picks the executable steps, runs
//! them over a bounded worker pool in dependency order, and summarizes the
//! bound artifacts into indicator results.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::gateway::{GatewayError, Payload, Quantity, ToolGateway, ToolInput, ToolRequest, INLINE_LIMIT};
use crate::imaging::Volume3D;
use crate::llm::ChatError;
use crate::model::{
    artifact_type, CaseError, EvidenceKind, EvidenceRef, IndicatorResult, Measurement, Modality, PatientCase,
};
use crate::plan::{validate_plan, DiagnosticPlan, PlanStep, ValidationReport};
use crate::summarizer::{SummaryError, Summarizer};

pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_STEP_TIMEOUT: Duration = Duration::from_secs(120);
pub const ARTIFACTS_DIR: &str = "artifacts";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrchestratorConfig {
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_timeout_secs")]
    pub step_timeout_secs: f64,
}

fn default_workers() -> usize {
    DEFAULT_WORKERS
}

fn default_timeout_secs() -> f64 {
    DEFAULT_STEP_TIMEOUT.as_secs_f64()
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self { workers: DEFAULT_WORKERS, step_timeout_secs: default_timeout_secs() }
    }
}

impl OrchestratorConfig {
    pub fn with_workers(workers: usize) -> Self {
        Self { workers, ..Self::default() }
    }

    pub fn step_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.step_timeout_secs)
    }
}

/// A materialized artifact; `locator` is relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub name: String,
    #[serde(rename = "type")]
    pub type_tag: String,
    pub locator: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StepOutcome {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub tool_id: String,
    pub action: String,
    pub produces: String,
    pub request_id: String,
    pub outcome: StepOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Timing fields; they vary between runs.
    pub duration_ms: f64,
    pub started_seq: u64,
    pub finished_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedStep {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OmittedIndicator {
    pub indicator: String,
    pub reason: String,
}

/// Serialized form written to `trace.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub case_id: String,
    pub plan_digest: String,
    pub steps: Vec<TraceEntry>,
    pub skipped: Vec<SkippedStep>,
    pub omitted: Vec<OmittedIndicator>,
    pub artifacts: Vec<ArtifactRef>,
}

#[derive(Debug, Clone)]
pub struct ExecutionContext {
    pub case: PatientCase,
    pub plan: DiagnosticPlan,
    pub run_dir: PathBuf,
    /// Append-only; declared inputs first, then step outputs in completion order.
    pub artifacts: IndexMap<String, ArtifactRef>,
    /// Executed steps in completion order.
    pub trace: Vec<TraceEntry>,
    pub skipped: Vec<SkippedStep>,
    pub omitted: Vec<OmittedIndicator>,
    evidence: HashMap<usize, Vec<EvidenceRef>>,
}

impl ExecutionContext {
    pub fn run_trace(&self) -> RunTrace {
        RunTrace {
            case_id: self.case.case_id.clone(),
            plan_digest: self.plan.digest(),
            steps: self.trace.clone(),
            skipped: self.skipped.clone(),
            omitted: self.omitted.clone(),
            artifacts: self.artifacts.values().cloned().collect(),
        }
    }

    /// Trace entries by step index with timing fields cleared.
    pub fn trace_signature(&self) -> Vec<TraceEntry> {
        let mut t: Vec<TraceEntry> = self
            .trace
            .iter()
            .map(|e| TraceEntry { duration_ms: 0.0, started_seq: 0, finished_seq: 0, ..e.clone() })
            .collect();
        t.sort_by_key(|e| e.step);
        t
    }

    pub fn failed_steps(&self) -> Vec<usize> {
        let mut v: Vec<usize> =
            self.trace.iter().filter(|e| e.outcome != StepOutcome::Ok).map(|e| e.step).collect();
        v.sort_unstable();
        v
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("plan failed validation:\n{0}")]
    InvalidPlan(ValidationReport),
    #[error("no indicators could be produced for case `{}`", .context.case.case_id)]
    NoIndicators { context: Box<ExecutionContext> },
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("cannot stage input `{name}`: {reason}")]
    Input { name: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Chat(#[from] ChatError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io { path: path.to_path_buf(), source }
}

/// Indices of the executable steps in topological order, ties broken by plan order.
pub fn select_step_indices(plan: &DiagnosticPlan, available: &BTreeSet<String>) -> Vec<usize> {
    let mut have: BTreeSet<&str> = available
        .iter()
        .map(String::as_str)
        .filter(|a| plan.declared_inputs.contains_key(*a))
        .collect();
    let mut chosen = vec![false; plan.steps.len()];
    let mut order = Vec::new();
    while let Some(i) =
        (0..plan.steps.len()).find(|&i| !chosen[i] && plan.steps[i].inputs().all(|a| have.contains(a)))
    {
        chosen[i] = true;
        order.push(i);
        have.insert(&plan.steps[i].produces);
    }
    order
}

pub fn select_steps(plan: &DiagnosticPlan, available: &BTreeSet<String>) -> Vec<PlanStep> {
    select_step_indices(plan, available).into_iter().map(|i| plan.steps[i].clone()).collect()
}

/// Where each available declared input comes from.
enum InputSource<'a> {
    File(&'a Path),
    Metadata,
}

/// Matches declared inputs to case inputs: same name and modality first, then
/// the only case input of that modality. Scalar metadata may come from the
/// case's metadata block.
fn resolve_inputs<'a>(case: &'a PatientCase, plan: &DiagnosticPlan) -> BTreeMap<String, InputSource<'a>> {
    let mut out = BTreeMap::new();
    for (name, modality) in &plan.declared_inputs {
        let by_name = case.inputs.get(name).filter(|i| i.modality == *modality);
        let by_modality = || {
            let mut it = case.inputs.values().filter(|i| i.modality == *modality);
            match (it.next(), it.next()) {
                (Some(only), None) => Some(only),
                _ => None,
            }
        };
        if let Some(input) = by_name.or_else(by_modality) {
            out.insert(name.clone(), InputSource::File(&input.path));
        } else if *modality == Modality::ScalarMetadata && case.metadata.is_some() {
            out.insert(name.clone(), InputSource::Metadata);
        }
    }
    out
}

fn locator(name: &str, type_tag: &str) -> String {
    format!("{ARTIFACTS_DIR}/{name}.{}", artifact_type::file_extension(type_tag))
}

fn copy_file(from: &Path, to: &Path) -> Result<(), String> {
    std::fs::copy(from, to).map(|_| ()).map_err(|e| format!("copy {} -> {}: {e}", from.display(), to.display()))
}

/// Copies a payload into the run directory (volumes with their sidecar).
fn store(run_dir: &Path, name: &str, type_tag: &str, payload: &Payload) -> Result<ArtifactRef, String> {
    let loc = locator(name, type_tag);
    let dest = run_dir.join(&loc);
    let volume = artifact_type::is_volume(type_tag);
    match payload {
        Payload::Inline(_) if volume => return Err(format!("{name}: volume outputs must be passed by path")),
        Payload::Inline(_) => {
            let bytes = payload.bytes().map_err(|e| e.to_string())?;
            std::fs::write(&dest, bytes).map_err(|e| format!("write {}: {e}", dest.display()))?;
        }
        Payload::Path(p) => {
            copy_file(Path::new(p), &dest)?;
            if volume {
                copy_file(&Volume3D::sidecar_path(Path::new(p)), &Volume3D::sidecar_path(&dest))?;
            }
        }
    }
    let digest = ToolInput { name: name.into(), type_tag: type_tag.into(), payload: Payload::path(&dest) }
        .canonical_bytes()
        .map(|b| crate::codec::sha256_hex(&b))
        .map_err(|e| e.to_string())?;
    Ok(ArtifactRef { name: name.into(), type_tag: type_tag.into(), locator: loc, digest })
}

fn wire_input(run_dir: &Path, artifact: &ArtifactRef) -> Result<ToolInput, String> {
    let path = run_dir.join(&artifact.locator);
    let payload = if artifact_type::is_volume(&artifact.type_tag) {
        Payload::path(&path)
    } else {
        let bytes = std::fs::read(&path).map_err(|e| format!("read {}: {e}", path.display()))?;
        if bytes.len() <= INLINE_LIMIT {
            Payload::inline(&bytes)
        } else {
            Payload::path(&path)
        }
    };
    Ok(ToolInput { name: artifact.name.clone(), type_tag: artifact.type_tag.clone(), payload })
}

struct StepSuccess {
    artifact: ArtifactRef,
    evidence: Vec<EvidenceRef>,
    confidence: Option<f64>,
}

struct Job {
    request: ToolRequest,
    timeout: Duration,
    expected_type: String,
}

fn run_job(gateway: &ToolGateway, run_dir: &Path, job: &Job, produces: &str) -> Result<StepSuccess, String> {
    let descriptor = gateway
        .descriptor(&job.request.tool_id)
        .ok_or_else(|| format!("tool `{}` is not registered", job.request.tool_id))?;
    let response = gateway.invoke(descriptor, &job.request, job.timeout).map_err(|e: GatewayError| e.to_string())?;
    let output = if response.outputs.len() == 1 {
        &response.outputs[0]
    } else {
        response
            .outputs
            .iter()
            .find(|o| o.name == produces)
            .or_else(|| response.outputs.iter().find(|o| o.type_tag == job.expected_type))
            .ok_or_else(|| format!("no output of type {}", job.expected_type))?
    };
    if output.type_tag != job.expected_type {
        return Err(format!("tool returned {} but the registry promises {}", output.type_tag, job.expected_type));
    }
    let artifact = store(run_dir, produces, &output.type_tag, &output.payload)?;
    Ok(StepSuccess { artifact, evidence: response.evidence, confidence: response.confidence })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Pending,
    Running,
    Done,
    Failed,
    Skipped,
}

/// Executes the plan for one case, writing artifacts under `run_dir/artifacts`.
pub fn execute_plan(
    case: &PatientCase,
    plan: &DiagnosticPlan,
    gateway: &ToolGateway,
    summarizer: &Summarizer,
    config: &OrchestratorConfig,
    run_dir: &Path,
) -> Result<(Vec<IndicatorResult>, ExecutionContext), OrchestratorError> {
    let report = validate_plan(plan, gateway.registry());
    if !report.is_valid() {
        return Err(OrchestratorError::InvalidPlan(report));
    }
    case.validate()?;
    let art_dir = run_dir.join(ARTIFACTS_DIR);
    std::fs::create_dir_all(&art_dir).map_err(io_err(&art_dir))?;

    let mut ctx = ExecutionContext {
        case: case.clone(),
        plan: plan.clone(),
        run_dir: run_dir.to_path_buf(),
        artifacts: IndexMap::new(),
        trace: Vec::new(),
        skipped: Vec::new(),
        omitted: Vec::new(),
        evidence: HashMap::new(),
    };

    for (name, source) in resolve_inputs(case, plan) {
        let modality = plan.declared_inputs[&name];
        let artifact = match source {
            InputSource::File(path) => store(run_dir, &name, modality.as_str(), &Payload::path(path)),
            InputSource::Metadata => {
                let bytes = serde_json::to_vec(&case.metadata).expect("metadata serializes");
                store(run_dir, &name, modality.as_str(), &Payload::inline(&bytes))
            }
        }
        .map_err(|reason| OrchestratorError::Input { name: name.clone(), reason })?;
        ctx.artifacts.insert(name, artifact);
    }

    let available: BTreeSet<String> = ctx.artifacts.keys().cloned().collect();
    let selected = select_step_indices(plan, &available);
    let producer: HashMap<&str, usize> =
        plan.steps.iter().enumerate().map(|(i, s)| (s.produces.as_str(), i)).collect();
    let mut state: BTreeMap<usize, State> = selected.iter().map(|&i| (i, State::Pending)).collect();
    let workers = config.workers.max(1);
    let mut seq = 0u64;
    let mut started: HashMap<usize, u64> = HashMap::new();

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<StepSuccess, String>, Duration)>();
        let mut running = 0usize;
        loop {
            for &i in &selected {
                if running >= workers {
                    break;
                }
                if state[&i] != State::Pending {
                    continue;
                }
                let step = &plan.steps[i];
                if !step.inputs().all(|a| ctx.artifacts.contains_key(a)) {
                    continue;
                }
                let job = build_job(&ctx, gateway, config, i, step);
                state.insert(i, State::Running);
                started.insert(i, seq);
                seq += 1;
                running += 1;
                let tx = tx.clone();
                let gateway = gateway.clone();
                let run_dir = run_dir.to_path_buf();
                let produces = step.produces.clone();
                scope.spawn(move || {
                    let t0 = Instant::now();
                    let result = job.and_then(|job| run_job(&gateway, &run_dir, &job, &produces));
                    let _ = tx.send((i, result, t0.elapsed()));
                });
            }
            if running == 0 {
                break;
            }
            let (i, result, elapsed) = rx.recv().expect("worker channel open");
            running -= 1;
            let step = &plan.steps[i];
            let (outcome, confidence) = match result {
                Ok(success) => {
                    ctx.artifacts.insert(step.produces.clone(), success.artifact);
                    ctx.evidence.insert(i, success.evidence);
                    state.insert(i, State::Done);
                    (StepOutcome::Ok, success.confidence)
                }
                Err(error) => {
                    tracing::warn!(case_id = %case.case_id, step = i, tool = %step.tool, %error, "step failed");
                    state.insert(i, State::Failed);
                    (StepOutcome::Failed { error }, None)
                }
            };
            ctx.trace.push(TraceEntry {
                step: i,
                tool_id: step.tool.clone(),
                action: step.action.clone(),
                produces: step.produces.clone(),
                request_id: request_id(case, i, step),
                outcome,
                confidence,
                duration_ms: elapsed.as_secs_f64() * 1000.0,
                started_seq: started[&i],
                finished_seq: seq,
            });
            seq += 1;
            // selection order is topological, so one pass propagates skips
            for &j in &selected {
                if state[&j] != State::Pending {
                    continue;
                }
                let blocked = plan.steps[j].inputs().find(|a| {
                    producer
                        .get(a)
                        .is_some_and(|p| matches!(state.get(p), Some(State::Failed | State::Skipped)))
                });
                if let Some(a) = blocked {
                    state.insert(j, State::Skipped);
                    ctx.skipped.push(SkippedStep { step: j, reason: format!("input `{a}` was not produced") });
                }
            }
        }
    });
    ctx.skipped.sort_by_key(|s| s.step);

    let indicators = summarize_bindings(&mut ctx, summarizer)?;
    if indicators.is_empty() {
        return Err(OrchestratorError::NoIndicators { context: Box::new(ctx) });
    }
    Ok((indicators, ctx))
}

fn request_id(case: &PatientCase, i: usize, step: &PlanStep) -> String {
    format!("{}:{}:{}", case.case_id, i, step.produces)
}

fn build_job(
    ctx: &ExecutionContext,
    gateway: &ToolGateway,
    config: &OrchestratorConfig,
    i: usize,
    step: &PlanStep,
) -> Result<Job, String> {
    let descriptor = gateway.descriptor(&step.tool).ok_or_else(|| format!("tool `{}` is not registered", step.tool))?;
    let inputs = step
        .inputs()
        .map(|a| wire_input(&ctx.run_dir, &ctx.artifacts[a]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Job {
        request: ToolRequest {
            request_id: request_id(&ctx.case, i, step),
            tool_id: step.tool.clone(),
            action: step.action.clone(),
            inputs,
            params: step.params.clone(),
        },
        timeout: descriptor.timeout_secs.map_or(config.step_timeout(), Duration::from_secs),
        expected_type: descriptor.produces.clone(),
    })
}

fn evidence_kind(type_tag: &str) -> EvidenceKind {
    match type_tag {
        artifact_type::MEASUREMENT => EvidenceKind::NumericTrace,
        artifact_type::TEXT => EvidenceKind::TextExcerpt,
        artifact_type::IMAGE_CROP => EvidenceKind::CropRegion,
        _ => EvidenceKind::MaskFile,
    }
}

const EXCERPT_CHARS: usize = 200;

fn summarize_bindings(
    ctx: &mut ExecutionContext,
    summarizer: &Summarizer,
) -> Result<Vec<IndicatorResult>, OrchestratorError> {
    let mut results = Vec::new();
    for (indicator, artifact_name) in ctx.plan.indicator_bindings.clone() {
        let Some(artifact) = ctx.artifacts.get(&artifact_name).cloned() else {
            ctx.omitted.push(OmittedIndicator {
                indicator,
                reason: format!("artifact `{artifact_name}` was not produced"),
            });
            continue;
        };
        let step_index = ctx.plan.producer(&artifact_name).expect("bound artifacts come from steps");
        let step = ctx.plan.steps[step_index].clone();
        let path = ctx.run_dir.join(&artifact.locator);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let summary: Result<_, SummaryError> = match artifact.type_tag.as_str() {
            artifact_type::MEASUREMENT => Quantity::from_bytes(&bytes).map_err(SummaryError::from).and_then(|q| {
                let m = Measurement::new(q.value, q.unit);
                let status = summarizer.numeric(&indicator, &m)?;
                Ok((status, Some(m), format!("{} = {} {}", step.action, q.value, q.unit)))
            }),
            artifact_type::TEXT => {
                let text = String::from_utf8_lossy(&bytes).into_owned();
                summarizer.text(&indicator, &text).map(|s| (s, None, text.chars().take(EXCERPT_CHARS).collect()))
            }
            other => Err(SummaryError::NoRule(format!("{indicator} (artifact type {other})"))),
        };
        let (status, raw_value, description) = match summary {
            Ok(v) => v,
            Err(SummaryError::Chat(e)) => return Err(e.into()),
            Err(e) => {
                tracing::warn!(case_id = %ctx.case.case_id, %indicator, error = %e, "indicator omitted");
                ctx.omitted.push(OmittedIndicator { indicator, reason: e.to_string() });
                continue;
            }
        };
        let mut evidence = vec![EvidenceRef::new(evidence_kind(&artifact.type_tag), &artifact.locator, description)];
        for input in step.inputs() {
            let a = &ctx.artifacts[input];
            if matches!(
                a.type_tag.as_str(),
                artifact_type::MASK_2D | artifact_type::LABEL_VOLUME_3D | artifact_type::IMAGE_CROP
            ) {
                evidence.push(EvidenceRef::new(evidence_kind(&a.type_tag), &a.locator, format!("input `{input}`")));
            }
        }
        evidence.extend(ctx.evidence.get(&step_index).cloned().unwrap_or_default());
        results.push(IndicatorResult { name: indicator, status, raw_value, evidence, tool_id: step.tool.clone() });
    }
    Ok(results)
}
