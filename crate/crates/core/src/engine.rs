//! Engine configuration and the shared core behind the CLI and the service.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecError, ParseMode};
use crate::decider::{self, DeciderError, MoeConfig, DEFAULT_THETA};
use crate::gateway::{load_mock_fixtures, ToolGateway};
use crate::knowledge::{bundled_corpus, load_corpus_dir, KnowledgeError, KnowledgeIndex, DEFAULT_TOP_K};
use crate::llm::{ChatClient, ChatError, LlmClient, LlmConfig};
use crate::model::{Diagnosis, IndicatorResult, PatientCase, Provenance};
use crate::orchestrator::{execute_plan, ExecutionContext, OrchestratorConfig, OrchestratorError};
use crate::plan::{
    compile_plan_llm, compile_plan_template, criteria_query, default_registry, load_registry, DiagnosticPlan,
    PlanError, RegistryError, ValidationReport,
};
use crate::summarizer::{RuleSet, Summarizer, SummaryError};

pub const TRACE_FILE: &str = "trace.json";
pub const INDICATORS_FILE: &str = "indicators.json";
pub const DIAGNOSIS_FILE: &str = "diagnosis.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeciderSettings {
    /// MOE weights; uniform weights over the plan's indicators when absent.
    pub weights_file: Option<PathBuf>,
    pub theta: f64,
    /// Ask the chat model for weights when no weights file is given.
    pub assign_weights_llm: bool,
}

impl Default for DeciderSettings {
    fn default() -> Self {
        Self { weights_file: None, theta: DEFAULT_THETA, assign_weights_llm: false }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextBackend {
    #[default]
    Rules,
    Llm,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizerSettings {
    /// Band and keyword rules; the bundled `v1` file when absent.
    pub rule_file: Option<PathBuf>,
    pub text_backend: TextBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub llm: Option<LlmConfig>,
    pub decider: DeciderSettings,
    pub summarizer: SummarizerSettings,
    pub orchestrator: OrchestratorConfig,
    pub registry_file: Option<PathBuf>,
    pub mock_fixtures: Vec<PathBuf>,
    pub criteria_dir: Option<PathBuf>,
    pub runs_dir: PathBuf,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            llm: None,
            decider: DeciderSettings::default(),
            summarizer: SummarizerSettings::default(),
            orchestrator: OrchestratorConfig::default(),
            registry_file: None,
            mock_fixtures: Vec::new(),
            criteria_dir: None,
            runs_dir: PathBuf::from("runs"),
        }
    }
}

impl EngineConfig {
    /// Loads a config; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let mut c: Self = codec::read_json(path, ParseMode::Strict)?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.resolve_paths(base);
        Ok(c)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.decider.weights_file.as_mut().map(fix);
        self.summarizer.rule_file.as_mut().map(fix);
        self.registry_file.as_mut().map(fix);
        self.criteria_dir.as_mut().map(fix);
        self.mock_fixtures.iter_mut().for_each(fix);
        fix(&mut self.runs_dir);
        if let Some(dir) = self.llm.as_mut().and_then(|l| l.cache_dir.as_mut()) {
            fix(dir);
        }
    }

    pub fn digest(&self) -> String {
        codec::json_digest(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeciderKind {
    Moe,
    Llm,
}

impl DeciderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DeciderKind::Moe => "moe",
            DeciderKind::Llm => "llm",
        }
    }
}

impl FromStr for DeciderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "moe" => Ok(DeciderKind::Moe),
            "llm" => Ok(DeciderKind::Llm),
            other => Err(format!("unknown decider `{other}` (expected moe or llm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanBackend {
    Template,
    Llm,
}

impl FromStr for PlanBackend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "template" => Ok(PlanBackend::Template),
            "llm" => Ok(PlanBackend::Llm),
            other => Err(format!("unknown plan backend `{other}` (expected template or llm)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("this operation needs an `llm` section in the engine config")]
    NoLlm,
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Decider(#[from] DeciderError),
    #[error(transparent)]
    Summary(#[from] SummaryError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EngineError {
    /// Short machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            EngineError::Config(_) => "config",
            EngineError::NoLlm => "no_llm",
            EngineError::Plan(PlanError::Invalid(_)) => "invalid_plan",
            EngineError::Plan(PlanError::UnknownDisease(_)) => "unknown_disease",
            EngineError::Plan(PlanError::Parse { .. }) => "plan_parse",
            EngineError::Plan(PlanError::Chat(ChatError::ReplayMiss { .. })) => "replay_miss",
            EngineError::Plan(_) => "plan",
            EngineError::Orchestrator(OrchestratorError::NoIndicators { .. }) => "no_indicators",
            EngineError::Orchestrator(OrchestratorError::InvalidPlan(_)) => "invalid_plan",
            EngineError::Orchestrator(_) => "orchestrator",
            EngineError::Decider(_) => "decider",
            EngineError::Summary(_) => "summarizer",
            EngineError::Registry(_) => "registry",
            EngineError::Knowledge(_) => "knowledge",
            EngineError::Codec(_) => "codec",
            EngineError::Chat(ChatError::ReplayMiss { .. }) => "replay_miss",
            EngineError::Chat(_) => "chat",
            EngineError::Io { .. } => "io",
        }
    }

    /// True for errors caused by invalid inputs rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            EngineError::Config(_)
                | EngineError::Plan(
                    PlanError::Invalid(_) | PlanError::UnknownDisease(_) | PlanError::EmptyRegistry | PlanError::MissingTool { .. }
                )
                | EngineError::Orchestrator(OrchestratorError::InvalidPlan(_) | OrchestratorError::Case(_))
                | EngineError::Codec(_)
                | EngineError::Registry(_)
        )
    }

    pub fn validation_report(&self) -> Option<&ValidationReport> {
        match self {
            EngineError::Plan(PlanError::Invalid(r)) | EngineError::Orchestrator(OrchestratorError::InvalidPlan(r)) => {
                Some(r)
            }
            _ => None,
        }
    }
}

/// Machine-readable error body shared by the CLI (stderr) and the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_id: Option<String>,
}

impl ErrorReport {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self { kind: kind.into(), message: message.into(), validation: None, error_id: None }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<&EngineError> for ErrorReport {
    fn from(e: &EngineError) -> Self {
        Self { validation: e.validation_report().cloned(), ..Self::new(e.kind(), e.to_string()) }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io { path: path.to_path_buf(), source }
}

/// Everything produced for one diagnosed case.
#[derive(Debug, Clone)]
pub struct CaseRun {
    pub diagnosis: Diagnosis,
    pub context: ExecutionContext,
}

/// Shared, read-only engine core.
pub struct Engine {
    config: EngineConfig,
    config_digest: String,
    gateway: ToolGateway,
    summarizer: Summarizer,
    llm: Option<Arc<dyn ChatClient>>,
    knowledge: KnowledgeIndex,
    weights: Option<MoeConfig>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config_digest", &self.config_digest)
            .field("gateway", &self.gateway)
            .field("summarizer", &self.summarizer)
            .field("llm", &self.llm.is_some())
            .finish()
    }
}

impl Engine {
    pub fn from_config(config: EngineConfig) -> Result<Self, EngineError> {
        let llm: Option<Arc<dyn ChatClient>> = match &config.llm {
            Some(c) => Some(Arc::new(LlmClient::new(c.clone())?)),
            None => None,
        };
        let registry = match &config.registry_file {
            Some(p) => load_registry(p)?,
            None => default_registry(),
        };
        let gateway = ToolGateway::new(registry);
        for f in &config.mock_fixtures {
            gateway.register_fixtures(load_mock_fixtures(f)?);
        }
        Self::with_parts(config, gateway, llm)
    }

    /// Builds an engine around an existing gateway and chat client.
    pub fn with_parts(
        config: EngineConfig,
        gateway: ToolGateway,
        llm: Option<Arc<dyn ChatClient>>,
    ) -> Result<Self, EngineError> {
        if config.orchestrator.workers == 0 {
            return Err(EngineError::Config("orchestrator.workers must be at least 1".into()));
        }
        if !(config.orchestrator.step_timeout_secs > 0.0) {
            return Err(EngineError::Config("orchestrator.step_timeout_secs must be positive".into()));
        }
        let rules = match &config.summarizer.rule_file {
            Some(p) => RuleSet::load(p)?,
            None => RuleSet::default_v1(),
        };
        let summarizer = match config.summarizer.text_backend {
            TextBackend::Rules => Summarizer::new(rules),
            TextBackend::Llm => Summarizer::with_llm(rules, llm.clone().ok_or(EngineError::NoLlm)?),
        };
        let knowledge = match &config.criteria_dir {
            Some(dir) => KnowledgeIndex::from_documents(load_corpus_dir(dir)?)?,
            None => KnowledgeIndex::from_documents(bundled_corpus())?,
        };
        let weights = match &config.decider.weights_file {
            Some(p) => Some(MoeConfig::load(p)?),
            None => None,
        };
        Ok(Self { config_digest: config.digest(), config, gateway, summarizer, llm, knowledge, weights })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    pub fn gateway(&self) -> &ToolGateway {
        &self.gateway
    }

    pub fn summarizer(&self) -> &Summarizer {
        &self.summarizer
    }

    pub fn knowledge(&self) -> &KnowledgeIndex {
        &self.knowledge
    }

    pub fn llm(&self) -> Option<&Arc<dyn ChatClient>> {
        self.llm.as_ref()
    }

    /// Retrieves criteria and compiles a plan with the chosen backend.
    pub fn plan(&self, disease_id: &str, backend: PlanBackend) -> Result<DiagnosticPlan, EngineError> {
        let criteria = self.knowledge.retrieve(&criteria_query(disease_id), DEFAULT_TOP_K);
        let registry = self.gateway.registry();
        let plan = match backend {
            PlanBackend::Template => {
                let mut p = compile_plan_template(disease_id, registry)?;
                p.criteria = criteria;
                p
            }
            PlanBackend::Llm => {
                let llm = self.llm.as_ref().ok_or(EngineError::NoLlm)?;
                compile_plan_llm(&criteria, registry, disease_id, llm.as_ref())?
            }
        };
        Ok(plan)
    }

    /// MOE weights for a plan, plus a note when uniform weights replaced a bad model reply.
    pub fn moe_config_for(&self, plan: &DiagnosticPlan) -> Result<(MoeConfig, Option<String>), EngineError> {
        let names = plan.indicator_names();
        let theta = self.config.decider.theta;
        if let Some(w) = &self.weights {
            if let Some(missing) = names.iter().find(|n| !w.weights.contains_key(*n)) {
                return Err(DeciderError::UnknownIndicator(missing.clone()).into());
            }
            return Ok((w.clone(), None));
        }
        if self.config.decider.assign_weights_llm {
            let llm = self.llm.as_ref().ok_or(EngineError::NoLlm)?;
            return Ok(decider::weights_or_uniform(&plan.disease_id, &names, &plan.criteria, llm.as_ref(), theta)?);
        }
        Ok((MoeConfig::uniform(&names, theta), None))
    }

    pub fn provenance(&self, plan: &DiagnosticPlan) -> Provenance {
        Provenance {
            config_digest: self.config_digest.clone(),
            rules_version: self.summarizer.rules().version.clone(),
            plan_digest: plan.digest(),
        }
    }

    /// Executes the plan and writes `trace.json` and `indicators.json`.
    pub fn run_case(
        &self,
        case: &PatientCase,
        plan: &DiagnosticPlan,
        run_dir: &Path,
    ) -> Result<(Vec<IndicatorResult>, ExecutionContext), EngineError> {
        std::fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
        let started = std::time::Instant::now();
        let result = execute_plan(case, plan, &self.gateway, &self.summarizer, &self.config.orchestrator, run_dir);
        match &result {
            Ok((indicators, ctx)) => {
                write(run_dir, TRACE_FILE, &ctx.run_trace())?;
                write(run_dir, INDICATORS_FILE, indicators)?;
            }
            Err(OrchestratorError::NoIndicators { context }) => write(run_dir, TRACE_FILE, &context.run_trace())?,
            Err(_) => {}
        }
        tracing::info!(
            case_id = %case.case_id,
            ok = result.is_ok(),
            elapsed_ms = started.elapsed().as_millis() as u64,
            "case executed"
        );
        Ok(result?)
    }

    pub fn diagnose(
        &self,
        case: &PatientCase,
        plan: &DiagnosticPlan,
        decider: DeciderKind,
        run_dir: &Path,
    ) -> Result<CaseRun, EngineError> {
        let (moe, note) = match decider {
            DeciderKind::Moe => self.moe_config_for(plan)?,
            DeciderKind::Llm => (MoeConfig::uniform(&plan.indicator_names(), self.config.decider.theta), None),
        };
        self.diagnose_with(case, plan, decider, &moe, note.as_deref(), run_dir)
    }

    /// Diagnoses with already resolved weights and writes `diagnosis.json`.
    pub fn diagnose_with(
        &self,
        case: &PatientCase,
        plan: &DiagnosticPlan,
        decider: DeciderKind,
        moe: &MoeConfig,
        note: Option<&str>,
        run_dir: &Path,
    ) -> Result<CaseRun, EngineError> {
        let (indicators, context) = self.run_case(case, plan, run_dir)?;
        let mut diagnosis = match decider {
            DeciderKind::Moe => decider::moe_decide(&indicators, moe)?,
            DeciderKind::Llm => {
                let llm = self.llm.as_ref().ok_or(EngineError::NoLlm)?;
                decider::decide_llm(&indicators, llm.as_ref())?
            }
        };
        if let Some(n) = note {
            diagnosis.rationale = format!("{} [{n}]", diagnosis.rationale);
        }
        diagnosis.provenance = Some(self.provenance(plan));
        write(run_dir, DIAGNOSIS_FILE, &diagnosis)?;
        Ok(CaseRun { diagnosis, context })
    }
}

fn write<T: Serialize>(dir: &Path, file: &str, value: &T) -> Result<(), EngineError> {
    codec::write_json(&dir.join(file), value).map_err(EngineError::from)
}
