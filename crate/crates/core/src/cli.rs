//! Command-line front end. Exit codes: 0 success, 1 usage error,
//! 2 validation failure, 3 runtime failure. Failures print one JSON error
//! object on stderr.

use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::codec::{self, CodecError, ParseMode};
use crate::engine::{DeciderKind, Engine, EngineConfig, EngineError, ErrorReport, PlanBackend};
use crate::evaluation::{roc_csv, run_ablation, run_batch, AblationSpec, EvalError, IndeterminatePolicy};
use crate::model::{load_case_dir, CaseError, PatientCase};
use crate::plan::{validate_plan, DiagnosticPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "diagflow", version, about = "Evidence-backed diagnostic workflow engine")]
struct Cli {
    /// Engine config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Retrieve criteria and compile a diagnostic plan.
    Plan {
        disease: String,
        #[arg(long)]
        criteria_dir: Option<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long, default_value = "template")]
        backend: PlanBackend,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one case through a plan and decide.
    Diagnose {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        case: PathBuf,
        #[arg(long, default_value = "moe")]
        decider: DeciderKind,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Diagnose a directory of labelled cases and report metrics.
    Eval {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long, default_value = "moe")]
        decider: DeciderKind,
        #[arg(long, default_value = "count-as-wrong", value_parser = parse_policy)]
        policy: IndeterminatePolicy,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        emit_roc: Option<PathBuf>,
    },
    /// Score indicator subsets against the same cases.
    Ablate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

fn parse_policy(s: &str) -> Result<IndeterminatePolicy, String> {
    match s {
        "exclude" => Ok(IndeterminatePolicy::Exclude),
        "count-as-wrong" => Ok(IndeterminatePolicy::CountAsWrong),
        other => Err(format!("unknown policy `{other}` (expected exclude or count-as-wrong)")),
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub report: ErrorReport,
}

impl CliError {
    fn validation(kind: &str, message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, report: ErrorReport::new(kind, message) }
    }

    fn runtime(kind: &str, message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, report: ErrorReport::new(kind, message) }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let code = if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME };
        Self { code, report: ErrorReport::from(&e) }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Engine(e) => e.into(),
            EvalError::Decider(e) => EngineError::from(e).into(),
            other => Self::validation("eval", other.to_string()),
        }
    }
}

impl From<CaseError> for CliError {
    fn from(e: CaseError) -> Self {
        Self::validation("invalid_case", e.to_string())
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::runtime("io", format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::runtime("io", format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig, CliError> {
    match path {
        Some(p) => Ok(EngineConfig::load(p)?),
        None => Ok(EngineConfig::default()),
    }
}

fn load_plan(engine: &Engine, path: &Path) -> Result<DiagnosticPlan, CliError> {
    let plan = DiagnosticPlan::load(path).map_err(|e: CodecError| CliError::validation("invalid_plan", e.to_string()))?;
    let report = validate_plan(&plan, engine.gateway().registry());
    if !report.is_valid() {
        return Err(CliError {
            code: EXIT_VALIDATION,
            report: ErrorReport { validation: Some(report), ..ErrorReport::new("invalid_plan", "plan failed validation") },
        });
    }
    Ok(plan)
}

fn load_cases(dir: &Path) -> Result<Vec<PatientCase>, CliError> {
    let cases = load_case_dir(dir)?;
    for c in &cases {
        c.check_payloads()?;
    }
    Ok(cases)
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .try_init();
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.report.to_json());
            e.code
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Plan { disease, criteria_dir, registry, backend, out } => {
            if criteria_dir.is_some() {
                config.criteria_dir = criteria_dir;
            }
            if registry.is_some() {
                config.registry_file = registry;
            }
            let engine = Engine::from_config(config)?;
            let plan = engine.plan(&disease, backend)?;
            let text = codec::to_json_pretty(&plan);
            match out {
                Some(path) => write_output(&path, &text)?,
                None => emit(&format!("{text}\n")),
            }
        }
        Command::Diagnose { plan, case, decider, out_dir } => {
            let engine = Engine::from_config(config)?;
            let plan = load_plan(&engine, &plan)?;
            let case = PatientCase::load(&case)?;
            case.check_payloads()?;
            let run = engine.diagnose(&case, &plan, decider, &out_dir)?;
            emit(&format!("{}\n", codec::to_json_pretty(&run.diagnosis)));
        }
        Command::Eval { plan, cases, decider, policy, report, emit_roc } => {
            let engine = Engine::from_config(config)?;
            let plan = load_plan(&engine, &plan)?;
            let cases = load_cases(&cases)?;
            let runs = engine.config().runs_dir.clone();
            let result = run_batch(&engine, &cases, &plan, decider, policy, &runs)?;
            write_output(&report, &codec::to_json_pretty(&result))?;
            if let Some(path) = emit_roc {
                let points = result
                    .roc()
                    .ok_or_else(|| CliError::validation("eval", "ROC needs scored cases of both classes"))?;
                write_output(&path, &roc_csv(&points))?;
            }
            emit(&result.render_table());
        }
        Command::Ablate { plan, cases, spec, report } => {
            let engine = Engine::from_config(config)?;
            let plan = load_plan(&engine, &plan)?;
            let cases = load_cases(&cases)?;
            let spec: AblationSpec = codec::read_json(&spec, ParseMode::Strict)
                .map_err(|e| CliError::validation("invalid_spec", e.to_string()))?;
            let runs = engine.config().runs_dir.clone();
            let table = run_ablation(&engine, &cases, &plan, &spec, &runs)?;
            write_output(&report, &codec::to_json_pretty(&table))?;
            emit(&table.render());
        }
        Command::Serve { port, host } => {
            let engine = Arc::new(Engine::from_config(config)?);
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime("io", e.to_string()))?;
            runtime
                .block_on(crate::service::serve(engine, SocketAddr::new(host, port)))
                .map_err(|e| CliError::runtime("io", e.to_string()))?;
        }
    }
    Ok(())
}
