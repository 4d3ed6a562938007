//! Long-running HTTP service over a shared [`Engine`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Deserialize;

use crate::codec;
use crate::engine::{DeciderKind, Engine, EngineError, ErrorReport, PlanBackend};
use crate::model::PatientCase;
use crate::plan::{validate_plan, DiagnosticPlan};

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    plans: Arc<RwLock<HashMap<String, DiagnosticPlan>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanBody {
    disease_id: String,
    #[serde(default = "default_backend")]
    backend: PlanBackend,
}

fn default_backend() -> PlanBackend {
    PlanBackend::Template
}

/// Either an inline plan or the digest of one returned by `/v1/plans`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagnoseBody {
    #[serde(default)]
    plan: Option<DiagnosticPlan>,
    #[serde(default)]
    plan_ref: Option<String>,
    case: PatientCase,
    #[serde(default = "default_decider")]
    decider: DeciderKind,
}

fn default_decider() -> DeciderKind {
    DeciderKind::Moe
}

pub fn router(engine: Arc<Engine>) -> Router {
    let state = AppState { engine, plans: Arc::default() };
    Router::new()
        .route("/v1/plans", post(plans))
        .route("/v1/diagnose", post(diagnose))
        .route("/v1/tools", get(tools))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(state)
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn bad_request(report: ErrorReport) -> Response {
    json_response(StatusCode::BAD_REQUEST, report.to_json())
}

fn engine_failure(e: &EngineError) -> Response {
    let mut report = ErrorReport::from(e);
    if e.is_validation() {
        return bad_request(report);
    }
    let id = uuid::Uuid::new_v4().to_string();
    tracing::error!(error_id = %id, error = %e, "request failed");
    report.error_id = Some(id);
    json_response(StatusCode::INTERNAL_SERVER_ERROR, report.to_json())
}

fn internal(message: String) -> Response {
    let id = uuid::Uuid::new_v4().to_string();
    tracing::error!(error_id = %id, %message, "request failed");
    let report = ErrorReport { error_id: Some(id), ..ErrorReport::new("internal", message) };
    json_response(StatusCode::INTERNAL_SERVER_ERROR, report.to_json())
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, Response> {
    let text = std::str::from_utf8(body).map_err(|e| bad_request(ErrorReport::new("codec", e.to_string())))?;
    codec::from_json_strict(text).map_err(|e| bad_request(ErrorReport::new("codec", e.to_string())))
}

async fn tools(State(state): State<AppState>) -> Response {
    json_response(StatusCode::OK, codec::to_json_pretty(&state.engine.gateway().registry()))
}

async fn plans(State(state): State<AppState>, body: Bytes) -> Response {
    let req: PlanBody = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let started = Instant::now();
    let engine = state.engine.clone();
    let result = tokio::task::spawn_blocking(move || engine.plan(&req.disease_id, req.backend)).await;
    match result {
        Ok(Ok(plan)) => {
            tracing::info!(disease_id = %plan.disease_id, latency_ms = started.elapsed().as_millis() as u64, "plan compiled");
            let text = codec::to_json_pretty(&plan);
            state.plans.write().unwrap().insert(plan.digest(), plan);
            json_response(StatusCode::OK, text)
        }
        Ok(Err(e)) => engine_failure(&e),
        Err(e) => internal(e.to_string()),
    }
}

async fn diagnose(State(state): State<AppState>, body: Bytes) -> Response {
    let req: DiagnoseBody = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let plan = match (req.plan, req.plan_ref) {
        (Some(p), None) => p,
        (None, Some(digest)) => match state.plans.read().unwrap().get(&digest) {
            Some(p) => p.clone(),
            None => return bad_request(ErrorReport::new("unknown_plan", format!("no plan with digest {digest}"))),
        },
        _ => return bad_request(ErrorReport::new("codec", "give exactly one of `plan` and `plan_ref`")),
    };
    let report = validate_plan(&plan, state.engine.gateway().registry());
    if !report.is_valid() {
        return bad_request(ErrorReport { validation: Some(report), ..ErrorReport::new("invalid_plan", "plan failed validation") });
    }
    if let Err(e) = req.case.validate().and_then(|_| req.case.check_payloads()) {
        return bad_request(ErrorReport::new("invalid_case", e.to_string()));
    }
    let engine = state.engine.clone();
    let case = req.case;
    let case_id = case.case_id.clone();
    let started = Instant::now();
    let result = tokio::task::spawn_blocking(move || {
        let run_dir = engine.config().runs_dir.join(&case.case_id).join(uuid::Uuid::new_v4().to_string());
        engine.diagnose(&case, &plan, req.decider, &run_dir)
    })
    .await;
    let latency_ms = started.elapsed().as_millis() as u64;
    match result {
        Ok(Ok(run)) => {
            tracing::info!(%case_id, latency_ms, label = %run.diagnosis.label, "case diagnosed");
            json_response(StatusCode::OK, codec::to_json_pretty(&run.diagnosis))
        }
        Ok(Err(e)) => {
            tracing::info!(%case_id, latency_ms, error = %e, "case failed");
            engine_failure(&e)
        }
        Err(e) => internal(e.to_string()),
    }
}

/// Serves until ctrl-c.
pub async fn serve(engine: Arc<Engine>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "service listening");
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// The service on a background thread; stops on drop. Used by tests and examples.
pub struct ServiceHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn spawn(engine: Arc<Engine>, addr: SocketAddr) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = axum::serve(listener, router(engine))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self { addr, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
