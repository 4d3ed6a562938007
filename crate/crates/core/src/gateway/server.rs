//! HTTP tool agent exposing a gateway's tools over `/v1/invoke`.

use std::net::SocketAddr;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use super::{GatewayError, ToolGateway, ToolRequest, ToolResponse};
use crate::codec::{self, ParseMode};

const SERVE_TIMEOUT: Duration = Duration::from_secs(120);

pub fn router(gateway: ToolGateway) -> Router {
    Router::new()
        .route("/v1/invoke", post(invoke))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(gateway)
}

async fn invoke(State(gateway): State<ToolGateway>, body: Bytes) -> Response {
    let request: ToolRequest = match codec::from_json(&String::from_utf8_lossy(&body), ParseMode::Strict) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    let result = tokio::task::spawn_blocking(move || {
        let Some(descriptor) = gateway.descriptor(&request.tool_id).cloned() else {
            return ToolResponse::error(&request.request_id, format!("unknown tool `{}`", request.tool_id));
        };
        let timeout = descriptor.timeout_secs.map_or(SERVE_TIMEOUT, Duration::from_secs);
        match gateway.invoke(&descriptor, &request, timeout) {
            Ok(mut r) => {
                r.request_id = request.request_id.clone();
                r
            }
            Err(GatewayError::ToolError { message, .. }) => ToolResponse::error(&request.request_id, message),
            Err(e) => ToolResponse::error(&request.request_id, e.to_string()),
        }
    })
    .await;
    match result {
        Ok(r) => Json(r).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// A tool agent running on a background thread; stops on drop.
pub struct ToolServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ToolServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn spawn(gateway: ToolGateway, addr: SocketAddr) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = axum::serve(listener, router(gateway))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self { addr, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ToolServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
