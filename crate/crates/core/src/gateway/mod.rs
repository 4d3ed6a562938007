//! Uniform invocation of tool agents: builtin metric tools, pinned mock
//! fixtures and remote HTTP agents speaking the `/v1/invoke` protocol.

mod builtin;
mod server;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{mpsc, Arc, RwLock};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecError, ParseMode};
use crate::model::{artifact_type, EvidenceRef, Unit};
use crate::plan::{Endpoint, ToolDescriptor};

pub use server::{router as tool_router, ToolServer};

/// Payloads up to this size travel inline; larger ones and volumes go by path.
pub const INLINE_LIMIT: usize = 1 << 20;

const B64: base64::engine::GeneralPurpose = base64::engine::general_purpose::STANDARD;

/// Either inline base64 bytes or a file path on a shared volume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Payload {
    Inline(String),
    Path(String),
}

impl Payload {
    pub fn inline(bytes: &[u8]) -> Self {
        Payload::Inline(B64.encode(bytes))
    }

    pub fn path(path: &Path) -> Self {
        Payload::Path(path.to_string_lossy().into_owned())
    }

    /// The payload's own bytes; for a volume path this is the grid file only.
    pub fn bytes(&self) -> Result<Vec<u8>, GatewayError> {
        match self {
            Payload::Inline(data) => B64
                .decode(data)
                .map_err(|e| GatewayError::Precondition(format!("bad base64 payload: {e}"))),
            Payload::Path(p) => {
                std::fs::read(p).map_err(|e| GatewayError::Precondition(format!("cannot read payload {p}: {e}")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolInput {
    pub name: String,
    #[serde(rename = "type")]
    pub type_tag: String,
    pub payload: Payload,
}

impl ToolInput {
    /// Bytes that identify this input: the payload bytes, followed by the
    /// sidecar for volumes passed by path.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, GatewayError> {
        let mut bytes = self.payload.bytes()?;
        if let (Payload::Path(p), true) = (&self.payload, artifact_type::is_volume(&self.type_tag)) {
            let side = crate::imaging::Volume3D::sidecar_path(Path::new(p));
            bytes.extend(
                std::fs::read(&side)
                    .map_err(|e| GatewayError::Precondition(format!("cannot read sidecar {}: {e}", side.display())))?,
            );
        }
        Ok(bytes)
    }
}

pub type ToolOutput = ToolInput;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolRequest {
    pub request_id: String,
    pub tool_id: String,
    pub action: String,
    pub inputs: Vec<ToolInput>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl ToolRequest {
    /// SHA-256 over the concatenated canonical bytes of all inputs.
    pub fn input_digest(&self) -> Result<String, GatewayError> {
        let mut all = Vec::new();
        for input in &self.inputs {
            all.extend(input.canonical_bytes()?);
        }
        Ok(codec::sha256_hex(&all))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolResponse {
    pub request_id: String,
    pub status: ResponseStatus,
    #[serde(default)]
    pub outputs: Vec<ToolOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default)]
    pub evidence: Vec<EvidenceRef>,
}

impl ToolResponse {
    pub fn ok(request_id: &str, outputs: Vec<ToolOutput>) -> Self {
        Self {
            request_id: request_id.into(),
            status: ResponseStatus::Ok,
            outputs,
            confidence: None,
            message: None,
            evidence: Vec::new(),
        }
    }

    pub fn error(request_id: &str, message: impl Into<String>) -> Self {
        Self {
            request_id: request_id.into(),
            status: ResponseStatus::Error,
            outputs: Vec::new(),
            confidence: None,
            message: Some(message.into()),
            evidence: Vec::new(),
        }
    }

    /// Convenience for a single text output.
    pub fn text(request_id: &str, name: &str, text: &str) -> Self {
        Self::ok(
            request_id,
            vec![ToolOutput { name: name.into(), type_tag: artifact_type::TEXT.into(), payload: Payload::inline(text.as_bytes()) }],
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.status {
            ResponseStatus::Ok if self.outputs.is_empty() => Err("ok response without outputs".into()),
            ResponseStatus::Error if self.message.as_deref().is_none_or(str::is_empty) => {
                Err("error response without message".into())
            }
            _ => match self.confidence {
                Some(c) if !(0.0..=1.0).contains(&c) => Err(format!("confidence {c} outside [0, 1]")),
                _ => Ok(()),
            },
        }
    }
}

/// Body of a measurement artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantity {
    pub value: f64,
    pub unit: Unit,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub components: BTreeMap<String, f64>,
}

impl Quantity {
    pub fn new(value: f64, unit: Unit) -> Self {
        Self { value, unit, components: BTreeMap::new() }
    }

    pub fn component(mut self, key: &str, value: f64) -> Self {
        self.components.insert(key.into(), value);
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("quantity serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        codec::from_json(&String::from_utf8_lossy(bytes), ParseMode::Strict)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("tool `{tool_id}` timed out after {timeout:?}")]
    ToolTimeout { tool_id: String, timeout: Duration },
    #[error("tool `{tool_id}` unreachable: {reason}")]
    ToolUnreachable { tool_id: String, reason: String },
    #[error("tool `{tool_id}` failed: {message}")]
    ToolError { tool_id: String, message: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("tool `{tool_id}` sent an invalid response: {reason}")]
    Protocol { tool_id: String, reason: String },
}

/// Computes a response for a mock tool when no pinned fixture matches.
pub type MockHandler = Arc<dyn Fn(&ToolRequest) -> ToolResponse + Send + Sync>;

type MockKey = (String, String, String);

/// A pinned mock response as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    pub tool_id: String,
    pub action: String,
    pub input_digest: String,
    pub response: ToolResponse,
}

/// Reads a fixture list; relative payload paths resolve against the file's directory.
pub fn load_mock_fixtures(path: &Path) -> Result<Vec<MockFixture>, CodecError> {
    let mut fixtures: Vec<MockFixture> = codec::read_json(path, ParseMode::Strict)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for out in fixtures.iter_mut().flat_map(|f| f.response.outputs.iter_mut()) {
        if let Payload::Path(p) = &mut out.payload {
            if Path::new(p).is_relative() {
                *p = base.join(&*p).to_string_lossy().into_owned();
            }
        }
    }
    Ok(fixtures)
}

#[derive(Default)]
struct Mocks {
    pinned: RwLock<HashMap<MockKey, ToolResponse>>,
    handlers: RwLock<HashMap<String, MockHandler>>,
    latency: RwLock<HashMap<String, Duration>>,
}

/// Cheap to clone; clones share mock state.
#[derive(Clone)]
pub struct ToolGateway {
    registry: Arc<Vec<ToolDescriptor>>,
    mocks: Arc<Mocks>,
}

impl std::fmt::Debug for ToolGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolGateway").field("tools", &self.registry.len()).finish()
    }
}

impl ToolGateway {
    pub fn new(registry: Vec<ToolDescriptor>) -> Self {
        Self { registry: Arc::new(registry), mocks: Arc::default() }
    }

    pub fn registry(&self) -> &[ToolDescriptor] {
        &self.registry
    }

    pub fn descriptor(&self, tool_id: &str) -> Option<&ToolDescriptor> {
        self.registry.iter().find(|t| t.tool_id == tool_id)
    }

    /// Pins a response; the last registration for a key wins.
    pub fn register_mock(&self, tool_id: &str, action: &str, input_digest: &str, response: ToolResponse) {
        self.mocks
            .pinned
            .write()
            .unwrap()
            .insert((tool_id.into(), action.into(), input_digest.into()), response);
    }

    pub fn register_fixtures(&self, fixtures: impl IntoIterator<Item = MockFixture>) {
        for f in fixtures {
            self.register_mock(&f.tool_id, &f.action, &f.input_digest, f.response);
        }
    }

    pub fn mock_count(&self) -> usize {
        self.mocks.pinned.read().unwrap().len()
    }

    pub fn register_mock_handler(&self, tool_id: &str, handler: MockHandler) {
        self.mocks.handlers.write().unwrap().insert(tool_id.into(), handler);
    }

    /// Adds an artificial delay to every mock call of a tool.
    pub fn set_mock_latency(&self, tool_id: &str, delay: Duration) {
        self.mocks.latency.write().unwrap().insert(tool_id.into(), delay);
    }

    /// Invokes a tool. Never blocks much longer than `timeout`.
    pub fn invoke(
        &self,
        descriptor: &ToolDescriptor,
        request: &ToolRequest,
        timeout: Duration,
    ) -> Result<ToolResponse, GatewayError> {
        check_preconditions(descriptor, request)?;
        let (tx, rx) = mpsc::channel();
        let this = self.clone();
        let descriptor_c = descriptor.clone();
        let request_c = request.clone();
        std::thread::spawn(move || {
            let _ = tx.send(this.dispatch(&descriptor_c, &request_c, timeout));
        });
        let response = match rx.recv_timeout(timeout) {
            Ok(result) => result?,
            Err(_) => {
                return Err(GatewayError::ToolTimeout { tool_id: descriptor.tool_id.clone(), timeout });
            }
        };
        response
            .validate()
            .map_err(|reason| GatewayError::Protocol { tool_id: descriptor.tool_id.clone(), reason })?;
        match response.status {
            ResponseStatus::Ok => Ok(response),
            ResponseStatus::Error => Err(GatewayError::ToolError {
                tool_id: descriptor.tool_id.clone(),
                message: response.message.unwrap_or_default(),
            }),
        }
    }

    fn dispatch(
        &self,
        descriptor: &ToolDescriptor,
        request: &ToolRequest,
        timeout: Duration,
    ) -> Result<ToolResponse, GatewayError> {
        match &descriptor.endpoint {
            Endpoint::Builtin => Ok(builtin::run(request)),
            Endpoint::Mock => self.mock(request),
            Endpoint::Remote { address } => remote(&descriptor.tool_id, address, request, timeout),
        }
    }

    fn mock(&self, request: &ToolRequest) -> Result<ToolResponse, GatewayError> {
        let delay = self.mocks.latency.read().unwrap().get(&request.tool_id).copied();
        if let Some(d) = delay {
            std::thread::sleep(d);
        }
        let digest = request.input_digest()?;
        let key = (request.tool_id.clone(), request.action.clone(), digest);
        if let Some(r) = self.mocks.pinned.read().unwrap().get(&key) {
            let mut r = r.clone();
            r.request_id = request.request_id.clone();
            return Ok(r);
        }
        let handler = self.mocks.handlers.read().unwrap().get(&request.tool_id).cloned();
        match handler {
            Some(h) => Ok(h(request)),
            None => Ok(ToolResponse::error(
                &request.request_id,
                format!("no fixture for ({}, {}, {})", key.0, key.1, key.2),
            )),
        }
    }
}

fn check_preconditions(descriptor: &ToolDescriptor, request: &ToolRequest) -> Result<(), GatewayError> {
    if request.tool_id != descriptor.tool_id {
        return Err(GatewayError::Precondition(format!(
            "request names tool `{}` but descriptor is `{}`",
            request.tool_id, descriptor.tool_id
        )));
    }
    if let Some(bad) = request.inputs.iter().find(|i| !descriptor.accepts(&i.type_tag)) {
        return Err(GatewayError::Precondition(format!(
            "tool `{}` does not accept input `{}` of type {}",
            descriptor.tool_id, bad.name, bad.type_tag
        )));
    }
    Ok(())
}

fn remote(tool_id: &str, address: &str, request: &ToolRequest, timeout: Duration) -> Result<ToolResponse, GatewayError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let url = format!("{}/v1/invoke", address.trim_end_matches('/'));
    let mut resp = agent.post(&url).header("content-type", "application/json").send_json(request).map_err(|e| match e {
        ureq::Error::Timeout(_) => GatewayError::ToolTimeout { tool_id: tool_id.into(), timeout },
        other => GatewayError::ToolUnreachable { tool_id: tool_id.into(), reason: other.to_string() },
    })?;
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| GatewayError::ToolUnreachable { tool_id: tool_id.into(), reason: e.to_string() })?;
    if status != 200 {
        return Err(GatewayError::ToolError { tool_id: tool_id.into(), message: format!("HTTP {status}: {body}") });
    }
    let response: ToolResponse = codec::from_json(&body, ParseMode::Strict)
        .map_err(|e| GatewayError::Protocol { tool_id: tool_id.into(), reason: e.to_string() })?;
    if response.request_id != request.request_id {
        return Err(GatewayError::Protocol {
            tool_id: tool_id.into(),
            reason: format!("request id echo `{}` does not match `{}`", response.request_id, request.request_id),
        });
    }
    Ok(response)
}
