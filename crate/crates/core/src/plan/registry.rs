//! Tool descriptors and the default registry.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecError, ParseMode};
use crate::model::{artifact_type, Modality};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Classification,
    Segmentation,
    Vqa,
    Metric,
    Crop,
}

impl std::fmt::Display for ToolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ToolKind::Classification => "classification",
            ToolKind::Segmentation => "segmentation",
            ToolKind::Vqa => "vqa",
            ToolKind::Metric => "metric",
            ToolKind::Crop => "crop",
        })
    }
}

/// Where a tool runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endpoint {
    /// In-process metric and crop operations.
    Builtin,
    /// HTTP tool agent; requests go to `{address}/v1/invoke`.
    Remote { address: String },
    /// Pinned fixtures registered on the gateway.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub tool_id: String,
    pub kind: ToolKind,
    pub accepts: Vec<String>,
    pub produces: String,
    pub endpoint: Endpoint,
    /// Per-tool step timeout; the orchestrator default applies when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
}

impl ToolDescriptor {
    pub fn new(tool_id: &str, kind: ToolKind, accepts: &[&str], produces: &str, endpoint: Endpoint) -> Self {
        Self {
            tool_id: tool_id.into(),
            kind,
            accepts: accepts.iter().map(|s| s.to_string()).collect(),
            produces: produces.into(),
            endpoint,
            timeout_secs: None,
        }
    }

    pub fn accepts(&self, type_tag: &str) -> bool {
        self.accepts.iter().any(|a| a == type_tag)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("duplicate tool_id `{0}`")]
    DuplicateTool(String),
    #[error("tool `{0}` accepts no input types")]
    EmptyAccepts(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub fn validate_registry(registry: &[ToolDescriptor]) -> Result<(), RegistryError> {
    let mut seen = std::collections::BTreeSet::new();
    for tool in registry {
        if !seen.insert(tool.tool_id.as_str()) {
            return Err(RegistryError::DuplicateTool(tool.tool_id.clone()));
        }
        if tool.accepts.is_empty() {
            return Err(RegistryError::EmptyAccepts(tool.tool_id.clone()));
        }
    }
    Ok(())
}

/// Registry file: JSON list of descriptors.
pub fn load_registry(path: &Path) -> Result<Vec<ToolDescriptor>, RegistryError> {
    let registry: Vec<ToolDescriptor> = codec::read_json(path, ParseMode::Strict)?;
    validate_registry(&registry)?;
    Ok(registry)
}

/// Tools covering both built-in plans. Segmentation and VQA are mock
/// endpoints until pointed at real agents.
pub fn default_registry() -> Vec<ToolDescriptor> {
    use artifact_type::*;
    let fundus = Modality::Fundus2d.as_str();
    vec![
        ToolDescriptor::new("fundus_vqa", ToolKind::Vqa, &[fundus, IMAGE_CROP], TEXT, Endpoint::Mock),
        ToolDescriptor::new("cup_disc_seg", ToolKind::Segmentation, &[fundus], MASK_2D, Endpoint::Mock),
        ToolDescriptor::new("fundus_metrics", ToolKind::Metric, &[MASK_2D, MEASUREMENT], MEASUREMENT, Endpoint::Builtin),
        ToolDescriptor::new("disc_crop", ToolKind::Crop, &[MASK_2D, fundus], IMAGE_CROP, Endpoint::Builtin),
        ToolDescriptor::new(
            "echo_seg",
            ToolKind::Segmentation,
            &[Modality::Echo3d.as_str()],
            LABEL_VOLUME_3D,
            Endpoint::Mock,
        ),
        ToolDescriptor::new(
            "cardiac_metrics",
            ToolKind::Metric,
            &[LABEL_VOLUME_3D, Modality::ScalarMetadata.as_str()],
            MEASUREMENT,
            Endpoint::Builtin,
        ),
    ]
}
