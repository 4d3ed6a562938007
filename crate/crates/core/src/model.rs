//! Domain types shared across the engine.
//!
//! Every type here is an immutable value object with a canonical JSON form.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecError, ParseMode};

/// Semantic tag of a patient input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "fundus-2d")]
    Fundus2d,
    #[serde(rename = "echo-3d")]
    Echo3d,
    #[serde(rename = "iop-scalar")]
    IopScalar,
    #[serde(rename = "clinical-text")]
    ClinicalText,
    #[serde(rename = "scalar-metadata")]
    ScalarMetadata,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Fundus2d,
        Modality::Echo3d,
        Modality::IopScalar,
        Modality::ClinicalText,
        Modality::ScalarMetadata,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Fundus2d => "fundus-2d",
            Modality::Echo3d => "echo-3d",
            Modality::IopScalar => "iop-scalar",
            Modality::ClinicalText => "clinical-text",
            Modality::ScalarMetadata => "scalar-metadata",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown modality `{0}`")]
pub struct UnknownModality(pub String);

impl FromStr for Modality {
    type Err = UnknownModality;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownModality(s.to_string()))
    }
}

/// Type tags for artifacts flowing between plan steps. Input artifacts carry
/// their modality tag; intermediate artifacts use the tags below.
pub mod artifact_type {
    pub const MASK_2D: &str = "mask-2d";
    pub const LABEL_VOLUME_3D: &str = "label-volume-3d";
    pub const IMAGE_CROP: &str = "image-crop";
    pub const MEASUREMENT: &str = "measurement";
    pub const TEXT: &str = "text";

    /// Tags whose payload is a raw voxel grid with a JSON sidecar.
    pub fn is_volume(tag: &str) -> bool {
        tag == LABEL_VOLUME_3D || tag == "echo-3d"
    }

    pub fn file_extension(tag: &str) -> &'static str {
        match tag {
            "fundus-2d" | MASK_2D | IMAGE_CROP => "pgm",
            "echo-3d" | LABEL_VOLUME_3D => "raw",
            MEASUREMENT | "scalar-metadata" | "iop-scalar" => "json",
            _ => "txt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "mm")]
    Millimetre,
    #[serde(rename = "ml")]
    Millilitre,
    #[serde(rename = "g/m2")]
    GramsPerSquareMetre,
    #[serde(rename = "ratio")]
    Ratio,
    #[serde(rename = "percent")]
    Percent,
    #[serde(rename = "px")]
    Pixel,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Millimetre => "mm",
            Unit::Millilitre => "ml",
            Unit::GramsPerSquareMetre => "g/m2",
            Unit::Ratio => "ratio",
            Unit::Percent => "percent",
            Unit::Pixel => "px",
        })
    }
}

/// A real value with its unit tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub unit: Unit,
}

impl Measurement {
    pub fn new(value: f64, unit: Unit) -> Self {
        Self { value, unit }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Sick,
    Healthy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseInput {
    pub modality: Modality,
    pub path: PathBuf,
}

/// Body measurements; both values are required when the block is present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseMetadata {
    pub height_cm: f64,
    pub weight_kg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientCase {
    pub case_id: String,
    #[serde(default)]
    pub inputs: BTreeMap<String, CaseInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<CaseMetadata>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("case_id must be nonempty")]
    EmptyCaseId,
    #[error("metadata values must be positive (height {height_cm} cm, weight {weight_kg} kg)")]
    InvalidMetadata { height_cm: f64, weight_kg: f64 },
    #[error("input `{name}` payload {path} does not exist")]
    MissingPayload { name: String, path: PathBuf },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

impl PatientCase {
    pub fn validate(&self) -> Result<(), CaseError> {
        if self.case_id.trim().is_empty() {
            return Err(CaseError::EmptyCaseId);
        }
        if let Some(m) = self.metadata {
            if !(m.height_cm > 0.0 && m.weight_kg > 0.0) {
                return Err(CaseError::InvalidMetadata {
                    height_cm: m.height_cm,
                    weight_kg: m.weight_kg,
                });
            }
        }
        Ok(())
    }

    /// Checks that every payload reference resolves to an existing file.
    pub fn check_payloads(&self) -> Result<(), CaseError> {
        for (name, input) in &self.inputs {
            if !input.path.is_file() {
                return Err(CaseError::MissingPayload {
                    name: name.clone(),
                    path: input.path.clone(),
                });
            }
        }
        Ok(())
    }

    /// Loads a case file; relative payload paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CaseError> {
        let mut case: PatientCase = codec::read_json(path, ParseMode::Strict)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for input in case.inputs.values_mut() {
            if input.path.is_relative() {
                input.path = base.join(&input.path);
            }
        }
        case.validate()?;
        Ok(case)
    }
}

/// Loads every `*.json` case file directly inside `dir`, sorted by file name.
pub fn load_case_dir(dir: &Path) -> Result<Vec<PatientCase>, CaseError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CodecError::Io { path: dir.display().to_string(), source: e })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| PatientCase::load(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorStatus {
    Abnormal,
    Uncertain,
    Normal,
}

impl IndicatorStatus {
    pub const ALL: [IndicatorStatus; 3] = [
        IndicatorStatus::Abnormal,
        IndicatorStatus::Uncertain,
        IndicatorStatus::Normal,
    ];

    /// Numeric encoding used by the weighted risk score.
    pub fn encode(self) -> f64 {
        match self {
            IndicatorStatus::Abnormal => 1.0,
            IndicatorStatus::Uncertain => 0.5,
            IndicatorStatus::Normal => 0.0,
        }
    }
}

impl fmt::Display for IndicatorStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndicatorStatus::Abnormal => "abnormal",
            IndicatorStatus::Uncertain => "uncertain",
            IndicatorStatus::Normal => "normal",
        })
    }
}

pub fn encode_status(status: IndicatorStatus) -> f64 {
    status.encode()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceKind {
    MaskFile,
    CropRegion,
    TextExcerpt,
    NumericTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub kind: EvidenceKind,
    pub locator: String,
    pub description: String,
}

impl EvidenceRef {
    pub fn new(kind: EvidenceKind, locator: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            kind,
            locator: locator.into(),
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorResult {
    pub name: String,
    pub status: IndicatorStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_value: Option<Measurement>,
    #[serde(default)]
    pub evidence: Vec<EvidenceRef>,
    pub tool_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosisLabel {
    Sick,
    Healthy,
    Indeterminate,
}

impl fmt::Display for DiagnosisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiagnosisLabel::Sick => "sick",
            DiagnosisLabel::Healthy => "healthy",
            DiagnosisLabel::Indeterminate => "indeterminate",
        })
    }
}

/// Digests tying an output back to the exact config, rule file and plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub rules_version: String,
    pub plan_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub label: DiagnosisLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_score: Option<f64>,
    pub indicators: Vec<IndicatorResult>,
    pub decider_id: String,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}
