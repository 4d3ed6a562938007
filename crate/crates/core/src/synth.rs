//! Synthetic fixture sets: cases, payload files, pinned mock tool responses,
//! engine configs and replay transcripts. Everything is deterministic.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::codec::{self, CodecError};
use crate::decider::{weight_messages, MoeConfig};
use crate::engine::{EngineConfig, PlanBackend};
use crate::gateway::{MockFixture, Payload, ToolInput, ToolOutput, ToolRequest, ToolResponse};
use crate::imaging::{label2d, label3d, FormatError, GrayImage, Mask2D, Volume3D};
use crate::knowledge::{bundled_corpus, KnowledgeIndex, DEFAULT_TOP_K};
use crate::llm::{ChatError, LlmConfig, LlmMode, TranscriptCache};
use crate::metrics;
use crate::model::{artifact_type, CaseInput, CaseMetadata, GroundTruth, IndicatorStatus, Modality, PatientCase};
use crate::plan::{compile::plan_messages, compile_plan_template, criteria_query, default_registry, render_plan_block};

pub const FUNDUS_SIZE: usize = 96;
pub const DISC_RADIUS: usize = 22;
pub const ECHO_DIMS: [usize; 3] = [48, 48, 48];
pub const ECHO_SPACING_MM: f64 = 2.0;

pub const CASES_DIR: &str = "cases";
pub const FIXTURES_FILE: &str = "fixtures/mocks.json";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const TRANSCRIPTS_DIR: &str = "transcripts";
/// Engine config using the weights file and template plans.
pub const ENGINE_CONFIG: &str = "engine.json";
/// Engine config that replays recorded chat transcripts for plans and weights.
pub const REPLAY_CONFIG: &str = "engine_replay.json";

/// MOE weights used by the glaucoma fixture. Dyadic values keep every
/// weighted sum exact in binary floating point.
pub const GLAUCOMA_WEIGHTS: [(&str, f64); 4] =
    [("vCDR", 0.5), ("rim_thickness", 0.25), ("ppa", 0.125), ("disc_hemorrhage", 0.125)];

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Format(#[from] FormatError),
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
    #[error("fixture construction failed: {0}")]
    Build(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.to_path_buf(), source }
}

fn mkdir(path: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

/// One-letter status code: `A`bnormal, `U`ncertain, `N`ormal.
pub fn status_from_code(c: char) -> Option<IndicatorStatus> {
    match c {
        'A' => Some(IndicatorStatus::Abnormal),
        'U' => Some(IndicatorStatus::Uncertain),
        'N' => Some(IndicatorStatus::Normal),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlaucomaSpec {
    pub vcdr: IndicatorStatus,
    pub rim: IndicatorStatus,
    pub ppa: IndicatorStatus,
    pub dh: IndicatorStatus,
    pub truth: GroundTruth,
}

impl GlaucomaSpec {
    /// Parses four status letters in the order vCDR, rim, ppa, disc hemorrhage.
    pub fn from_codes(codes: &str, truth: GroundTruth) -> Self {
        let s: Vec<IndicatorStatus> = codes.chars().map(|c| status_from_code(c).expect("status letter")).collect();
        assert_eq!(s.len(), 4, "expected four status letters in {codes:?}");
        Self { vcdr: s[0], rim: s[1], ppa: s[2], dh: s[3], truth }
    }

    pub fn statuses(&self) -> [(&'static str, IndicatorStatus); 4] {
        [("vCDR", self.vcdr), ("rim_thickness", self.rim), ("ppa", self.ppa), ("disc_hemorrhage", self.dh)]
    }
}

/// Hand-set statuses for the 20-case glaucoma set: cases 1 to 10 are sick,
/// 11 to 20 healthy. No single indicator separates the classes on its own.
pub const GLAUCOMA_GOLDEN: [&str; 20] = [
    "AAAN", "ANAA", "AUNN", "UAAN", "ANNN", "NAAU", "AAUN", "UNAA", "ANUU", "NNAN", //
    "NNNN", "NANN", "UNNA", "NNAN", "ANNN", "NUUA", "UNUN", "NNNA", "ANNA", "NUNN",
];

pub fn glaucoma_golden_specs() -> Vec<GlaucomaSpec> {
    GLAUCOMA_GOLDEN
        .iter()
        .enumerate()
        .map(|(i, codes)| GlaucomaSpec::from_codes(codes, if i < 10 { GroundTruth::Sick } else { GroundTruth::Healthy }))
        .collect()
}

/// Cup radius giving a vCDR of 17/45, 23/45 or 29/45.
fn cup_radius(vcdr: IndicatorStatus) -> usize {
    match vcdr {
        IndicatorStatus::Normal => 8,
        IndicatorStatus::Uncertain => 11,
        IndicatorStatus::Abnormal => 14,
    }
}

/// Thinnest rim in pixels: 8/45, 5/45 or 3/45 of the disc height.
fn target_rim(rim: IndicatorStatus) -> usize {
    match rim {
        IndicatorStatus::Normal => 8,
        IndicatorStatus::Uncertain => 5,
        IndicatorStatus::Abnormal => 3,
    }
}

fn in_circle(x: usize, y: usize, cx: isize, cy: isize, r: usize) -> bool {
    let (dx, dy) = (x as isize - cx, y as isize - cy);
    dx * dx + dy * dy <= (r * r) as isize
}

/// Disc of radius [`DISC_RADIUS`] centred in the image with a cup shifted
/// along +x so the thinnest rim hits the requested band.
pub fn glaucoma_mask(vcdr: IndicatorStatus, rim: IndicatorStatus) -> Mask2D {
    let rc = cup_radius(vcdr);
    let shift = DISC_RADIUS - rc - target_rim(rim);
    disc_cup_mask(FUNDUS_SIZE, DISC_RADIUS, rc, shift as isize)
}

pub fn disc_cup_mask(size: usize, disc_r: usize, cup_r: usize, cup_shift: isize) -> Mask2D {
    let c = (size / 2) as isize;
    let mut mask = Mask2D::empty(size, size);
    for y in 0..size {
        for x in 0..size {
            if in_circle(x, y, c + cup_shift, c, cup_r) {
                mask.set(x, y, label2d::CUP);
            } else if in_circle(x, y, c, c, disc_r) {
                mask.set(x, y, label2d::DISC);
            }
        }
    }
    mask
}

/// Grayscale rendering of a mask (bright cup over a mid-gray disc) with a
/// seeded texture so every case has distinct bytes.
pub fn fundus_image(mask: &Mask2D, seed: u32) -> GrayImage {
    let mut img = GrayImage::filled(mask.width(), mask.height(), 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let base = match mask.get(x, y) {
                label2d::CUP => 220,
                label2d::DISC => 140,
                _ => 40,
            };
            let t = (x as u32 * 7 + y as u32 * 13 + seed * 29 + (x * y) as u32 % 5) % 11;
            img.set(x, y, base + t as u8);
        }
    }
    img
}

pub fn dh_text(status: IndicatorStatus, seed: usize) -> String {
    let variants: &[&str] = match status {
        IndicatorStatus::Abnormal => &[
            "A small flame-shaped hemorrhage is visible at the inferior disc margin.",
            "Splinter hemorrhage noted at the superotemporal rim.",
        ],
        IndicatorStatus::Normal => &[
            "No hemorrhage is visible at the disc margin.",
            "Disc margin unremarkable.",
        ],
        IndicatorStatus::Uncertain => &[
            "The disc margin cannot be assessed clearly in this image.",
            "Image quality is limited around the optic nerve head.",
        ],
    };
    variants[seed % variants.len()].to_string()
}

pub fn ppa_text(status: IndicatorStatus, seed: usize) -> String {
    let variants: &[&str] = match status {
        IndicatorStatus::Abnormal => &[
            "Peripapillary atrophy is present on the temporal side.",
            "Crescent of atrophic tissue surrounds the disc.",
        ],
        IndicatorStatus::Normal => &[
            "Peripapillary region intact.",
            "The tissue around the disc looks unremarkable.",
        ],
        IndicatorStatus::Uncertain => &[
            "Image quality limits assessment of the peripapillary region.",
            "Findings around the disc are equivocal.",
        ],
    };
    variants[seed % variants.len()].to_string()
}

fn input(name: &str, tag: &str, bytes: &[u8]) -> ToolInput {
    ToolInput { name: name.into(), type_tag: tag.into(), payload: Payload::inline(bytes) }
}

fn digest_of(inputs: Vec<ToolInput>) -> Result<String, SynthError> {
    let req = ToolRequest {
        request_id: String::new(),
        tool_id: String::new(),
        action: String::new(),
        inputs,
        params: BTreeMap::new(),
    };
    req.input_digest().map_err(|e| SynthError::Build(e.to_string()))
}

/// Bytes of the peripapillary crop the built-in crop tool will produce.
pub fn expected_crop(mask: &Mask2D, fundus: &GrayImage) -> Result<Vec<u8>, SynthError> {
    let region = metrics::crop_peripapillary(mask, metrics::DEFAULT_MARGIN_FACTOR)
        .map_err(|e| SynthError::Build(e.to_string()))?;
    Ok(fundus.crop(&region).to_pgm())
}

fn fixture(tool: &str, action: &str, digest: String, response: ToolResponse) -> MockFixture {
    MockFixture { tool_id: tool.into(), action: action.into(), input_digest: digest, response }
}

fn path_output(name: &str, tag: &str, rel: &str) -> ToolOutput {
    ToolOutput { name: name.into(), type_tag: tag.into(), payload: Payload::Path(rel.into()) }
}

/// A written fixture directory.
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub root: PathBuf,
    pub cases: Vec<PatientCase>,
}

impl FixtureSet {
    pub fn cases_dir(&self) -> PathBuf {
        self.root.join(CASES_DIR)
    }

    pub fn engine_config(&self) -> PathBuf {
        self.root.join(ENGINE_CONFIG)
    }

    pub fn replay_config(&self) -> PathBuf {
        self.root.join(REPLAY_CONFIG)
    }
}

fn write_case(root: &Path, case: &PatientCase) -> Result<PatientCase, SynthError> {
    let dir = root.join(CASES_DIR);
    let path = dir.join(format!("{}.json", case.case_id));
    codec::write_json(&path, case)?;
    // hand back the case with absolute payload paths, as a load would
    let mut abs = case.clone();
    for input in abs.inputs.values_mut() {
        input.path = dir.join(&input.path);
    }
    Ok(abs)
}

/// Writes the glaucoma fixture set for `specs` under `root`.
pub fn write_glaucoma_fixture(root: &Path, specs: &[GlaucomaSpec]) -> Result<FixtureSet, SynthError> {
    mkdir(&root.join(CASES_DIR).join("payloads"))?;
    mkdir(&root.join("fixtures/payloads"))?;
    let mut fixtures = Vec::new();
    let mut cases = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let case_id = format!("g{:02}", i + 1);
        let mask = glaucoma_mask(spec.vcdr, spec.rim);
        let fundus = fundus_image(&mask, i as u32 + 1);
        let fundus_pgm = fundus.to_pgm();
        let fundus_rel = format!("payloads/{case_id}_fundus.pgm");
        std::fs::write(root.join(CASES_DIR).join(&fundus_rel), &fundus_pgm)
            .map_err(io_err(&root.join(&fundus_rel)))?;
        let mask_rel = format!("payloads/{case_id}_mask.pgm");
        mask.save(&root.join("fixtures").join(&mask_rel))?;

        let fundus_digest = digest_of(vec![input("fundus", Modality::Fundus2d.as_str(), &fundus_pgm)])?;
        fixtures.push(fixture(
            "cup_disc_seg",
            "segment",
            fundus_digest.clone(),
            ToolResponse::ok("", vec![path_output("mask", artifact_type::MASK_2D, &mask_rel)]),
        ));
        fixtures.push(fixture("fundus_vqa", "query", fundus_digest.clone(), ToolResponse::text("", "answer", &dh_text(spec.dh, i))));
        let crop = expected_crop(&mask, &fundus)?;
        let crop_digest = digest_of(vec![input("crop", artifact_type::IMAGE_CROP, &crop)])?;
        if crop_digest == fundus_digest {
            return Err(SynthError::Build(format!("{case_id}: crop covers the whole image")));
        }
        fixtures.push(fixture("fundus_vqa", "query", crop_digest, ToolResponse::text("", "answer", &ppa_text(spec.ppa, i))));

        let case = PatientCase {
            case_id,
            inputs: BTreeMap::from([(
                "fundus".to_string(),
                CaseInput { modality: Modality::Fundus2d, path: PathBuf::from(fundus_rel) },
            )]),
            metadata: None,
            ground_truth: Some(spec.truth),
        };
        cases.push(write_case(root, &case)?);
    }
    codec::write_json(&root.join(FIXTURES_FILE), &fixtures)?;
    let weights = MoeConfig::new(GLAUCOMA_WEIGHTS.iter().map(|(k, w)| (k.to_string(), *w)), 0.5)
        .map_err(|e| SynthError::Build(e.to_string()))?;
    codec::write_json(&root.join(WEIGHTS_FILE), &weights)?;
    let weights_reply = format!(
        "{{{}}}",
        GLAUCOMA_WEIGHTS.iter().map(|(k, w)| format!("\"{k}\": {w}")).collect::<Vec<_>>().join(", ")
    );
    write_configs(root, "glaucoma", Some(&weights_reply))?;
    Ok(FixtureSet { root: root.to_path_buf(), cases })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeartSpec {
    /// Cavity box in voxels at end diastole and end systole.
    pub ed_cavity: [usize; 3],
    pub es_cavity: [usize; 3],
    /// Myocardial wall thickness in voxels around the end-diastolic cavity.
    pub wall: usize,
    pub height_cm: f64,
    pub weight_kg: f64,
    pub truth: GroundTruth,
}

/// Six heart cases, three sick and three healthy.
pub fn heart_specs() -> Vec<HeartSpec> {
    let h = |ed, es, wall, height_cm, weight_kg, truth| HeartSpec { ed_cavity: ed, es_cavity: es, wall, height_cm, weight_kg, truth };
    vec![
        h([25, 22, 35], [18, 16, 28], 3, 170.0, 70.0, GroundTruth::Healthy),
        h([32, 30, 40], [26, 25, 36], 4, 170.0, 70.0, GroundTruth::Sick),
        h([27, 24, 36], [21, 19, 33], 4, 160.0, 60.0, GroundTruth::Sick),
        h([26, 23, 34], [19, 17, 27], 3, 180.0, 80.0, GroundTruth::Healthy),
        h([29, 24, 34], [19, 18, 28], 3, 175.0, 75.0, GroundTruth::Healthy),
        h([26, 24, 36], [22, 20, 33], 3, 170.0, 70.0, GroundTruth::Sick),
    ]
}

/// Label volume with a centred cavity box and an optional myocardial shell.
pub fn heart_labels(cavity: [usize; 3], wall: usize) -> Result<Volume3D, SynthError> {
    let s = ECHO_SPACING_MM;
    let mut vol = Volume3D::zeros(ECHO_DIMS, [s, s, s])?;
    let lo = |axis: usize, len: usize| (ECHO_DIMS[axis] - len) / 2;
    let outer: Vec<usize> = (0..3).map(|a| cavity[a] + 2 * wall).collect();
    if (0..3).any(|a| outer[a] > ECHO_DIMS[a]) {
        return Err(SynthError::Build(format!("cavity {cavity:?} with wall {wall} exceeds the grid")));
    }
    for z in 0..ECHO_DIMS[2] {
        for y in 0..ECHO_DIMS[1] {
            for x in 0..ECHO_DIMS[0] {
                let p = [x, y, z];
                let inside = |dims: &[usize]| (0..3).all(|a| p[a] >= lo(a, dims[a]) && p[a] < lo(a, dims[a]) + dims[a]);
                if inside(&cavity) {
                    vol.set(x, y, z, label3d::LV_CAVITY);
                } else if inside(&outer) {
                    vol.set(x, y, z, label3d::MYOCARDIUM);
                }
            }
        }
    }
    Ok(vol)
}

/// Raw intensity volume standing in for an echo acquisition.
pub fn echo_intensity(labels: &Volume3D, seed: u32) -> Volume3D {
    let mut v = labels.clone();
    for (i, value) in v.labels.iter_mut().enumerate() {
        let base = match *value {
            label3d::LV_CAVITY => 20u32,
            label3d::MYOCARDIUM => 180,
            _ => 90,
        };
        *value = (base + (i as u32 * 31 + seed * 17) % 9) as u8;
    }
    v
}

fn volume_bytes(vol: &Volume3D, with_labels: bool) -> Result<Vec<u8>, SynthError> {
    let mut bytes = vol.labels.clone();
    bytes.extend(serde_json::to_string_pretty(&vol.sidecar(with_labels)).map_err(CodecError::from)?.into_bytes());
    Ok(bytes)
}

/// Writes the heart fixture set for `specs` under `root`.
pub fn write_heart_fixture(root: &Path, specs: &[HeartSpec]) -> Result<FixtureSet, SynthError> {
    mkdir(&root.join(CASES_DIR).join("payloads"))?;
    mkdir(&root.join("fixtures/payloads"))?;
    let mut fixtures = Vec::new();
    let mut cases = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let case_id = format!("h{:02}", i + 1);
        let mut inputs = BTreeMap::new();
        for (phase, cavity, wall) in [("ed", spec.ed_cavity, spec.wall), ("es", spec.es_cavity, 0)] {
            let labels = heart_labels(cavity, wall)?;
            let echo = echo_intensity(&labels, (i * 2) as u32 + u32::from(phase == "es"));
            let echo_rel = format!("payloads/{case_id}_echo_{phase}.raw");
            echo.save(&root.join(CASES_DIR).join(&echo_rel), false)?;
            let seg_rel = format!("payloads/{case_id}_seg_{phase}.raw");
            labels.save(&root.join("fixtures").join(&seg_rel), true)?;
            let digest = codec::sha256_hex(&volume_bytes(&echo, false)?);
            fixtures.push(fixture(
                "echo_seg",
                "segment",
                digest,
                ToolResponse::ok("", vec![path_output("segmentation", artifact_type::LABEL_VOLUME_3D, &seg_rel)]),
            ));
            inputs.insert(
                format!("echo_{phase}"),
                CaseInput { modality: Modality::Echo3d, path: PathBuf::from(echo_rel) },
            );
        }
        let case = PatientCase {
            case_id,
            inputs,
            metadata: Some(CaseMetadata { height_cm: spec.height_cm, weight_kg: spec.weight_kg }),
            ground_truth: Some(spec.truth),
        };
        cases.push(write_case(root, &case)?);
    }
    codec::write_json(&root.join(FIXTURES_FILE), &fixtures)?;
    write_configs(root, "heart-disease", None)?;
    Ok(FixtureSet { root: root.to_path_buf(), cases })
}

/// Writes `engine.json` and `engine_replay.json`, plus the replay transcripts
/// for the plan (and the weights when `weights_reply` is given).
fn write_configs(root: &Path, disease_id: &str, weights_reply: Option<&str>) -> Result<(), SynthError> {
    let mut base = EngineConfig {
        mock_fixtures: vec![PathBuf::from(FIXTURES_FILE)],
        runs_dir: PathBuf::from("runs"),
        ..EngineConfig::default()
    };
    if weights_reply.is_some() {
        base.decider.weights_file = Some(PathBuf::from(WEIGHTS_FILE));
    }
    codec::write_json(&root.join(ENGINE_CONFIG), &base)?;

    let llm = LlmConfig {
        cache_dir: Some(PathBuf::from(TRANSCRIPTS_DIR)),
        mode: LlmMode::Replay,
        ..LlmConfig::default()
    };
    let mut replay = base.clone();
    replay.llm = Some(llm.clone());
    replay.decider.weights_file = None;
    replay.decider.assign_weights_llm = weights_reply.is_some();
    codec::write_json(&root.join(REPLAY_CONFIG), &replay)?;
    record_transcripts(&root.join(TRANSCRIPTS_DIR), &llm, disease_id, weights_reply)
}

/// Stores golden replies for the plan request (the rendered template plan)
/// and, optionally, for the weight request.
pub fn record_transcripts(
    dir: &Path,
    llm: &LlmConfig,
    disease_id: &str,
    weights_reply: Option<&str>,
) -> Result<(), SynthError> {
    let cache = TranscriptCache::open(dir)?;
    let registry = default_registry();
    let index = KnowledgeIndex::from_documents(bundled_corpus()).map_err(|e| SynthError::Build(e.to_string()))?;
    let criteria = index.retrieve(&criteria_query(disease_id), DEFAULT_TOP_K);
    let mut plan = compile_plan_template(disease_id, &registry).map_err(|e| SynthError::Build(e.to_string()))?;
    let reply = format!("Here is the plan.\n\n{}", render_plan_block(&plan));
    cache.insert_for(&llm.model, &plan_messages(&criteria, &registry, disease_id), llm.temperature, &reply)?;
    if let Some(w) = weights_reply {
        plan.criteria = criteria;
        let messages = weight_messages(disease_id, &plan.indicator_names(), &plan.criteria);
        cache.insert_for(&llm.model, &messages, llm.temperature, w)?;
    }
    Ok(())
}

/// Plan backend matching each fixture config.
pub fn backend_for(config_file: &str) -> PlanBackend {
    if config_file == REPLAY_CONFIG {
        PlanBackend::Llm
    } else {
        PlanBackend::Template
    }
}
