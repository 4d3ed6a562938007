//! Canonical plans for the built-in diseases, compiled without a model.

use indexmap::IndexMap;

use super::{DiagnosticPlan, PlanError, PlanStep, ToolDescriptor, ToolKind};
use crate::model::{artifact_type, Modality};

pub const SUPPORTED_DISEASES: [&str; 2] = ["glaucoma", "heart-disease"];

/// Retrieval query used to gather criteria for a disease.
pub fn criteria_query(disease_id: &str) -> String {
    match disease_id {
        "glaucoma" => "glaucoma diagnosis criteria optic cup disc ratio rim hemorrhage atrophy".into(),
        "heart-disease" => "heart disease diagnosis echocardiography ejection fraction ventricular diameter mass".into(),
        other => format!("{} diagnosis criteria", other.replace('-', " ")),
    }
}

fn pick<'a>(
    registry: &'a [ToolDescriptor],
    kind: ToolKind,
    accepts: &[&str],
    produces: &str,
    role: &'static str,
) -> Result<&'a str, PlanError> {
    registry
        .iter()
        .find(|t| t.kind == kind && t.produces == produces && accepts.iter().all(|a| t.accepts(a)))
        .map(|t| t.tool_id.as_str())
        .ok_or(PlanError::MissingTool { kind, role })
}

pub fn compile_plan_template(disease_id: &str, registry: &[ToolDescriptor]) -> Result<DiagnosticPlan, PlanError> {
    match disease_id {
        "glaucoma" => glaucoma(registry),
        "heart-disease" => heart(registry),
        other => Err(PlanError::UnknownDisease(other.to_string())),
    }
}

fn glaucoma(registry: &[ToolDescriptor]) -> Result<DiagnosticPlan, PlanError> {
    use artifact_type::*;
    let fundus = Modality::Fundus2d.as_str();
    let vqa_fundus = pick(registry, ToolKind::Vqa, &[fundus], TEXT, "disc hemorrhage screening")?;
    let seg = pick(registry, ToolKind::Segmentation, &[fundus], MASK_2D, "optic cup/disc segmentation")?;
    let metric = pick(registry, ToolKind::Metric, &[MASK_2D, MEASUREMENT], MEASUREMENT, "fundus metrics")?;
    let crop = pick(registry, ToolKind::Crop, &[MASK_2D, fundus], IMAGE_CROP, "peripapillary crop")?;
    let vqa_crop = pick(registry, ToolKind::Vqa, &[IMAGE_CROP], TEXT, "peripapillary atrophy query")?;

    let steps = vec![
        PlanStep::new("fundus", vqa_fundus, "query", "dh_report").param("question", "disc_hemorrhage"),
        PlanStep::new("fundus", seg, "segment", "cup_disc_mask").param("target", "optic_cup_disc"),
        PlanStep::new("cup_disc_mask", metric, "compute_vcdr", "vcdr"),
        PlanStep::new("cup_disc_mask", crop, "crop", "peripapillary_crop")
            .with_input("fundus")
            .param("margin_factor", "1.5"),
        PlanStep::new("peripapillary_crop", vqa_crop, "query", "ppa_report").param("question", "peripapillary_atrophy"),
        PlanStep::new("cup_disc_mask", metric, "compute_rim_thickness", "rim_profile").param("laterality", "right"),
        PlanStep::new("rim_profile", metric, "compute_rim_ratio", "rim_ratio").with_input("cup_disc_mask"),
    ];
    Ok(DiagnosticPlan {
        disease_id: "glaucoma".into(),
        declared_inputs: IndexMap::from([("fundus".to_string(), Modality::Fundus2d)]),
        steps,
        indicator_bindings: bindings(&[
            ("vCDR", "vcdr"),
            ("rim_thickness", "rim_ratio"),
            ("ppa", "ppa_report"),
            ("disc_hemorrhage", "dh_report"),
        ]),
        criteria: Vec::new(),
    })
}

fn heart(registry: &[ToolDescriptor]) -> Result<DiagnosticPlan, PlanError> {
    use artifact_type::*;
    let seg = pick(registry, ToolKind::Segmentation, &[Modality::Echo3d.as_str()], LABEL_VOLUME_3D, "myocardium/LV segmentation")?;
    let metric = pick(
        registry,
        ToolKind::Metric,
        &[LABEL_VOLUME_3D, Modality::ScalarMetadata.as_str()],
        MEASUREMENT,
        "cardiac metrics",
    )?;
    let steps = vec![
        PlanStep::new("echo_ed", seg, "segment", "seg_ed").param("phase", "end_diastole"),
        PlanStep::new("echo_es", seg, "segment", "seg_es").param("phase", "end_systole"),
        PlanStep::new("seg_ed", metric, "compute_lvef", "lvef").with_input("seg_es"),
        PlanStep::new("seg_ed", metric, "compute_lv_diameter", "edd"),
        PlanStep::new("seg_es", metric, "compute_lv_diameter", "sdd"),
        PlanStep::new("seg_ed", metric, "compute_lvmi", "lvmi").with_input("patient_info"),
    ];
    Ok(DiagnosticPlan {
        disease_id: "heart-disease".into(),
        declared_inputs: IndexMap::from([
            ("echo_ed".to_string(), Modality::Echo3d),
            ("echo_es".to_string(), Modality::Echo3d),
            ("patient_info".to_string(), Modality::ScalarMetadata),
        ]),
        steps,
        indicator_bindings: bindings(&[("lvef", "lvef"), ("edd", "edd"), ("sdd", "sdd"), ("lvmi", "lvmi")]),
        criteria: Vec::new(),
    })
}

fn bindings(pairs: &[(&str, &str)]) -> IndexMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::plan::{default_registry, validate_plan};

    #[test]
    fn glaucoma_indicators() {
        let plan = compile_plan_template("glaucoma", &default_registry()).unwrap();
        let names: BTreeSet<_> = plan.indicator_bindings.keys().map(String::as_str).collect();
        assert_eq!(names, BTreeSet::from(["vCDR", "rim_thickness", "ppa", "disc_hemorrhage"]));
        assert_eq!(plan.steps.len(), 7);
        assert!(validate_plan(&plan, &default_registry()).is_valid());
    }

    #[test]
    fn heart_indicators() {
        let plan = compile_plan_template("heart-disease", &default_registry()).unwrap();
        let names: BTreeSet<_> = plan.indicator_bindings.keys().map(String::as_str).collect();
        assert_eq!(names, BTreeSet::from(["lvef", "edd", "sdd", "lvmi"]));
        assert!(validate_plan(&plan, &default_registry()).is_valid());
    }

    #[test]
    fn missing_segmentation_named() {
        let registry: Vec<_> = default_registry()
            .into_iter()
            .filter(|t| t.kind != ToolKind::Segmentation)
            .collect();
        match compile_plan_template("glaucoma", &registry) {
            Err(PlanError::MissingTool { kind, .. }) => assert_eq!(kind, ToolKind::Segmentation),
            other => panic!("expected MissingTool, got {other:?}"),
        }
    }

    #[test]
    fn unknown_disease() {
        assert!(matches!(
            compile_plan_template("asthma", &default_registry()),
            Err(PlanError::UnknownDisease(_))
        ));
    }

    #[test]
    fn valid_for_registry_supersets() {
        let mut registry = default_registry();
        registry.insert(
            0,
            ToolDescriptor::new("extra_cls", ToolKind::Classification, &["fundus-2d"], "text", crate::plan::Endpoint::Mock),
        );
        for d in SUPPORTED_DISEASES {
            let plan = compile_plan_template(d, &registry).unwrap();
            assert!(validate_plan(&plan, &registry).is_valid());
        }
    }
}
