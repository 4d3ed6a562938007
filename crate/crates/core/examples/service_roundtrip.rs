//! Starts the HTTP service, compiles a plan and diagnoses a case by plan
//! digest.

use std::sync::Arc;

use diagflow::engine::{Engine, EngineConfig};
use diagflow::model::load_case_dir;
use diagflow::service::ServiceHandle;
use diagflow::synth;
use serde_json::{json, Value};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let set = synth::write_glaucoma_fixture(dir.path(), &synth::glaucoma_golden_specs()[..1])?;
    let engine = Arc::new(Engine::from_config(EngineConfig::load(&set.engine_config())?)?);
    let service = ServiceHandle::spawn(engine, "127.0.0.1:0".parse()?)?;
    let url = service.url();
    println!("service at {url}");

    let plan: diagflow::DiagnosticPlan =
        ureq::post(&format!("{url}/v1/plans")).send_json(json!({"disease_id": "glaucoma"}))?.body_mut().read_json()?;
    println!("plan {} with {} steps", plan.digest(), plan.steps.len());

    let case = load_case_dir(&set.cases_dir())?.remove(0);
    let diagnosis: Value = ureq::post(&format!("{url}/v1/diagnose"))
        .send_json(json!({"plan_ref": plan.digest(), "case": case}))?
        .body_mut()
        .read_json()?;
    println!("{}: {} ({})", case.case_id, diagnosis["label"], diagnosis["rationale"]);
    Ok(())
}
