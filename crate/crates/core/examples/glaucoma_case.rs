//! Diagnoses one synthetic fundus case end to end and lists the artifacts
//! written to the run directory.

use diagflow::engine::{DeciderKind, Engine, EngineConfig, PlanBackend};
use diagflow::model::load_case_dir;
use diagflow::synth;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let set = synth::write_glaucoma_fixture(dir.path(), &synth::glaucoma_golden_specs()[..2])?;
    let engine = Engine::from_config(EngineConfig::load(&set.engine_config())?)?;
    let plan = engine.plan("glaucoma", PlanBackend::Template)?;
    for case in load_case_dir(&set.cases_dir())? {
        let run_dir = dir.path().join("runs").join(&case.case_id);
        let run = engine.diagnose(&case, &plan, DeciderKind::Moe, &run_dir)?;
        println!("{} -> {} ({:?})", case.case_id, run.diagnosis.label, run.diagnosis.risk_score);
        for ind in &run.diagnosis.indicators {
            let raw = ind.raw_value.as_ref().map(|m| format!(" = {:.3}", m.value)).unwrap_or_default();
            println!("  {:<16} {}{raw}", ind.name, ind.status);
        }
        println!("  {}", run.diagnosis.rationale);
    }
    Ok(())
}
