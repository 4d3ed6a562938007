//! Runs the cardiac plan on the synthetic echo volumes.

use diagflow::engine::{DeciderKind, Engine, EngineConfig, PlanBackend};
use diagflow::model::load_case_dir;
use diagflow::synth;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let set = synth::write_heart_fixture(dir.path(), &synth::heart_specs())?;
    let engine = Engine::from_config(EngineConfig::load(&set.engine_config())?)?;
    let plan = engine.plan("heart-disease", PlanBackend::Template)?;
    for case in load_case_dir(&set.cases_dir())? {
        let run = engine.diagnose(&case, &plan, DeciderKind::Moe, &dir.path().join(&case.case_id))?;
        let values: Vec<String> = run
            .diagnosis
            .indicators
            .iter()
            .map(|i| match &i.raw_value {
                Some(m) => format!("{}={:.1} {}", i.name, m.value, i.status),
                None => format!("{}={}", i.name, i.status),
            })
            .collect();
        println!("{} {:<8} {}", case.case_id, run.diagnosis.label.to_string(), values.join(", "));
    }
    Ok(())
}
