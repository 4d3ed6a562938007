//! Evaluates the 20-case glaucoma set and prints the metric table and ROC.

use diagflow::engine::{DeciderKind, Engine, EngineConfig, PlanBackend};
use diagflow::evaluation::{roc_csv, run_batch, IndeterminatePolicy};
use diagflow::model::load_case_dir;
use diagflow::synth;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let set = synth::write_glaucoma_fixture(dir.path(), &synth::glaucoma_golden_specs())?;
    let engine = Engine::from_config(EngineConfig::load(&set.engine_config())?)?;
    let plan = engine.plan("glaucoma", PlanBackend::Template)?;
    let cases = load_case_dir(&set.cases_dir())?;
    let report = run_batch(&engine, &cases, &plan, DeciderKind::Moe, IndeterminatePolicy::CountAsWrong, &dir.path().join("runs"))?;
    print!("{}", report.render_table());
    if let Some(points) = report.roc() {
        print!("{}", roc_csv(&points));
    }
    Ok(())
}
