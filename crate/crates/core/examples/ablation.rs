//! Scores each indicator alone and the full weighted combination on the same
//! glaucoma cases.

use diagflow::engine::{Engine, EngineConfig, PlanBackend};
use diagflow::evaluation::{run_ablation, AblationSpec};
use diagflow::model::load_case_dir;
use diagflow::synth;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let set = synth::write_glaucoma_fixture(dir.path(), &synth::glaucoma_golden_specs())?;
    let engine = Engine::from_config(EngineConfig::load(&set.engine_config())?)?;
    let plan = engine.plan("glaucoma", PlanBackend::Template)?;
    let cases = load_case_dir(&set.cases_dir())?;
    let spec = AblationSpec::singles_and_full(&plan.indicator_names());
    let table = run_ablation(&engine, &cases, &plan, &spec, &dir.path().join("runs"))?;
    print!("{}", table.render());
    Ok(())
}
