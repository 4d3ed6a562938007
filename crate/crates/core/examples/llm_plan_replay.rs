//! Compiles a plan through the LLM backend using recorded transcripts, so no
//! network or API key is needed.

use diagflow::engine::{Engine, EngineConfig, PlanBackend};
use diagflow::plan::render_plan_block;
use diagflow::synth;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let set = synth::write_glaucoma_fixture(dir.path(), &synth::glaucoma_golden_specs()[..1])?;
    let engine = Engine::from_config(EngineConfig::load(&set.replay_config())?)?;
    let plan = engine.plan("glaucoma", PlanBackend::Llm)?;
    print!("{}", render_plan_block(&plan));
    let template = engine.plan("glaucoma", PlanBackend::Template)?;
    println!("same steps as the template plan: {}", plan.steps == template.steps);
    Ok(())
}
