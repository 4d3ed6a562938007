//! Compiles the template plan for each supported disease, validates it and
//! prints it in block form.

use diagflow::engine::{Engine, EngineConfig, PlanBackend};
use diagflow::plan::{render_plan_block, validate_plan, SUPPORTED_DISEASES};

fn main() -> anyhow::Result<()> {
    let engine = Engine::from_config(EngineConfig::default())?;
    for disease in SUPPORTED_DISEASES {
        let plan = engine.plan(disease, PlanBackend::Template)?;
        let report = validate_plan(&plan, engine.gateway().registry());
        println!("{disease}: {} steps, valid {}, digest {}", plan.steps.len(), report.is_valid(), plan.digest());
        print!("{}", render_plan_block(&plan));
        for c in &plan.criteria {
            println!("  criterion {} ({:.2})", c.doc_id, c.score);
        }
    }
    Ok(())
}
