//! Writes the synthetic glaucoma and heart fixture sets.
//!
//! cargo run --example make_fixtures -- /tmp/fixtures

use std::path::PathBuf;

use diagflow::synth;

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let g = synth::write_glaucoma_fixture(&root.join("glaucoma"), &synth::glaucoma_golden_specs())?;
    let h = synth::write_heart_fixture(&root.join("heart"), &synth::heart_specs())?;
    for set in [&g, &h] {
        println!("{}: {} cases, config {}", set.root.display(), set.cases.len(), set.engine_config().display());
    }
    Ok(())
}
