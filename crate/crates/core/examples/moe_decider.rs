//! Weighted risk scoring over hand-made indicator results.

use diagflow::decider::{moe_decide, MoeConfig};
use diagflow::model::{IndicatorResult, IndicatorStatus};

fn indicator(name: &str, status: IndicatorStatus) -> IndicatorResult {
    IndicatorResult { name: name.into(), status, raw_value: None, evidence: Vec::new(), tool_id: "example".into() }
}

fn main() -> anyhow::Result<()> {
    use IndicatorStatus::{Abnormal, Normal, Uncertain};
    let config = MoeConfig::new(
        [("vCDR", 0.5), ("rim_thickness", 0.25), ("ppa", 0.125), ("disc_hemorrhage", 0.125)].map(|(k, w)| (k.to_string(), w)),
        0.5,
    )?;
    let patients = [
        [Abnormal, Normal, Normal, Normal],
        [Uncertain, Abnormal, Normal, Normal],
        [Normal, Abnormal, Abnormal, Abnormal],
        [Uncertain, Uncertain, Uncertain, Uncertain],
    ];
    for statuses in patients {
        let inds: Vec<IndicatorResult> = ["vCDR", "rim_thickness", "ppa", "disc_hemorrhage"]
            .iter()
            .zip(statuses)
            .map(|(n, s)| indicator(n, s))
            .collect();
        let d = moe_decide(&inds, &config)?;
        println!("{:<8} {}", d.label.to_string(), d.rationale);
    }
    // a missing indicator drops out and the rest are renormalized
    let partial = [indicator("rim_thickness", Abnormal), indicator("ppa", Normal)];
    println!("partial: {}", moe_decide(&partial, &config)?.rationale);
    Ok(())
}
