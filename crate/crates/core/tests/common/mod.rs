//! Acceptance checks shared by the per-area test files and the `acceptance`
//! target. Each check returns a one-line detail on success.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, ensure, Context, Result};
use diagflow::decider::{moe_score, MoeConfig};
use diagflow::engine::{DeciderKind, Engine, EngineConfig, INDICATORS_FILE};
use diagflow::evaluation::{
    auc, auc_trapezoid, f1, macc, run_ablation, run_batch, AblationDecider, AblationSpec, CaseRow, ConfusionCounts,
    IndeterminatePolicy, MetricSummary,
};
use diagflow::gateway::{ToolGateway, ToolRequest, ToolResponse};
use diagflow::imaging::{CropRegion, Mask2D, Volume3D};
use diagflow::metrics::{self, Laterality};
use diagflow::model::{
    load_case_dir, CaseInput, DiagnosisLabel, GroundTruth, IndicatorResult, IndicatorStatus, Modality, PatientCase,
};
use diagflow::orchestrator::{execute_plan, OrchestratorConfig, OrchestratorError};
use diagflow::plan::{
    compile_plan_template, default_registry, validate_plan, DiagnosticPlan, Endpoint, FindingCategory, PlanStep,
    ToolDescriptor, ToolKind,
};
use diagflow::summarizer::{KeywordRule, RuleSet, Summarizer};
use diagflow::synth;
use indexmap::IndexMap;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const STATUSES: [IndicatorStatus; 3] = [IndicatorStatus::Normal, IndicatorStatus::Uncertain, IndicatorStatus::Abnormal];

// ---------------------------------------------------------------- evaluation

pub fn degenerate_predictor() -> Result<String> {
    let truths: Vec<GroundTruth> = synth::glaucoma_golden_specs().iter().map(|s| s.truth).collect();
    let sick = truths.iter().filter(|t| **t == GroundTruth::Sick).count();
    ensure!(sick * 2 == truths.len(), "fixture set is not balanced");
    let rows: Vec<CaseRow> = truths
        .iter()
        .enumerate()
        .map(|(i, t)| CaseRow {
            case_id: format!("c{i}"),
            ground_truth: *t,
            label: DiagnosisLabel::Healthy,
            risk_score: None,
            statuses: BTreeMap::new(),
            error: None,
        })
        .collect();
    let summary = MetricSummary::from_rows(&rows, IndeterminatePolicy::CountAsWrong);
    ensure!(summary.macc == Some(50.0), "mACC {:?}", summary.macc);
    ensure!(summary.f1 == 0.0, "F1 {}", summary.f1);
    let counts = ConfusionCounts::from_labels(truths.iter().map(|t| (*t, DiagnosisLabel::Healthy)), IndeterminatePolicy::Exclude);
    ensure!(macc(&counts)? == 50.0 && f1(&counts) == 0.0);
    Ok(format!("{} cases: mACC {:.1}, F1 {:.1}", rows.len(), 50.0, 0.0))
}

fn indicator(name: &str, status: IndicatorStatus) -> IndicatorResult {
    IndicatorResult { name: name.into(), status, raw_value: None, evidence: Vec::new(), tool_id: "t".into() }
}

fn status_value(s: IndicatorStatus) -> f64 {
    match s {
        IndicatorStatus::Normal => 0.0,
        IndicatorStatus::Uncertain => 0.5,
        IndicatorStatus::Abnormal => 1.0,
    }
}

pub fn moe_oracle(instances: usize, seed: u64) -> Result<String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut boundary = 0;
    for k in 0..instances {
        let n = rng.random_range(1..=8);
        let mut weights: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random::<f64>() }).collect();
        if weights.iter().all(|w| *w == 0.0) {
            weights[0] = 0.25;
        }
        let statuses: Vec<IndicatorStatus> = (0..n).map(|_| STATUSES[rng.random_range(0..3)]).collect();
        let names: Vec<String> = (0..n).map(|i| format!("ind{i}")).collect();
        let inds: Vec<IndicatorResult> = names.iter().zip(&statuses).map(|(nm, s)| indicator(nm, *s)).collect();

        let total: f64 = weights.iter().sum();
        let mut term_by_term = 0.0;
        for (w, s) in weights.iter().zip(&statuses) {
            term_by_term += (w / total) * status_value(*s);
        }
        let pooled = weights.iter().zip(&statuses).map(|(w, s)| w * status_value(*s)).sum::<f64>() / total;

        // every fifth instance sits exactly on the threshold
        let theta = if k % 5 == 0 { term_by_term.clamp(0.0, 1.0) } else { rng.random::<f64>() };
        boundary += usize::from(k % 5 == 0);
        let config = MoeConfig::new(names.iter().cloned().zip(weights.iter().copied()), theta)?;
        let out = moe_score(&inds, &config)?;
        ensure!((out.score - term_by_term).abs() <= 1e-12, "instance {k}: {} vs {}", out.score, term_by_term);
        ensure!((out.score - pooled).abs() <= 1e-12, "instance {k}: pooled {} vs {}", out.score, pooled);
        let want = if term_by_term >= theta { DiagnosisLabel::Sick } else { DiagnosisLabel::Healthy };
        ensure!(out.label == want, "instance {k}: label {:?}, score {} theta {}", out.label, out.score, theta);
        ensure!(out.score >= 0.0 && out.score <= 1.0 + 1e-15);
    }
    Ok(format!("{instances} instances ({boundary} on the threshold) within 1e-12"))
}

/// Mann-Whitney U from average ranks.
pub fn rank_sum_auc(scores: &[(f64, GroundTruth)]) -> f64 {
    let mut sorted: Vec<(f64, GroundTruth)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0.0; sorted.len()];
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].0 == sorted[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for r in &mut ranks[i..=j] {
            *r = avg;
        }
        i = j + 1;
    }
    let n_pos = sorted.iter().filter(|s| s.1 == GroundTruth::Sick).count() as f64;
    let n_neg = sorted.len() as f64 - n_pos;
    let r_pos: f64 = sorted.iter().zip(&ranks).filter(|(s, _)| s.1 == GroundTruth::Sick).map(|(_, r)| r).sum();
    (r_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

pub fn random_score_set(rng: &mut StdRng) -> Vec<(f64, GroundTruth)> {
    let pos = rng.random_range(1..=25);
    let neg = rng.random_range(1..=25);
    // coarse grids produce many ties
    let levels = [0u32, 2, 4, 10, 1000][rng.random_range(0..5)];
    let draw = |rng: &mut StdRng| {
        if levels == 0 {
            rng.random::<f64>()
        } else {
            f64::from(rng.random_range(0..=levels)) / f64::from(levels.max(1))
        }
    };
    let mut v = Vec::new();
    for _ in 0..pos {
        v.push((draw(rng), GroundTruth::Sick));
    }
    for _ in 0..neg {
        v.push((draw(rng), GroundTruth::Healthy));
    }
    v
}

pub fn auc_dual_route(sets: usize, seed: u64) -> Result<String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for k in 0..sets {
        let scores = random_score_set(&mut rng);
        let mw = auc(&scores)?;
        let trap = auc_trapezoid(&scores)?;
        let ranks = rank_sum_auc(&scores);
        worst = worst.max((mw - trap).abs());
        ensure!((mw - trap).abs() <= 1e-9, "set {k}: Mann-Whitney {mw} vs trapezoid {trap}");
        ensure!((mw - ranks).abs() <= 1e-9, "set {k}: Mann-Whitney {mw} vs rank sum {ranks}");
    }
    Ok(format!("{sets} score sets, max |MW - trapezoid| = {worst:.2e}"))
}

// ---------------------------------------------------------------- metrics

fn disc_mask(size: usize, c: (i64, i64), rd: i64, cup_c: (i64, i64), rc: i64) -> Mask2D {
    let mut m = Mask2D::empty(size, size);
    for y in 0..size as i64 {
        for x in 0..size as i64 {
            let in_disc = (x - c.0).pow(2) + (y - c.1).pow(2) <= rd * rd;
            let in_cup = (x - cup_c.0).pow(2) + (y - cup_c.1).pow(2) <= rc * rc;
            if in_disc && in_cup {
                m.set(x as usize, y as usize, 2);
            } else if in_disc {
                m.set(x as usize, y as usize, 1);
            }
        }
    }
    m
}

/// Rows holding at least one pixel accepted by `keep`, scanned row by row.
fn rows_with(mask: &Mask2D, keep: impl Fn(u8) -> bool) -> usize {
    let rows: Vec<usize> =
        (0..mask.height()).filter(|&y| (0..mask.width()).any(|x| keep(mask.get(x, y)))).collect();
    match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => b - a + 1,
        _ => 0,
    }
}

fn walk(mask: &Mask2D, from: (usize, usize), step: (i64, i64)) -> i64 {
    let (mut last_cup, mut last_disc) = (0i64, 0i64);
    let (mut x, mut y) = (from.0 as i64, from.1 as i64);
    let mut d = 0;
    while x >= 0 && y >= 0 && x < mask.width() as i64 && y < mask.height() as i64 {
        match mask.get(x as usize, y as usize) {
            2 => {
                last_cup = d;
                last_disc = d;
            }
            1 => last_disc = d,
            _ => {}
        }
        x += step.0;
        y += step.1;
        d += 1;
    }
    last_disc - last_cup
}

fn centroid(mask: &Mask2D) -> (usize, usize) {
    let mut pts = Vec::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) != 0 {
                pts.push((x as f64, y as f64));
            }
        }
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    ((mx + 0.5).floor() as usize, (my + 0.5).floor() as usize)
}

fn scale_axis(lo: usize, hi: usize, factor: f64, limit: usize) -> (usize, usize) {
    let centre = (lo + hi) as f64 / 2.0;
    let half = (hi - lo) as f64 / 2.0 * factor;
    let a = (centre - half).floor().max(0.0) as usize;
    let b = ((centre + half).ceil() as usize).min(limit);
    (a, b)
}

pub fn metric_oracles(per_metric: usize, seed: u64) -> Result<String> {
    let mut rng = StdRng::seed_from_u64(seed);

    // vCDR: brute-force row scan and the constructed radius ratio
    for _ in 0..per_metric {
        let size = rng.random_range(64..=128usize);
        let rd = rng.random_range(8..=size as i64 / 2 - 4);
        let rc = rng.random_range(1..rd - 1);
        let c = (size as i64 / 2, size as i64 / 2);
        let shift = rng.random_range(-(rd - rc - 1)..=(rd - rc - 1));
        let mask = disc_mask(size, c, rd, (c.0, c.1 + shift), rc);
        let got = metrics::compute_vcdr(&mask)?;
        let brute = rows_with(&mask, |l| l == 2) as f64 / rows_with(&mask, |l| l != 0) as f64;
        ensure!(got == brute, "vCDR {got} vs row scan {brute}");
        let constructed = (2 * rc + 1) as f64 / (2 * rd + 1) as f64;
        ensure!((got - constructed).abs() < 1e-12, "vCDR {got} vs radii {constructed}");
    }

    // rim thickness: per-ray pixel walk, and rd - rc (-/+ shift) within 1 px
    for _ in 0..per_metric {
        let size = 128;
        let rd = rng.random_range(12..=50i64);
        let rc = rng.random_range(2..rd - 2);
        let shift = rng.random_range(0..=(rd - rc) / 2);
        let c = (64, 64);
        let mask = disc_mask(size, c, rd, (c.0, c.1 - shift), rc);
        let rim = metrics::compute_rim_thickness(&mask, Laterality::Right)?;
        let from = centroid(&mask);
        let walked = [walk(&mask, from, (0, -1)), walk(&mask, from, (0, 1)), walk(&mask, from, (-1, 0)), walk(&mask, from, (1, 0))];
        let got = [rim.superior, rim.inferior, rim.nasal, rim.temporal].map(i64::from);
        ensure!(got == walked, "rim {got:?} vs walk {walked:?}");
        // rays the shifted cup does not reach measure the whole radius
        let (below, across) = if shift <= rc {
            (rd - rc + shift, rd - ((rc * rc - shift * shift) as f64).sqrt().floor() as i64)
        } else {
            (rd, rd)
        };
        let geometric = [rd - rc - shift, below, across, across];
        for (g, e) in got.iter().zip(geometric) {
            ensure!((g - e).abs() <= 1, "rim {got:?} vs geometry {geometric:?}");
        }
        let left = metrics::compute_rim_thickness(&mask, Laterality::Left)?;
        ensure!(left.nasal == rim.temporal && left.temporal == rim.nasal);
    }

    // crop: centre scaling then clamping of the disc bounding box
    for _ in 0..per_metric {
        let (w, h) = (rng.random_range(40..=160usize), rng.random_range(40..=160usize));
        let (x0, y0) = (rng.random_range(0..w - 4), rng.random_range(0..h - 4));
        let (x1, y1) = (rng.random_range(x0 + 1..=w.min(x0 + 40)), rng.random_range(y0 + 1..=h.min(y0 + 40)));
        let mut mask = Mask2D::empty(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                mask.set(x, y, 1);
            }
        }
        let factor = [1.0, 1.5, 2.0, rng.random_range(1.0..3.0)][rng.random_range(0..4)];
        let got = metrics::crop_peripapillary(&mask, factor)?;
        let (ex0, ex1) = scale_axis(x0, x1, factor, w);
        let (ey0, ey1) = scale_axis(y0, y1, factor, h);
        ensure!(got == CropRegion { x0: ex0, y0: ey0, x1: ex1, y1: ey1 }, "crop {got:?} for bbox ({x0},{y0})-({x1},{y1}) x{factor}");
        ensure!(got.x0 <= x0 && got.y0 <= y0 && got.x1 >= x1 && got.y1 >= y1 && got.x1 <= w && got.y1 <= h);
        if factor == 1.0 {
            ensure!(got == CropRegion { x0, y0, x1, y1 });
        }
    }

    // volume: voxel count times spacing product, additive over labels
    for _ in 0..per_metric {
        let dims = [rng.random_range(4..24usize), rng.random_range(4..24), rng.random_range(4..24)];
        let spacing = [rng.random_range(0.2..3.0), rng.random_range(0.2..3.0), rng.random_range(0.2..3.0)];
        let mut vol = Volume3D::zeros(dims, spacing)?;
        let (mut myo, mut cav) = (0usize, 0usize);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let l = rng.random_range(0..3u8);
                    vol.set(x, y, z, l);
                    myo += usize::from(l == 1);
                    cav += usize::from(l == 2);
                }
            }
        }
        let mm3 = spacing[0] * spacing[1] * spacing[2];
        for (label, count) in [(1u8, myo), (2, cav)] {
            let got = metrics::compute_volume(&vol, label)?;
            let want = count as f64 * mm3 / 1000.0;
            ensure!((got - want).abs() <= 1e-12 * want.max(1.0), "volume {got} vs {want}");
        }
        let both = (myo + cav) as f64 * mm3 / 1000.0;
        let sum = metrics::compute_volume(&vol, 1)? + metrics::compute_volume(&vol, 2)?;
        ensure!((sum - both).abs() <= 1e-9);
    }

    // LVEF: definition and scale invariance
    for _ in 0..per_metric {
        let edv = rng.random_range(1.0..300.0);
        let esv = rng.random_range(0.0..=edv);
        let got = metrics::compute_lvef(edv, esv)?;
        ensure!((got - 100.0 * (1.0 - esv / edv)).abs() <= 1e-9, "LVEF {got}");
        let c = rng.random_range(0.1..10.0);
        ensure!((metrics::compute_lvef(edv * c, esv * c)? - got).abs() <= 1e-9);
    }

    // LV diameter: boxes exactly, rasterized spheres within one voxel
    for k in 0..per_metric {
        let dims = [40usize, 40, 40];
        let s = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), 1.0];
        let mut vol = Volume3D::zeros(dims, s)?;
        if k % 2 == 0 {
            let (bx, by, bz) = (rng.random_range(1..30usize), rng.random_range(1..30usize), rng.random_range(1..30usize));
            let (ox, oy, oz) = (rng.random_range(0..40 - bx), rng.random_range(0..40 - by), rng.random_range(0..40 - bz));
            for z in oz..oz + bz {
                for y in oy..oy + by {
                    for x in ox..ox + bx {
                        vol.set(x, y, z, 2);
                    }
                }
            }
            let want = (bx as f64 * s[0]).max(by as f64 * s[1]);
            let got = metrics::compute_lv_diameter(&vol)?;
            ensure!(got == want, "box {bx}x{by}x{bz}: diameter {got} vs {want}");
        } else {
            let r = rng.random_range(2..18i64);
            let sp = s[0];
            let mut vol = Volume3D::zeros(dims, [sp, sp, sp])?;
            for z in 0..40i64 {
                for y in 0..40i64 {
                    for x in 0..40i64 {
                        if (x - 20).pow(2) + (y - 20).pow(2) + (z - 20).pow(2) <= r * r {
                            vol.set(x as usize, y as usize, z as usize, 2);
                        }
                    }
                }
            }
            let got = metrics::compute_lv_diameter(&vol)?;
            let want = 2.0 * r as f64 * sp;
            ensure!((got - want).abs() <= sp + 1e-9, "sphere r={r}: diameter {got} vs {want}");
        }
    }

    // LVMI: Du Bois in log form, and a body with unit surface area
    for _ in 0..per_metric {
        let (myo, h, w) = (rng.random_range(20.0..300.0), rng.random_range(120.0..210.0), rng.random_range(30.0..150.0));
        let bsa = (0.007184f64.ln() + 0.725 * f64::ln(h) + 0.425 * f64::ln(w)).exp();
        let want = myo * 1.05 / bsa;
        let got = metrics::compute_lv_mass_index(myo, h, w)?;
        ensure!((got - want).abs() <= 1e-9 * want, "LVMI {got} vs {want}");
    }
    let h = 150.0;
    let (mut lo, mut hi) = (1.0f64, 200.0f64);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if 0.007184 * f64::powf(h, 0.725) * f64::powf(mid, 0.425) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let unit = metrics::compute_lv_mass_index(100.0, h, lo)?;
    ensure!((unit - 105.0).abs() < 1e-6, "unit-BSA index {unit}");

    Ok(format!("7 metrics x {per_metric} randomized inputs"))
}

// ---------------------------------------------------------------- plans

#[derive(Debug, Clone, Copy)]
enum Mutation {
    RenameTool,
    ForwardEdge,
    DanglingEdge,
    WrongType,
    SelfLoop,
    DuplicateOutput,
    RebindIndicator,
}

const MUTATIONS: [Mutation; 7] = [
    Mutation::RenameTool,
    Mutation::ForwardEdge,
    Mutation::DanglingEdge,
    Mutation::WrongType,
    Mutation::SelfLoop,
    Mutation::DuplicateOutput,
    Mutation::RebindIndicator,
];

/// Applies `m` to a copy of `plan`, or returns None when it does not apply.
fn mutate(plan: &DiagnosticPlan, m: Mutation, rng: &mut StdRng, registry: &[ToolDescriptor]) -> Option<(DiagnosticPlan, FindingCategory)> {
    let mut p = plan.clone();
    let n = p.steps.len();
    let i = rng.random_range(0..n);
    let category = match m {
        Mutation::RenameTool => {
            p.steps[i].tool = format!("{}_v{}", p.steps[i].tool, rng.random_range(2..99));
            FindingCategory::UnknownTool
        }
        Mutation::ForwardEdge => {
            if i + 1 >= n {
                return None;
            }
            let j = rng.random_range(i + 1..n);
            p.steps[i].object = p.steps[j].produces.clone();
            FindingCategory::ForwardReference
        }
        Mutation::DanglingEdge => {
            p.steps[i].object = format!("missing_{}", rng.random_range(0..1000));
            FindingCategory::UnresolvedObject
        }
        Mutation::WrongType => {
            let tool = registry.iter().find(|t| t.tool_id == p.steps[i].tool)?;
            let earlier: Vec<String> = p
                .declared_inputs
                .keys()
                .cloned()
                .chain(p.steps[..i].iter().map(|s| s.produces.clone()))
                .filter(|a| p.artifact_type(a, registry).is_some_and(|t| !tool.accepts(t)))
                .collect();
            if earlier.is_empty() {
                return None;
            }
            p.steps[i].object = earlier[rng.random_range(0..earlier.len())].clone();
            FindingCategory::TypeMismatch
        }
        Mutation::SelfLoop => {
            p.steps[i].object = p.steps[i].produces.clone();
            FindingCategory::CycleDetected
        }
        Mutation::DuplicateOutput => {
            let j = (i + rng.random_range(1..n)) % n;
            p.steps[i].produces = p.steps[j].produces.clone();
            FindingCategory::DuplicateProduces
        }
        Mutation::RebindIndicator => {
            let keys: Vec<String> = p.indicator_bindings.keys().cloned().collect();
            let k = &keys[rng.random_range(0..keys.len())];
            p.indicator_bindings.insert(k.clone(), format!("nowhere_{}", rng.random_range(0..1000)));
            FindingCategory::UnboundIndicator
        }
    };
    Some((p, category))
}

pub fn plan_validity(mutations: usize, seed: u64) -> Result<String> {
    let registry = default_registry();
    let plans: Vec<DiagnosticPlan> = ["glaucoma", "heart-disease"]
        .iter()
        .map(|d| compile_plan_template(d, &registry))
        .collect::<Result<_, _>>()?;
    for p in &plans {
        let report = validate_plan(p, &registry);
        ensure!(report.is_valid(), "{} template: {report}", p.disease_id);
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut per_category: BTreeMap<String, usize> = BTreeMap::new();
    let mut done = 0;
    let mut attempt = 0;
    while done < mutations {
        let m = MUTATIONS[attempt % MUTATIONS.len()];
        attempt += 1;
        let base = &plans[rng.random_range(0..plans.len())];
        let Some((mutated, expected)) = mutate(base, m, &mut rng, &registry) else { continue };
        let report = validate_plan(&mutated, &registry);
        ensure!(!report.is_valid(), "{m:?} on {} was accepted", base.disease_id);
        ensure!(report.contains(expected), "{m:?}: expected {expected:?}, got {:?}", report.categories());
        *per_category.entry(format!("{expected:?}")).or_default() += 1;
        done += 1;
    }
    Ok(format!("2 templates clean; {mutations} mutations rejected {per_category:?}"))
}

// ---------------------------------------------------------------- orchestrator

fn first_case(dir: &Path) -> Result<PatientCase> {
    load_case_dir(dir)?.into_iter().next().ok_or_else(|| anyhow!("no cases in {}", dir.display()))
}

/// Runs one case `runs` times per pool size, with randomized mock latencies
/// shuffling completion order, and returns the distinct indicators.json bodies.
fn indicator_bytes(config_file: &Path, case: &PatientCase, plan_disease: &str, runs: usize, tmp: &Path, seed: u64) -> Result<BTreeSet<Vec<u8>>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    for workers in [1usize, 4] {
        let mut config = EngineConfig::load(config_file)?;
        config.orchestrator = OrchestratorConfig::with_workers(workers);
        let engine = Engine::from_config(config)?;
        let plan = engine.plan(plan_disease, diagflow::engine::PlanBackend::Template)?;
        for r in 0..runs {
            for tool in engine.gateway().registry().iter().filter(|t| t.endpoint == Endpoint::Mock) {
                engine.gateway().set_mock_latency(&tool.tool_id, std::time::Duration::from_millis(rng.random_range(0..6)));
            }
            let dir = tmp.join(format!("{plan_disease}-w{workers}-r{r}"));
            engine.run_case(case, &plan, &dir)?;
            seen.insert(std::fs::read(dir.join(INDICATORS_FILE))?);
        }
    }
    Ok(seen)
}

pub fn orchestrator_determinism(runs: usize) -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let glaucoma = synth::write_glaucoma_fixture(&tmp.path().join("g"), &synth::glaucoma_golden_specs())?;
    let heart = synth::write_heart_fixture(&tmp.path().join("h"), &synth::heart_specs())?;
    let mut total = 0;
    for (set, disease) in [(&glaucoma, "glaucoma"), (&heart, "heart-disease")] {
        let case = first_case(&set.cases_dir())?;
        let bodies = indicator_bytes(&set.engine_config(), &case, disease, runs, &tmp.path().join("runs"), 11)?;
        ensure!(bodies.len() == 1, "{disease}: {} distinct indicators.json bodies", bodies.len());
        total += 2 * runs;
    }
    Ok(format!("{total} runs over pool sizes 1 and 4, one indicators.json body per case"))
}

/// Random DAG over one mock tool; every step is bound to an indicator.
pub fn random_dag(rng: &mut StdRng) -> DiagnosticPlan {
    let n = rng.random_range(1..=8);
    let mut steps = Vec::new();
    for i in 0..n {
        let pick = |rng: &mut StdRng| if i == 0 || rng.random_bool(0.3) { "img".to_string() } else { format!("a{}", rng.random_range(0..i)) };
        let mut step = PlanStep::new(&pick(rng), "node", "query", &format!("a{i}"));
        if rng.random_bool(0.4) {
            let extra = pick(rng);
            if extra != step.object {
                step = step.with_input(&extra);
            }
        }
        steps.push(step);
    }
    DiagnosticPlan {
        disease_id: "synthetic".into(),
        declared_inputs: IndexMap::from([("img".to_string(), Modality::Fundus2d)]),
        indicator_bindings: (0..n).map(|i| (format!("ind{i}"), format!("a{i}"))).collect(),
        steps,
        criteria: Vec::new(),
    }
}

fn dag_gateway(fault: Option<usize>) -> ToolGateway {
    let tool = ToolDescriptor::new("node", ToolKind::Vqa, &["fundus-2d", "text"], "text", Endpoint::Mock);
    let gw = ToolGateway::new(vec![tool]);
    gw.register_mock_handler(
        "node",
        Arc::new(move |req: &ToolRequest| {
            let step: usize = req.request_id.split(':').nth(1).and_then(|s| s.parse().ok()).unwrap_or(usize::MAX);
            if Some(step) == fault {
                return ToolResponse::error(&req.request_id, "injected fault");
            }
            let digest = req.input_digest().unwrap_or_default();
            let word = ["sign present", "clear", "maybe"][usize::from(digest.as_bytes()[0]) % 3];
            ToolResponse::text(&req.request_id, "answer", &format!("{word} at step {step}"))
        }),
    );
    gw
}

fn dag_summarizer(n: usize) -> Summarizer {
    Summarizer::new(RuleSet {
        version: "dag".into(),
        note: None,
        bands: Vec::new(),
        keywords: (0..n)
            .map(|i| KeywordRule { indicator: format!("ind{i}"), yes_patterns: vec!["sign".into()], no_patterns: vec!["clear".into()] })
            .collect(),
    })
}

fn descendants(plan: &DiagnosticPlan, root: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::from([root]);
    for (i, s) in plan.steps.iter().enumerate().skip(root + 1) {
        if s.inputs().any(|a| plan.producer(a).is_some_and(|p| out.contains(&p))) {
            out.insert(i);
        }
    }
    out
}

pub fn fault_isolation(dags: usize, seed: u64) -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let img = tmp.path().join("img.pgm");
    std::fs::write(&img, synth::disc_cup_mask(32, 10, 4, 0).to_pgm())?;
    let case = PatientCase {
        case_id: "dag".into(),
        inputs: BTreeMap::from([("img".to_string(), CaseInput { modality: Modality::Fundus2d, path: img })]),
        metadata: None,
        ground_truth: None,
    };
    let mut rng = StdRng::seed_from_u64(seed);
    let mut injections = 0;
    for d in 0..dags {
        let plan = random_dag(&mut rng);
        let summarizer = dag_summarizer(plan.steps.len());
        let config = OrchestratorConfig::with_workers(rng.random_range(1..=4));
        let run = |fault: Option<usize>, tag: &str| {
            execute_plan(&case, &plan, &dag_gateway(fault), &summarizer, &config, &tmp.path().join(format!("d{d}-{tag}")))
        };
        let (baseline, _) = run(None, "base")?;
        ensure!(baseline.len() == plan.steps.len(), "dag {d}: baseline lost indicators");
        let base: BTreeMap<String, IndicatorStatus> = baseline.iter().map(|r| (r.name.clone(), r.status)).collect();
        for k in 0..plan.steps.len() {
            injections += 1;
            let hit = descendants(&plan, k);
            let expect: BTreeMap<String, IndicatorStatus> = base
                .iter()
                .filter(|(name, _)| !hit.contains(&name[3..].parse::<usize>().unwrap()))
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            match run(Some(k), &format!("f{k}")) {
                Ok((results, ctx)) => {
                    let got: BTreeMap<String, IndicatorStatus> = results.iter().map(|r| (r.name.clone(), r.status)).collect();
                    ensure!(got == expect, "dag {d} fault {k}: {got:?} vs {expect:?}");
                    ensure!(ctx.failed_steps() == vec![k], "dag {d} fault {k}: failed {:?}", ctx.failed_steps());
                    let skipped: BTreeSet<usize> = ctx.skipped.iter().map(|s| s.step).collect();
                    let want_skipped: BTreeSet<usize> = hit.iter().copied().filter(|&i| i != k).collect();
                    ensure!(skipped == want_skipped, "dag {d} fault {k}: skipped {skipped:?}");
                    ensure!(ctx.omitted.len() == hit.len());
                }
                Err(OrchestratorError::NoIndicators { .. }) => {
                    ensure!(expect.is_empty(), "dag {d} fault {k}: lost independent indicators");
                }
                Err(e) => bail!("dag {d} fault {k}: {e}"),
            }
        }
    }
    Ok(format!("{dags} random DAGs, {injections} single-step faults, non-descendants unchanged"))
}

// ---------------------------------------------------------------- end to end

pub const GOLDEN_COUNTS: (u64, u64, u64, u64) = (8, 2, 2, 8);
pub const GOLDEN_MACC: f64 = 80.0;
pub const GOLDEN_F1: f64 = 80.0;
pub const GOLDEN_AUC: f64 = 0.86;

pub fn golden_run() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let set = synth::write_glaucoma_fixture(tmp.path(), &synth::glaucoma_golden_specs())?;
    let config = EngineConfig::load(&set.replay_config())?;
    let llm = config.llm.as_ref().context("replay config has an llm block")?;
    ensure!(llm.mode == diagflow::llm::LlmMode::Replay, "config is not in replay mode");
    let engine = Engine::from_config(config)?;
    let plan = engine.plan("glaucoma", diagflow::engine::PlanBackend::Llm)?;
    let cases = load_case_dir(&set.cases_dir())?;
    let report = run_batch(&engine, &cases, &plan, DeciderKind::Moe, IndeterminatePolicy::CountAsWrong, &tmp.path().join("runs"))?;
    let c = report.metrics.counts;
    ensure!((c.tp, c.fp, c.fn_, c.tn) == GOLDEN_COUNTS, "counts {c:?}");
    ensure!(report.metrics.macc == Some(GOLDEN_MACC), "mACC {:?}", report.metrics.macc);
    ensure!(report.metrics.f1 == GOLDEN_F1, "F1 {}", report.metrics.f1);
    ensure!(report.metrics.auc == Some(GOLDEN_AUC), "AUC {:?}", report.metrics.auc);
    let trap = report.metrics.auc_trapezoid.context("trapezoid AUC")?;
    ensure!((trap - GOLDEN_AUC).abs() <= 1e-9, "trapezoid AUC {trap}");
    Ok(format!(
        "{} cases via transcript replay: TP/FP/FN/TN {}/{}/{}/{}, mACC {:.1}, F1 {:.1}, AUC {}",
        cases.len(),
        c.tp,
        c.fp,
        c.fn_,
        c.tn,
        GOLDEN_MACC,
        GOLDEN_F1,
        GOLDEN_AUC
    ))
}

pub fn ablation_property() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let set = synth::write_glaucoma_fixture(tmp.path(), &synth::glaucoma_golden_specs())?;
    let engine = Engine::from_config(EngineConfig::load(&set.engine_config())?)?;
    let plan = engine.plan("glaucoma", diagflow::engine::PlanBackend::Template)?;
    let cases = load_case_dir(&set.cases_dir())?;
    let spec = AblationSpec::singles_and_full(&plan.indicator_names());
    let table = run_ablation(&engine, &cases, &plan, &spec, &tmp.path().join("runs"))?;
    let full = table
        .rows
        .iter()
        .find(|r| r.decider == AblationDecider::Moe && r.indicators.len() == plan.indicator_bindings.len())
        .and_then(|r| r.metrics.macc)
        .context("full MOE row")?;
    let singles: Vec<(String, f64)> = table
        .rows
        .iter()
        .filter(|r| r.decider == AblationDecider::Single)
        .map(|r| (r.indicators[0].clone(), r.metrics.macc.unwrap_or(f64::NAN)))
        .collect();
    ensure!(singles.len() == plan.indicator_bindings.len(), "missing single rows");
    for (name, m) in &singles {
        ensure!(*m < 100.0, "{name} alone is perfect, the fixture is not informative");
        ensure!(full > *m, "MOE {full} does not beat {name} {m}");
    }
    let best = singles.iter().map(|s| s.1).fold(f64::MIN, f64::max);
    Ok(format!("MOE mACC {full:.1} > best single {best:.1} ({singles:?})"))
}
