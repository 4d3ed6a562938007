//! Classification metrics, batch evaluation and indicator-subset ablation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decider::{self, moe_score, DeciderError, MoeConfig};
use crate::engine::{DeciderKind, Engine, EngineError};
use crate::model::{DiagnosisLabel, GroundTruth, IndicatorResult, IndicatorStatus, PatientCase};
use crate::plan::DiagnosticPlan;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("one class has no members")]
    ClassEmpty,
    #[error("no cases to evaluate")]
    EmptyBatch,
    #[error("case `{0}` has no ground truth")]
    MissingGroundTruth(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Decider(#[from] DeciderError),
}

/// What to do with indeterminate labels when counting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndeterminatePolicy {
    Exclude,
    #[default]
    CountAsWrong,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Adds one prediction; returns false when the case was excluded.
    pub fn record(&mut self, truth: GroundTruth, label: DiagnosisLabel, policy: IndeterminatePolicy) -> bool {
        let predicted_sick = match (label, policy) {
            (DiagnosisLabel::Sick, _) => true,
            (DiagnosisLabel::Healthy, _) => false,
            (DiagnosisLabel::Indeterminate, IndeterminatePolicy::Exclude) => return false,
            // a wrong answer for either class
            (DiagnosisLabel::Indeterminate, IndeterminatePolicy::CountAsWrong) => truth == GroundTruth::Healthy,
        };
        match (truth, predicted_sick) {
            (GroundTruth::Sick, true) => self.tp += 1,
            (GroundTruth::Sick, false) => self.fn_ += 1,
            (GroundTruth::Healthy, true) => self.fp += 1,
            (GroundTruth::Healthy, false) => self.tn += 1,
        }
        true
    }

    pub fn from_labels(
        rows: impl IntoIterator<Item = (GroundTruth, DiagnosisLabel)>,
        policy: IndeterminatePolicy,
    ) -> Self {
        let mut c = Self::default();
        for (truth, label) in rows {
            c.record(truth, label, policy);
        }
        c
    }
}

/// Mean of sensitivity and specificity, in percent.
pub fn macc(c: &ConfusionCounts) -> Result<f64, EvalError> {
    let pos = c.tp + c.fn_;
    let neg = c.tn + c.fp;
    if pos == 0 || neg == 0 {
        return Err(EvalError::ClassEmpty);
    }
    let sens = c.tp as f64 / pos as f64;
    let spec = c.tn as f64 / neg as f64;
    Ok(100.0 * (sens + spec) / 2.0)
}

/// F1 of the sick class in percent; 0 when undefined.
pub fn f1(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        100.0 * (2 * c.tp) as f64 / denom as f64
    }
}

fn split(scores: &[(f64, GroundTruth)]) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    let sick: Vec<f64> = scores.iter().filter(|(_, t)| *t == GroundTruth::Sick).map(|(s, _)| *s).collect();
    let healthy: Vec<f64> = scores.iter().filter(|(_, t)| *t == GroundTruth::Healthy).map(|(s, _)| *s).collect();
    if sick.is_empty() || healthy.is_empty() {
        return Err(EvalError::ClassEmpty);
    }
    Ok((sick, healthy))
}

/// Mann-Whitney estimate: share of (sick, healthy) pairs ranked correctly,
/// ties counting one half.
pub fn auc(scores: &[(f64, GroundTruth)]) -> Result<f64, EvalError> {
    let (sick, healthy) = split(scores)?;
    let mut wins = 0.0;
    for s in &sick {
        for h in &healthy {
            wins += if s > h {
                1.0
            } else if s == h {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (sick.len() * healthy.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Cases with score >= threshold are called sick.
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC curve from (0, 0) to (1, 1), one point per distinct score.
pub fn roc_points(scores: &[(f64, GroundTruth)]) -> Result<Vec<RocPoint>, EvalError> {
    let (sick, healthy) = split(scores)?;
    let mut sorted: Vec<(f64, GroundTruth)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (sick.len() as f64, healthy.len() as f64);
    let mut points = vec![RocPoint { threshold: f64::INFINITY, tpr: 0.0, fpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            match sorted[i].1 {
                GroundTruth::Sick => tp += 1,
                GroundTruth::Healthy => fp += 1,
            }
            i += 1;
        }
        points.push(RocPoint { threshold: t, tpr: tp as f64 / np, fpr: fp as f64 / nn });
    }
    Ok(points)
}

/// Area under the ROC curve by the trapezoid rule.
pub fn auc_trapezoid(scores: &[(f64, GroundTruth)]) -> Result<f64, EvalError> {
    let pts = roc_points(scores)?;
    Ok(pts.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum())
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,tpr,fpr\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.tpr, p.fpr);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub ground_truth: GroundTruth,
    pub label: DiagnosisLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_score: Option<f64>,
    pub statuses: BTreeMap<String, IndicatorStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub counts: ConfusionCounts,
    pub macc: Option<f64>,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_trapezoid: Option<f64>,
}

impl MetricSummary {
    pub fn from_rows(rows: &[CaseRow], policy: IndeterminatePolicy) -> Self {
        let counts = ConfusionCounts::from_labels(rows.iter().map(|r| (r.ground_truth, r.label)), policy);
        let scored: Vec<(f64, GroundTruth)> =
            rows.iter().filter_map(|r| r.risk_score.map(|s| (s, r.ground_truth))).collect();
        let all_scored = !scored.is_empty() && scored.len() == rows.len();
        Self {
            counts,
            macc: macc(&counts).ok(),
            f1: f1(&counts),
            auc: all_scored.then(|| auc(&scored).ok()).flatten(),
            auc_trapezoid: all_scored.then(|| auc_trapezoid(&scored).ok()).flatten(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub disease_id: String,
    pub decider: String,
    pub policy: IndeterminatePolicy,
    pub plan_digest: String,
    pub rules_version: String,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moe: Option<MoeConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub metrics: MetricSummary,
    pub cases: Vec<CaseRow>,
}

impl EvalReport {
    pub fn roc(&self) -> Option<Vec<RocPoint>> {
        let scored: Vec<(f64, GroundTruth)> =
            self.cases.iter().filter_map(|r| r.risk_score.map(|s| (s, r.ground_truth))).collect();
        roc_points(&scored).ok()
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{} | decider {} | plan {} | rules {}\n",
            self.disease_id,
            self.decider,
            &self.plan_digest[..12.min(self.plan_digest.len())],
            self.rules_version
        );
        let _ = writeln!(out, "{:<12} {:<8} {:<14} {:>8}", "case", "truth", "label", "score");
        for r in &self.cases {
            let score = r.risk_score.map_or("-".to_string(), |s| format!("{s:.4}"));
            let _ = writeln!(out, "{:<12} {:<8} {:<14} {:>8}", r.case_id, truth_str(r.ground_truth), r.label.to_string(), score);
        }
        out.push_str(&render_metrics(&self.metrics));
        out
    }
}

fn truth_str(t: GroundTruth) -> &'static str {
    match t {
        GroundTruth::Sick => "sick",
        GroundTruth::Healthy => "healthy",
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.digits$}"))
}

fn render_metrics(m: &MetricSummary) -> String {
    let c = m.counts;
    format!(
        "tp={} fp={} fn={} tn={}  mACC={}  F1={:.1}  AUC={}\n",
        c.tp,
        c.fp,
        c.fn_,
        c.tn,
        fmt_opt(m.macc, 1),
        m.f1,
        fmt_opt(m.auc, 4)
    )
}

fn check_batch(cases: &[PatientCase]) -> Result<(), EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyBatch);
    }
    if let Some(c) = cases.iter().find(|c| c.ground_truth.is_none()) {
        return Err(EvalError::MissingGroundTruth(c.case_id.clone()));
    }
    Ok(())
}

/// Diagnoses every case (in parallel) and aggregates the metrics.
pub fn run_batch(
    engine: &Engine,
    cases: &[PatientCase],
    plan: &DiagnosticPlan,
    decider: DeciderKind,
    policy: IndeterminatePolicy,
    runs_dir: &Path,
) -> Result<EvalReport, EvalError> {
    check_batch(cases)?;
    let (moe, note) = engine.moe_config_for(plan)?;
    let rows: Vec<CaseRow> = cases
        .par_iter()
        .map(|case| {
            let truth = case.ground_truth.expect("checked above");
            let run_dir = runs_dir.join(&case.case_id);
            match engine.diagnose_with(case, plan, decider, &moe, note.as_deref(), &run_dir) {
                Ok(run) => CaseRow {
                    case_id: case.case_id.clone(),
                    ground_truth: truth,
                    label: run.diagnosis.label,
                    risk_score: run.diagnosis.risk_score,
                    statuses: statuses(&run.diagnosis.indicators),
                    error: None,
                },
                Err(e) => {
                    tracing::warn!(case_id = %case.case_id, error = %e, "case failed");
                    CaseRow {
                        case_id: case.case_id.clone(),
                        ground_truth: truth,
                        label: DiagnosisLabel::Indeterminate,
                        risk_score: None,
                        statuses: BTreeMap::new(),
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let metrics = MetricSummary::from_rows(&rows, policy);
    Ok(EvalReport {
        disease_id: plan.disease_id.clone(),
        decider: decider.as_str().into(),
        policy,
        plan_digest: plan.digest(),
        rules_version: engine.summarizer().rules().version.clone(),
        config_digest: engine.config_digest().into(),
        moe: (decider == DeciderKind::Moe).then_some(moe),
        notes: note.into_iter().collect(),
        metrics,
        cases: rows,
    })
}

fn statuses(indicators: &[IndicatorResult]) -> BTreeMap<String, IndicatorStatus> {
    indicators.iter().map(|i| (i.name.clone(), i.status)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationDecider {
    Moe,
    Llm,
    Single,
}

impl AblationDecider {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationDecider::Moe => "moe",
            AblationDecider::Llm => "llm",
            AblationDecider::Single => "single",
        }
    }
}

fn default_uncertain() -> DiagnosisLabel {
    DiagnosisLabel::Healthy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub indicator_subsets: Vec<Vec<String>>,
    pub deciders: Vec<AblationDecider>,
    /// Label given to `uncertain` in single-indicator rows.
    #[serde(default = "default_uncertain")]
    pub single_uncertain_as: DiagnosisLabel,
    #[serde(default)]
    pub policy: IndeterminatePolicy,
}

impl AblationSpec {
    /// Every singleton with `single`, plus the full set with `moe`.
    pub fn singles_and_full<S: AsRef<str>>(indicators: &[S]) -> Self {
        let mut subsets: Vec<Vec<String>> = indicators.iter().map(|i| vec![i.as_ref().to_string()]).collect();
        subsets.push(indicators.iter().map(|i| i.as_ref().to_string()).collect());
        Self {
            indicator_subsets: subsets,
            deciders: vec![AblationDecider::Single, AblationDecider::Moe],
            single_uncertain_as: DiagnosisLabel::Healthy,
            policy: IndeterminatePolicy::CountAsWrong,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.indicator_subsets.is_empty() || self.deciders.is_empty() {
            return Err(EvalError::Precondition("ablation needs at least one subset and one decider".into()));
        }
        if self.indicator_subsets.iter().any(Vec::is_empty) {
            return Err(EvalError::Precondition("indicator subsets must be nonempty".into()));
        }
        if self.single_uncertain_as == DiagnosisLabel::Indeterminate {
            return Err(EvalError::Precondition("uncertain must map to sick or healthy".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub indicators: Vec<String>,
    pub decider: AblationDecider,
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub disease_id: String,
    pub plan_digest: String,
    pub rules_version: String,
    pub config_digest: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let mut out = format!("{} ablation | rules {}\n", self.disease_id, self.rules_version);
        let _ = writeln!(out, "{:<48} {:<8} {:>7} {:>7}", "indicators", "decider", "mACC", "F1");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<48} {:<8} {:>7} {:>7.1}",
                r.indicators.join("+"),
                r.decider.as_str(),
                fmt_opt(r.metrics.macc, 1),
                r.metrics.f1
            );
        }
        out
    }
}

/// Label from one indicator taken directly as the outcome.
pub fn single_indicator_label(status: IndicatorStatus, uncertain_as: DiagnosisLabel) -> DiagnosisLabel {
    match status {
        IndicatorStatus::Abnormal => DiagnosisLabel::Sick,
        IndicatorStatus::Normal => DiagnosisLabel::Healthy,
        IndicatorStatus::Uncertain => uncertain_as,
    }
}

/// Runs each case once, then scores every (subset, decider) row on the
/// collected indicators.
pub fn run_ablation(
    engine: &Engine,
    cases: &[PatientCase],
    plan: &DiagnosticPlan,
    spec: &AblationSpec,
    runs_dir: &Path,
) -> Result<AblationTable, EvalError> {
    check_batch(cases)?;
    spec.validate()?;
    for (subset, d) in spec.indicator_subsets.iter().flat_map(|s| spec.deciders.iter().map(move |d| (s, d))) {
        if *d == AblationDecider::Single && subset.len() != 1 {
            continue;
        }
        if let Some(unknown) = subset.iter().find(|n| !plan.indicator_bindings.contains_key(*n)) {
            return Err(EvalError::Precondition(format!("plan has no indicator `{unknown}`")));
        }
    }
    let (moe, _) = engine.moe_config_for(plan)?;
    let collected: Vec<(GroundTruth, Option<Vec<IndicatorResult>>)> = cases
        .par_iter()
        .map(|case| {
            let indicators = engine.run_case(case, plan, &runs_dir.join(&case.case_id)).map(|(i, _)| i).ok();
            (case.ground_truth.expect("checked above"), indicators)
        })
        .collect();

    let mut rows = Vec::new();
    for subset in &spec.indicator_subsets {
        for &d in &spec.deciders {
            if d == AblationDecider::Single && subset.len() != 1 {
                continue;
            }
            let restricted = moe.restrict(subset);
            let mut case_rows = Vec::with_capacity(cases.len());
            for ((truth, inds), case) in collected.iter().zip(cases) {
                let kept: Vec<IndicatorResult> = inds
                    .iter()
                    .flatten()
                    .filter(|i| subset.contains(&i.name))
                    .cloned()
                    .collect();
                let (label, score) = if kept.is_empty() {
                    (DiagnosisLabel::Indeterminate, None)
                } else {
                    match d {
                        AblationDecider::Single => (single_indicator_label(kept[0].status, spec.single_uncertain_as), None),
                        AblationDecider::Moe => {
                            let o = moe_score(&kept, &restricted)?;
                            (o.label, Some(o.score))
                        }
                        AblationDecider::Llm => {
                            let llm = engine.llm().ok_or(EngineError::NoLlm)?;
                            (decider::decide_llm(&kept, llm.as_ref())?.label, None)
                        }
                    }
                };
                case_rows.push(CaseRow {
                    case_id: case.case_id.clone(),
                    ground_truth: *truth,
                    label,
                    risk_score: score,
                    statuses: statuses(&kept),
                    error: None,
                });
            }
            rows.push(AblationRow {
                indicators: subset.clone(),
                decider: d,
                metrics: MetricSummary::from_rows(&case_rows, spec.policy),
            });
        }
    }
    Ok(AblationTable {
        disease_id: plan.disease_id.clone(),
        plan_digest: plan.digest(),
        rules_version: engine.summarizer().rules().version.clone(),
        config_digest: engine.config_digest().into(),
        rows,
    })
}
