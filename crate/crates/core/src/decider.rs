//! Final decision from indicator results: a weighted risk score with a
//! threshold, or a chat model reading the findings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecError, ParseMode};
use crate::knowledge::RetrievedCriterion;
use crate::llm::{ChatClient, ChatError, ChatMessage};
use crate::model::{encode_status, Diagnosis, DiagnosisLabel, IndicatorResult};
use crate::prompts;

pub const DEFAULT_THETA: f64 = 0.5;
pub const MOE_DECIDER_ID: &str = "moe";
pub const LLM_DECIDER_ID: &str = "llm";

fn default_theta() -> f64 {
    DEFAULT_THETA
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoeConfig {
    pub weights: BTreeMap<String, f64>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeOutcome {
    pub score: f64,
    pub label: DiagnosisLabel,
    pub contributions: BTreeMap<String, f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum DeciderError {
    #[error("no weight for indicator `{0}`")]
    UnknownIndicator(String),
    #[error("effective weights sum to zero")]
    DegenerateWeights,
    #[error("no indicators to decide on")]
    NoIndicators,
    #[error("invalid decider config: {0}")]
    InvalidConfig(String),
    #[error("could not parse weights from the model reply: {reason}")]
    WeightParse { reason: String, raw: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Chat(#[from] ChatError),
}

impl MoeConfig {
    pub fn new(weights: impl IntoIterator<Item = (String, f64)>, theta: f64) -> Result<Self, DeciderError> {
        let c = Self { weights: weights.into_iter().collect(), theta, normalize: true };
        c.validate()?;
        Ok(c)
    }

    /// Equal weights over `names`.
    pub fn uniform<S: AsRef<str>>(names: &[S], theta: f64) -> Self {
        let w = 1.0 / names.len().max(1) as f64;
        Self { weights: names.iter().map(|n| (n.as_ref().to_string(), w)).collect(), theta, normalize: true }
    }

    pub fn load(path: &Path) -> Result<Self, DeciderError> {
        let c: Self = codec::read_json(path, ParseMode::Strict)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), DeciderError> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(DeciderError::InvalidConfig(format!("theta {} outside [0, 1]", self.theta)));
        }
        if let Some((k, w)) = self.weights.iter().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
            return Err(DeciderError::InvalidConfig(format!("weight {w} for `{k}` must be finite and nonnegative")));
        }
        if !self.weights.values().any(|w| *w > 0.0) {
            return Err(DeciderError::InvalidConfig("at least one weight must be positive".into()));
        }
        Ok(())
    }

    /// Keeps only the named indicators; renormalization happens at scoring time.
    pub fn restrict<S: AsRef<str>>(&self, subset: &[S]) -> Self {
        let keep: Vec<&str> = subset.iter().map(AsRef::as_ref).collect();
        Self {
            weights: self.weights.iter().filter(|(k, _)| keep.contains(&k.as_str())).map(|(k, v)| (k.clone(), *v)).collect(),
            ..self.clone()
        }
    }
}

/// Weighted risk score over the present indicators; sick iff score >= theta.
pub fn moe_score(indicators: &[IndicatorResult], config: &MoeConfig) -> Result<MoeOutcome, DeciderError> {
    if indicators.is_empty() {
        return Err(DeciderError::NoIndicators);
    }
    let mut weights = Vec::with_capacity(indicators.len());
    for ind in indicators {
        let w = *config.weights.get(&ind.name).ok_or_else(|| DeciderError::UnknownIndicator(ind.name.clone()))?;
        weights.push(w);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(DeciderError::DegenerateWeights);
    }
    let scale = if config.normalize { total } else { 1.0 };
    let mut score = 0.0;
    let mut contributions = BTreeMap::new();
    for (ind, w) in indicators.iter().zip(&weights) {
        let c = (w / scale) * encode_status(ind.status);
        score += c;
        contributions.insert(ind.name.clone(), c);
    }
    let label = if score >= config.theta { DiagnosisLabel::Sick } else { DiagnosisLabel::Healthy };
    Ok(MoeOutcome { score, label, contributions })
}

pub fn moe_decide(indicators: &[IndicatorResult], config: &MoeConfig) -> Result<Diagnosis, DeciderError> {
    let outcome = moe_score(indicators, config)?;
    let cmp = if outcome.label == DiagnosisLabel::Sick { ">=" } else { "<" };
    let mut rationale = format!("risk score {} {cmp} theta {}:", outcome.score, config.theta);
    for ind in indicators {
        let _ = write!(rationale, " {}={} (+{});", ind.name, ind.status, outcome.contributions[&ind.name]);
    }
    Ok(Diagnosis {
        label: outcome.label,
        risk_score: Some(outcome.score),
        indicators: indicators.to_vec(),
        decider_id: MOE_DECIDER_ID.into(),
        rationale: rationale.trim_end_matches(';').to_string(),
        provenance: None,
    })
}

fn render_criteria(criteria: &[RetrievedCriterion]) -> String {
    if criteria.is_empty() {
        return "(none)".into();
    }
    criteria.iter().map(|c| format!("- {}", c.passage)).collect::<Vec<_>>().join("\n")
}

pub fn weight_messages<S: AsRef<str>>(disease_id: &str, names: &[S], criteria: &[RetrievedCriterion]) -> Vec<ChatMessage> {
    let names: Vec<&str> = names.iter().map(AsRef::as_ref).collect();
    let example = format!(
        "{{{}}}",
        names.iter().map(|n| format!("\"{n}\": 0.25")).collect::<Vec<_>>().join(", ")
    );
    vec![ChatMessage::user(prompts::fill(
        prompts::WEIGHTS,
        &[
            ("disease", disease_id),
            ("indicators", &names.join(", ")),
            ("criteria", &render_criteria(criteria)),
            ("example", &example),
        ],
    ))]
}

/// Reads `{name: weight, ...}` with or without quoted keys. Returns the map
/// and an optional theta entry.
pub fn parse_weight_map(reply: &str) -> Result<(BTreeMap<String, f64>, Option<f64>), String> {
    let start = reply.find('{').ok_or("no `{` in reply")?;
    let end = start + reply[start..].find('}').ok_or("unterminated object")?;
    let body = &reply[start + 1..end];
    let mut weights = BTreeMap::new();
    let mut theta = None;
    for entry in body.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let (k, v) = entry.split_once(':').ok_or_else(|| format!("entry `{entry}` lacks `:`"))?;
        let key = k.trim().trim_matches(|c| c == '"' || c == '\'').trim();
        let value: f64 = v.trim().parse().map_err(|_| format!("weight `{}` for `{key}` is not a number", v.trim()))?;
        if key.eq_ignore_ascii_case("theta") {
            theta = Some(value);
        } else if weights.insert(key.to_string(), value).is_some() {
            return Err(format!("`{key}` given twice"));
        }
    }
    Ok((weights, theta))
}

/// Asks the model for indicator weights; the result is validated and normalized.
pub fn assign_weights_llm<S: AsRef<str>>(
    disease_id: &str,
    names: &[S],
    criteria: &[RetrievedCriterion],
    llm: &dyn ChatClient,
    default_theta: f64,
) -> Result<MoeConfig, DeciderError> {
    let reply = llm.chat(&weight_messages(disease_id, names, criteria))?;
    let fail = |reason: String| DeciderError::WeightParse { reason, raw: reply.clone() };
    let (raw, theta) = parse_weight_map(&reply).map_err(&fail)?;
    let mut weights = BTreeMap::new();
    for (key, w) in raw {
        let name = names
            .iter()
            .map(AsRef::as_ref)
            .find(|n| n.eq_ignore_ascii_case(&key))
            .ok_or_else(|| fail(format!("unknown indicator `{key}`")))?;
        if !(w >= 0.0 && w.is_finite()) {
            return Err(fail(format!("weight {w} for `{name}` is negative or not finite")));
        }
        weights.insert(name.to_string(), w);
    }
    if let Some(missing) = names.iter().map(AsRef::as_ref).find(|n| !weights.contains_key(*n)) {
        return Err(fail(format!("no weight for `{missing}`")));
    }
    let total: f64 = weights.values().sum();
    if !(total > 0.0) {
        return Err(fail("weights sum to zero".into()));
    }
    weights.values_mut().for_each(|w| *w /= total);
    let theta = match theta {
        Some(t) if (0.0..=1.0).contains(&t) => t,
        Some(t) => {
            tracing::warn!(theta = t, "ignoring out-of-range theta from model");
            default_theta
        }
        None => default_theta,
    };
    Ok(MoeConfig { weights, theta, normalize: true })
}

/// Model weights, or uniform weights with a note when the reply is unusable.
pub fn weights_or_uniform<S: AsRef<str>>(
    disease_id: &str,
    names: &[S],
    criteria: &[RetrievedCriterion],
    llm: &dyn ChatClient,
    default_theta: f64,
) -> Result<(MoeConfig, Option<String>), DeciderError> {
    match assign_weights_llm(disease_id, names, criteria, llm, default_theta) {
        Ok(c) => Ok((c, None)),
        Err(DeciderError::WeightParse { reason, .. }) => {
            tracing::warn!(%reason, "falling back to uniform weights");
            Ok((MoeConfig::uniform(names, default_theta), Some(format!("uniform weights used: {reason}"))))
        }
        Err(e) => Err(e),
    }
}

fn render_findings(indicators: &[IndicatorResult]) -> String {
    let mut out = String::new();
    for ind in indicators {
        let _ = write!(out, "- {}: {}", ind.name, ind.status);
        if let Some(v) = ind.raw_value {
            let _ = write!(out, " (value {} {})", v.value, v.unit);
        }
        let notes: Vec<&str> = ind.evidence.iter().map(|e| e.description.as_str()).filter(|d| !d.is_empty()).collect();
        if !notes.is_empty() {
            let _ = write!(out, "; evidence: {}", notes.join(" | "));
        }
        out.push('\n');
    }
    out
}

pub fn decide_messages(indicators: &[IndicatorResult]) -> Vec<ChatMessage> {
    vec![ChatMessage::user(prompts::fill(prompts::DECIDE, &[("findings", render_findings(indicators).trim_end())]))]
}

/// First word of the reply: yes means sick, no means healthy, anything else
/// is indeterminate.
pub fn collapse_reply(reply: &str) -> DiagnosisLabel {
    let first = reply
        .split(|c: char| c.is_whitespace() || c.is_ascii_punctuation() || c == '\u{2014}')
        .find(|w| !w.is_empty())
        .unwrap_or("")
        .to_lowercase();
    match first.as_str() {
        "yes" => DiagnosisLabel::Sick,
        "no" => DiagnosisLabel::Healthy,
        _ => DiagnosisLabel::Indeterminate,
    }
}

pub fn decide_llm(indicators: &[IndicatorResult], llm: &dyn ChatClient) -> Result<Diagnosis, DeciderError> {
    if indicators.is_empty() {
        return Err(DeciderError::NoIndicators);
    }
    let reply = llm.chat(&decide_messages(indicators))?;
    Ok(Diagnosis {
        label: collapse_reply(&reply),
        risk_score: None,
        indicators: indicators.to_vec(),
        decider_id: LLM_DECIDER_ID.into(),
        rationale: reply,
        provenance: None,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::model::IndicatorStatus::{self, *};

    fn ind(name: &str, status: IndicatorStatus) -> IndicatorResult {
        IndicatorResult { name: name.into(), status, raw_value: None, evidence: vec![], tool_id: "t".into() }
    }

    fn glaucoma_weights() -> MoeConfig {
        MoeConfig::new(
            [("vCDR", 0.4), ("rim_thickness", 0.2), ("ppa", 0.2), ("disc_hemorrhage", 0.2)].map(|(k, v)| (k.to_string(), v)),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn worked_example() {
        let inds = [ind("vCDR", Abnormal), ind("rim_thickness", Normal), ind("ppa", Uncertain), ind("disc_hemorrhage", Abnormal)];
        let out = moe_score(&inds, &glaucoma_weights()).unwrap();
        assert!((out.score - 0.7).abs() < 1e-12);
        assert_eq!(out.label, DiagnosisLabel::Sick);
    }

    #[test]
    fn all_normal_is_healthy() {
        let inds = [ind("vCDR", Normal), ind("ppa", Normal)];
        let mut c = glaucoma_weights();
        c.theta = 1e-9;
        assert_eq!(moe_score(&inds, &c).unwrap().score, 0.0);
        assert_eq!(moe_score(&inds, &c).unwrap().label, DiagnosisLabel::Healthy);
    }

    #[test]
    fn boundary_inclusive() {
        let c = MoeConfig::new([("a".to_string(), 1.0), ("b".to_string(), 1.0)], 0.5).unwrap();
        let out = moe_score(&[ind("a", Abnormal), ind("b", Normal)], &c).unwrap();
        assert_eq!(out.score, 0.5);
        assert_eq!(out.label, DiagnosisLabel::Sick);
    }

    #[test]
    fn errors() {
        let c = glaucoma_weights();
        assert!(matches!(moe_score(&[], &c), Err(DeciderError::NoIndicators)));
        assert!(matches!(moe_score(&[ind("iop", Normal)], &c), Err(DeciderError::UnknownIndicator(_))));
        let z = MoeConfig { weights: BTreeMap::from([("a".into(), 0.0), ("b".into(), 1.0)]), theta: 0.5, normalize: true };
        assert!(matches!(moe_score(&[ind("a", Abnormal)], &z), Err(DeciderError::DegenerateWeights)));
        assert!(MoeConfig::new([("a".to_string(), -1.0)], 0.5).is_err());
        assert!(MoeConfig::new([("a".to_string(), 1.0)], 1.5).is_err());
    }

    #[test]
    fn weight_map_parsing() {
        let (w, t) = parse_weight_map("Sure: {vCDR:0.4, RT:0.2, \"PPA\": 0.2, 'DH':0.2}").unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w["RT"], 0.2);
        assert_eq!(t, None);
        let (_, t) = parse_weight_map("{a: 1, theta: 0.3}").unwrap();
        assert_eq!(t, Some(0.3));
        assert!(parse_weight_map("weights are equal").is_err());
        assert!(parse_weight_map("{a: high}").is_err());
    }

    #[test]
    fn reply_collapse() {
        assert_eq!(collapse_reply("yes \u{2014} elevated vCDR and hemorrhage"), DiagnosisLabel::Sick);
        assert_eq!(collapse_reply("Yes, the findings indicate glaucoma."), DiagnosisLabel::Sick);
        assert_eq!(collapse_reply("no"), DiagnosisLabel::Healthy);
        assert_eq!(collapse_reply("I cannot give a clear diagnosis from these findings."), DiagnosisLabel::Indeterminate);
        assert_eq!(collapse_reply(""), DiagnosisLabel::Indeterminate);
        assert_eq!(collapse_reply("nonetheless yes"), DiagnosisLabel::Indeterminate);
    }

    fn arb_status() -> impl Strategy<Value = IndicatorStatus> {
        prop_oneof![Just(Abnormal), Just(Uncertain), Just(Normal)]
    }

    proptest! {
        #[test]
        fn scaling_weights_changes_nothing(
            ws in proptest::collection::vec(0.01f64..10.0, 1..6),
            statuses in proptest::collection::vec(arb_status(), 6),
            c in 0.01f64..100.0,
            theta in 0.0f64..=1.0,
        ) {
            let names: Vec<String> = (0..ws.len()).map(|i| format!("i{i}")).collect();
            let inds: Vec<_> = names.iter().zip(&statuses).map(|(n, s)| ind(n, *s)).collect();
            let a = MoeConfig::new(names.iter().cloned().zip(ws.iter().copied()), theta).unwrap();
            let b = MoeConfig::new(names.iter().cloned().zip(ws.iter().map(|w| w * c)), theta).unwrap();
            let (oa, ob) = (moe_score(&inds, &a).unwrap(), moe_score(&inds, &b).unwrap());
            prop_assert!((oa.score - ob.score).abs() < 1e-12);
            if (oa.score - theta).abs() > 1e-12 {
                prop_assert_eq!(oa.label, ob.label);
            }
        }

        #[test]
        fn raising_one_status_never_lowers_label(
            ws in proptest::collection::vec(0.0f64..10.0, 1..6),
            statuses in proptest::collection::vec(arb_status(), 6),
            k in 0usize..6,
            theta in 0.0f64..=1.0,
        ) {
            prop_assume!(ws.iter().any(|w| *w > 0.0));
            let names: Vec<String> = (0..ws.len()).map(|i| format!("i{i}")).collect();
            let mut inds: Vec<_> = names.iter().zip(&statuses).map(|(n, s)| ind(n, *s)).collect();
            let cfg = MoeConfig::new(names.iter().cloned().zip(ws.iter().copied()), theta).unwrap();
            let before = moe_score(&inds, &cfg).unwrap();
            let k = k % inds.len();
            inds[k].status = match inds[k].status { Normal => Uncertain, _ => Abnormal };
            let after = moe_score(&inds, &cfg).unwrap();
            prop_assert!(after.score >= before.score - 1e-12);
            if before.label == DiagnosisLabel::Sick && (after.score - theta).abs() > 1e-12 {
                prop_assert_eq!(after.label, DiagnosisLabel::Sick);
            }
        }

        #[test]
        fn contributions_sum_to_score(
            ws in proptest::collection::vec(0.01f64..10.0, 1..6),
            statuses in proptest::collection::vec(arb_status(), 6),
        ) {
            let names: Vec<String> = (0..ws.len()).map(|i| format!("i{i}")).collect();
            let inds: Vec<_> = names.iter().zip(&statuses).map(|(n, s)| ind(n, *s)).collect();
            let cfg = MoeConfig::new(names.iter().cloned().zip(ws.iter().copied()), 0.5).unwrap();
            let out = moe_score(&inds, &cfg).unwrap();
            prop_assert!((out.contributions.values().sum::<f64>() - out.score).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&out.score));
        }
    }
}
