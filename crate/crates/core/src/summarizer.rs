//! Turns raw tool outputs into indicator statuses, by band and keyword rules
//! or by asking a chat model.
//!
//! Questions and rules are phrased so that "yes" means the pathological sign
//! is present.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::codec::{self, CodecError, ParseMode};
use crate::llm::{ChatClient, ChatError, ChatMessage};
use crate::model::{IndicatorStatus, Measurement, Unit};
use crate::prompts;

/// Tokens that negate a following yes-pattern.
pub const NEGATION_CUES: [&str; 3] = ["no", "without", "absent"];
pub const NEGATION_WINDOW: usize = 3;

const DEFAULT_RULES: &str = include_str!("../data/rules_v1.json");

/// `[lo, hi)`; the interval with the largest upper bound is closed on the right.
pub type Interval = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandRule {
    pub indicator: String,
    pub unit: Unit,
    pub normal: Interval,
    pub uncertain: Interval,
    pub abnormal: Interval,
}

impl BandRule {
    fn bands(&self) -> [(IndicatorStatus, Interval); 3] {
        [
            (IndicatorStatus::Normal, self.normal),
            (IndicatorStatus::Uncertain, self.uncertain),
            (IndicatorStatus::Abnormal, self.abnormal),
        ]
    }

    /// Valid range `[lo, hi]` covered by the three bands.
    pub fn range(&self) -> Interval {
        let b = self.bands();
        [
            b.iter().map(|(_, i)| i[0]).fold(f64::INFINITY, f64::min),
            b.iter().map(|(_, i)| i[1]).fold(f64::NEG_INFINITY, f64::max),
        ]
    }

    /// The bands must tile the range without gaps or overlaps.
    pub fn check(&self) -> Result<(), String> {
        let mut b = self.bands().to_vec();
        if b.iter().any(|(_, [lo, hi])| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(format!("{}: every band needs finite lo < hi", self.indicator));
        }
        b.sort_by(|x, y| x.1[0].total_cmp(&y.1[0]));
        for w in b.windows(2) {
            if w[0].1[1] != w[1].1[0] {
                return Err(format!(
                    "{}: {} band ends at {} but {} band starts at {}",
                    self.indicator, w[0].0, w[0].1[1], w[1].0, w[1].1[0]
                ));
            }
        }
        Ok(())
    }

    pub fn classify(&self, value: f64) -> Option<IndicatorStatus> {
        let top = self.range()[1];
        self.bands().into_iter().find_map(|(status, [lo, hi])| {
            (value >= lo && (value < hi || (hi == top && value == hi))).then_some(status)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordRule {
    pub indicator: String,
    pub yes_patterns: Vec<String>,
    pub no_patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub bands: Vec<BandRule>,
    pub keywords: Vec<KeywordRule>,
}

#[derive(Debug, thiserror::Error)]
pub enum SummaryError {
    #[error("no rule for indicator `{0}`")]
    NoRule(String),
    #[error("indicator `{indicator}` expects unit {expected}, got {got}")]
    UnitMismatch { indicator: String, expected: Unit, got: Unit },
    #[error("value {value} for `{indicator}` lies outside the rule's range")]
    OutOfRange { indicator: String, value: f64 },
    #[error("invalid rule file: {0}")]
    InvalidRules(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Chat(#[from] ChatError),
}

impl RuleSet {
    /// The shipped `v1` rule file.
    pub fn default_v1() -> Self {
        let rules: RuleSet = codec::from_json_strict(DEFAULT_RULES).expect("bundled rules parse");
        rules.validate().expect("bundled rules are valid");
        rules
    }

    pub fn load(path: &Path) -> Result<Self, SummaryError> {
        let rules: RuleSet = codec::read_json(path, ParseMode::Strict)?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn validate(&self) -> Result<(), SummaryError> {
        for band in &self.bands {
            band.check().map_err(SummaryError::InvalidRules)?;
        }
        for kw in &self.keywords {
            let all = kw.yes_patterns.iter().chain(&kw.no_patterns);
            if let Some(p) = all.clone().find(|p| p.is_empty() || p.to_lowercase() != **p) {
                return Err(SummaryError::InvalidRules(format!(
                    "{}: pattern `{p}` must be non-empty lowercase",
                    kw.indicator
                )));
            }
            if let Some(p) = kw.yes_patterns.iter().find(|p| kw.no_patterns.contains(p)) {
                return Err(SummaryError::InvalidRules(format!("{}: `{p}` is both a yes and a no pattern", kw.indicator)));
            }
        }
        Ok(())
    }

    pub fn band(&self, indicator: &str) -> Option<&BandRule> {
        self.bands.iter().find(|b| b.indicator == indicator)
    }

    pub fn keywords(&self, indicator: &str) -> Option<&KeywordRule> {
        self.keywords.iter().find(|k| k.indicator == indicator)
    }

    pub fn digest(&self) -> String {
        codec::json_digest(self)
    }
}

pub fn summarize_numeric(indicator: &str, value: &Measurement, rules: &RuleSet) -> Result<IndicatorStatus, SummaryError> {
    let band = rules.band(indicator).ok_or_else(|| SummaryError::NoRule(indicator.into()))?;
    if band.unit != value.unit {
        return Err(SummaryError::UnitMismatch { indicator: indicator.into(), expected: band.unit, got: value.unit });
    }
    band.classify(value.value)
        .ok_or_else(|| SummaryError::OutOfRange { indicator: indicator.into(), value: value.value })
}

fn negated(text: &str, at: usize) -> bool {
    let before: Vec<&str> = text[..at].unicode_words().collect();
    before.iter().rev().take(NEGATION_WINDOW).any(|t| NEGATION_CUES.contains(t))
}

pub fn summarize_text_rule(indicator: &str, text: &str, rules: &RuleSet) -> Result<IndicatorStatus, SummaryError> {
    let rule = rules.keywords(indicator).ok_or_else(|| SummaryError::NoRule(indicator.into()))?;
    let lower = text.to_lowercase();
    let mut yes = false;
    let mut no = rule.no_patterns.iter().any(|p| lower.contains(p.as_str()));
    for pattern in &rule.yes_patterns {
        for (at, _) in lower.match_indices(pattern.as_str()) {
            if negated(&lower, at) {
                no = true;
            } else {
                yes = true;
            }
        }
    }
    Ok(match (yes, no) {
        (true, false) => IndicatorStatus::Abnormal,
        (false, true) => IndicatorStatus::Normal,
        _ => IndicatorStatus::Uncertain,
    })
}

pub fn summarize_messages(indicator: &str, text: &str) -> Vec<ChatMessage> {
    vec![ChatMessage::user(prompts::fill(prompts::SUMMARIZE, &[("indicator", indicator), ("text", text)]))]
}

/// Maps a one-word reply to a status; anything else is uncertain.
pub fn parse_yes_no(reply: &str) -> IndicatorStatus {
    let word = reply.trim().trim_end_matches(['.', '!']).trim().to_lowercase();
    match word.as_str() {
        "yes" => IndicatorStatus::Abnormal,
        "no" => IndicatorStatus::Normal,
        _ => IndicatorStatus::Uncertain,
    }
}

pub fn summarize_text_llm(indicator: &str, text: &str, llm: &dyn ChatClient) -> Result<IndicatorStatus, SummaryError> {
    let reply = llm.chat(&summarize_messages(indicator, text))?;
    Ok(parse_yes_no(&reply))
}

/// Rule tables plus the text backend used for free-text findings.
#[derive(Clone)]
pub struct Summarizer {
    rules: RuleSet,
    llm: Option<Arc<dyn ChatClient>>,
}

impl std::fmt::Debug for Summarizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Summarizer")
            .field("rules", &self.rules.version)
            .field("text_backend", &if self.llm.is_some() { "llm" } else { "rules" })
            .finish()
    }
}

impl Summarizer {
    pub fn new(rules: RuleSet) -> Self {
        Self { rules, llm: None }
    }

    /// Free text goes to the chat model; numbers still use band rules.
    pub fn with_llm(rules: RuleSet, llm: Arc<dyn ChatClient>) -> Self {
        Self { rules, llm: Some(llm) }
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn numeric(&self, indicator: &str, value: &Measurement) -> Result<IndicatorStatus, SummaryError> {
        summarize_numeric(indicator, value, &self.rules)
    }

    pub fn text(&self, indicator: &str, text: &str) -> Result<IndicatorStatus, SummaryError> {
        match &self.llm {
            Some(llm) => summarize_text_llm(indicator, text, llm.as_ref()),
            None => summarize_text_rule(indicator, text, &self.rules),
        }
    }
}

impl Default for Summarizer {
    fn default() -> Self {
        Self::new(RuleSet::default_v1())
    }
}
