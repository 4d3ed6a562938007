//! Plan compilation through a chat model, plus the line-oriented plan block
//! format the model is asked to produce.
//!
//! ```text
//! input fundus : fundus-2d
//! fundus | cup_disc_seg | segment | cup_disc_mask | target=optic_cup_disc
//! cup_disc_mask + fundus | disc_crop | crop | peripapillary_crop | margin_factor=1.5
//! indicator vCDR = vcdr
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use indexmap::IndexMap;

use super::{validate_plan, DiagnosticPlan, PlanError, PlanStep, ToolDescriptor};
use crate::knowledge::RetrievedCriterion;
use crate::llm::{ChatClient, ChatMessage};
use crate::model::Modality;
use crate::prompts;

pub const PLAN_PROMPT_VERSION: &str = "plan_v1";

fn parse_err(reason: impl Into<String>, raw: &str) -> PlanError {
    PlanError::Parse { reason: reason.into(), raw: raw.to_string() }
}

fn fenced_block(text: &str) -> Option<Vec<&str>> {
    let lines: Vec<&str> = text.lines().collect();
    let open = lines
        .iter()
        .position(|l| l.trim_start().starts_with("```plan"))
        .or_else(|| lines.iter().position(|l| l.trim() == "```"))?;
    let close = lines[open + 1..].iter().position(|l| l.trim_start().starts_with("```"))?;
    Some(lines[open + 1..open + 1 + close].to_vec())
}

/// Extracts and parses the fenced plan block from a model reply.
pub fn parse_plan_block(disease_id: &str, text: &str) -> Result<DiagnosticPlan, PlanError> {
    let block = fenced_block(text).ok_or_else(|| parse_err("no fenced plan block", text))?;
    let mut declared_inputs = IndexMap::new();
    let mut bindings = IndexMap::new();
    let mut steps = Vec::new();
    for line in block.iter().map(|l| l.trim()).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        if let Some(rest) = line.strip_prefix("input ") {
            let (name, modality) = rest
                .split_once(':')
                .ok_or_else(|| parse_err(format!("malformed input line `{line}`"), text))?;
            let modality: Modality = modality.trim().parse().map_err(|e| parse_err(format!("{e}"), text))?;
            declared_inputs.insert(name.trim().to_string(), modality);
        } else if let Some(rest) = line.strip_prefix("indicator ") {
            let (name, artifact) = rest
                .split_once('=')
                .ok_or_else(|| parse_err(format!("malformed indicator line `{line}`"), text))?;
            bindings.insert(name.trim().to_string(), artifact.trim().to_string());
        } else {
            steps.push(parse_step(line).map_err(|reason| parse_err(reason, text))?);
        }
    }
    if steps.is_empty() {
        return Err(parse_err("plan block has no steps", text));
    }
    Ok(DiagnosticPlan {
        disease_id: disease_id.to_string(),
        declared_inputs,
        steps,
        indicator_bindings: bindings,
        criteria: Vec::new(),
    })
}

fn parse_step(line: &str) -> Result<PlanStep, String> {
    let fields: Vec<&str> = line.split('|').map(str::trim).collect();
    if fields.len() < 4 {
        return Err(format!("step line needs at least 4 fields: `{line}`"));
    }
    let objects: Vec<&str> = fields[0].split('+').map(str::trim).filter(|s| !s.is_empty()).collect();
    if objects.is_empty() || fields[1..4].iter().any(|f| f.is_empty()) {
        return Err(format!("empty field in step line `{line}`"));
    }
    let mut params = BTreeMap::new();
    for pair in fields[4..].iter().flat_map(|f| f.split(',')).map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').ok_or_else(|| format!("malformed parameter `{pair}`"))?;
        params.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(PlanStep {
        object: objects[0].to_string(),
        with: objects[1..].iter().map(|s| s.to_string()).collect(),
        tool: fields[1].to_string(),
        action: fields[2].to_string(),
        produces: fields[3].to_string(),
        params,
    })
}

/// Renders a plan in the block format accepted by [`parse_plan_block`].
pub fn render_plan_block(plan: &DiagnosticPlan) -> String {
    let mut out = String::from("```plan\n");
    for (name, modality) in &plan.declared_inputs {
        let _ = writeln!(out, "input {name} : {modality}");
    }
    for step in &plan.steps {
        let objects: Vec<&str> = step.inputs().collect();
        let _ = write!(out, "{} | {} | {} | {}", objects.join(" + "), step.tool, step.action, step.produces);
        if !step.params.is_empty() {
            let params: Vec<String> = step.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = write!(out, " | {}", params.join(", "));
        }
        out.push('\n');
    }
    for (name, artifact) in &plan.indicator_bindings {
        let _ = writeln!(out, "indicator {name} = {artifact}");
    }
    out.push_str("```\n");
    out
}

fn render_criteria(criteria: &[RetrievedCriterion]) -> String {
    if criteria.is_empty() {
        return "(none retrieved)".into();
    }
    criteria
        .iter()
        .map(|c| format!("[{} {}-{}] {}", c.doc_id, c.span.0, c.span.1, c.passage))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_tools(registry: &[ToolDescriptor]) -> String {
    registry
        .iter()
        .map(|t| format!("- {} ({}): accepts {} -> produces {}", t.tool_id, t.kind, t.accepts.join(", "), t.produces))
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn plan_messages(
    criteria: &[RetrievedCriterion],
    registry: &[ToolDescriptor],
    disease_id: &str,
) -> Vec<ChatMessage> {
    let user = prompts::fill(
        prompts::PLAN_USER,
        &[
            ("disease", disease_id),
            ("criteria", &render_criteria(criteria)),
            ("tools", &render_tools(registry)),
        ],
    );
    vec![ChatMessage::system(prompts::PLAN_SYSTEM), ChatMessage::user(user)]
}

/// Asks the model for a plan, validates it, and allows one repair round.
pub fn compile_plan_llm(
    criteria: &[RetrievedCriterion],
    registry: &[ToolDescriptor],
    disease_id: &str,
    llm: &dyn ChatClient,
) -> Result<DiagnosticPlan, PlanError> {
    if registry.is_empty() {
        return Err(PlanError::EmptyRegistry);
    }
    let mut messages = plan_messages(criteria, registry, disease_id);
    let reply = llm.chat(&messages)?;
    let mut plan = parse_plan_block(disease_id, &reply)?;
    let report = validate_plan(&plan, registry);
    if !report.is_valid() {
        tracing::info!(disease_id, findings = report.findings.len(), "plan invalid, requesting repair");
        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(prompts::fill(
            prompts::PLAN_REPAIR,
            &[("findings", report.to_string().trim_end())],
        )));
        let reply = llm.chat(&messages)?;
        plan = parse_plan_block(disease_id, &reply)?;
        let report = validate_plan(&plan, registry);
        if !report.is_valid() {
            return Err(PlanError::Invalid(report));
        }
    }
    plan.criteria = criteria.to_vec();
    Ok(plan)
}
