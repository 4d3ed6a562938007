//! Versioned prompt templates. Placeholders are `{name}`.

pub const PLAN_SYSTEM: &str = include_str!("../prompts/plan_system_v1.txt");
pub const PLAN_USER: &str = include_str!("../prompts/plan_user_v1.txt");
pub const PLAN_REPAIR: &str = include_str!("../prompts/plan_repair_v1.txt");
pub const WEIGHTS: &str = include_str!("../prompts/weights_v1.txt");
pub const DECIDE: &str = include_str!("../prompts/decide_v1.txt");
pub const SUMMARIZE: &str = include_str!("../prompts/summarize_v1.txt");

pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}
