//! Versioned prompt templates with `{placeholder}` slots.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::{Captures, Regex};
use thiserror::Error;

pub const VERSION: &str = "v1";

pub const AGENT_SYSTEM: &str = include_str!("../../resources/prompts/v1/agent_system.txt");
pub const AUTONOMOUS_SYSTEM: &str = include_str!("../../resources/prompts/v1/autonomous_system.txt");
pub const SCRATCHPAD_UPDATE: &str = include_str!("../../resources/prompts/v1/scratchpad_update.txt");
pub const SITUATIONAL_PLANNING: &str =
    include_str!("../../resources/prompts/v1/situational_planning.txt");
pub const CHOOSE_ACTION: &str = include_str!("../../resources/prompts/v1/choose_action.txt");
pub const COMPOSE_MESSAGE: &str = include_str!("../../resources/prompts/v1/compose_message.txt");
pub const REPAIR: &str = include_str!("../../resources/prompts/v1/repair.txt");
pub const SIMULATED_HUMAN: &str = include_str!("../../resources/prompts/v1/simulated_human.txt");
pub const PENDING_QUESTION: &str = include_str!("../../resources/prompts/v1/pending_question.txt");
pub const INITIATIVE_JUDGE: &str = include_str!("../../resources/prompts/v1/initiative_judge.txt");

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template placeholder {{{0}}} has no value")]
    Missing(String),
}

fn slot() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("static regex"))
}

/// Fills every `{name}` slot in one pass, so substituted values are never
/// themselves scanned for placeholders.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
    let map: BTreeMap<&str, &str> = values.iter().copied().collect();
    let mut missing = None;
    let out = slot().replace_all(template, |c: &Captures| match map.get(&c[1]) {
        Some(v) => v.to_string(),
        None => {
            missing.get_or_insert_with(|| c[1].to_string());
            String::new()
        }
    });
    match missing {
        Some(name) => Err(TemplateError::Missing(name)),
        None => Ok(out.into_owned()),
    }
}

/// Slot names used by a template, in order of first appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut seen = Vec::new();
    for c in slot().captures_iter(template) {
        let name = c[1].to_string();
        if !seen.contains(&name) {
            seen.push(name);
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_are_not_rescanned() {
        let out = render("a {x} b", &[("x", "{y}")]).unwrap();
        assert_eq!(out, "a {y} b");
        assert_eq!(render("{x}{z}", &[("x", "1")]), Err(TemplateError::Missing("z".into())));
    }

    #[test]
    fn system_template_declares_the_documented_slots() {
        assert_eq!(
            placeholders(AGENT_SYSTEM),
            ["name", "team_members", "task_description", "scratchpad", "observation", "chat_history"]
        );
        assert_eq!(
            placeholders(SIMULATED_HUMAN),
            ["name", "task_description", "observation", "chat_history", "action_history", "hidden_info", "action_space"]
        );
    }
}
