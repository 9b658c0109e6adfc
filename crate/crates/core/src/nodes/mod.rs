//! Team nodes: decision-makers that listen on `{role}/obs` and publish
//! actions on `step`.

pub mod backend;
mod context;
mod node;
pub mod prompts;
mod simulated;

pub use backend::{
    Backend, BackendError, DecodingParams, HttpBackend, Prompt, RecordingBackend, ReplayBackend,
    ScriptRule, ScriptedBackend, Transcript,
};
pub use context::{render_action_space, DecisionContext, NodeBrief};
pub use node::{
    latest_payload, node_loop, subscribe_node, Decision, Policy, PolicyError, RetryPolicy,
    ScriptedPolicy, TeamNode,
};
pub use simulated::{HumanAction, HumanActionType, SimulatedHuman};

/// Text following the last line that starts with `label` (case-insensitive),
/// including any lines after it. Falls back to the last occurrence anywhere.
pub fn labelled(output: &str, label: &str) -> Option<String> {
    let lower = output.to_lowercase();
    let needle = label.to_lowercase();
    let mut offset = 0;
    let mut at_line_start = None;
    for line in lower.split_inclusive('\n') {
        let indent = line.len() - line.trim_start().len();
        if line[indent..].starts_with(&needle) {
            at_line_start = Some(offset + indent);
        }
        offset += line.len();
    }
    let start = at_line_start.or_else(|| lower.rfind(&needle))?;
    // Lowercasing can shift byte offsets for non-ASCII text; bail out if so.
    if lower.len() != output.len() {
        return output.rfind(label).map(|i| output[i + label.len()..].trim().to_string());
    }
    Some(output[start + label.len()..].trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::labelled;

    #[test]
    fn labelled_takes_the_last_line_label_and_keeps_following_lines() {
        let out = "Thought: x\nAction type: Finish\nAction: EDITOR_UPDATE(text=a\nb)";
        assert_eq!(labelled(out, "Action:").unwrap(), "EDITOR_UPDATE(text=a\nb)");
        assert_eq!(labelled(out, "Action type:").unwrap(), "Finish\nAction: EDITOR_UPDATE(text=a\nb)");
        assert_eq!(labelled("Thought: wait. Plan: 3. Do nothing", "plan:").unwrap(), "3. Do nothing");
        assert_eq!(labelled("nothing here", "Plan:"), None);
    }
}
