use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::bus::ChatMessage;
use crate::env::Role;
use crate::nodes::{prompts, Backend, DecodingParams, Prompt};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitiativeLabel {
    pub message_index: usize,
    pub sender: Role,
    pub takes_initiative: bool,
    pub judge: String,
}

/// Decides whether one chat utterance takes initiative.
pub trait InitiativeJudge: Send + Sync {
    fn id(&self) -> &str;
    fn judge(&self, utterance: &str) -> bool;
}

/// One label per message, in chat order.
pub fn label_chat(chat: &[ChatMessage], judge: &dyn InitiativeJudge) -> Vec<InitiativeLabel> {
    chat.iter()
        .enumerate()
        .map(|(i, m)| InitiativeLabel {
            message_index: i,
            sender: m.sender.clone(),
            takes_initiative: judge.judge(&m.text),
            judge: judge.id().to_string(),
        })
        .collect()
}

/// Deterministic keyword judge. Proposals and concrete statements or
/// questions count; acknowledgements, fillers and clarification requests
/// do not.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedJudge;

const DIRECTIVE_OPENERS: &[&str] = &[
    "let's", "let us", "lets", "please", "how about", "i suggest", "i propose", "we should",
    "you should", "why don't we", "why not", "go ahead", "try", "add", "remove", "use", "search",
    "book", "write", "change", "replace", "drop", "include", "focus", "start", "move",
];

const CLARIFICATION: &[&str] = &[
    "what do you mean", "could you repeat", "can you repeat", "sorry?", "pardon", "come again",
    "say that again", "could you clarify", "can you clarify",
];

fn words(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'' && c != '’')
                .replace('’', "'")
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

fn has_proper_noun(s: &str) -> bool {
    s.split_whitespace()
        .skip(1)
        .filter(|w| *w != "I" && !w.starts_with("I'") && !w.starts_with("I’"))
        .any(|w| w.chars().next().is_some_and(char::is_uppercase))
}

fn number() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d|\$").expect("static regex"))
}

impl InitiativeJudge for RuleBasedJudge {
    fn id(&self) -> &str {
        "rule_based"
    }

    fn judge(&self, utterance: &str) -> bool {
        let text = utterance.trim();
        let w = words(text);
        if w.is_empty() {
            return false;
        }
        let lower = w.join(" ");
        if CLARIFICATION.iter().any(|c| lower.starts_with(c.trim_end_matches('?'))) {
            return false;
        }
        if DIRECTIVE_OPENERS
            .iter()
            .any(|o| lower == *o || lower.starts_with(&format!("{o} ")))
            && w.len() >= 3
        {
            return true;
        }
        if text.ends_with('?') {
            return w.len() >= 5;
        }
        let concrete = number().is_match(text)
            || has_proper_noun(text)
            || w.iter().any(|x| x == "because" || x == "since");
        w.len() >= 4 && concrete
    }
}

/// Language-model judge. The completion must end with a line reading
/// `Yes` or `No`; anything else is labelled as not taking initiative.
pub struct LmJudge {
    backend: Arc<dyn Backend>,
    params: DecodingParams,
}

impl LmJudge {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            params: DecodingParams::default(),
        }
    }

    pub fn prompt(utterance: &str) -> Prompt {
        let user = prompts::render(prompts::INITIATIVE_JUDGE, &[("utterance", utterance)])
            .expect("judge template has one slot");
        Prompt::new("", user)
    }
}

/// Reads the verdict from the last non-empty line.
pub fn parse_verdict(output: &str) -> Option<bool> {
    let last = output.lines().rev().map(str::trim).find(|l| !l.is_empty())?;
    let last = last
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .trim_end_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    let last = last.strip_prefix("answer:").map(str::trim).unwrap_or(&last);
    match last {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

impl InitiativeJudge for LmJudge {
    fn id(&self) -> &str {
        "lm"
    }

    fn judge(&self, utterance: &str) -> bool {
        match self.backend.complete(&Self::prompt(utterance), &self.params) {
            Ok(out) => parse_verdict(&out).unwrap_or_else(|| {
                log::warn!("unparseable judge verdict, labelling false: {out:?}");
                false
            }),
            Err(e) => {
                log::warn!("judge backend failed, labelling false: {e}");
                false
            }
        }
    }
}

/// A Likert point of the overall satisfaction scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RubricLevel {
    pub score: u8,
    pub label: &'static str,
    pub description: &'static str,
}

pub const SATISFACTION_RUBRIC: [RubricLevel; 5] = [
    RubricLevel {
        score: 1,
        label: "Extremely dissatisfied",
        description: "Communication with the agent failed throughout and it gave no useful help with the task.",
    },
    RubricLevel {
        score: 2,
        label: "Somewhat dissatisfied",
        description: "Communication was mostly poor and the agent helped little with the task.",
    },
    RubricLevel {
        score: 3,
        label: "Neutral",
        description: "Communication was workable and the agent helped with parts of the task.",
    },
    RubricLevel {
        score: 4,
        label: "Somewhat satisfied",
        description: "Communication was mostly effective and the agent helped with the task.",
    },
    RubricLevel {
        score: 5,
        label: "Extremely satisfied",
        description: "Communication was effective throughout and the agent helped a great deal with the task.",
    },
];

pub const SATISFACTION_QUESTION: &str = "How satisfied are you with the collaboration process and the final outcome?";

pub fn render_rubric() -> String {
    let mut out = format!("{SATISFACTION_QUESTION}\n");
    for l in SATISFACTION_RUBRIC {
        out.push_str(&format!("{} - {}: {}\n", l.score, l.label, l.description));
    }
    out
}

/// Accepts a score (`4`) or a label (`somewhat satisfied`).
pub fn parse_rating(input: &str) -> Option<u8> {
    let t = input.trim();
    if let Ok(n) = t.parse::<u8>() {
        return (1..=5).contains(&n).then_some(n);
    }
    SATISFACTION_RUBRIC
        .iter()
        .find(|l| l.label.eq_ignore_ascii_case(t))
        .map(|l| l.score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nodes::{ScriptRule, ScriptedBackend};

    #[test]
    fn rule_based_judge_on_rubric_examples() {
        let j = RuleBasedJudge;
        for yes in [
            "Let's send engine E2 to Corning.",
            "Let’s look at the first problem first.",
            "Would you like to consider traveling on a different date?",
            "What do you think about the first problem?",
            "We can’t go by Dansville because we’ve got Engine 1 going on that track.",
            "My total budget is $1800.",
        ] {
            assert!(j.judge(yes), "{yes}");
        }
        for no in ["Right, okay.", "Any suggestions", "Any suggestions?", "What do you mean?", "Thanks!", "", "ok"] {
            assert!(!j.judge(no), "{no}");
        }
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("It proposes an action.\nYes"), Some(true));
        assert_eq!(parse_verdict("Reasoning...\n**No.**\n\n"), Some(false));
        assert_eq!(parse_verdict("Answer: yes"), Some(true));
        assert_eq!(parse_verdict("Yes, but maybe no"), None);
        assert_eq!(parse_verdict(""), None);
    }

    #[test]
    fn lm_judge_degrades_to_false() {
        let backend = ScriptedBackend::new(vec![
            ScriptRule::when(&["Utterance: Let's book it."], "It directs the action.\nYes"),
            ScriptRule::when(&["Utterance: hm"], "I cannot tell."),
        ]);
        let j = LmJudge::new(Arc::new(backend));
        assert!(j.judge("Let's book it."));
        assert!(!j.judge("hm"));
        assert!(!j.judge("not scripted at all"));
    }

    #[test]
    fn rubric_has_five_ordered_levels() {
        let scores: Vec<u8> = SATISFACTION_RUBRIC.iter().map(|l| l.score).collect();
        assert_eq!(scores, [1, 2, 3, 4, 5]);
        assert_eq!(parse_rating("Somewhat satisfied"), Some(4));
        assert_eq!(parse_rating("6"), None);
        assert!(render_rubric().contains("3 - Neutral:"));
    }
}
