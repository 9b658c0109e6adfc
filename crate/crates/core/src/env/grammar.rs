//! Action-string grammar.
//!
//! Every action a party can take travels as a plain string such as
//! `ADD_NOTE(note_id=k1, note=budget is 1800)`. An [`ActionSpec`] pairs the
//! action name with an anchored regular expression that has exactly one
//! capture group per parameter. Parameters are matched greedily left to
//! right, so values may contain commas and parentheses as long as the
//! environment orders its parameters unambiguously.

use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{EnvError, Role};

/// Semantic type of an action parameter. Only used for documentation and
/// light validation; the wire form is always text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Text,
    Identifier,
    Integer,
    Date,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub name: String,
    pub parameters: Vec<Parameter>,
    pub pattern: String,
    pub description: String,
    /// Roles allowed to take the action. `None` means every team member.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<Vec<Role>>,
}

impl ActionSpec {
    /// Builds a spec whose pattern is derived from the name and parameters:
    /// `NAME(p1=(.*), p2=(.*))`, anchored, with `.` matching newlines.
    pub fn new(name: &str, params: &[(&str, ParamKind)], description: &str) -> Self {
        let parameters: Vec<Parameter> = params
            .iter()
            .map(|(n, k)| Parameter {
                name: (*n).to_string(),
                kind: *k,
            })
            .collect();
        let pattern = default_pattern(name, &parameters);
        Self {
            name: name.to_string(),
            parameters,
            pattern,
            description: description.to_string(),
            roles: None,
        }
    }

    pub fn restricted_to(mut self, roles: &[Role]) -> Self {
        self.roles = Some(roles.to_vec());
        self
    }

    pub fn permits(&self, role: &Role) -> bool {
        self.roles.as_ref().is_none_or(|r| r.contains(role))
    }

    /// Canonical action string for the given argument values (in parameter order).
    pub fn render<S: AsRef<str>>(&self, values: &[S]) -> String {
        let args: Vec<String> = self
            .parameters
            .iter()
            .zip(values)
            .map(|(p, v)| format!("{}={}", p.name, v.as_ref()))
            .collect();
        format!("{}({})", self.name, args.join(", "))
    }

    /// The human-readable form shown in prompts, e.g. `DELETE_NOTE(note_id=(.*))`.
    pub fn display_pattern(&self) -> String {
        let args: Vec<String> = self
            .parameters
            .iter()
            .map(|p| format!("{}=(.*)", p.name))
            .collect();
        format!("{}({})", self.name, args.join(", "))
    }

    fn compile(&self) -> Result<Regex, EnvError> {
        let re = Regex::new(&self.pattern).map_err(|e| EnvError::InvalidSpec(format!(
            "action {}: bad pattern: {e}",
            self.name
        )))?;
        let groups = re.captures_len() - 1;
        if groups != self.parameters.len() {
            return Err(EnvError::InvalidSpec(format!(
                "action {}: pattern has {groups} capture groups for {} parameters",
                self.name,
                self.parameters.len()
            )));
        }
        Ok(re)
    }
}

fn default_pattern(name: &str, params: &[Parameter]) -> String {
    let args: Vec<String> = params
        .iter()
        .map(|p| format!("{}=(.*)", regex::escape(&p.name)))
        .collect();
    format!(r"(?s)^{}\({}\)$", regex::escape(name), args.join(", "))
}

/// A successfully matched action string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAction {
    pub name: String,
    pub args: Vec<(String, String)>,
}

impl ParsedAction {
    pub fn arg(&self, name: &str) -> Option<&str> {
        self.args
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let args: Vec<String> = self.args.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{}({})", self.name, args.join(", "))
    }
}

impl fmt::Display for ParsedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// A set of action specs with their compiled patterns.
#[derive(Debug, Clone)]
pub struct Grammar {
    specs: Vec<ActionSpec>,
    compiled: Vec<Regex>,
}

impl Grammar {
    pub fn new(specs: Vec<ActionSpec>) -> Result<Self, EnvError> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &specs {
            if !seen.insert(s.name.clone()) {
                return Err(EnvError::InvalidSpec(format!(
                    "action {} declared more than once",
                    s.name
                )));
            }
        }
        let compiled = specs
            .iter()
            .map(ActionSpec::compile)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { specs, compiled })
    }

    pub fn specs(&self) -> &[ActionSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&ActionSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Union of two grammars; fails if a name appears in both.
    pub fn extend(&self, other: &Grammar) -> Result<Grammar, EnvError> {
        let mut specs = self.specs.clone();
        specs.extend(other.specs.iter().cloned());
        Grammar::new(specs)
    }

    pub fn parse(&self, raw: &str) -> Result<ParsedAction, EnvError> {
        let mut hits = self
            .specs
            .iter()
            .zip(&self.compiled)
            .filter_map(|(spec, re)| re.captures(raw).map(|c| (spec, c)));
        let Some((spec, caps)) = hits.next() else {
            return Err(EnvError::InvalidAction(raw.to_string()));
        };
        if let Some((other, _)) = hits.next() {
            return Err(EnvError::AmbiguousGrammar {
                action: raw.to_string(),
                first: spec.name.clone(),
                second: other.name.clone(),
            });
        }
        let args = spec
            .parameters
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let v = caps.get(i + 1).map_or("", |m| m.as_str());
                (p.name.clone(), v.to_string())
            })
            .collect();
        Ok(ParsedAction {
            name: spec.name.clone(),
            args,
        })
    }
}

/// Matches `raw` against `specs`, returning the unique matching spec's
/// bound parameters.
pub fn parse_action(raw: &str, specs: &[ActionSpec]) -> Result<ParsedAction, EnvError> {
    Grammar::new(specs.to_vec())?.parse(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scratchpad_specs() -> Vec<ActionSpec> {
        vec![
            ActionSpec::new(
                "ADD_NOTE",
                &[("note_id", ParamKind::Identifier), ("note", ParamKind::Text)],
                "add",
            ),
            ActionSpec::new("DELETE_NOTE", &[("note_id", ParamKind::Identifier)], "del"),
            ActionSpec::new(
                "EDIT_NOTE",
                &[("note_id", ParamKind::Identifier), ("note", ParamKind::Text)],
                "edit",
            ),
            ActionSpec::new("DO_NOTHING", &[], "noop"),
        ]
    }

    #[test]
    fn parses_add_note() {
        let p = parse_action("ADD_NOTE(note_id=k1, note=budget is 1800)", &scratchpad_specs())
            .unwrap();
        assert_eq!(p.name, "ADD_NOTE");
        assert_eq!(p.arg("note_id"), Some("k1"));
        assert_eq!(p.arg("note"), Some("budget is 1800"));
    }

    #[test]
    fn empty_string_is_invalid() {
        let err = parse_action("", &scratchpad_specs()).unwrap_err();
        assert!(matches!(err, EnvError::InvalidAction(_)));
    }

    #[test]
    fn editor_text_with_parens_and_newlines() {
        let spec = ActionSpec::new("EDITOR_UPDATE", &[("text", ParamKind::Text)], "edit");
        let raw = "EDITOR_UPDATE(text=Day 1: fly (AA12), hotel\nDay 2: museum)";
        let p = parse_action(raw, std::slice::from_ref(&spec)).unwrap();
        assert_eq!(p.arg("text"), Some("Day 1: fly (AA12), hotel\nDay 2: museum"));
        assert_eq!(p.render(), raw);
    }

    #[test]
    fn ambiguous_grammar_is_reported() {
        let a = ActionSpec {
            pattern: r"^GO\((.*)\)$".into(),
            ..ActionSpec::new("GO", &[("x", ParamKind::Text)], "")
        };
        let b = ActionSpec {
            pattern: r"^G(.*)$".into(),
            ..ActionSpec::new("G", &[("y", ParamKind::Text)], "")
        };
        let err = parse_action("GO(1)", &[a, b]).unwrap_err();
        assert!(matches!(err, EnvError::AmbiguousGrammar { .. }));
    }

    #[test]
    fn capture_count_must_match_parameters() {
        let bad = ActionSpec {
            pattern: r"^X\((.*), (.*)\)$".into(),
            ..ActionSpec::new("X", &[("a", ParamKind::Text)], "")
        };
        assert!(matches!(Grammar::new(vec![bad]), Err(EnvError::InvalidSpec(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let s = ActionSpec::new("X", &[], "");
        assert!(Grammar::new(vec![s.clone(), s]).is_err());
    }

    #[test]
    fn display_pattern_matches_prompt_form() {
        let specs = scratchpad_specs();
        assert_eq!(specs[0].display_pattern(), "ADD_NOTE(note_id=(.*), note=(.*))");
        assert_eq!(specs[3].display_pattern(), "DO_NOTHING()");
    }

    proptest! {
        // Strings produced by a spec's renderer parse back and re-render identically.
        #[test]
        fn render_parse_round_trip(id in "[a-z0-9_]{1,8}", note in "(?s).{0,40}") {
            let g = Grammar::new(scratchpad_specs()).unwrap();
            let spec = g.spec("ADD_NOTE").unwrap();
            let raw = spec.render(&[&id, &note]);
            let parsed = g.parse(&raw).unwrap();
            prop_assert_eq!(parsed.render(), raw);
        }

        #[test]
        fn editor_text_round_trips_exactly(text in "(?s).{0,80}") {
            let spec = ActionSpec::new("EDITOR_UPDATE", &[("text", ParamKind::Text)], "");
            let raw = spec.render(&[&text]);
            let parsed = parse_action(&raw, std::slice::from_ref(&spec)).unwrap();
            prop_assert_eq!(parsed.arg("text"), Some(text.as_str()));
            prop_assert_eq!(parsed.render(), raw);
        }
    }
}
