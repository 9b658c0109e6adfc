//! Environments described entirely by a JSON document.
//!
//! Each action maps to a list of effect rules that set or append a rendered
//! template to a component. `{param}` placeholders are replaced by the
//! action's arguments. An action whose effects all target private
//! components is private to the actor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    Components, EnvError, ParsedAction, Role, TaskEnvironmentSpec, TaskInstance, TaskLogic, Team,
    Transition, Visibility, FINISH,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectOp {
    Set,
    Append,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectRule {
    pub component: String,
    pub op: EffectOp,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclarativeTask {
    pub spec: TaskEnvironmentSpec,
    #[serde(default)]
    pub initial: BTreeMap<String, String>,
    #[serde(default)]
    pub effects: BTreeMap<String, Vec<EffectRule>>,
}

/// [`TaskLogic`] backed by a validated [`DeclarativeTask`].
#[derive(Debug, Clone)]
pub struct DeclarativeEnv {
    doc: DeclarativeTask,
}

impl DeclarativeEnv {
    pub fn new(doc: DeclarativeTask) -> Result<Self, EnvError> {
        doc.spec.validate()?;
        for (action, rules) in &doc.effects {
            let spec = doc.spec.action_specs.iter().find(|s| &s.name == action).ok_or_else(
                || EnvError::InvalidSpec(format!("effects for undeclared action {action}")),
            )?;
            for r in rules {
                if doc.spec.component(&r.component).is_none() {
                    return Err(EnvError::InvalidSpec(format!(
                        "action {action} targets unknown component {}",
                        r.component
                    )));
                }
                if spec.name == FINISH {
                    return Err(EnvError::InvalidSpec("FINISH cannot carry effects".into()));
                }
            }
        }
        Ok(Self { doc })
    }

    pub fn from_json(s: &str) -> Result<Self, EnvError> {
        let doc: DeclarativeTask =
            serde_json::from_str(s).map_err(|e| EnvError::InvalidSpec(e.to_string()))?;
        Self::new(doc)
    }

    pub fn document(&self) -> &DeclarativeTask {
        &self.doc
    }
}

fn fill(template: &str, action: &ParsedAction) -> String {
    let mut out = template.to_string();
    for (k, v) in &action.args {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

impl TaskLogic for DeclarativeEnv {
    fn spec(&self) -> &TaskEnvironmentSpec {
        &self.doc.spec
    }

    fn init(
        &self,
        components: &mut Components,
        _instance: &TaskInstance,
        team: &Team,
    ) -> Result<(), EnvError> {
        for c in &self.doc.spec.observation_schema {
            let initial = Value::String(self.doc.initial.get(&c.name).cloned().unwrap_or_default());
            match c.visibility {
                Visibility::Public => components.set_shared(&c.name, initial)?,
                Visibility::Private => {
                    for r in team.roles() {
                        components.set_private(&c.name, r, initial.clone())?;
                    }
                }
            }
        }
        Ok(())
    }

    fn apply(
        &self,
        components: &mut Components,
        role: &Role,
        action: &ParsedAction,
    ) -> Result<Transition, EnvError> {
        let rules = self.doc.effects.get(&action.name).map(Vec::as_slice).unwrap_or(&[]);
        let mut all_private = !rules.is_empty();
        for rule in rules {
            let text = fill(&rule.template, action);
            let vis = self.doc.spec.component(&rule.component).map(|c| c.visibility);
            let current = match vis {
                Some(Visibility::Private) => components.private(&rule.component, role)?,
                _ => components.shared(&rule.component)?,
            };
            let next = match rule.op {
                EffectOp::Set => text,
                EffectOp::Append => format!("{}{text}", current.as_str().unwrap_or_default()),
            };
            if vis == Some(Visibility::Private) {
                components.set_private(&rule.component, role, Value::String(next))?;
            } else {
                all_private = false;
                components.set_shared(&rule.component, Value::String(next))?;
            }
        }
        Ok(Transition {
            private: all_private,
            finish: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, StepBudget};

    const DOC: &str = r#"{
      "spec": {
        "task_id": "toy",
        "task_description": "toy task",
        "action_specs": [
          {"name": "WRITE", "parameters": [{"name": "text", "kind": "text"}],
           "pattern": "(?s)^WRITE\\(text=(.*)\\)$", "description": "shared write"},
          {"name": "NOTE", "parameters": [{"name": "text", "kind": "text"}],
           "pattern": "(?s)^NOTE\\(text=(.*)\\)$", "description": "private note"},
          {"name": "FINISH", "parameters": [], "pattern": "^FINISH\\(\\)$", "description": "end"}
        ],
        "observation_schema": [
          {"name": "board", "visibility": "public"},
          {"name": "notes", "visibility": "private"}
        ],
        "step_limit": 5
      },
      "effects": {
        "WRITE": [{"component": "board", "op": "set", "template": "{text}"}],
        "NOTE": [{"component": "notes", "op": "append", "template": "{text};"}]
      }
    }"#;

    #[test]
    fn json_document_drives_transitions() {
        let logic = DeclarativeEnv::from_json(DOC).unwrap();
        let inst = TaskInstance {
            task_id: "toy".into(),
            ..Default::default()
        };
        let (mut env, _) =
            Environment::reset(Box::new(logic), &inst, Team::pair(), StepBudget::new(5)).unwrap();
        let agent = Role::agent();
        let note = env.grammar().parse("NOTE(text=a)").unwrap();
        let r = env.step(&agent, &note).unwrap();
        assert!(r.private);
        assert_eq!(r.obs.component("notes"), Some("a;"));
        let user_view = env.observation_view(&Role::user()).unwrap();
        assert_eq!(user_view.component("notes"), Some(""));

        let write = env.grammar().parse("WRITE(text=hello)").unwrap();
        assert!(!env.step(&agent, &write).unwrap().private);
        assert_eq!(
            env.observation_view(&Role::user()).unwrap().component("board"),
            Some("hello")
        );
    }

    #[test]
    fn rejects_effects_on_unknown_component() {
        let bad = DOC.replace(r#""component": "board""#, r#""component": "nope""#);
        assert!(DeclarativeEnv::from_json(&bad).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let logic = DeclarativeEnv::from_json(DOC).unwrap();
        let json = logic.spec().to_json();
        assert_eq!(&TaskEnvironmentSpec::from_json(&json).unwrap(), logic.spec());
    }
}
