use std::collections::{BTreeMap, BTreeSet};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ComponentSpec, EnvError, Role, Team, Visibility};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentState {
    Shared(Value),
    PerRole(BTreeMap<Role, Value>),
}

/// Component values keyed by component name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Components(BTreeMap<String, ComponentState>);

impl Components {
    /// Fresh components for `schema`: public ones hold `Value::Null` (or the
    /// supplied initial value), private ones get one `Null` slot per role.
    pub fn from_schema(schema: &[ComponentSpec], team: &Team) -> Self {
        let map = schema
            .iter()
            .map(|c| {
                let state = match c.visibility {
                    Visibility::Public => ComponentState::Shared(Value::Null),
                    Visibility::Private => ComponentState::PerRole(
                        team.roles().map(|r| (r.clone(), Value::Null)).collect(),
                    ),
                };
                (c.name.clone(), state)
            })
            .collect();
        Self(map)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn get(&self, name: &str) -> Option<&ComponentState> {
        self.0.get(name)
    }

    pub fn shared(&self, name: &str) -> Result<&Value, EnvError> {
        match self.0.get(name) {
            Some(ComponentState::Shared(v)) => Ok(v),
            _ => Err(EnvError::InvalidSpec(format!("no shared component {name}"))),
        }
    }

    pub fn private(&self, name: &str, role: &Role) -> Result<&Value, EnvError> {
        match self.0.get(name) {
            Some(ComponentState::PerRole(m)) => m
                .get(role)
                .ok_or_else(|| EnvError::UnknownRole(role.clone())),
            _ => Err(EnvError::InvalidSpec(format!("no private component {name}"))),
        }
    }

    pub fn set_shared(&mut self, name: &str, value: Value) -> Result<(), EnvError> {
        match self.0.get_mut(name) {
            Some(ComponentState::Shared(v)) => {
                *v = value;
                Ok(())
            }
            _ => Err(EnvError::InvalidSpec(format!("no shared component {name}"))),
        }
    }

    pub fn set_private(&mut self, name: &str, role: &Role, value: Value) -> Result<(), EnvError> {
        match self.0.get_mut(name) {
            Some(ComponentState::PerRole(m)) => match m.get_mut(role) {
                Some(v) => {
                    *v = value;
                    Ok(())
                }
                None => Err(EnvError::UnknownRole(role.clone())),
            },
            _ => Err(EnvError::InvalidSpec(format!("no private component {name}"))),
        }
    }

    /// Typed read of a shared component; `Null` decodes through `Default`.
    pub fn shared_as<T: DeserializeOwned + Default>(&self, name: &str) -> Result<T, EnvError> {
        decode(self.shared(name)?, name)
    }

    pub fn private_as<T: DeserializeOwned + Default>(
        &self,
        name: &str,
        role: &Role,
    ) -> Result<T, EnvError> {
        decode(self.private(name, role)?, name)
    }

    pub fn put_shared<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), EnvError> {
        self.set_shared(name, encode(value))
    }

    pub fn put_private<T: Serialize>(
        &mut self,
        name: &str,
        role: &Role,
        value: &T,
    ) -> Result<(), EnvError> {
        self.set_private(name, role, encode(value))
    }

    /// Names of components whose value differs from `before`, with the
    /// roles whose private slot changed (empty for shared components).
    pub fn diff(&self, before: &Components) -> BTreeMap<String, BTreeSet<Role>> {
        let mut out = BTreeMap::new();
        for (name, now) in &self.0 {
            let prev = before.0.get(name);
            match (prev, now) {
                (Some(ComponentState::PerRole(a)), ComponentState::PerRole(b)) => {
                    let roles: BTreeSet<Role> = b
                        .iter()
                        .filter(|(r, v)| a.get(*r) != Some(*v))
                        .map(|(r, _)| r.clone())
                        .collect();
                    if !roles.is_empty() {
                        out.insert(name.clone(), roles);
                    }
                }
                (Some(p), n) if p == n => {}
                _ => {
                    out.insert(name.clone(), BTreeSet::new());
                }
            }
        }
        out
    }
}

fn decode<T: DeserializeOwned + Default>(v: &Value, name: &str) -> Result<T, EnvError> {
    if v.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(v.clone())
        .map_err(|e| EnvError::InvalidSpec(format!("component {name}: {e}")))
}

fn encode<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("component values serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub components: Components,
    pub done: bool,
    pub agent_action_count: u32,
    /// Incremented on every applied transition; doubles as the view timestamp.
    pub version: u64,
}

impl EnvState {
    /// SHA-256 over the canonical JSON encoding of the state.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// A role's rendered view of the environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationView {
    pub role: Role,
    pub components: BTreeMap<String, String>,
    pub timestamp: u64,
}

impl ObservationView {
    pub fn component(&self, name: &str) -> Option<&str> {
        self.components.get(name).map(String::as_str)
    }

    /// `name:\nvalue` blocks in component order, as shown to language models.
    pub fn render_text(&self) -> String {
        self.components
            .iter()
            .map(|(k, v)| format!("{k}:\n{}", if v.is_empty() { "(empty)" } else { v }))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}
