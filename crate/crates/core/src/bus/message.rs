use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::{ObservationView, Role};

/// Bus channel names: `step`, `tick`, `{role}/obs`, `end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Step,
    Tick,
    Obs(Role),
    End,
}

impl Channel {
    pub fn obs(role: &Role) -> Self {
        Self::Obs(role.clone())
    }

    pub fn name(&self) -> String {
        match self {
            Self::Step => "step".into(),
            Self::Tick => "tick".into(),
            Self::Obs(r) => format!("{r}/obs"),
            Self::End => "end".into(),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "step" => Some(Self::Step),
            "tick" => Some(Self::Tick),
            "end" => Some(Self::End),
            other => other
                .strip_suffix("/obs")
                .filter(|r| !r.is_empty())
                .map(|r| Self::Obs(Role::new(r))),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SharedUpdate,
    PrivateUpdate,
    NewMessage,
    IdleTick,
    /// Turn-taking mode only: the recipient now holds the turn.
    TurnPassed,
    /// The recipient's last submission was rejected.
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub sender: Role,
    pub text: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub role: Role,
    pub action: String,
    pub private: bool,
    pub timestamp: u64,
}

/// Snapshot sent on `{role}/obs`. Payloads are full snapshots, so
/// redelivery is harmless and a newer payload supersedes older ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub kind: EventKind,
    pub role: Role,
    pub observation: ObservationView,
    pub chat: Vec<ChatMessage>,
    /// Task actions visible to `role`: its own, plus other roles' shared ones.
    #[serde(default)]
    pub actions: Vec<ActionRecord>,
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "detail")]
pub enum EndReason {
    Finished,
    StepLimit,
    WallClock,
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndNotice {
    pub reason: EndReason,
    pub timestamp: u64,
    pub final_digest: String,
}

/// Body published on the `step` channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMessage {
    pub role: Role,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickMessage {
    pub timestamp: u64,
}

/// Anything the coordinator emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Notification {
    Payload(Payload),
    End(EndNotice),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub channel: Channel,
    pub notification: Notification,
}

impl Outbound {
    pub fn to_bytes(&self) -> Vec<u8> {
        match &self.notification {
            Notification::Payload(p) => serde_json::to_vec(p),
            Notification::End(e) => serde_json::to_vec(e),
        }
        .expect("notifications serialize")
    }

    pub fn kind(&self) -> Option<EventKind> {
        match &self.notification {
            Notification::Payload(p) => Some(p.kind),
            Notification::End(_) => None,
        }
    }
}

pub fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("bus messages serialize")
}

pub fn decode<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T, serde_json::Error> {
    serde_json::from_slice(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_names_round_trip() {
        for c in [
            Channel::Step,
            Channel::Tick,
            Channel::End,
            Channel::obs(&Role::new("alice")),
        ] {
            assert_eq!(Channel::parse(&c.name()), Some(c));
        }
        assert_eq!(Channel::obs(&Role::user()).name(), "user/obs");
        assert_eq!(Channel::parse("/obs"), None);
    }
}
