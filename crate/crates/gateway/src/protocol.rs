use collab_core::bus::{ChatMessage, EndReason, EventKind, Payload};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// What a browser may send.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientBody {
    /// A raw action string, exactly as the grammar spells it.
    Action { action: String },
    /// Shorthand for a teammate message.
    Chat { text: String },
    Rating {
        #[serde(default)]
        outcome: Option<u8>,
        #[serde(default)]
        satisfaction: Option<u8>,
        #[serde(default)]
        preference: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientMessage {
    /// Omitted means the current version.
    #[serde(default)]
    pub protocol_version: Option<u32>,
    #[serde(flatten)]
    pub body: ClientBody,
}

impl ClientMessage {
    pub fn new(body: ClientBody) -> Self {
        Self { protocol_version: Some(PROTOCOL_VERSION), body }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerBody {
    /// `event` is absent on the snapshot sent when a connection (re)opens.
    Observation { event: Option<EventKind>, payload: Box<Payload> },
    Chat { message: ChatMessage },
    Error { message: String },
    End { reason: EndReason, final_digest: String },
    Rating { accepted: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub protocol_version: u32,
    #[serde(flatten)]
    pub body: ServerBody,
}

impl From<ServerBody> for ServerMessage {
    fn from(body: ServerBody) -> Self {
        Self { protocol_version: PROTOCOL_VERSION, body }
    }
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Wire messages for one routed payload: the observation itself, then the
/// newest chat line for a new message or the reason for a rejection.
pub fn from_payload(payload: &Payload) -> Vec<ServerMessage> {
    let mut out = vec![ServerMessage::from(ServerBody::Observation {
        event: Some(payload.kind),
        payload: Box::new(payload.clone()),
    })];
    match payload.kind {
        EventKind::NewMessage => {
            if let Some(m) = payload.chat.last() {
                out.push(ServerBody::Chat { message: m.clone() }.into());
            }
        }
        EventKind::Error => {
            if let Some(e) = &payload.error {
                out.push(ServerBody::Error { message: e.clone() }.into());
            }
        }
        _ => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shapes() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"action","action":"FINISH()"}"#).unwrap();
        assert_eq!(m.body, ClientBody::Action { action: "FINISH()".into() });
        assert_eq!(m.protocol_version, None);
        let r: ClientMessage =
            serde_json::from_str(r#"{"type":"rating","protocol_version":1,"outcome":4}"#).unwrap();
        assert_eq!(r.body, ClientBody::Rating { outcome: Some(4), satisfaction: None, preference: None });

        let s = ServerMessage::from(ServerBody::Error { message: "nope".into() }).to_json();
        assert_eq!(s, r#"{"protocol_version":1,"type":"error","message":"nope"}"#);
        let end = ServerMessage::from(ServerBody::End { reason: EndReason::Finished, final_digest: "ab".into() });
        assert_eq!(serde_json::from_str::<ServerMessage>(&end.to_json()).unwrap(), end);
    }
}
