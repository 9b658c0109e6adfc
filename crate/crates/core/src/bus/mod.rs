//! Collaboration acts and the notification protocol.
//!
//! Parties publish action strings on `step`; the [`Coordinator`] applies
//! them one at a time and routes snapshots to `{role}/obs`:
//! shared updates and new messages reach every member, private updates
//! reach only the actor, and inactivity past the idle threshold broadcasts
//! to everyone. A finished episode emits one notice on `end`.

pub mod conformance;
mod coordinator;
mod memory;
mod message;
mod network;

use std::sync::mpsc;
use std::time::Duration;

use thiserror::Error;

pub use coordinator::{
    CoordinatorConfig, Coordinator, Handled, InteractionMode, StepOutcome,
};
pub use memory::InProcessBus;
pub use message::{
    decode, encode, ActionRecord, Channel, ChatMessage, EndNotice, EndReason, EventKind,
    Notification, Outbound, Payload, StepMessage, TickMessage,
};
pub use network::{BusServer, NetworkBus};

pub const DEFAULT_MAX_PAYLOAD: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ack {
    pub channel: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub channel: String,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("session closed")]
    SessionClosed,
    #[error("payload of {size} bytes exceeds cap of {max}")]
    PayloadTooLarge { size: usize, max: usize },
    #[error("subscription disconnected")]
    Disconnected,
    #[error("transport failure: {0}")]
    Transport(String),
}

/// Publish/subscribe transport with per-channel FIFO delivery.
pub trait MessageBus: Send + Sync {
    fn publish(&self, channel: &Channel, payload: &[u8]) -> Result<Ack, BusError>;

    /// One receiver for all of `channels`, in arrival order.
    fn subscribe(&self, channels: &[Channel]) -> Result<Subscription, BusError>;

    /// True once `end` has been published in this session.
    fn is_closed(&self) -> bool;
}

pub struct Subscription {
    rx: mpsc::Receiver<Delivery>,
}

impl Subscription {
    pub(crate) fn new(rx: mpsc::Receiver<Delivery>) -> Self {
        Self { rx }
    }

    pub fn recv(&self) -> Result<Delivery, BusError> {
        self.rx.recv().map_err(|_| BusError::Disconnected)
    }

    pub fn try_recv(&self) -> Option<Delivery> {
        self.rx.try_recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Delivery>, BusError> {
        match self.rx.recv_timeout(timeout) {
            Ok(d) => Ok(Some(d)),
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(None),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(BusError::Disconnected),
        }
    }

    /// Everything already queued, oldest first.
    pub fn drain(&self) -> Vec<Delivery> {
        self.rx.try_iter().collect()
    }
}
