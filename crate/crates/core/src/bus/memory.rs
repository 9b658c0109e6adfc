use std::collections::{HashMap, VecDeque};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use super::{Ack, BusError, Channel, Delivery, MessageBus, Subscription, DEFAULT_MAX_PAYLOAD};

#[derive(Default)]
struct Inner {
    subscribers: HashMap<String, Vec<mpsc::Sender<Delivery>>>,
    backlog: HashMap<String, VecDeque<Vec<u8>>>,
    closed: bool,
    seq: u64,
}

/// Single-process bus. Deliveries are synchronous with `publish`, so the
/// order in which a subscriber sees messages on one channel is exactly the
/// publish order. Messages published before anyone subscribes are held
/// and handed to the first subscriber.
#[derive(Clone)]
pub struct InProcessBus {
    inner: Arc<Mutex<Inner>>,
    max_payload: usize,
}

impl Default for InProcessBus {
    fn default() -> Self {
        Self::new()
    }
}

impl InProcessBus {
    pub fn new() -> Self {
        Self::with_max_payload(DEFAULT_MAX_PAYLOAD)
    }

    pub fn with_max_payload(max_payload: usize) -> Self {
        Self {
            inner: Arc::default(),
            max_payload,
        }
    }
}

impl MessageBus for InProcessBus {
    fn publish(&self, channel: &Channel, payload: &[u8]) -> Result<Ack, BusError> {
        if payload.len() > self.max_payload {
            return Err(BusError::PayloadTooLarge {
                size: payload.len(),
                max: self.max_payload,
            });
        }
        let mut inner = self.inner.lock().expect("bus lock poisoned");
        if inner.closed {
            return Err(BusError::SessionClosed);
        }
        let name = channel.name();
        let live = inner.subscribers.entry(name.clone()).or_default();
        live.retain(|tx| {
            tx.send(Delivery {
                channel: name.clone(),
                payload: payload.to_vec(),
            })
            .is_ok()
        });
        if live.is_empty() {
            inner
                .backlog
                .entry(name.clone())
                .or_default()
                .push_back(payload.to_vec());
        }
        if *channel == Channel::End {
            inner.closed = true;
        }
        inner.seq += 1;
        Ok(Ack {
            channel: name,
            seq: inner.seq,
        })
    }

    fn subscribe(&self, channels: &[Channel]) -> Result<Subscription, BusError> {
        let (tx, rx) = mpsc::channel();
        let mut inner = self.inner.lock().expect("bus lock poisoned");
        for c in channels {
            let name = c.name();
            if let Some(pending) = inner.backlog.remove(&name) {
                for payload in pending {
                    let _ = tx.send(Delivery {
                        channel: name.clone(),
                        payload,
                    });
                }
            }
            inner.subscribers.entry(name).or_default().push(tx.clone());
        }
        Ok(Subscription::new(rx))
    }

    fn is_closed(&self) -> bool {
        self.inner.lock().expect("bus lock poisoned").closed
    }
}
