//! Behavioural checks every [`MessageBus`] implementation must pass.
//!
//! Each check takes a factory so it can start from a fresh session.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use super::{BusError, Channel, MessageBus, Subscription};
use crate::env::Role;

pub type BusFactory<'a> = &'a dyn Fn() -> Arc<dyn MessageBus>;

const WAIT: Duration = Duration::from_secs(5);

fn next(sub: &Subscription) -> Result<(String, Vec<u8>), String> {
    match sub.recv_timeout(WAIT) {
        Ok(Some(d)) => Ok((d.channel, d.payload)),
        Ok(None) => Err("timed out waiting for delivery".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn quiet(sub: &Subscription) -> Result<(), String> {
    match sub.recv_timeout(Duration::from_millis(100)) {
        Ok(None) => Ok(()),
        Ok(Some(d)) => Err(format!("unexpected delivery on {}", d.channel)),
        Err(e) => Err(e.to_string()),
    }
}

pub fn fifo_per_channel(make: BusFactory) -> Result<(), String> {
    let bus = make();
    let sub = bus.subscribe(&[Channel::Step]).map_err(|e| e.to_string())?;
    for i in 0..50u32 {
        bus.publish(&Channel::Step, &i.to_le_bytes())
            .map_err(|e| e.to_string())?;
    }
    for i in 0..50u32 {
        let (ch, p) = next(&sub)?;
        if ch != "step" || p != i.to_le_bytes() {
            return Err(format!("message {i} out of order"));
        }
    }
    Ok(())
}

pub fn role_scoped_delivery(make: BusFactory) -> Result<(), String> {
    let bus = make();
    let alice = bus
        .subscribe(&[Channel::obs(&Role::new("alice"))])
        .map_err(|e| e.to_string())?;
    let bob = bus
        .subscribe(&[Channel::obs(&Role::new("bob"))])
        .map_err(|e| e.to_string())?;
    bus.publish(&Channel::obs(&Role::new("alice")), b"for alice")
        .map_err(|e| e.to_string())?;
    let (ch, p) = next(&alice)?;
    if ch != "alice/obs" || p != b"for alice" {
        return Err("alice did not receive her payload".into());
    }
    quiet(&bob)
}

pub fn rejects_after_end(make: BusFactory) -> Result<(), String> {
    let bus = make();
    let end = bus.subscribe(&[Channel::End]).map_err(|e| e.to_string())?;
    bus.publish(&Channel::End, b"{}").map_err(|e| e.to_string())?;
    next(&end)?;
    match bus.publish(&Channel::Step, b"late") {
        Err(BusError::SessionClosed) => {}
        other => return Err(format!("publish after end returned {other:?}")),
    }
    if !bus.is_closed() {
        return Err("bus does not report closed".into());
    }
    Ok(())
}

pub fn payload_cap(make: BusFactory) -> Result<(), String> {
    let bus = make();
    let big = vec![b'x'; super::DEFAULT_MAX_PAYLOAD + 1];
    match bus.publish(&Channel::Step, &big) {
        Err(BusError::PayloadTooLarge { .. }) => Ok(()),
        other => Err(format!("oversized publish returned {other:?}")),
    }
}

pub fn holds_messages_until_first_subscriber(make: BusFactory) -> Result<(), String> {
    let bus = make();
    bus.publish(&Channel::Tick, b"early").map_err(|e| e.to_string())?;
    let sub = bus.subscribe(&[Channel::Tick]).map_err(|e| e.to_string())?;
    let (_, p) = next(&sub)?;
    if p != b"early" {
        return Err("backlogged message lost".into());
    }
    Ok(())
}

/// Two producers publish concurrently; the consumer sees every message and
/// each producer's messages in its own publish order.
pub fn concurrent_producers(make: BusFactory) -> Result<(), String> {
    let bus = make();
    let sub = bus.subscribe(&[Channel::Step]).map_err(|e| e.to_string())?;
    let per = 100u32;
    let handles: Vec<_> = (0..2u8)
        .map(|who| {
            let bus = bus.clone();
            thread::spawn(move || {
                for i in 0..per {
                    let mut msg = vec![who];
                    msg.extend_from_slice(&i.to_le_bytes());
                    bus.publish(&Channel::Step, &msg).expect("publish");
                }
            })
        })
        .collect();
    for h in handles {
        h.join().map_err(|_| "producer panicked".to_string())?;
    }
    let mut last = [None::<u32>; 2];
    for _ in 0..2 * per {
        let (_, p) = next(&sub)?;
        let who = p[0] as usize;
        let i = u32::from_le_bytes([p[1], p[2], p[3], p[4]]);
        if let Some(prev) = last[who] {
            if i != prev + 1 {
                return Err(format!("producer {who} reordered: {prev} then {i}"));
            }
        } else if i != 0 {
            return Err(format!("producer {who} lost its first message"));
        }
        last[who] = Some(i);
    }
    quiet(&sub)
}

/// Runs every check, returning `(name, outcome)` pairs.
pub fn run_all(make: BusFactory) -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("fifo_per_channel", fifo_per_channel(make)),
        ("role_scoped_delivery", role_scoped_delivery(make)),
        ("rejects_after_end", rejects_after_end(make)),
        ("payload_cap", payload_cap(make)),
        (
            "holds_messages_until_first_subscriber",
            holds_messages_until_first_subscriber(make),
        ),
        ("concurrent_producers", concurrent_producers(make)),
    ]
}
