//! TCP message bus.
//!
//! A [`BusServer`] broker relays newline-delimited JSON frames between
//! clients. Channel names are namespaced per session as `{session}:{channel}`;
//! publishing on a session's `end` channel closes that session.
//!
//! Frames, client to broker:
//! `{"op":"publish","channel":..,"payload":<base64>}` and
//! `{"op":"subscribe","channels":[..]}`.
//! Broker to client: `{"op":"ack","seq":n}`, `{"op":"error","message":..}`
//! and `{"op":"message","channel":..,"payload":<base64>}`.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Ack, BusError, Channel, Delivery, MessageBus, Subscription, DEFAULT_MAX_PAYLOAD};

const REPLY_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Frame {
    Publish { channel: String, payload: String },
    Subscribe { channels: Vec<String> },
    Ack { seq: u64 },
    Error { message: String },
    Message { channel: String, payload: String },
}

fn write_frame(stream: &mut TcpStream, frame: &Frame) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(frame).expect("frames serialize");
    line.push(b'\n');
    stream.write_all(&line)?;
    stream.flush()
}

fn namespace_of(channel: &str) -> &str {
    channel.split_once(':').map_or("", |(ns, _)| ns)
}

type Conn = Arc<Mutex<TcpStream>>;

#[derive(Default)]
struct Broker {
    conns: HashMap<u64, Conn>,
    subscribers: HashMap<String, BTreeSet<u64>>,
    backlog: HashMap<String, VecDeque<String>>,
    closed: HashSet<String>,
    seq: u64,
}

impl Broker {
    fn publish(&mut self, channel: String, payload: String, max: usize) -> Frame {
        let size = B64.decode(&payload).map(|b| b.len()).unwrap_or(usize::MAX);
        if size > max {
            return Frame::Error {
                message: format!("payload of {size} bytes exceeds cap of {max}"),
            };
        }
        let ns = namespace_of(&channel).to_string();
        if self.closed.contains(&ns) {
            return Frame::Error {
                message: "session closed".into(),
            };
        }
        let targets: Vec<u64> = self
            .subscribers
            .get(&channel)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        let mut delivered = false;
        for id in targets {
            let Some(conn) = self.conns.get(&id) else {
                continue;
            };
            let frame = Frame::Message {
                channel: channel.clone(),
                payload: payload.clone(),
            };
            if write_frame(&mut conn.lock().expect("conn lock"), &frame).is_ok() {
                delivered = true;
            }
        }
        if !delivered {
            self.backlog.entry(channel.clone()).or_default().push_back(payload);
        }
        if channel.ends_with(":end") || channel == "end" {
            self.closed.insert(ns);
        }
        self.seq += 1;
        Frame::Ack { seq: self.seq }
    }

    fn subscribe(&mut self, id: u64, channels: Vec<String>) -> Frame {
        let Some(conn) = self.conns.get(&id).cloned() else {
            return Frame::Error {
                message: "unknown connection".into(),
            };
        };
        let mut stream = conn.lock().expect("conn lock");
        for c in channels {
            if let Some(pending) = self.backlog.remove(&c) {
                for payload in pending {
                    let _ = write_frame(
                        &mut stream,
                        &Frame::Message {
                            channel: c.clone(),
                            payload,
                        },
                    );
                }
            }
            self.subscribers.entry(c).or_default().insert(id);
        }
        self.seq += 1;
        Frame::Ack { seq: self.seq }
    }

    fn drop_conn(&mut self, id: u64) {
        self.conns.remove(&id);
        for subs in self.subscribers.values_mut() {
            subs.remove(&id);
        }
    }
}

/// Broker process for [`NetworkBus`] clients.
pub struct BusServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
}

impl BusServer {
    /// Binds and starts accepting connections on a background thread.
    pub fn start(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        Self::start_with_cap(addr, DEFAULT_MAX_PAYLOAD)
    }

    pub fn start_with_cap(addr: impl ToSocketAddrs, max_payload: usize) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let broker = Arc::new(Mutex::new(Broker::default()));
        let next_id = AtomicU64::new(1);
        let stop_flag = stop.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let id = next_id.fetch_add(1, Ordering::SeqCst);
                let broker = broker.clone();
                thread::spawn(move || serve_conn(id, stream, broker, max_payload));
            }
        });
        Ok(Self { addr, stop })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for BusServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop so it observes the flag.
        let _ = TcpStream::connect(self.addr);
    }
}

fn serve_conn(id: u64, stream: TcpStream, broker: Arc<Mutex<Broker>>, max_payload: usize) {
    stream.set_nodelay(true).ok();
    let Ok(writer) = stream.try_clone() else { return };
    let conn: Conn = Arc::new(Mutex::new(writer));
    broker.lock().expect("broker lock").conns.insert(id, conn.clone());
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        let reply = match serde_json::from_str::<Frame>(&line) {
            Ok(Frame::Publish { channel, payload }) => {
                broker.lock().expect("broker lock").publish(channel, payload, max_payload)
            }
            Ok(Frame::Subscribe { channels }) => {
                broker.lock().expect("broker lock").subscribe(id, channels)
            }
            Ok(_) => Frame::Error {
                message: "unexpected frame".into(),
            },
            Err(e) => Frame::Error {
                message: format!("malformed frame: {e}"),
            },
        };
        if write_frame(&mut conn.lock().expect("conn lock"), &reply).is_err() {
            break;
        }
    }
    broker.lock().expect("broker lock").drop_conn(id);
}

type Routes = Arc<Mutex<Vec<(HashSet<String>, mpsc::Sender<Delivery>)>>>;

/// Client side of the TCP bus, scoped to one session namespace.
pub struct NetworkBus {
    namespace: String,
    writer: Mutex<TcpStream>,
    replies: Mutex<mpsc::Receiver<Frame>>,
    routes: Routes,
    closed: Arc<AtomicBool>,
    max_payload: usize,
}

impl NetworkBus {
    pub fn connect(addr: impl ToSocketAddrs, session: &str) -> Result<Self, BusError> {
        let stream = TcpStream::connect(addr).map_err(|e| BusError::Transport(e.to_string()))?;
        stream.set_nodelay(true).ok();
        let reader = stream
            .try_clone()
            .map_err(|e| BusError::Transport(e.to_string()))?;
        let (reply_tx, reply_rx) = mpsc::channel();
        let routes: Routes = Arc::default();
        let closed = Arc::new(AtomicBool::new(false));
        let prefix = format!("{session}:");
        {
            let routes = routes.clone();
            let closed = closed.clone();
            thread::spawn(move || {
                for line in BufReader::new(reader).lines() {
                    let Ok(line) = line else { break };
                    let Ok(frame) = serde_json::from_str::<Frame>(&line) else {
                        continue;
                    };
                    match frame {
                        Frame::Message { channel, payload } => {
                            let Ok(bytes) = B64.decode(payload) else { continue };
                            let local = channel.strip_prefix(&prefix).unwrap_or(&channel);
                            if local == "end" {
                                closed.store(true, Ordering::SeqCst);
                            }
                            let routes = routes.lock().expect("routes lock");
                            for (names, tx) in routes.iter() {
                                if names.contains(local) {
                                    let _ = tx.send(Delivery {
                                        channel: local.to_string(),
                                        payload: bytes.clone(),
                                    });
                                }
                            }
                        }
                        other => {
                            if reply_tx.send(other).is_err() {
                                break;
                            }
                        }
                    }
                }
                routes.lock().expect("routes lock").clear();
            });
        }
        Ok(Self {
            namespace: session.to_string(),
            writer: Mutex::new(stream),
            replies: Mutex::new(reply_rx),
            routes,
            closed,
            max_payload: DEFAULT_MAX_PAYLOAD,
        })
    }

    fn qualified(&self, channel: &Channel) -> String {
        format!("{}:{}", self.namespace, channel.name())
    }

    fn request(&self, frame: &Frame) -> Result<u64, BusError> {
        let mut writer = self.writer.lock().expect("writer lock");
        let replies = self.replies.lock().expect("replies lock");
        write_frame(&mut writer, frame).map_err(|e| BusError::Transport(e.to_string()))?;
        match replies.recv_timeout(REPLY_TIMEOUT) {
            Ok(Frame::Ack { seq }) => Ok(seq),
            Ok(Frame::Error { message }) if message == "session closed" => {
                Err(BusError::SessionClosed)
            }
            Ok(Frame::Error { message }) if message.contains("exceeds cap") => {
                Err(BusError::Transport(message))
            }
            Ok(Frame::Error { message }) => Err(BusError::Transport(message)),
            Ok(_) => Err(BusError::Transport("unexpected reply".into())),
            Err(_) => Err(BusError::Transport("broker did not reply".into())),
        }
    }
}

impl Drop for NetworkBus {
    fn drop(&mut self) {
        if let Ok(w) = self.writer.lock() {
            let _ = w.shutdown(Shutdown::Both);
        }
    }
}

impl MessageBus for NetworkBus {
    fn publish(&self, channel: &Channel, payload: &[u8]) -> Result<Ack, BusError> {
        if payload.len() > self.max_payload {
            return Err(BusError::PayloadTooLarge {
                size: payload.len(),
                max: self.max_payload,
            });
        }
        let seq = self.request(&Frame::Publish {
            channel: self.qualified(channel),
            payload: B64.encode(payload),
        })?;
        if *channel == Channel::End {
            self.closed.store(true, Ordering::SeqCst);
        }
        Ok(Ack {
            channel: channel.name(),
            seq,
        })
    }

    fn subscribe(&self, channels: &[Channel]) -> Result<Subscription, BusError> {
        let (tx, rx) = mpsc::channel();
        let names: HashSet<String> = channels.iter().map(Channel::name).collect();
        self.routes.lock().expect("routes lock").push((names, tx));
        self.request(&Frame::Subscribe {
            channels: channels.iter().map(|c| self.qualified(c)).collect(),
        })?;
        Ok(Subscription::new(rx))
    }

    fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }
}
