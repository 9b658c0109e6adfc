//! WebSocket gateway for live sessions.
//!
//! Each session gets its own bus, its own node threads and one live-human
//! seat. The browser holding the seat's token connects to
//! `/sessions/{id}/ws?token=...`, receives that role's notifications and
//! submits actions and ratings. Dropping the connection leaves the session
//! running; reconnecting resumes from the latest observation.

pub mod protocol;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use collab_core::bus::{
    decode, encode, BusError, BusServer, Channel, EndNotice, InProcessBus, MessageBus, NetworkBus, Payload,
    StepMessage,
};
use collab_core::env::{collaboration_grammar, send_message_action, Grammar, Role};
use collab_core::harness::{
    build_team, load_backend, run_realtime, BusKind, Evaluator, HarnessError, PartyPolicy, RatingRecord,
    SessionConfig, TrajectoryRecord,
};
use collab_core::nodes::subscribe_node;
use collab_core::tasks::TaskRegistry;
use rand::Rng;
use serde::Deserialize;
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};
use tokio::sync::Mutex as AsyncMutex;

use protocol::{from_payload, ClientBody, ClientMessage, ServerBody, ServerMessage, PROTOCOL_VERSION};

/// What the operator hands to the participant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ticket {
    pub session_id: String,
    pub token: String,
    pub role: Role,
}

impl Ticket {
    pub fn ws_path(&self) -> String {
        format!("/sessions/{}/ws?token={}", self.session_id, self.token)
    }
}

#[derive(Default)]
struct Outcome {
    record: Option<TrajectoryRecord>,
    pending: Vec<RatingRecord>,
}

struct LiveSeat {
    id: String,
    role: Role,
    token: String,
    grammar: Grammar,
    bus: Arc<dyn MessageBus>,
    inbox: Arc<AsyncMutex<UnboundedReceiver<ServerMessage>>>,
    latest: Mutex<Option<Payload>>,
    ended: Mutex<Option<ServerMessage>>,
    outcome: Mutex<Outcome>,
    out_dir: Option<PathBuf>,
    _server: Option<BusServer>,
}

impl LiveSeat {
    fn persist(&self, record: &TrajectoryRecord) {
        if let Some(dir) = &self.out_dir {
            let path = dir.join(format!("{}.jsonl", self.id));
            if let Err(e) = record.persist(&path) {
                log::error!("session {}: could not write {}: {e}", self.id, path.display());
            }
        }
    }

    fn rate(&self, rating: RatingRecord) -> Result<(), HarnessError> {
        rating.validate()?;
        let mut o = self.outcome.lock().expect("outcome lock");
        match &mut o.record {
            Some(r) => {
                r.add_rating(rating)?;
                self.persist(r);
            }
            None => {
                o.pending.retain(|r| r.role != rating.role);
                o.pending.push(rating);
            }
        }
        Ok(())
    }

    fn submit(&self, action: String) -> Result<(), String> {
        if self.ended.lock().expect("end lock").is_some() {
            return Err("session ended".into());
        }
        self.grammar.parse(&action).map_err(|e| e.to_string())?;
        let msg = StepMessage { role: self.role.clone(), action };
        self.bus.publish(&Channel::Step, &encode(&msg)).map(|_| ()).map_err(|e| e.to_string())
    }
}

/// Live sessions by id.
#[derive(Clone)]
pub struct Gateway {
    registry: TaskRegistry,
    out_dir: Option<PathBuf>,
    sessions: Arc<Mutex<HashMap<String, Arc<LiveSeat>>>>,
}

fn random_hex() -> String {
    format!("{:032x}", rand::rng().random::<u128>())
}

impl Gateway {
    pub fn new(registry: TaskRegistry) -> Self {
        Self { registry, out_dir: None, sessions: Arc::default() }
    }

    /// Finished trajectories are written to `dir/{session_id}.jsonl`.
    pub fn with_out_dir(mut self, dir: &Path) -> Self {
        self.out_dir = Some(dir.to_path_buf());
        self
    }

    /// Starts a session whose team has exactly one live human.
    pub fn create_session(&self, config: SessionConfig) -> Result<Ticket, HarnessError> {
        config.validate()?;
        let live: Vec<_> = config.team.iter().filter(|p| p.policy == PartyPolicy::LiveHuman).collect();
        let [seat] = live.as_slice() else {
            return Err(HarnessError::Config("a gateway session needs exactly one live-human party".into()));
        };
        let role = seat.role.clone();
        let id = random_hex()[..12].to_string();
        let spec = self.registry.spec(&config.task_id)?;
        let grammar = Grammar::new(spec.action_specs.clone())?.extend(&collaboration_grammar())?;

        let (server, connect): (Option<BusServer>, Box<dyn Fn() -> Result<Arc<dyn MessageBus>, BusError> + Send>) =
            match config.bus {
                BusKind::InProcess => {
                    let bus: Arc<dyn MessageBus> = Arc::new(InProcessBus::new());
                    (None, Box::new(move || Ok(bus.clone())))
                }
                BusKind::Networked => {
                    let server = BusServer::start("127.0.0.1:0")?;
                    let (addr, sid) = (server.addr(), id.clone());
                    let connect = move || NetworkBus::connect(addr, &sid).map(|b| Arc::new(b) as Arc<dyn MessageBus>);
                    (Some(server), Box::new(connect))
                }
            };

        let nodes = build_team(&config, &self.registry, load_backend(&config)?)?;
        let bus = connect()?;
        let sub_bus = connect()?;
        let sub = subscribe_node(sub_bus.as_ref(), &role)?;
        let (tx, rx) = unbounded_channel();
        let seat = Arc::new(LiveSeat {
            id: id.clone(),
            role,
            token: random_hex(),
            grammar,
            bus,
            inbox: Arc::new(AsyncMutex::new(rx)),
            latest: Mutex::new(None),
            ended: Mutex::new(None),
            outcome: Mutex::default(),
            out_dir: self.out_dir.clone(),
            _server: server,
        });

        let fwd = seat.clone();
        thread::spawn(move || {
            let _connection = sub_bus;
            forward(&fwd, &sub, &tx)
        });

        let runner = seat.clone();
        let registry = self.registry.clone();
        thread::spawn(move || {
            let result = run_realtime(&config, &registry, nodes, &*connect, &Evaluator::default());
            match result {
                Ok(mut record) => {
                    let mut o = runner.outcome.lock().expect("outcome lock");
                    for r in std::mem::take(&mut o.pending) {
                        if let Err(e) = record.add_rating(r) {
                            log::warn!("session {}: dropped rating: {e}", runner.id);
                        }
                    }
                    runner.persist(&record);
                    o.record = Some(record);
                }
                Err(e) => log::error!("session {} failed: {e}", runner.id),
            }
        });

        let ticket = Ticket { session_id: id.clone(), token: seat.token.clone(), role: seat.role.clone() };
        self.sessions.lock().expect("sessions lock").insert(id, seat);
        Ok(ticket)
    }

    /// The finished trajectory, once the session has ended.
    pub fn trajectory(&self, session_id: &str) -> Option<TrajectoryRecord> {
        let seat = self.seat(session_id)?;
        let o = seat.outcome.lock().expect("outcome lock");
        o.record.clone()
    }

    fn seat(&self, id: &str) -> Option<Arc<LiveSeat>> {
        self.sessions.lock().expect("sessions lock").get(id).cloned()
    }

    pub fn router(self) -> Router {
        Router::new()
            .route("/sessions/{id}/ws", get(ws_route))
            .route("/sessions/{id}/trajectory", get(trajectory_route))
            .with_state(self)
    }

    pub async fn serve(self, listener: tokio::net::TcpListener) -> std::io::Result<()> {
        axum::serve(listener, self.router()).await
    }
}

/// Relays the seat's bus notifications to whichever connection holds it.
fn forward(seat: &LiveSeat, sub: &collab_core::bus::Subscription, tx: &UnboundedSender<ServerMessage>) {
    while let Ok(d) = sub.recv() {
        if d.channel == Channel::End.name() {
            let Ok(end) = decode::<EndNotice>(&d.payload) else { continue };
            let msg = ServerMessage::from(ServerBody::End { reason: end.reason, final_digest: end.final_digest });
            *seat.ended.lock().expect("end lock") = Some(msg.clone());
            let _ = tx.send(msg);
            return;
        }
        match decode::<Payload>(&d.payload) {
            Ok(p) => {
                for m in from_payload(&p) {
                    let _ = tx.send(m);
                }
                *seat.latest.lock().expect("latest lock") = Some(p);
            }
            Err(e) => log::warn!("session {}: undecodable payload: {e}", seat.id),
        }
    }
}

#[derive(Deserialize)]
struct Auth {
    token: String,
}

fn authorize(gw: &Gateway, id: &str, token: &str) -> Result<Arc<LiveSeat>, Response> {
    let seat = gw.seat(id).ok_or_else(|| (StatusCode::NOT_FOUND, "no such session").into_response())?;
    if seat.token != token {
        return Err((StatusCode::UNAUTHORIZED, "bad token").into_response());
    }
    Ok(seat)
}

async fn trajectory_route(
    UrlPath(id): UrlPath<String>,
    Query(auth): Query<Auth>,
    State(gw): State<Gateway>,
) -> Response {
    let seat = match authorize(&gw, &id, &auth.token) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let o = seat.outcome.lock().expect("outcome lock");
    match &o.record {
        Some(r) => ([("content-type", "application/x-ndjson")], r.to_jsonl()).into_response(),
        None => (StatusCode::CONFLICT, "session still running").into_response(),
    }
}

async fn ws_route(
    UrlPath(id): UrlPath<String>,
    Query(auth): Query<Auth>,
    State(gw): State<Gateway>,
    ws: WebSocketUpgrade,
) -> Response {
    let seat = match authorize(&gw, &id, &auth.token) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let Ok(inbox) = seat.inbox.clone().try_lock_owned() else {
        return (StatusCode::CONFLICT, "seat already connected").into_response();
    };
    ws.on_upgrade(move |socket| connection(seat, inbox, socket))
}

async fn send(socket: &mut WebSocket, msg: ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

async fn connection(
    seat: Arc<LiveSeat>,
    mut inbox: tokio::sync::OwnedMutexGuard<UnboundedReceiver<ServerMessage>>,
    mut socket: WebSocket,
) {
    // Anything queued while disconnected is superseded by the snapshot.
    while inbox.try_recv().is_ok() {}
    let snapshot = seat.latest.lock().expect("latest lock").clone();
    if let Some(p) = snapshot {
        let msg = ServerBody::Observation { event: None, payload: Box::new(p) };
        if !send(&mut socket, msg.into()).await {
            return;
        }
    }
    let ended = seat.ended.lock().expect("end lock").clone();
    if let Some(end) = ended {
        if !send(&mut socket, end).await {
            return;
        }
    }
    let mut relaying = true;
    loop {
        tokio::select! {
            next = inbox.recv(), if relaying => match next {
                Some(m) => if !send(&mut socket, m).await { return },
                None => relaying = false,
            },
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => continue,
                };
                let reply = handle_client(&seat, &text);
                if let Some(r) = reply {
                    if !send(&mut socket, r).await { return }
                }
            }
        }
    }
}

fn handle_client(seat: &LiveSeat, text: &str) -> Option<ServerMessage> {
    let error = |message: String| Some(ServerBody::Error { message }.into());
    let msg: ClientMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => return error(format!("malformed message: {e}")),
    };
    if msg.protocol_version.is_some_and(|v| v != PROTOCOL_VERSION) {
        return error(format!("unsupported protocol version; this gateway speaks {PROTOCOL_VERSION}"));
    }
    let action = match msg.body {
        ClientBody::Action { action } => action,
        ClientBody::Chat { text } => send_message_action(&text),
        ClientBody::Rating { outcome, satisfaction, preference } => {
            let rating = RatingRecord { role: seat.role.clone(), outcome, satisfaction, preference };
            return match seat.rate(rating) {
                Ok(()) => Some(ServerBody::Rating { accepted: true }.into()),
                Err(e) => error(e.to_string()),
            };
        }
    };
    seat.submit(action).err().and_then(error)
}
