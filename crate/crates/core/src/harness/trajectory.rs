use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HarnessError, SessionConfig};
use crate::bus::{Coordinator, EndReason, EventKind, Outbound, StepMessage, StepOutcome};
use crate::env::{EnvState, Role, Team};
use crate::eval::{MetricReport, Outcome};
use crate::tasks::TaskRegistry;

pub const FORMAT_VERSION: u32 = 1;

/// One routed notification: its channel and event kind (none for `end`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notice {
    pub channel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<EventKind>,
}

pub fn notices(outbound: &[Outbound]) -> Vec<Notice> {
    outbound
        .iter()
        .map(|o| Notice { channel: o.channel.name(), kind: o.kind() })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventBody {
    Start { notified: Vec<Notice> },
    Step { role: Role, action: String, outcome: StepOutcome, notified: Vec<Notice> },
    /// Only ticks that broadcast are recorded.
    Tick { notified: Vec<Notice> },
    /// A session ended from outside the environment (wall clock, abort).
    End { reason: EndReason, notified: Vec<Notice> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub index: u64,
    pub t_ms: u64,
    #[serde(flatten)]
    pub body: EventBody,
    /// State digest after the event.
    pub digest: String,
    pub prev_hash: String,
    pub hash: String,
}

#[derive(Serialize)]
struct Hashed<'a> {
    index: u64,
    t_ms: u64,
    #[serde(flatten)]
    body: &'a EventBody,
    digest: &'a str,
}

fn chain_hash(prev: &str, index: u64, t_ms: u64, body: &EventBody, digest: &str) -> String {
    let mut h = Sha256::new();
    h.update(prev.as_bytes());
    h.update(serde_json::to_vec(&Hashed { index, t_ms, body, digest }).expect("event serializes"));
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub format_version: u32,
    pub config: SessionConfig,
    pub team: Team,
    pub initial_digest: String,
}

impl TrajectoryHeader {
    /// Root of the hash chain.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("header serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub role: Role,
    #[serde(default)]
    pub outcome: Option<u8>,
    #[serde(default)]
    pub satisfaction: Option<u8>,
    /// Free-form pairwise preference, e.g. the id of the preferred session.
    #[serde(default)]
    pub preference: Option<String>,
}

impl RatingRecord {
    pub fn validate(&self) -> Result<(), HarnessError> {
        for (name, v) in [("outcome", self.outcome), ("satisfaction", self.satisfaction)] {
            if v.is_some_and(|v| !(1..=5).contains(&v)) {
                return Err(HarnessError::Config(format!("{name} rating must be 1 to 5")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFooter {
    pub end_reason: EndReason,
    pub final_digest: String,
    pub final_state: EnvState,
    pub outcome: Outcome,
    #[serde(default)]
    pub metrics: Option<MetricReport<f64>>,
    #[serde(default)]
    pub ratings: Vec<RatingRecord>,
    /// Free tags, e.g. failure-mode labels.
    #[serde(default)]
    pub annotations: Vec<String>,
    /// Set when the session was aborted by an infrastructure failure.
    #[serde(default)]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(TrajectoryHeader),
    Event(EventRecord),
    Footer(TrajectoryFooter),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub header: TrajectoryHeader,
    pub events: Vec<EventRecord>,
    pub footer: TrajectoryFooter,
}

/// Appends hash-chained events, optionally streaming each line to a file.
pub struct Recorder {
    header: TrajectoryHeader,
    events: Vec<EventRecord>,
    last_hash: String,
    sink: Option<BufWriter<File>>,
}

impl Recorder {
    pub fn new(header: TrajectoryHeader) -> Self {
        let last_hash = header.hash();
        Self { header, events: Vec::new(), last_hash, sink: None }
    }

    /// Writes the header now and every event as it is appended.
    pub fn stream_to(mut self, path: &Path) -> Result<Self, HarnessError> {
        let mut w = BufWriter::new(File::create(path)?);
        write_line(&mut w, &Line::Header(self.header.clone()))?;
        for e in &self.events {
            write_line(&mut w, &Line::Event(e.clone()))?;
        }
        w.flush()?;
        self.sink = Some(w);
        Ok(self)
    }

    pub fn header(&self) -> &TrajectoryHeader {
        &self.header
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn append(&mut self, t_ms: u64, body: EventBody, digest: String) -> Result<&EventRecord, HarnessError> {
        let index = self.events.len() as u64;
        let hash = chain_hash(&self.last_hash, index, t_ms, &body, &digest);
        let rec = EventRecord { index, t_ms, body, digest, prev_hash: self.last_hash.clone(), hash: hash.clone() };
        if let Some(w) = &mut self.sink {
            write_line(w, &Line::Event(rec.clone()))?;
            w.flush()?;
        }
        self.last_hash = hash;
        self.events.push(rec);
        Ok(self.events.last().expect("just pushed"))
    }

    pub fn finish(mut self, footer: TrajectoryFooter) -> Result<TrajectoryRecord, HarnessError> {
        if let Some(w) = &mut self.sink {
            write_line(w, &Line::Footer(footer.clone()))?;
            w.flush()?;
        }
        Ok(TrajectoryRecord { header: self.header, events: self.events, footer })
    }
}

fn write_line<W: Write>(w: &mut W, line: &Line) -> Result<(), HarnessError> {
    serde_json::to_writer(&mut *w, line).map_err(|e| HarnessError::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

impl TrajectoryRecord {
    pub fn to_jsonl(&self) -> String {
        let mut out = Vec::new();
        write_line(&mut out, &Line::Header(self.header.clone())).expect("in-memory write");
        for e in &self.events {
            write_line(&mut out, &Line::Event(e.clone())).expect("in-memory write");
        }
        write_line(&mut out, &Line::Footer(self.footer.clone())).expect("in-memory write");
        String::from_utf8(out).expect("json is utf-8")
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, HarnessError> {
        let mut header = None;
        let mut events = Vec::new();
        let mut footer = None;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| HarnessError::Format(format!("line {}: {e}", n + 1)))?;
            match (parsed, header.is_some(), footer.is_some()) {
                (Line::Header(h), false, _) => header = Some(h),
                (Line::Event(e), true, false) => events.push(e),
                (Line::Footer(f), true, false) => footer = Some(f),
                _ => return Err(HarnessError::Format(format!("line {}: out of place", n + 1))),
            }
        }
        let header = header.ok_or_else(|| HarnessError::Format("missing header".into()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(HarnessError::Format(format!("unsupported format version {}", header.format_version)));
        }
        let footer = footer.ok_or_else(|| HarnessError::Format("missing footer (truncated file?)".into()))?;
        Ok(Self { header, events, footer })
    }

    pub fn persist(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_jsonl(BufReader::new(File::open(path)?))
    }

    /// Recomputes the hash chain; the first event whose stored hash or
    /// predecessor link disagrees is reported.
    pub fn verify_chain(&self) -> Result<(), HarnessError> {
        let mut prev = self.header.hash();
        for (i, e) in self.events.iter().enumerate() {
            let expected = chain_hash(&prev, i as u64, e.t_ms, &e.body, &e.digest);
            if e.index != i as u64 || e.prev_hash != prev || e.hash != expected {
                return Err(HarnessError::Divergence { index: i, reason: "hash chain broken".into() });
            }
            prev = e.hash.clone();
        }
        Ok(())
    }

    /// Records an end-of-session rating after the fact, replacing any
    /// earlier one from the same role. Ratings sit outside the hash chain.
    pub fn add_rating(&mut self, rating: RatingRecord) -> Result<(), HarnessError> {
        rating.validate()?;
        if !self.header.team.contains(&rating.role) {
            return Err(HarnessError::Config(format!("{} is not in this session", rating.role)));
        }
        let f = &mut self.footer;
        f.ratings.retain(|r| r.role != rating.role);
        if rating.outcome.is_some() || rating.satisfaction.is_some() {
            f.outcome.outcome_rating = rating.outcome;
            f.outcome.satisfaction = rating.satisfaction;
            if let Some(m) = &mut f.metrics {
                m.satisfaction = rating.satisfaction;
            }
        }
        f.ratings.push(rating);
        Ok(())
    }

    /// Step events, in order.
    pub fn steps(&self) -> impl Iterator<Item = (&Role, &str, &StepOutcome)> {
        self.events.iter().filter_map(|e| match &e.body {
            EventBody::Step { role, action, outcome, .. } => Some((role, action.as_str(), outcome)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub events: usize,
    pub final_digest: String,
}

/// Re-applies every recorded event through a fresh environment and checks
/// outcomes, routing and state digests event by event.
pub fn replay(record: &TrajectoryRecord, registry: &TaskRegistry) -> Result<ReplayReport, HarnessError> {
    record.verify_chain()?;
    let cfg = &record.header.config;
    let instance = registry.instance(&cfg.task_id, &cfg.instance_id)?;
    let (env, _) = registry.reset(&instance, record.header.team.clone(), cfg.budget())?;
    if env.state().digest() != record.header.initial_digest {
        return Err(HarnessError::Divergence { index: 0, reason: "initial state differs".into() });
    }
    let mut coord = Coordinator::new(env, cfg.coordinator_config(), 0);
    for (i, e) in record.events.iter().enumerate() {
        let diverge = |what: &str| HarnessError::Divergence { index: i, reason: what.into() };
        let (got, recorded) = match &e.body {
            EventBody::Start { notified } => (coord.initial_notifications(e.t_ms), notified),
            EventBody::Step { role, action, outcome, notified } => {
                let h = coord.handle_step_event(&StepMessage { role: role.clone(), action: action.clone() }, e.t_ms);
                if h.outcome != *outcome {
                    return Err(diverge(&format!("outcome {:?}, recorded {:?}", h.outcome, outcome)));
                }
                (h.outbound, notified)
            }
            EventBody::Tick { notified } => (coord.handle_tick(e.t_ms), notified),
            EventBody::End { reason, notified } => (coord.end(reason.clone(), e.t_ms), notified),
        };
        if notices(&got) != *recorded {
            return Err(diverge("notifications differ"));
        }
        if coord.env().state().digest() != e.digest {
            return Err(diverge("state digest differs"));
        }
    }
    let final_digest = coord.env().state().digest();
    if final_digest != record.footer.final_digest || record.footer.final_state.digest() != final_digest {
        return Err(HarnessError::Divergence { index: record.events.len(), reason: "final digest differs".into() });
    }
    Ok(ReplayReport { events: record.events.len(), final_digest })
}
