//! Line-delimited event records emitted by the kernel.
//!
//! Every record is one JSON object on its own line. Field order is fixed by
//! the struct declaration below, and absent optional fields are omitted, so
//! two runs that took the same steps produce byte-identical logs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::ProcessId;

/// Detail tag carried by register access records.
pub const REGISTER_DETAIL: &str = "register";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Invoke,
    Respond,
    Send,
    Deliver,
    Crash,
    Internal,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::Invoke => "invoke",
            EventKind::Respond => "respond",
            EventKind::Send => "send",
            EventKind::Deliver => "deliver",
            EventKind::Crash => "crash",
            EventKind::Internal => "internal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Position in the log; strictly increasing.
    pub seq: u64,
    /// Kernel step that produced the event; non-decreasing.
    pub step: u64,
    pub pid: ProcessId,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obj: Option<String>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        deserialize_with = "present"
    )]
    pub op: Option<Value>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        deserialize_with = "present"
    )]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<ProcessId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// A field that is present is `Some`, even when it holds `null` (the
/// result of a unit-returning operation).
fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

impl Event {
    pub fn new(step: u64, pid: ProcessId, kind: EventKind) -> Self {
        Event {
            seq: 0,
            step,
            pid,
            kind,
            obj: None,
            op: None,
            result: None,
            peer: None,
            msg: None,
            payload: None,
            detail: None,
        }
    }

    pub fn is_register_access(&self) -> bool {
        self.kind == EventKind::Internal && self.detail.as_deref() == Some(REGISTER_DETAIL)
    }

    /// Decoded payload bytes of a send or deliver record.
    pub fn payload_bytes(&self) -> Option<Vec<u8>> {
        self.payload.as_deref().and_then(|h| hex::decode(h).ok())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: sequence number {seq} does not increase")]
    NonMonotonic { line: usize, seq: u64 },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `event`, assigning it the next sequence number.
    pub fn push(&mut self, mut event: Event) -> u64 {
        let seq = self.events.len() as u64;
        event.seq = seq;
        self.events.push(event);
        seq
    }

    pub(crate) fn last_mut(&mut self) -> &mut Event {
        self.events.last_mut().expect("log is non-empty")
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Event> {
        self.events.iter()
    }

    /// The first `len` events, as a log of its own.
    pub fn prefix(&self, len: usize) -> EventLog {
        EventLog {
            events: self.events[..len.min(self.events.len())].to_vec(),
        }
    }

    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses line-delimited records. Blank lines are skipped.
    pub fn from_records(text: &str) -> Result<Self, LogError> {
        let mut events: Vec<Event> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(line).map_err(|source| LogError::Parse {
                line: i + 1,
                source,
            })?;
            if let Some(prev) = events.last() {
                if event.seq <= prev.seq {
                    return Err(LogError::NonMonotonic {
                        line: i + 1,
                        seq: event.seq,
                    });
                }
            }
            events.push(event);
        }
        Ok(EventLog { events })
    }

    /// SHA-256 of the record encoding, hex encoded.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.events {
            hasher.update(serde_json::to_vec(e).expect("event serializes"));
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    /// Human-readable rendering, one event per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = write!(
                out,
                "{:>6} {:>6}  {:<4} {:<8}",
                e.seq,
                e.step,
                e.pid,
                e.kind.as_str()
            );
            if let Some(obj) = &e.obj {
                let _ = write!(out, " {obj}");
            }
            if let Some(op) = &e.op {
                let _ = write!(out, " {op}");
            }
            if let Some(r) = &e.result {
                let _ = write!(out, " -> {r}");
            }
            if let Some(peer) = e.peer {
                let arrow = if e.kind == EventKind::Send {
                    "to"
                } else {
                    "from"
                };
                let _ = write!(out, " {arrow} {peer}");
            }
            if let Some(m) = e.msg {
                let _ = write!(out, " #{m}");
            }
            if let Some(d) = &e.detail {
                if d != REGISTER_DETAIL {
                    let _ = write!(out, " ({d})");
                }
            }
            out.push('\n');
        }
        out
    }
}

impl<'a> IntoIterator for &'a EventLog {
    type Item = &'a Event;
    type IntoIter = std::slice::Iter<'a, Event>;

    fn into_iter(self) -> Self::IntoIter {
        self.events.iter()
    }
}
