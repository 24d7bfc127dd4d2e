//! Multi-writer multi-reader atomic register over asynchronous message
//! passing, tolerating crashes of any minority.
//!
//! Every process is both a replica (server role, run when a message is
//! delivered) and a client (lane 0). Both client operations have two
//! query/response phases, each waiting for a majority:
//!
//! - write(v): learn the highest sequence number, then store `(v, <sn+1, i>)`.
//! - read(): fetch `(value, timestamp)` pairs and keep the greatest, then
//!   write that pair back before returning it.
//!
//! Wire format (big endian): one kind byte, the tag (`issuer: u32`,
//! `counter: u64`), then the kind's fields:
//!
//! | kind | name          | fields                                   |
//! |------|---------------|------------------------------------------|
//! | 1    | WRITE_REQ     |                                          |
//! | 2    | ACK_WRITE_REQ | `sn: u64`                                |
//! | 3    | WRITE         | `value: u64, ts.sn: u64, ts.pid: u32`    |
//! | 4    | ACK_WRITE     |                                          |
//! | 5    | READ_REQ      |                                          |
//! | 6    | ACK_READ      | `value: u64, ts.sn: u64, ts.pid: u32`    |

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::objects::{RegisterOp, RegisterRet};
use crate::sim::{AdversaryKind, Automaton, Context, EventKind, EventLog, KernelConfig, Lane};
use crate::{ProcessId, Word};

/// Object name of client operations in the log.
pub const OBJECT: &str = "reg";
/// Object name of replica and quorum records.
pub const INTERNAL: &str = "abd";

/// Identity of a written value. Ordered by `sn`, then `pid`; the initial
/// value carries `pid` 0.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Timestamp {
    pub sn: u64,
    pub pid: u32,
}

impl Timestamp {
    pub fn new(sn: u64, pid: ProcessId) -> Self {
        Timestamp { sn, pid: pid.get() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tag {
    pub issuer: ProcessId,
    pub counter: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbdMessage {
    WriteReq {
        tag: Tag,
    },
    AckWriteReq {
        tag: Tag,
        sn: u64,
    },
    Write {
        tag: Tag,
        value: Word,
        ts: Timestamp,
    },
    AckWrite {
        tag: Tag,
    },
    ReadReq {
        tag: Tag,
    },
    AckRead {
        tag: Tag,
        value: Word,
        ts: Timestamp,
    },
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("message truncated")]
    Truncated,
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("tag names process 0")]
    BadIssuer,
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        if self.0.len() < N {
            return Err(DecodeError::Truncated);
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        self.take::<4>().map(u32::from_be_bytes)
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        self.take::<8>().map(u64::from_be_bytes)
    }

    fn ts(&mut self) -> Result<Timestamp, DecodeError> {
        Ok(Timestamp {
            sn: self.u64()?,
            pid: self.u32()?,
        })
    }
}

impl AbdMessage {
    pub fn tag(&self) -> Tag {
        match *self {
            AbdMessage::WriteReq { tag }
            | AbdMessage::AckWriteReq { tag, .. }
            | AbdMessage::Write { tag, .. }
            | AbdMessage::AckWrite { tag }
            | AbdMessage::ReadReq { tag }
            | AbdMessage::AckRead { tag, .. } => tag,
        }
    }

    fn kind(&self) -> u8 {
        match self {
            AbdMessage::WriteReq { .. } => 1,
            AbdMessage::AckWriteReq { .. } => 2,
            AbdMessage::Write { .. } => 3,
            AbdMessage::AckWrite { .. } => 4,
            AbdMessage::ReadReq { .. } => 5,
            AbdMessage::AckRead { .. } => 6,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let tag = self.tag();
        let mut out = vec![self.kind()];
        out.extend_from_slice(&tag.issuer.get().to_be_bytes());
        out.extend_from_slice(&tag.counter.to_be_bytes());
        match *self {
            AbdMessage::AckWriteReq { sn, .. } => out.extend_from_slice(&sn.to_be_bytes()),
            AbdMessage::Write { value, ts, .. } | AbdMessage::AckRead { value, ts, .. } => {
                out.extend_from_slice(&value.to_be_bytes());
                out.extend_from_slice(&ts.sn.to_be_bytes());
                out.extend_from_slice(&ts.pid.to_be_bytes());
            }
            _ => {}
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader(bytes);
        let [kind] = r.take::<1>()?;
        let issuer = ProcessId::try_from(r.u32()?).map_err(|_| DecodeError::BadIssuer)?;
        let tag = Tag {
            issuer,
            counter: r.u64()?,
        };
        let msg = match kind {
            1 => AbdMessage::WriteReq { tag },
            2 => AbdMessage::AckWriteReq { tag, sn: r.u64()? },
            3 => AbdMessage::Write {
                tag,
                value: r.u64()?,
                ts: r.ts()?,
            },
            4 => AbdMessage::AckWrite { tag },
            5 => AbdMessage::ReadReq { tag },
            6 => AbdMessage::AckRead {
                tag,
                value: r.u64()?,
                ts: r.ts()?,
            },
            k => return Err(DecodeError::UnknownKind(k)),
        };
        if !r.0.is_empty() {
            return Err(DecodeError::Trailing(r.0.len()));
        }
        Ok(msg)
    }
}

/// Local copy of the register held by one process.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReplicaState {
    pub reg: Word,
    pub ts: Timestamp,
}

impl ReplicaState {
    /// Server role: the reply to a request, `None` for acknowledgments.
    pub fn handle(&mut self, msg: &AbdMessage) -> Option<AbdMessage> {
        match *msg {
            AbdMessage::WriteReq { tag } => Some(AbdMessage::AckWriteReq {
                tag,
                sn: self.ts.sn,
            }),
            AbdMessage::Write { tag, value, ts } => {
                if self.ts < ts {
                    self.ts = ts;
                    self.reg = value;
                }
                Some(AbdMessage::AckWrite { tag })
            }
            AbdMessage::ReadReq { tag } => Some(AbdMessage::AckRead {
                tag,
                value: self.reg,
                ts: self.ts,
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    WriteQuery,
    WriteUpdate,
    ReadQuery,
    ReadUpdate,
}

impl Phase {
    fn ack_kind(self) -> u8 {
        match self {
            Phase::WriteQuery => 2,
            Phase::WriteUpdate | Phase::ReadUpdate => 4,
            Phase::ReadQuery => 6,
        }
    }
}

/// Acknowledgments for one phase. Acks with another tag or kind are
/// ignored, as are duplicates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumTracker {
    pub tag: Tag,
    pub phase: Phase,
    pub acks: BTreeSet<ProcessId>,
    pub threshold: usize,
    /// Highest sequence number seen (write query).
    pub max_sn: u64,
    /// Greatest timestamped value seen (read query).
    pub best: (Timestamp, Word),
}

impl QuorumTracker {
    pub fn new(tag: Tag, phase: Phase, n: usize) -> Self {
        QuorumTracker {
            tag,
            phase,
            acks: BTreeSet::new(),
            threshold: n / 2 + 1,
            max_sn: 0,
            best: Default::default(),
        }
    }

    /// Returns whether the ack was counted.
    pub fn record(&mut self, from: ProcessId, msg: &AbdMessage) -> bool {
        if msg.tag() != self.tag || msg.kind() != self.phase.ack_kind() || !self.acks.insert(from) {
            return false;
        }
        match *msg {
            AbdMessage::AckWriteReq { sn, .. } => self.max_sn = self.max_sn.max(sn),
            AbdMessage::AckRead { value, ts, .. } if ts > self.best.0 => self.best = (ts, value),
            _ => {}
        }
        true
    }

    pub fn complete(&self) -> bool {
        self.acks.len() >= self.threshold
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum Record {
    Quorum {
        tag: Tag,
        phase: Phase,
        acks: Vec<ProcessId>,
    },
    Store {
        value: Word,
        ts: Timestamp,
    },
}

#[derive(Clone, Debug)]
struct Client {
    ops: VecDeque<RegisterOp>,
    current: Option<RegisterOp>,
    counter: u64,
    tracker: Option<QuorumTracker>,
}

#[derive(Clone, Debug)]
pub struct AbdSystem {
    n: usize,
    skip_read_phase2: bool,
    replicas: Vec<ReplicaState>,
    clients: Vec<Client>,
}

impl AbdSystem {
    /// `workloads[i]` is the operation sequence of process `i + 1`.
    pub fn new(n: usize, workloads: Vec<Vec<RegisterOp>>) -> Self {
        assert!(workloads.len() <= n, "more workloads than processes");
        let mut clients: Vec<Client> = workloads
            .into_iter()
            .map(|ops| Client {
                ops: ops.into(),
                current: None,
                counter: 0,
                tracker: None,
            })
            .collect();
        clients.resize_with(n, || Client {
            ops: VecDeque::new(),
            current: None,
            counter: 0,
            tracker: None,
        });
        AbdSystem {
            n,
            skip_read_phase2: false,
            replicas: vec![ReplicaState::default(); n],
            clients,
        }
    }

    /// Reads return after their first phase. Only for demonstrating why the
    /// second phase exists; histories become non-linearizable.
    pub fn skip_read_phase2(mut self, skip: bool) -> Self {
        self.skip_read_phase2 = skip;
        self
    }

    pub fn replica(&self, p: ProcessId) -> ReplicaState {
        self.replicas[p.index()]
    }

    fn start_phase(&mut self, pid: ProcessId, phase: Phase, msg: AbdMessage, cx: &mut Context<'_>) {
        self.clients[pid.index()].tracker = Some(QuorumTracker::new(msg.tag(), phase, self.n));
        cx.broadcast(msg.encode());
    }

    fn finish(&mut self, pid: ProcessId, ret: RegisterRet, cx: &mut Context<'_>) {
        let c = &mut self.clients[pid.index()];
        let op = c.current.take().expect("operation in progress");
        c.tracker = None;
        cx.respond(OBJECT, &op, &ret);
    }
}

impl Automaton for AbdSystem {
    fn is_enabled(&self, pid: ProcessId, _: Lane) -> bool {
        let c = &self.clients[pid.index()];
        match &c.tracker {
            Some(t) => t.complete(),
            None => c.current.is_none() && !c.ops.is_empty(),
        }
    }

    fn step(&mut self, pid: ProcessId, _: Lane, cx: &mut Context<'_>) {
        let c = &mut self.clients[pid.index()];
        let Some(t) = c.tracker.take() else {
            let op = c.ops.pop_front().expect("enabled with work");
            c.counter += 1;
            let tag = Tag {
                issuer: pid,
                counter: c.counter,
            };
            cx.invoke(OBJECT, &op);
            c.current = Some(op.clone());
            return match op {
                RegisterOp::Write(_) => {
                    self.start_phase(pid, Phase::WriteQuery, AbdMessage::WriteReq { tag }, cx)
                }
                RegisterOp::Read => {
                    self.start_phase(pid, Phase::ReadQuery, AbdMessage::ReadReq { tag }, cx)
                }
            };
        };
        cx.internal(
            INTERNAL,
            &Record::Quorum {
                tag: t.tag,
                phase: t.phase,
                acks: t.acks.iter().copied().collect(),
            },
            None,
        );
        match t.phase {
            Phase::WriteQuery => {
                let Some(RegisterOp::Write(value)) = c.current else {
                    unreachable!("write in progress")
                };
                let ts = Timestamp::new(t.max_sn + 1, pid);
                self.start_phase(
                    pid,
                    Phase::WriteUpdate,
                    AbdMessage::Write {
                        tag: t.tag,
                        value,
                        ts,
                    },
                    cx,
                );
            }
            Phase::WriteUpdate => self.finish(pid, RegisterRet::Ok, cx),
            Phase::ReadQuery => {
                let (ts, value) = t.best;
                if self.skip_read_phase2 {
                    self.finish(pid, RegisterRet::Value(value), cx);
                } else {
                    self.start_phase(
                        pid,
                        Phase::ReadUpdate,
                        AbdMessage::Write {
                            tag: t.tag,
                            value,
                            ts,
                        },
                        cx,
                    );
                    self.clients[pid.index()].tracker.as_mut().unwrap().best = (ts, value);
                }
            }
            Phase::ReadUpdate => self.finish(pid, RegisterRet::Value(t.best.1), cx),
        }
    }

    fn receive(&mut self, pid: ProcessId, from: ProcessId, payload: &[u8], cx: &mut Context<'_>) {
        let msg = match AbdMessage::decode(payload) {
            Ok(m) => m,
            Err(e) => return cx.note(format!("undecodable message: {e}")),
        };
        let replica = &mut self.replicas[pid.index()];
        let before = replica.ts;
        if let Some(reply) = replica.handle(&msg) {
            if replica.ts != before {
                cx.internal(
                    INTERNAL,
                    &Record::Store {
                        value: replica.reg,
                        ts: replica.ts,
                    },
                    None,
                );
            }
            cx.send(from, reply.encode());
        } else if let Some(t) = self.clients[pid.index()].tracker.as_mut() {
            t.record(from, &msg);
        }
    }
}

/// Schedule for three processes where `p3` writes 1 while `p1` and then
/// `p2` read. `p1`'s first phase hears from `p3`, which already stored the
/// new value; `p2`'s first phase hears only from replicas that did not.
/// Entries that are not enabled (the write-back steps when reads skip
/// their second phase) are passed over, so the same script drives both
/// variants.
pub const INVERSION_SCRIPT: &[&str] = &[
    // p3: write query answered by p3 and p1, then WRITE reaches p3 only.
    "p3", "p3->p3", "p3->p1", "p3->p3", "p1->p3", "p3", "p3->p3",
    // p1: read query answered by p1 and p3.
    "p1", "p1->p1", "p1->p3", "p1->p1", "p3->p1!", "p1",
    // p1: write-back reaches p1 and p2.
    "p1->p1", "p1->p2!", "p1->p1", "p2->p1", "p1",
    // p2: read query answered by p2 and p1.
    "p2", "p2->p2", "p2->p1", "p2->p2", "p1->p2!", "p2",
];

/// The system and configuration that [`INVERSION_SCRIPT`] drives.
pub fn inversion_setup(skip_read_phase2: bool) -> (AbdSystem, KernelConfig) {
    let script = INVERSION_SCRIPT
        .iter()
        .map(|s| s.parse().expect("valid script"))
        .collect();
    let mut cfg = KernelConfig::new(3, 0);
    cfg.adversary = AdversaryKind::Scripted(script);
    let workloads = vec![
        vec![RegisterOp::Read],
        vec![RegisterOp::Read],
        vec![RegisterOp::Write(1)],
    ];
    (
        AbdSystem::new(3, workloads).skip_read_phase2(skip_read_phase2),
        cfg,
    )
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum RecordIn {
    Quorum {
        tag: Tag,
        phase: Phase,
        acks: Vec<ProcessId>,
    },
    Store {
        ts: Timestamp,
    },
}

fn records(log: &EventLog) -> impl Iterator<Item = (ProcessId, RecordIn)> + '_ {
    log.iter()
        .filter(|e| e.kind == EventKind::Internal && e.obj.as_deref() == Some(INTERNAL))
        .filter_map(|e| Some((e.pid, serde_json::from_value(e.op.clone()?).ok()?)))
}

/// Every completed phase heard from a majority, and any two completed
/// phases share at least one process.
pub fn check_quorum_intersection(log: &EventLog, n: usize) -> Result<usize, String> {
    let quorums: Vec<(Tag, Phase, BTreeSet<ProcessId>)> = records(log)
        .filter_map(|(_, r)| match r {
            RecordIn::Quorum { tag, phase, acks } => Some((tag, phase, acks.into_iter().collect())),
            _ => None,
        })
        .collect();
    for (k, (tag, phase, a)) in quorums.iter().enumerate() {
        if a.len() <= n / 2 {
            return Err(format!(
                "{phase:?} of {tag:?} completed with {} acks",
                a.len()
            ));
        }
        if let Some((t2, p2, _)) = quorums[k + 1..].iter().find(|(_, _, b)| a.is_disjoint(b)) {
            return Err(format!(
                "{phase:?} of {tag:?} and {p2:?} of {t2:?} have disjoint quorums"
            ));
        }
    }
    Ok(quorums.len())
}

/// Each replica's timestamp only grows.
pub fn check_replica_monotonic(log: &EventLog) -> Result<(), String> {
    let mut last: std::collections::BTreeMap<ProcessId, Timestamp> = Default::default();
    for (pid, r) in records(log) {
        if let RecordIn::Store { ts } = r {
            if last.get(&pid).is_some_and(|prev| *prev >= ts) {
                return Err(format!("{pid} stored {ts:?} after {:?}", last[&pid]));
            }
            last.insert(pid, ts);
        }
    }
    Ok(())
}

/// Number of replicas that stored timestamp `ts`.
pub fn installed_at(log: &EventLog, ts: Timestamp) -> usize {
    records(log)
        .filter(|(_, r)| matches!(r, RecordIn::Store { ts: t } if *t == ts))
        .map(|(p, _)| p)
        .collect::<BTreeSet<_>>()
        .len()
}
