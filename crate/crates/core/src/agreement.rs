//! Consensus from LL/SC, and total-order broadcast from consensus.
//!
//! A consensus instance is one LL/SC cell `M` holding `None` (no decision)
//! or the decided value. `propose(v)`:
//!
//! ```text
//! val <- M.LL(); if val is set: return val
//! if M.SC(v): return v
//! return M.LL()
//! ```
//!
//! so a proposer decides within three of its own steps.
//!
//! Total-order broadcast: a message is first diffused (sent to self, then
//! rebroadcast by every process on first receipt). A background task
//! repeatedly proposes the batch of diffused-but-unordered messages, sorted
//! by `(sender, counter)`, to consensus instance `CS[k]` for `k = 1, 2, ...`
//! and appends the decided batch (minus messages already queued) to the
//! delivery queue. Instances are created on first use.
//!
//! Lanes: 0 submits broadcasts, 1 runs the background task, 2 delivers.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::objects::{ConsensusOp, ConsensusRet};
use crate::registers::LlscRegister;
use crate::sim::{Automaton, Context, EventKind, EventLog, Lane};
use crate::{ProcessId, Word};

pub const CONSENSUS_OBJECT: &str = "consensus";
pub const TO_OBJECT: &str = "to";

pub const LANE_BROADCAST: Lane = 0;
pub const LANE_TASK: Lane = 1;
pub const LANE_DELIVER: Lane = 2;

/// One consensus object over LL/SC.
pub type ConsensusCell<T> = LlscRegister<Option<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    FirstLl,
    Sc,
    SecondLl,
}

/// One process's `propose` in progress; each [`step`](Self::step) is one
/// LL/SC access.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal<T> {
    value: T,
    stage: Stage,
}

impl<T: Clone + serde::Serialize> Proposal<T> {
    pub fn new(value: T) -> Self {
        Proposal {
            value,
            stage: Stage::FirstLl,
        }
    }

    pub fn value(&self) -> &T {
        &self.value
    }

    /// Returns the decision once known.
    pub fn step(&mut self, m: &mut ConsensusCell<T>, cx: &mut Context<'_>) -> Option<T> {
        match self.stage {
            Stage::FirstLl => {
                if let Some(v) = m.ll_in(cx) {
                    return Some(v);
                }
                self.stage = Stage::Sc;
                None
            }
            Stage::Sc => {
                if m.sc_in(cx, Some(self.value.clone())) {
                    return Some(self.value.clone());
                }
                self.stage = Stage::SecondLl;
                None
            }
            Stage::SecondLl => Some(
                m.ll_in(cx)
                    .expect("a failed SC means another proposal succeeded"),
            ),
        }
    }
}

/// Processes proposing to one shared instance, one proposal each.
#[derive(Clone, Debug)]
pub struct ConsensusSystem {
    m: ConsensusCell<Word>,
    pending: Vec<Option<Word>>,
    running: Vec<Option<Proposal<Word>>>,
    decided: Vec<Option<Word>>,
}

impl ConsensusSystem {
    /// `proposals[i]` is the value `p(i+1)` proposes, if any.
    pub fn new(n: usize, proposals: Vec<Option<Word>>) -> Self {
        let mut pending = proposals;
        pending.resize(n, None);
        ConsensusSystem {
            m: LlscRegister::new("M", None, n),
            pending,
            running: vec![None; n],
            decided: vec![None; n],
        }
    }

    pub fn decided(&self, p: ProcessId) -> Option<Word> {
        self.decided[p.index()]
    }

    /// Decides `v` before anyone runs, as if a proposal already won.
    pub fn predecide(mut self, v: Word) -> Self {
        self.m = LlscRegister::new("M", Some(v), self.pending.len());
        self
    }
}

impl Automaton for ConsensusSystem {
    fn is_enabled(&self, pid: ProcessId, _: Lane) -> bool {
        let i = pid.index();
        self.pending[i].is_some() || self.running[i].is_some()
    }

    fn step(&mut self, pid: ProcessId, _: Lane, cx: &mut Context<'_>) {
        let i = pid.index();
        if let Some(v) = self.pending[i].take() {
            cx.invoke(CONSENSUS_OBJECT, &ConsensusOp::Propose(v));
            self.running[i] = Some(Proposal::new(v));
        }
        let proposal = self.running[i].as_mut().expect("enabled");
        if let Some(d) = proposal.step(&mut self.m, cx) {
            cx.respond(
                CONSENSUS_OBJECT,
                &ConsensusOp::Propose(*proposal.value()),
                &ConsensusRet::Decided(d),
            );
            self.running[i] = None;
            self.decided[i] = Some(d);
        }
    }
}

/// Identity of a broadcast message: its sender and the sender's counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MessageId {
    pub sender: ProcessId,
    pub counter: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToMessage {
    pub id: MessageId,
    #[serde(with = "hex::serde")]
    pub payload: Vec<u8>,
}

impl ToMessage {
    /// `sender: u32 BE ‖ counter: u64 BE ‖ len: u32 BE ‖ payload`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.payload.len());
        out.extend_from_slice(&self.id.sender.get().to_be_bytes());
        out.extend_from_slice(&self.id.counter.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let sender = u32::from_be_bytes(bytes.get(..4)?.try_into().ok()?);
        let counter = u64::from_be_bytes(bytes.get(4..12)?.try_into().ok()?);
        let len = u32::from_be_bytes(bytes.get(12..16)?.try_into().ok()?) as usize;
        let payload = bytes.get(16..)?;
        if payload.len() != len {
            return None;
        }
        let sender = ProcessId::try_from(sender).ok()?;
        Some(ToMessage {
            id: MessageId { sender, counter },
            payload: payload.to_vec(),
        })
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("message {0:?} was already broadcast")]
pub struct DuplicateMessage(pub MessageId);

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToRecord {
    ToBroadcast(MessageId),
    Decide { k: u64, batch: Vec<MessageId> },
    ToDeliver(MessageId),
}

/// Shared consensus instances `CS[1], CS[2], ...`.
#[derive(Clone, Debug)]
pub struct Instances {
    n: usize,
    cells: BTreeMap<u64, ConsensusCell<Vec<ToMessage>>>,
}

impl Instances {
    pub fn new(n: usize) -> Self {
        Instances {
            n,
            cells: BTreeMap::new(),
        }
    }

    fn get(&mut self, k: u64) -> &mut ConsensusCell<Vec<ToMessage>> {
        let n = self.n;
        self.cells
            .entry(k)
            .or_insert_with(|| LlscRegister::new(format!("CS[{k}]"), None, n))
    }

    pub fn created(&self) -> usize {
        self.cells.len()
    }
}

/// One process's total-order broadcast state.
#[derive(Clone, Debug)]
pub struct ToLayer {
    pid: ProcessId,
    counter: u64,
    /// Messages received through diffusion.
    delivered: BTreeMap<MessageId, Vec<u8>>,
    queued: BTreeSet<MessageId>,
    to_deliverable: Vec<ToMessage>,
    next_deliver: usize,
    sn: u64,
    proposal: Option<Proposal<Vec<ToMessage>>>,
    submitted: BTreeSet<MessageId>,
}

impl ToLayer {
    pub fn new(pid: ProcessId) -> Self {
        ToLayer {
            pid,
            counter: 0,
            delivered: BTreeMap::new(),
            queued: BTreeSet::new(),
            to_deliverable: Vec::new(),
            next_deliver: 0,
            sn: 0,
            proposal: None,
            submitted: BTreeSet::new(),
        }
    }

    /// Stamps `payload` with a fresh identity and broadcasts it.
    pub fn broadcast(&mut self, payload: Vec<u8>, cx: &mut Context<'_>) -> MessageId {
        self.counter += 1;
        let id = MessageId {
            sender: self.pid,
            counter: self.counter,
        };
        self.broadcast_with_id(ToMessage { id, payload }, cx)
            .expect("fresh identity");
        id
    }

    pub fn broadcast_with_id(
        &mut self,
        m: ToMessage,
        cx: &mut Context<'_>,
    ) -> Result<(), DuplicateMessage> {
        if !self.submitted.insert(m.id) {
            return Err(DuplicateMessage(m.id));
        }
        cx.internal(TO_OBJECT, &ToRecord::ToBroadcast(m.id), None);
        cx.send(self.pid, m.encode());
        Ok(())
    }

    /// Diffusion: rebroadcast on first receipt. Returns false for payloads
    /// that are not diffusion messages.
    pub fn receive(&mut self, payload: &[u8], cx: &mut Context<'_>) -> bool {
        let Some(m) = ToMessage::decode(payload) else {
            return false;
        };
        if let Entry::Vacant(e) = self.delivered.entry(m.id) {
            cx.broadcast(payload.to_vec());
            e.insert(m.payload);
        }
        true
    }

    pub fn task_enabled(&self) -> bool {
        self.proposal.is_some() || self.delivered.keys().any(|id| !self.queued.contains(id))
    }

    /// One step of the background task: start a proposal for the next
    /// instance if none is running, then take one consensus step.
    pub fn task_step(&mut self, instances: &mut Instances, cx: &mut Context<'_>) {
        if self.proposal.is_none() {
            let batch: Vec<ToMessage> = self
                .delivered
                .iter()
                .filter(|(id, _)| !self.queued.contains(id))
                .map(|(id, p)| ToMessage {
                    id: *id,
                    payload: p.clone(),
                })
                .collect();
            self.sn += 1;
            self.proposal = Some(Proposal::new(batch));
        }
        let decision = self
            .proposal
            .as_mut()
            .unwrap()
            .step(instances.get(self.sn), cx);
        if let Some(batch) = decision {
            self.proposal = None;
            cx.internal(
                TO_OBJECT,
                &ToRecord::Decide {
                    k: self.sn,
                    batch: batch.iter().map(|m| m.id).collect(),
                },
                None,
            );
            for m in batch {
                if self.queued.insert(m.id) {
                    self.to_deliverable.push(m);
                }
            }
        }
    }

    pub fn deliver_enabled(&self) -> bool {
        self.next_deliver < self.to_deliverable.len()
    }

    pub fn deliver_next(&mut self, cx: &mut Context<'_>) -> ToMessage {
        let m = self.to_deliverable[self.next_deliver].clone();
        self.next_deliver += 1;
        cx.internal(TO_OBJECT, &ToRecord::ToDeliver(m.id), None);
        m
    }

    pub fn delivered_sequence(&self) -> &[ToMessage] {
        &self.to_deliverable[..self.next_deliver]
    }

    pub fn instance(&self) -> u64 {
        self.sn
    }
}

/// Processes broadcasting fixed payload lists through total-order
/// broadcast.
#[derive(Clone, Debug)]
pub struct ToSystem {
    layers: Vec<ToLayer>,
    outgoing: Vec<VecDeque<Vec<u8>>>,
    instances: Instances,
}

impl ToSystem {
    pub fn new(n: usize, workloads: Vec<Vec<Vec<u8>>>) -> Self {
        let mut outgoing: Vec<VecDeque<Vec<u8>>> = workloads.into_iter().map(Into::into).collect();
        outgoing.resize_with(n, VecDeque::new);
        ToSystem {
            layers: ProcessId::all(n).map(ToLayer::new).collect(),
            outgoing,
            instances: Instances::new(n),
        }
    }

    pub fn layer(&self, p: ProcessId) -> &ToLayer {
        &self.layers[p.index()]
    }

    pub fn instances(&self) -> &Instances {
        &self.instances
    }
}

impl Automaton for ToSystem {
    fn lanes(&self) -> Lane {
        3
    }

    fn is_enabled(&self, pid: ProcessId, lane: Lane) -> bool {
        let l = &self.layers[pid.index()];
        match lane {
            LANE_BROADCAST => !self.outgoing[pid.index()].is_empty(),
            LANE_TASK => l.task_enabled(),
            _ => l.deliver_enabled(),
        }
    }

    fn step(&mut self, pid: ProcessId, lane: Lane, cx: &mut Context<'_>) {
        let l = &mut self.layers[pid.index()];
        match lane {
            LANE_BROADCAST => {
                let payload = self.outgoing[pid.index()].pop_front().expect("enabled");
                l.broadcast(payload, cx);
            }
            LANE_TASK => l.task_step(&mut self.instances, cx),
            _ => {
                l.deliver_next(cx);
            }
        }
    }

    fn receive(&mut self, pid: ProcessId, _: ProcessId, payload: &[u8], cx: &mut Context<'_>) {
        if !self.layers[pid.index()].receive(payload, cx) {
            cx.note("undecodable message");
        }
    }
}

fn to_records(log: &EventLog) -> impl Iterator<Item = (ProcessId, ToRecord)> + '_ {
    log.iter()
        .filter(|e| e.kind == EventKind::Internal && e.obj.as_deref() == Some(TO_OBJECT))
        .filter_map(|e| Some((e.pid, serde_json::from_value(e.op.clone()?).ok()?)))
}

/// Per-process to-delivery sequences recorded in `log`.
pub fn delivery_sequences(log: &EventLog) -> BTreeMap<ProcessId, Vec<MessageId>> {
    let mut seqs: BTreeMap<ProcessId, Vec<MessageId>> = BTreeMap::new();
    for (pid, r) in to_records(log) {
        if let ToRecord::ToDeliver(id) = r {
            seqs.entry(pid).or_default().push(id);
        }
    }
    seqs
}

/// Checks the total-order broadcast properties on a log:
///
/// - validity: every delivered message was broadcast;
/// - integrity: no process delivers a message twice;
/// - order: at every point of the log, the delivery sequences are all
///   prefixes of one sequence;
/// - termination-1 (`complete` runs only): a process that broadcast and did
///   not crash delivered its message;
/// - termination-2 (`complete` runs only): a message delivered by anyone is
///   delivered by every process that did not crash.
///
/// Also checks that every instance decided one batch for everybody.
pub fn check_to_properties(log: &EventLog, n: usize, complete: bool) -> Result<(), String> {
    let mut broadcast: BTreeMap<MessageId, ProcessId> = BTreeMap::new();
    let mut seqs: Vec<Vec<MessageId>> = vec![Vec::new(); n];
    let mut seen: Vec<BTreeSet<MessageId>> = vec![BTreeSet::new(); n];
    let mut global: Vec<MessageId> = Vec::new();
    let mut decisions: BTreeMap<u64, Vec<MessageId>> = BTreeMap::new();
    for (pid, r) in to_records(log) {
        match r {
            ToRecord::ToBroadcast(id) => {
                broadcast.insert(id, pid);
            }
            ToRecord::Decide { k, batch } => {
                if let Some(prev) = decisions.get(&k) {
                    if *prev != batch {
                        return Err(format!("instance {k} decided differently at {pid}"));
                    }
                } else {
                    decisions.insert(k, batch);
                }
            }
            ToRecord::ToDeliver(id) => {
                if !broadcast.contains_key(&id) {
                    return Err(format!("validity: {pid} delivered {id:?}, never broadcast"));
                }
                if !seen[pid.index()].insert(id) {
                    return Err(format!("integrity: {pid} delivered {id:?} twice"));
                }
                let pos = seqs[pid.index()].len();
                seqs[pid.index()].push(id);
                match global.get(pos) {
                    Some(g) if *g != id => {
                        return Err(format!(
                            "order: {pid} delivered {id:?} at position {pos}, others {g:?}"
                        ));
                    }
                    Some(_) => {}
                    None => global.push(id),
                }
            }
        }
    }
    if !complete {
        return Ok(());
    }
    let crashed: BTreeSet<ProcessId> = log
        .iter()
        .filter(|e| e.kind == EventKind::Crash)
        .map(|e| e.pid)
        .collect();
    for (id, sender) in &broadcast {
        if !crashed.contains(sender) && !seen[sender.index()].contains(id) {
            return Err(format!(
                "termination-1: {sender} never delivered its own {id:?}"
            ));
        }
    }
    for q in ProcessId::all(n).filter(|q| !crashed.contains(q)) {
        if seqs[q.index()].len() != global.len() {
            return Err(format!(
                "termination-2: {q} delivered {} messages, others {}",
                seqs[q.index()].len(),
                global.len()
            ));
        }
    }
    Ok(())
}
