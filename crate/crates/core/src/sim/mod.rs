//! Deterministic discrete-event execution of protocol automata.
//!
//! A run interleaves the atomic steps of `n` automata. Each kernel step is
//! either a local step of one process (on one of its lanes) or the delivery
//! of one pending message. An [`Adversary`] picks the step; a crash plan
//! halts processes at fixed step indices. Given the same configuration and
//! seed, a run reproduces its [`EventLog`] byte for byte.

mod adversary;
mod explore;
mod log;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use adversary::{
    Adversary, AdversaryKind, EnabledStep, Fairness, ScriptEntry, ScriptParseError,
    FAIRNESS_WINDOW_PER_PROCESS,
};
pub use explore::{explore, ExploreOptions, ExploreStats};
pub use log::{Event, EventKind, EventLog, LogError, REGISTER_DETAIL};

/// Default limit on kernel steps per run.
pub const DEFAULT_STEP_BUDGET: u64 = 100_000;

/// Identity of a process, in `1..=n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ProcessId(u32);

impl ProcessId {
    /// Panics if `id` is zero.
    pub fn new(id: u32) -> Self {
        assert!(id >= 1, "process ids start at 1");
        ProcessId(id)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Zero-based index, for per-process arrays.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        ProcessId(i as u32 + 1)
    }

    pub fn all(n: usize) -> impl Iterator<Item = ProcessId> + Clone {
        (1..=n as u32).map(ProcessId)
    }
}

impl TryFrom<u32> for ProcessId {
    type Error = String;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        if v == 0 {
            Err("process ids start at 1".into())
        } else {
            Ok(ProcessId(v))
        }
    }
}

impl From<ProcessId> for u32 {
    fn from(p: ProcessId) -> u32 {
        p.0
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl FromStr for ProcessId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix('p').unwrap_or(s);
        let v: u32 = digits
            .parse()
            .map_err(|_| format!("bad process id {s:?}"))?;
        ProcessId::try_from(v)
    }
}

/// Independent local activity within a process (client role, background
/// task, ...). Lanes of one process interleave as separate steps.
pub type Lane = u8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProcessStep {
    Local { pid: ProcessId, lane: Lane },
    Deliver(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingMessage {
    pub id: u64,
    pub from: ProcessId,
    pub to: ProcessId,
    pub payload: Vec<u8>,
    pub send_step: u64,
}

/// A protocol: the local states of all processes plus whatever shared
/// memory they use.
pub trait Automaton {
    fn lanes(&self) -> Lane {
        1
    }

    fn is_enabled(&self, pid: ProcessId, lane: Lane) -> bool;

    fn step(&mut self, pid: ProcessId, lane: Lane, cx: &mut Context<'_>);

    fn receive(&mut self, pid: ProcessId, from: ProcessId, payload: &[u8], cx: &mut Context<'_>) {
        let _ = (pid, from, payload);
        cx.note("unexpected message dropped");
    }
}

/// What a step may do besides mutating its automaton: send messages and
/// emit log records.
pub struct Context<'a> {
    pid: ProcessId,
    step: u64,
    n: usize,
    log: &'a mut EventLog,
    outbox: &'a mut Vec<(ProcessId, Vec<u8>)>,
    emitted: usize,
}

impl<'a> Context<'a> {
    #[cfg(test)]
    pub(crate) fn for_test(
        pid: ProcessId,
        n: usize,
        log: &'a mut EventLog,
        outbox: &'a mut Vec<(ProcessId, Vec<u8>)>,
    ) -> Self {
        Context {
            pid,
            step: 0,
            n,
            log,
            outbox,
            emitted: 0,
        }
    }

    pub fn pid(&self) -> ProcessId {
        self.pid
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn send(&mut self, to: ProcessId, payload: Vec<u8>) {
        self.outbox.push((to, payload));
    }

    /// Sends `payload` to every process, the sender included.
    pub fn broadcast(&mut self, payload: Vec<u8>) {
        for to in ProcessId::all(self.n) {
            self.outbox.push((to, payload.clone()));
        }
    }

    fn emit(
        &mut self,
        kind: EventKind,
        obj: Option<&str>,
        op: Option<Value>,
        result: Option<Value>,
    ) -> &mut Event {
        let mut e = Event::new(self.step, self.pid, kind);
        e.obj = obj.map(str::to_string);
        e.op = op;
        e.result = result;
        self.log.push(e);
        self.emitted += 1;
        self.log.last_mut()
    }

    pub fn invoke<O: Serialize>(&mut self, obj: &str, op: &O) {
        self.emit(EventKind::Invoke, Some(obj), Some(to_value(op)), None);
    }

    pub fn respond<O: Serialize, R: Serialize>(&mut self, obj: &str, op: &O, result: &R) {
        self.emit(
            EventKind::Respond,
            Some(obj),
            Some(to_value(op)),
            Some(to_value(result)),
        );
    }

    /// Structured internal record (protocol-specific milestones).
    pub fn internal<O: Serialize>(&mut self, obj: &str, op: &O, result: Option<Value>) {
        self.emit(EventKind::Internal, Some(obj), Some(to_value(op)), result);
    }

    /// Record of one access to a shared register.
    pub fn register_access(&mut self, register: &str, op: Value, result: Value) {
        let e = self.emit(EventKind::Internal, Some(register), Some(op), Some(result));
        e.detail = Some(REGISTER_DETAIL.to_string());
    }

    pub fn note(&mut self, detail: impl Into<String>) {
        let e = self.emit(EventKind::Internal, None, None, None);
        e.detail = Some(detail.into());
    }
}

pub(crate) fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("protocol values serialize to JSON")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelConfig {
    pub n: usize,
    pub seed: u64,
    pub step_budget: u64,
    pub adversary: AdversaryKind,
    pub fairness: Fairness,
    /// Process → step index at which it crashes.
    pub crash_plan: BTreeMap<ProcessId, u64>,
}

impl KernelConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        KernelConfig {
            n,
            seed,
            step_budget: DEFAULT_STEP_BUDGET,
            adversary: AdversaryKind::SeededRandom,
            fairness: Fairness::Fair,
            crash_plan: BTreeMap::new(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SimError {
    #[error("a scenario needs at least one process")]
    NoProcesses,
    #[error("step budget must be positive")]
    ZeroBudget,
    #[error("{0} is not a process of this scenario")]
    UnknownProcess(ProcessId),
    #[error("{0} has already crashed")]
    AlreadyCrashed(ProcessId),
    #[error("step {0:?} is not enabled")]
    NotEnabled(ProcessStep),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    /// No step was enabled.
    Quiescent,
    /// The step budget ran out with steps still enabled.
    BudgetExhausted,
}

#[derive(Clone, Debug)]
pub struct RunOutcome<A> {
    pub automaton: A,
    pub log: EventLog,
    pub status: RunStatus,
    pub steps: u64,
    pub max_wait: u64,
    pub crashed: Vec<ProcessId>,
}

#[derive(Clone, Debug)]
pub struct Kernel<A> {
    automaton: A,
    n: usize,
    step: u64,
    budget: u64,
    crashed: Vec<bool>,
    crash_plan: BTreeMap<ProcessId, u64>,
    pending: BTreeMap<u64, PendingMessage>,
    next_msg: u64,
    last_step_of: Vec<Option<u64>>,
    adversary: Adversary,
    crash_rng: ChaCha8Rng,
    log: EventLog,
}

const CRASH_STREAM: u64 = 0x6a09_e667_f3bc_c908;

impl<A: Automaton> Kernel<A> {
    pub fn new(automaton: A, config: KernelConfig) -> Result<Self, SimError> {
        if config.n == 0 {
            return Err(SimError::NoProcesses);
        }
        if config.step_budget == 0 {
            return Err(SimError::ZeroBudget);
        }
        if let Some(p) = config.crash_plan.keys().find(|p| p.index() >= config.n) {
            return Err(SimError::UnknownProcess(*p));
        }
        Ok(Kernel {
            automaton,
            n: config.n,
            step: 0,
            budget: config.step_budget,
            crashed: vec![false; config.n],
            crash_plan: config.crash_plan,
            pending: BTreeMap::new(),
            next_msg: 0,
            last_step_of: vec![None; config.n],
            adversary: Adversary::new(config.adversary, config.fairness, config.n, config.seed),
            crash_rng: ChaCha8Rng::seed_from_u64(config.seed ^ CRASH_STREAM),
            log: EventLog::new(),
        })
    }

    pub fn automaton(&self) -> &A {
        &self.automaton
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Index of the next step to execute.
    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn is_crashed(&self, p: ProcessId) -> bool {
        self.crashed[p.index()]
    }

    pub fn crashed(&self) -> Vec<ProcessId> {
        ProcessId::all(self.n)
            .filter(|p| self.is_crashed(*p))
            .collect()
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingMessage> {
        self.pending.values()
    }

    /// Enabled steps in kernel order: local steps by (pid, lane), then
    /// deliveries by message id.
    pub fn enabled_steps(&self) -> Vec<EnabledStep> {
        let mut out = Vec::new();
        for pid in ProcessId::all(self.n) {
            if self.is_crashed(pid) {
                continue;
            }
            for lane in 0..self.automaton.lanes() {
                if self.automaton.is_enabled(pid, lane) {
                    out.push(EnabledStep {
                        step: ProcessStep::Local { pid, lane },
                        actor: pid,
                        from: None,
                    });
                }
            }
        }
        for m in self.pending.values() {
            out.push(EnabledStep {
                step: ProcessStep::Deliver(m.id),
                actor: m.to,
                from: Some(m.from),
            });
        }
        out
    }

    /// Crashes `p` now. Messages to `p` are discarded. Undelivered messages
    /// that `p` sent in its most recent step (a broadcast it was still
    /// performing) reach only a seed-chosen subset of their destinations.
    pub fn crash(&mut self, p: ProcessId) -> Result<(), SimError> {
        if p.index() >= self.n {
            return Err(SimError::UnknownProcess(p));
        }
        if self.is_crashed(p) {
            return Err(SimError::AlreadyCrashed(p));
        }
        self.crashed[p.index()] = true;
        self.log.push(Event::new(self.step, p, EventKind::Crash));
        let last = self.last_step_of[p.index()];
        let mut dropped = Vec::new();
        for m in self.pending.values() {
            if m.to == p
                || (m.from == p && Some(m.send_step) == last && !self.crash_rng.gen_bool(0.5))
            {
                dropped.push(m.id);
            }
        }
        for id in dropped {
            self.pending.remove(&id);
        }
        Ok(())
    }

    /// Executes one step, which must currently be enabled.
    pub fn execute(&mut self, step: ProcessStep) -> Result<(), SimError> {
        let mut outbox = Vec::new();
        let actor = match step {
            ProcessStep::Local { pid, lane } => {
                if pid.index() >= self.n
                    || self.is_crashed(pid)
                    || lane >= self.automaton.lanes()
                    || !self.automaton.is_enabled(pid, lane)
                {
                    return Err(SimError::NotEnabled(step));
                }
                let mut cx = Context {
                    pid,
                    step: self.step,
                    n: self.n,
                    log: &mut self.log,
                    outbox: &mut outbox,
                    emitted: 0,
                };
                self.automaton.step(pid, lane, &mut cx);
                if cx.emitted == 0 {
                    cx.note(format!("step lane={lane}"));
                }
                pid
            }
            ProcessStep::Deliver(id) => {
                let m = self.pending.remove(&id).ok_or(SimError::NotEnabled(step))?;
                let mut e = Event::new(self.step, m.to, EventKind::Deliver);
                e.peer = Some(m.from);
                e.msg = Some(m.id);
                e.payload = Some(hex::encode(&m.payload));
                self.log.push(e);
                let mut cx = Context {
                    pid: m.to,
                    step: self.step,
                    n: self.n,
                    log: &mut self.log,
                    outbox: &mut outbox,
                    emitted: 0,
                };
                self.automaton.receive(m.to, m.from, &m.payload, &mut cx);
                m.to
            }
        };
        for (to, payload) in outbox {
            let id = self.next_msg;
            self.next_msg += 1;
            let mut e = Event::new(self.step, actor, EventKind::Send);
            e.peer = Some(to);
            e.msg = Some(id);
            e.payload = Some(hex::encode(&payload));
            self.log.push(e);
            if to.index() < self.n && !self.is_crashed(to) {
                self.pending.insert(
                    id,
                    PendingMessage {
                        id,
                        from: actor,
                        to,
                        payload,
                        send_step: self.step,
                    },
                );
            }
        }
        self.last_step_of[actor.index()] = Some(self.step);
        self.step += 1;
        Ok(())
    }

    fn apply_planned_crashes(&mut self) {
        let due: Vec<ProcessId> = self
            .crash_plan
            .iter()
            .filter(|(p, at)| **at == self.step && !self.is_crashed(**p))
            .map(|(p, _)| *p)
            .collect();
        for p in due {
            self.crash(p).expect("planned crash of a live process");
        }
    }

    /// Runs until quiescence or until the step budget is exhausted.
    pub fn run(mut self) -> RunOutcome<A> {
        let status = loop {
            self.apply_planned_crashes();
            let enabled = self.enabled_steps();
            if enabled.is_empty() {
                break RunStatus::Quiescent;
            }
            if self.step >= self.budget {
                break RunStatus::BudgetExhausted;
            }
            let choice = self.adversary.next(&enabled, self.step);
            self.execute(choice)
                .expect("adversary picks an enabled step");
        };
        RunOutcome {
            crashed: self.crashed(),
            max_wait: self.adversary.max_wait(),
            steps: self.step,
            status,
            log: self.log,
            automaton: self.automaton,
        }
    }
}

/// Runs `automaton` under `config`.
pub fn run<A: Automaton>(automaton: A, config: KernelConfig) -> Result<RunOutcome<A>, SimError> {
    Ok(Kernel::new(automaton, config)?.run())
}

/// Steps taken by `pid` between two log positions (inclusive), counted as
/// distinct kernel steps in which it acted.
pub fn own_steps(log: &EventLog, pid: ProcessId, from_seq: u64, to_seq: u64) -> usize {
    let mut steps: Vec<u64> = log
        .iter()
        .filter(|e| {
            e.seq >= from_seq && e.seq <= to_seq && e.pid == pid && e.kind != EventKind::Crash
        })
        .map(|e| e.step)
        .collect();
    steps.dedup();
    steps.len()
}

/// Crash finality: no record of a crashed process after its crash.
pub fn check_crash_finality(log: &EventLog) -> Result<(), String> {
    let mut crashed_at: BTreeMap<ProcessId, u64> = BTreeMap::new();
    for e in log {
        if let Some(at) = crashed_at.get(&e.pid) {
            return Err(format!(
                "{} acts at step {} after crashing at step {at}",
                e.pid, e.step
            ));
        }
        if e.kind == EventKind::Crash {
            crashed_at.insert(e.pid, e.step);
        }
    }
    Ok(())
}

/// Structural sanity: sequence numbers strictly increase, steps never
/// decrease.
pub fn check_log_well_formed(log: &EventLog) -> Result<(), String> {
    for w in log.events().windows(2) {
        if w[1].seq <= w[0].seq {
            return Err(format!("sequence number {} follows {}", w[1].seq, w[0].seq));
        }
        if w[1].step < w[0].step {
            return Err(format!(
                "step {} follows step {} at seq {}",
                w[1].step, w[0].step, w[1].seq
            ));
        }
    }
    Ok(())
}

/// Reliable delivery: every sent message was delivered unless its
/// destination crashed or its sender crashed before taking another step.
/// Only meaningful for runs that reached quiescence.
pub fn check_reliable_delivery(log: &EventLog) -> Result<(), String> {
    let mut crash_step: BTreeMap<ProcessId, u64> = BTreeMap::new();
    let mut last_step: BTreeMap<ProcessId, u64> = BTreeMap::new();
    let mut delivered = std::collections::BTreeSet::new();
    for e in log {
        match e.kind {
            EventKind::Crash => {
                crash_step.insert(e.pid, e.step);
            }
            EventKind::Deliver => {
                delivered.insert(e.msg);
            }
            _ => {}
        }
        if e.kind != EventKind::Crash {
            last_step.insert(e.pid, e.step);
        }
    }
    for e in log.iter().filter(|e| e.kind == EventKind::Send) {
        if delivered.contains(&e.msg) {
            continue;
        }
        let to = e.peer.expect("send records name a destination");
        if crash_step.contains_key(&to) {
            continue;
        }
        let interrupted = crash_step.contains_key(&e.pid) && last_step.get(&e.pid) == Some(&e.step);
        if !interrupted {
            return Err(format!(
                "message #{} from {} to {} never delivered",
                e.msg.unwrap_or(0),
                e.pid,
                to
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Each process counts down a fixed number of internal steps.
    #[derive(Clone)]
    struct Countdown(Vec<u32>);

    impl Automaton for Countdown {
        fn is_enabled(&self, pid: ProcessId, _: Lane) -> bool {
            self.0[pid.index()] > 0
        }
        fn step(&mut self, pid: ProcessId, _: Lane, cx: &mut Context<'_>) {
            self.0[pid.index()] -= 1;
            cx.note(format!("left {}", self.0[pid.index()]));
        }
    }

    /// p1 broadcasts once; everyone acknowledges to p1.
    #[derive(Clone)]
    struct Echo {
        sent: bool,
        acks: Vec<ProcessId>,
    }

    impl Automaton for Echo {
        fn is_enabled(&self, pid: ProcessId, _: Lane) -> bool {
            pid.get() == 1 && !self.sent
        }
        fn step(&mut self, _: ProcessId, _: Lane, cx: &mut Context<'_>) {
            self.sent = true;
            cx.broadcast(vec![7]);
        }
        fn receive(
            &mut self,
            pid: ProcessId,
            from: ProcessId,
            payload: &[u8],
            cx: &mut Context<'_>,
        ) {
            if payload == [7] {
                cx.send(from, vec![8]);
            } else {
                assert_eq!(pid.get(), 1);
                self.acks.push(from);
            }
        }
    }

    fn echo() -> Echo {
        Echo {
            sent: false,
            acks: Vec::new(),
        }
    }

    #[test]
    fn single_process_logs_only_its_internal_steps() {
        let out = run(Countdown(vec![3]), KernelConfig::new(1, 0)).unwrap();
        assert_eq!(out.status, RunStatus::Quiescent);
        assert_eq!(out.log.len(), 3);
        assert!(out
            .log
            .iter()
            .all(|e| e.kind == EventKind::Internal && e.pid.get() == 1));
    }

    #[test]
    fn identical_inputs_give_identical_logs() {
        let cfg = KernelConfig::new(5, 42);
        let a = run(echo(), cfg.clone()).unwrap();
        let b = run(echo(), cfg).unwrap();
        assert_eq!(a.log.to_records(), b.log.to_records());
        assert_eq!(a.automaton.acks, b.automaton.acks);
    }

    #[test]
    fn crashed_process_stays_silent() {
        let mut cfg = KernelConfig::new(3, 1);
        cfg.crash_plan.insert(ProcessId::new(3), 5);
        let out = run(Countdown(vec![10, 10, 10]), cfg).unwrap();
        assert!(out
            .log
            .iter()
            .filter(|e| e.pid.get() == 3)
            .all(|e| e.step <= 5));
        assert!(out
            .log
            .iter()
            .any(|e| e.pid.get() == 3 && e.kind == EventKind::Crash));
        check_crash_finality(&out.log).unwrap();
    }

    #[test]
    fn crash_before_sending_suppresses_sends() {
        let mut cfg = KernelConfig::new(3, 1);
        cfg.crash_plan.insert(ProcessId::new(1), 0);
        let out = run(echo(), cfg).unwrap();
        assert!(!out
            .log
            .iter()
            .any(|e| e.kind == EventKind::Send && e.pid.get() == 1));
    }

    #[test]
    fn crash_mid_broadcast_reaches_a_replayable_subset() {
        let script = vec![ScriptEntry::Local {
            pid: ProcessId::new(1),
            lane: 0,
        }];
        let subset = |seed| {
            let mut cfg = KernelConfig::new(5, seed);
            cfg.adversary = AdversaryKind::Scripted(script.clone());
            cfg.crash_plan.insert(ProcessId::new(1), 1);
            let out = run(echo(), cfg).unwrap();
            out.log
                .iter()
                .filter(|e| e.kind == EventKind::Deliver && e.peer == Some(ProcessId::new(1)))
                .map(|e| e.pid.get())
                .collect::<Vec<_>>()
        };
        let mut seen_sizes = std::collections::BTreeSet::new();
        for seed in 0..32 {
            let s = subset(seed);
            assert!(s.iter().all(|p| (2..=5).contains(p)));
            assert_eq!(s, subset(seed));
            seen_sizes.insert(s.len());
        }
        assert!(seen_sizes.len() > 1, "subset choice depends on the seed");
    }

    #[test]
    fn empty_crash_plan_matches_fault_free_run() {
        let a = run(echo(), KernelConfig::new(4, 9)).unwrap();
        let mut cfg = KernelConfig::new(4, 9);
        cfg.crash_plan.clear();
        let b = run(echo(), cfg).unwrap();
        assert_eq!(a.log.digest(), b.log.digest());
    }

    #[test]
    fn fault_free_broadcast_is_fully_delivered() {
        let out = run(echo(), KernelConfig::new(4, 3)).unwrap();
        let mut acks = out.automaton.acks.clone();
        acks.sort();
        assert_eq!(acks, ProcessId::all(4).collect::<Vec<_>>());
        check_reliable_delivery(&out.log).unwrap();
        check_log_well_formed(&out.log).unwrap();
    }

    #[test]
    fn budget_exhaustion_is_an_outcome() {
        let mut cfg = KernelConfig::new(1, 0);
        cfg.step_budget = 2;
        let out = run(Countdown(vec![5]), cfg).unwrap();
        assert_eq!(out.status, RunStatus::BudgetExhausted);
        assert_eq!(out.steps, 2);
    }

    #[test]
    fn rejects_bad_configs() {
        assert_eq!(
            Kernel::new(Countdown(vec![]), KernelConfig::new(0, 0)).err(),
            Some(SimError::NoProcesses)
        );
        let mut cfg = KernelConfig::new(2, 0);
        cfg.step_budget = 0;
        assert_eq!(
            Kernel::new(Countdown(vec![1, 1]), cfg).err(),
            Some(SimError::ZeroBudget)
        );
        let mut cfg = KernelConfig::new(2, 0);
        cfg.crash_plan.insert(ProcessId::new(3), 1);
        assert!(matches!(
            Kernel::new(Countdown(vec![1, 1]), cfg),
            Err(SimError::UnknownProcess(_))
        ));
    }

    #[test]
    fn double_crash_is_rejected() {
        let mut k = Kernel::new(Countdown(vec![1, 1]), KernelConfig::new(2, 0)).unwrap();
        k.crash(ProcessId::new(2)).unwrap();
        assert_eq!(
            k.crash(ProcessId::new(2)),
            Err(SimError::AlreadyCrashed(ProcessId::new(2)))
        );
    }

    #[test]
    fn scripted_order_is_honoured() {
        let script: Vec<ScriptEntry> = ["p3", "p3", "p1"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let mut cfg = KernelConfig::new(3, 0);
        cfg.adversary = AdversaryKind::Scripted(script);
        let out = run(Countdown(vec![2, 2, 2]), cfg).unwrap();
        let order: Vec<u32> = out.log.iter().map(|e| e.pid.get()).take(3).collect();
        assert_eq!(order, vec![3, 3, 1]);
    }

    #[test]
    fn own_steps_counts_distinct_steps() {
        let out = run(echo(), KernelConfig::new(3, 2)).unwrap();
        let last = out.log.len() as u64 - 1;
        // p1: one broadcast step, three deliveries of its own broadcast or acks.
        let p1 = own_steps(&out.log, ProcessId::new(1), 0, last);
        assert_eq!(p1, 1 + 1 + 3);
    }
}
