//! Peterson's lock and a tournament tree of Peterson locks.
//!
//! Nodes of the tree are numbered heap style: the root is 1, node `v` has
//! children `2v` and `2v + 1`, and with `L` leaves (a power of two) process
//! `p` sits at leaf `L + index(p)`. A process climbs from its leaf to the
//! root, competing at each node as side 1 (left child) or side 2 (right
//! child). Leaves without a process are phantom competitors whose flag is
//! never raised. With two processes the tree is a single Peterson node.
//!
//! Per node, side `i` runs:
//!
//! ```text
//! FLAG[i] <- up; LAST <- i; wait (FLAG[j] = down or LAST != i)
//! ```
//!
//! where each register access is one kernel step, so the wait is a loop of
//! a `FLAG[j]` read and a `LAST` read. Release lowers the flags from the
//! root down to the leaf.
//!
//! Log shape: object `mutex` gets `acquire` invoke/respond and `release`
//! invoke/respond records; the critical section of a process spans from its
//! `acquire` response to its `release` invocation. Winning node `v` logs an
//! internal `{"won": v}` record.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::registers::{Access, AtomicRegister};
use crate::sim::{Automaton, Context, EventKind, EventLog, Lane};
use crate::ProcessId;

pub const OBJECT: &str = "mutex";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutexOp {
    Acquire,
    Release,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum NodeEvent {
    Won(usize),
}

/// Peterson's wait condition for side `me`: `FLAG[j] = down or LAST != i`.
pub fn wait_predicate(flag_other: Flag, last: u8, me: u8) -> bool {
    flag_other == Flag::Down || last != me
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MutexError {
    #[error("{0} releases without holding the lock")]
    NotHolding(ProcessId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Not competing; the next step starts an acquire if cycles remain.
    Idle,
    /// Writing `LAST` at `level`.
    Announce,
    /// Reading the opponent's flag at `level`.
    CheckFlag,
    /// Reading `LAST` at `level`.
    CheckLast,
    /// Raising the own flag at `level` after winning the level below.
    Raise,
    /// In the critical section with this many local steps left.
    Critical(u32),
    /// Lowering the flag at `level`, walking down from the root.
    Release,
    Done,
}

#[derive(Clone, Debug)]
struct Proc {
    phase: Phase,
    /// Current tree level, 0 being the node just above the leaf.
    level: usize,
    cycles_left: u32,
}

#[derive(Clone, Debug)]
pub struct Tournament {
    n: usize,
    leaves: usize,
    levels: usize,
    flags: Vec<[AtomicRegister<Flag>; 2]>,
    last: Vec<AtomicRegister<u8>>,
    procs: Vec<Proc>,
    cs_steps: u32,
}

impl Tournament {
    /// `n` processes, each running `cycles` acquire/release rounds with
    /// `cs_steps` local steps inside the critical section. Processes not in
    /// `competitors` stay idle.
    pub fn new(n: usize, cycles: u32, cs_steps: u32) -> Self {
        Self::with_competitors(n, cycles, cs_steps, &ProcessId::all(n).collect::<Vec<_>>())
    }

    pub fn with_competitors(
        n: usize,
        cycles: u32,
        cs_steps: u32,
        competitors: &[ProcessId],
    ) -> Self {
        assert!(n >= 1);
        let leaves = n.next_power_of_two().max(2);
        let levels = leaves.trailing_zeros() as usize;
        let subtree = |node: usize| -> Access {
            let depth = levels - (usize::BITS - 1 - node.leading_zeros()) as usize;
            Access::Only(
                ProcessId::all(n)
                    .filter(|p| (leaves + p.index()) >> depth == node)
                    .collect::<BTreeSet<_>>(),
            )
        };
        let mut flags = Vec::with_capacity(leaves);
        let mut last = Vec::with_capacity(leaves);
        for v in 0..leaves {
            let v = v.max(1);
            flags.push([1, 2].map(|s| {
                AtomicRegister::with_access(
                    format!("FLAG[{v}][{s}]"),
                    Flag::Down,
                    Access::Any,
                    subtree(2 * v + s - 1),
                )
            }));
            last.push(AtomicRegister::with_access(
                format!("LAST[{v}]"),
                1u8,
                Access::Any,
                subtree(v),
            ));
        }
        let procs = ProcessId::all(n)
            .map(|p| Proc {
                phase: if competitors.contains(&p) {
                    Phase::Idle
                } else {
                    Phase::Done
                },
                level: 0,
                cycles_left: if competitors.contains(&p) { cycles } else { 0 },
            })
            .collect();
        Tournament {
            n,
            leaves,
            levels,
            flags,
            last,
            procs,
            cs_steps,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn phase(&self, p: ProcessId) -> Phase {
        self.procs[p.index()].phase
    }

    pub fn in_critical_section(&self, p: ProcessId) -> bool {
        matches!(self.phase(p), Phase::Critical(_))
    }

    /// Node and side of `p` at `level`.
    pub fn position(&self, p: ProcessId, level: usize) -> (usize, u8) {
        let child = (self.leaves + p.index()) >> level;
        (child / 2, (child % 2) as u8 + 1)
    }

    /// Ends the critical section of `p`: its next steps lower its flags.
    pub fn begin_release(&mut self, p: ProcessId) -> Result<(), MutexError> {
        let levels = self.levels;
        let proc = &mut self.procs[p.index()];
        if !matches!(proc.phase, Phase::Critical(_)) {
            return Err(MutexError::NotHolding(p));
        }
        proc.phase = Phase::Release;
        proc.level = levels - 1;
        Ok(())
    }

    fn flag(&mut self, node: usize, side: u8) -> &mut AtomicRegister<Flag> {
        &mut self.flags[node][side as usize - 1]
    }
}

impl Automaton for Tournament {
    fn is_enabled(&self, pid: ProcessId, _: Lane) -> bool {
        let p = &self.procs[pid.index()];
        match p.phase {
            Phase::Done => false,
            Phase::Idle => p.cycles_left > 0,
            _ => true,
        }
    }

    fn step(&mut self, pid: ProcessId, _: Lane, cx: &mut Context<'_>) {
        let i = pid.index();
        let level = self.procs[i].level;
        let (node, side) = self.position(pid, level);
        let other = 3 - side;
        match self.procs[i].phase {
            Phase::Idle => {
                cx.invoke(OBJECT, &MutexOp::Acquire);
                self.flag(node, side).write_in(cx, Flag::Up);
                self.procs[i].phase = Phase::Announce;
            }
            Phase::Raise => {
                self.flag(node, side).write_in(cx, Flag::Up);
                self.procs[i].phase = Phase::Announce;
            }
            Phase::Announce => {
                self.last[node].write_in(cx, side);
                self.procs[i].phase = Phase::CheckFlag;
            }
            Phase::CheckFlag => {
                let f = self.flag(node, other).read_in(cx);
                if f == Flag::Down {
                    self.won(pid, node, cx);
                } else {
                    self.procs[i].phase = Phase::CheckLast;
                }
            }
            Phase::CheckLast => {
                let last = self.last[node].read_in(cx);
                if wait_predicate(Flag::Up, last, side) {
                    self.won(pid, node, cx);
                } else {
                    self.procs[i].phase = Phase::CheckFlag;
                }
            }
            Phase::Critical(0) => {
                self.begin_release(pid).expect("in critical section");
                self.release_step(pid, cx);
            }
            Phase::Critical(k) => {
                cx.note("critical section");
                self.procs[i].phase = Phase::Critical(k - 1);
            }
            Phase::Release => self.release_step(pid, cx),
            Phase::Done => unreachable!("disabled"),
        }
    }
}

impl Tournament {
    fn won(&mut self, pid: ProcessId, node: usize, cx: &mut Context<'_>) {
        cx.internal(OBJECT, &NodeEvent::Won(node), None);
        let proc = &mut self.procs[pid.index()];
        if proc.level + 1 < self.levels {
            proc.level += 1;
            proc.phase = Phase::Raise;
        } else {
            cx.respond(OBJECT, &MutexOp::Acquire, &"ok");
            proc.phase = Phase::Critical(self.cs_steps);
        }
    }

    fn release_step(&mut self, pid: ProcessId, cx: &mut Context<'_>) {
        let i = pid.index();
        let level = self.procs[i].level;
        if level + 1 == self.levels {
            cx.invoke(OBJECT, &MutexOp::Release);
        }
        let (node, side) = self.position(pid, level);
        self.flag(node, side).write_in(cx, Flag::Down);
        let proc = &mut self.procs[i];
        if level == 0 {
            cx.respond(OBJECT, &MutexOp::Release, &"ok");
            proc.cycles_left -= 1;
            proc.phase = if proc.cycles_left > 0 {
                Phase::Idle
            } else {
                Phase::Done
            };
        } else {
            proc.level -= 1;
        }
    }
}

/// A critical-section interval as log positions; `exit` is `None` if the
/// holder never released.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CsInterval {
    pub pid: ProcessId,
    pub enter: u64,
    pub exit: Option<u64>,
}

fn mutex_op(e: &crate::sim::Event) -> Option<MutexOp> {
    if e.obj.as_deref() != Some(OBJECT) {
        return None;
    }
    serde_json::from_value(e.op.clone()?).ok()
}

pub fn cs_intervals(log: &EventLog) -> Vec<CsInterval> {
    let mut out = Vec::new();
    let mut open: BTreeMap<ProcessId, usize> = BTreeMap::new();
    for e in log {
        match (e.kind, mutex_op(e)) {
            (EventKind::Respond, Some(MutexOp::Acquire)) => {
                open.insert(e.pid, out.len());
                out.push(CsInterval {
                    pid: e.pid,
                    enter: e.seq,
                    exit: None,
                });
            }
            (EventKind::Invoke, Some(MutexOp::Release)) => {
                if let Some(k) = open.remove(&e.pid) {
                    out[k].exit = Some(e.seq);
                }
            }
            _ => {}
        }
    }
    out
}

/// No two critical-section intervals of distinct processes overlap.
pub fn check_mutual_exclusion(log: &EventLog) -> Result<usize, String> {
    let intervals = cs_intervals(log);
    let end = |c: &CsInterval| c.exit.unwrap_or(u64::MAX);
    for (k, a) in intervals.iter().enumerate() {
        for b in &intervals[k + 1..] {
            if a.pid != b.pid && a.enter < end(b) && b.enter < end(a) {
                return Err(format!(
                    "{} (from seq {}) and {} (from seq {}) are both in the critical section",
                    a.pid, a.enter, b.pid, b.enter
                ));
            }
        }
    }
    Ok(intervals.len())
}

/// Every acquire invoked by a process that did not crash was answered.
pub fn check_acquires_complete(log: &EventLog) -> Result<usize, String> {
    let mut waiting: BTreeMap<ProcessId, u64> = BTreeMap::new();
    let mut completed = 0;
    for e in log {
        match (e.kind, mutex_op(e)) {
            (EventKind::Invoke, Some(MutexOp::Acquire)) => {
                waiting.insert(e.pid, e.seq);
            }
            (EventKind::Respond, Some(MutexOp::Acquire)) => {
                waiting.remove(&e.pid);
                completed += 1;
            }
            (EventKind::Crash, _) => {
                waiting.remove(&e.pid);
            }
            _ => {}
        }
    }
    match waiting.into_iter().next() {
        Some((p, seq)) => Err(format!(
            "acquire by {p} invoked at seq {seq} never completed"
        )),
        None => Ok(completed),
    }
}

/// Largest number of times a node was won by others while some process
/// was waiting there after writing that node's `LAST` register.
pub fn max_bypass(log: &EventLog) -> usize {
    // (pid, node) -> wins by others since the pid announced at node.
    let mut waiting: BTreeMap<(ProcessId, usize), usize> = BTreeMap::new();
    let mut worst = 0;
    for e in log {
        if e.is_register_access() {
            let name = e.obj.as_deref().unwrap_or("");
            let is_write = e.op.as_ref().is_some_and(|op| op.get("write").is_some());
            if let (Some(node), true) = (
                name.strip_prefix("LAST[").and_then(|s| s.strip_suffix(']')),
                is_write,
            ) {
                if let Ok(node) = node.parse() {
                    waiting.insert((e.pid, node), 0);
                }
            }
            continue;
        }
        if e.kind == EventKind::Internal && e.obj.as_deref() == Some(OBJECT) {
            if let Some(Ok(NodeEvent::Won(node))) =
                e.op.clone().map(serde_json::from_value::<NodeEvent>)
            {
                waiting.remove(&(e.pid, node));
                for ((_, v), count) in waiting.iter_mut() {
                    if *v == node {
                        *count += 1;
                        worst = worst.max(*count);
                    }
                }
            }
        }
    }
    worst
}
