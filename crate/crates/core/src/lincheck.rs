//! Linearizability checking by bounded exhaustive search.
//!
//! A history is accepted iff some total order of its operations respects
//! real-time precedence (an operation that responded before another was
//! invoked comes first) and replays through the sequential specification
//! reproducing every recorded result.
//!
//! Pending operations (invoked, never answered, typically because the
//! caller crashed) may take effect at any point after their invocation,
//! with whatever result the specification gives, or not at all.
//!
//! The search walks linearization points depth first and memoizes failed
//! `(linearized set, state)` pairs. It is exponential in the worst case, so
//! histories with more than a configured number of completed operations are
//! reported as [`Verdict::Undecided`] instead of being checked.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::objects::SeqSpec;
use crate::sim::{EventKind, EventLog};
use crate::ProcessId;

/// Default limit on completed operations per history.
pub const DEFAULT_BOUND: usize = 20;

/// Histories are encoded as bitsets of this width.
const MAX_OPERATIONS: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Operation<O, R> {
    pub pid: ProcessId,
    pub op: O,
    /// `None` for a pending operation.
    pub ret: Option<R>,
    /// Log position of the invocation.
    pub invoked: u64,
    /// Log position of the response.
    pub responded: Option<u64>,
}

impl<O, R> Operation<O, R> {
    pub fn is_pending(&self) -> bool {
        self.responded.is_none()
    }

    /// Real-time precedence: `self` responded before `other` was invoked.
    pub fn precedes<P, Q>(&self, other: &Operation<P, Q>) -> bool {
        self.responded.is_some_and(|r| r < other.invoked)
    }
}

impl<O: Serialize, R: Serialize> fmt::Display for Operation<O, R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = serde_json::to_string(&self.op).unwrap_or_default();
        match (&self.ret, self.responded) {
            (Some(r), Some(at)) => {
                let r = serde_json::to_string(r).unwrap_or_default();
                write!(f, "{} {op} -> {r} [{}, {at}]", self.pid, self.invoked)
            }
            _ => write!(f, "{} {op} -> ? [{}, open]", self.pid, self.invoked),
        }
    }
}

/// Operations ordered by invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct History<O, R> {
    pub ops: Vec<Operation<O, R>>,
}

impl<O, R> Default for History<O, R> {
    fn default() -> Self {
        History { ops: Vec::new() }
    }
}

impl<O, R> History<O, R> {
    pub fn new(mut ops: Vec<Operation<O, R>>) -> Self {
        ops.sort_by_key(|o| o.invoked);
        History { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn completed(&self) -> usize {
        self.ops.iter().filter(|o| !o.is_pending()).count()
    }

    /// Number of invoke and respond events.
    pub fn event_count(&self) -> usize {
        self.ops.len() + self.completed()
    }
}

impl<O: Clone, R: Clone> History<O, R> {
    /// The sub-history made of the operations at `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        History::new(indices.iter().map(|&i| self.ops[i].clone()).collect())
    }

    /// Every operation outside `keep` loses its response and becomes
    /// pending. Indices are unchanged.
    pub fn relax(&self, keep: &[usize]) -> Self {
        let mut ops = self.ops.clone();
        for (i, op) in ops.iter_mut().enumerate() {
            if !keep.contains(&i) {
                op.ret = None;
                op.responded = None;
            }
        }
        History { ops }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HistoryError {
    #[error("seq {seq}: {pid} responds without a pending invocation")]
    UnmatchedRespond { seq: u64, pid: ProcessId },
    #[error("seq {seq}: {pid} invokes while its previous operation is pending")]
    OverlappingInvoke { seq: u64, pid: ProcessId },
    #[error("seq {seq}: response names a different operation than its invocation")]
    MismatchedRespond { seq: u64 },
    #[error("seq {seq}: {reason}")]
    Decode { seq: u64, reason: String },
}

/// Projects the invoke/respond records of object `obj` out of `log`,
/// pairing each response with its process's pending invocation.
/// Invocations that never get a response stay in the history as pending.
pub fn extract_history<S: SeqSpec>(
    log: &EventLog,
    obj: &str,
) -> Result<History<S::Op, S::Ret>, HistoryError> {
    let mut ops: Vec<Operation<S::Op, S::Ret>> = Vec::new();
    let mut open: BTreeMap<ProcessId, usize> = BTreeMap::new();
    for e in log {
        if e.obj.as_deref() != Some(obj) {
            continue;
        }
        let decode_op = || -> Result<S::Op, HistoryError> {
            let v = e.op.clone().ok_or(HistoryError::Decode {
                seq: e.seq,
                reason: "missing op".into(),
            })?;
            serde_json::from_value(v).map_err(|err| HistoryError::Decode {
                seq: e.seq,
                reason: err.to_string(),
            })
        };
        match e.kind {
            EventKind::Invoke => {
                if open.contains_key(&e.pid) {
                    return Err(HistoryError::OverlappingInvoke {
                        seq: e.seq,
                        pid: e.pid,
                    });
                }
                open.insert(e.pid, ops.len());
                ops.push(Operation {
                    pid: e.pid,
                    op: decode_op()?,
                    ret: None,
                    invoked: e.seq,
                    responded: None,
                });
            }
            EventKind::Respond => {
                let i = open.remove(&e.pid).ok_or(HistoryError::UnmatchedRespond {
                    seq: e.seq,
                    pid: e.pid,
                })?;
                if decode_op()? != ops[i].op {
                    return Err(HistoryError::MismatchedRespond { seq: e.seq });
                }
                let v = e.result.clone().ok_or(HistoryError::Decode {
                    seq: e.seq,
                    reason: "missing result".into(),
                })?;
                let ret = serde_json::from_value(v).map_err(|err| HistoryError::Decode {
                    seq: e.seq,
                    reason: err.to_string(),
                })?;
                ops[i].ret = Some(ret);
                ops[i].responded = Some(e.seq);
            }
            _ => {}
        }
    }
    Ok(History::new(ops))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "verdict")]
pub enum Verdict {
    /// `witness` lists operation indices in linearization order. Pending
    /// operations that are absent were dropped.
    Linearizable { witness: Vec<usize> },
    /// `core` is a 1-minimal set of completed operations whose results
    /// cannot all hold: with every other operation made pending the
    /// history is still not linearizable, and making any one more core
    /// operation pending makes it linearizable.
    NotLinearizable { core: Vec<usize> },
    /// The history exceeds the search bound.
    Undecided { completed: usize, bound: usize },
}

impl Verdict {
    pub fn is_linearizable(&self) -> bool {
        matches!(self, Verdict::Linearizable { .. })
    }

    pub fn is_violation(&self) -> bool {
        matches!(self, Verdict::NotLinearizable { .. })
    }
}

pub fn check<S: SeqSpec>(spec: &S, history: &History<S::Op, S::Ret>) -> Verdict {
    check_bounded(spec, history, DEFAULT_BOUND)
}

pub fn check_bounded<S: SeqSpec>(
    spec: &S,
    history: &History<S::Op, S::Ret>,
    bound: usize,
) -> Verdict {
    let completed = history.completed();
    if completed > bound || history.len() > MAX_OPERATIONS {
        return Verdict::Undecided { completed, bound };
    }
    if let Some(witness) = search(spec, history) {
        return Verdict::Linearizable { witness };
    }
    let mut core: Vec<usize> = (0..history.len())
        .filter(|&i| !history.ops[i].is_pending())
        .collect();
    let mut i = 0;
    while i < core.len() {
        let mut without = core.clone();
        without.remove(i);
        if search(spec, &history.relax(&without)).is_none() {
            core = without;
        } else {
            i += 1;
        }
    }
    Verdict::NotLinearizable { core }
}

fn search<S: SeqSpec>(spec: &S, h: &History<S::Op, S::Ret>) -> Option<Vec<usize>> {
    let n = h.len();
    let mut preds = vec![0u128; n];
    for (j, b) in h.ops.iter().enumerate() {
        for (i, a) in h.ops.iter().enumerate() {
            if a.precedes(b) {
                preds[j] |= 1 << i;
            }
        }
    }
    let required: u128 = h
        .ops
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.is_pending())
        .fold(0, |m, (i, _)| m | 1 << i);
    let mut s = Search {
        spec,
        h,
        preds: &preds,
        required,
        failed: HashSet::new(),
        order: Vec::new(),
    };
    s.dfs(0, spec.initial()).then_some(s.order)
}

struct Search<'a, S: SeqSpec> {
    spec: &'a S,
    h: &'a History<S::Op, S::Ret>,
    preds: &'a [u128],
    required: u128,
    failed: HashSet<(u128, S::State)>,
    order: Vec<usize>,
}

impl<S: SeqSpec> Search<'_, S> {
    fn dfs(&mut self, done: u128, state: S::State) -> bool {
        if done & self.required == self.required {
            return true;
        }
        if self.failed.contains(&(done, state.clone())) {
            return false;
        }
        for i in 0..self.h.len() {
            let bit = 1u128 << i;
            if done & bit != 0 || self.preds[i] & !done != 0 {
                continue;
            }
            let op = &self.h.ops[i];
            let (next, r) = self.spec.delta(&state, &op.op);
            if op.ret.as_ref().is_some_and(|want| *want != r) {
                continue;
            }
            self.order.push(i);
            if self.dfs(done | bit, next) {
                return true;
            }
            self.order.pop();
        }
        self.failed.insert((done, state));
        false
    }
}

/// Checks that `witness` is a legal linearization of `history`: each
/// completed operation appears once, real-time order holds, and replaying
/// reproduces every recorded result.
pub fn validate_witness<S: SeqSpec>(
    spec: &S,
    history: &History<S::Op, S::Ret>,
    witness: &[usize],
) -> Result<(), String> {
    let mut seen = vec![false; history.len()];
    let mut state = spec.initial();
    for (pos, &i) in witness.iter().enumerate() {
        let op = history
            .ops
            .get(i)
            .ok_or(format!("index {i} out of range"))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(format!("operation {i} linearized twice"));
        }
        for &j in &witness[pos + 1..] {
            if history.ops[j].precedes(op) {
                return Err(format!(
                    "operation {j} precedes {i} in real time but follows it"
                ));
            }
        }
        let (next, r) = spec.delta(&state, &op.op);
        if op.ret.as_ref().is_some_and(|want| *want != r) {
            return Err(format!("operation {i} recorded a different result"));
        }
        state = next;
    }
    for (i, op) in history.ops.iter().enumerate() {
        if !op.is_pending() && !seen[i] {
            return Err(format!("completed operation {i} missing"));
        }
    }
    Ok(())
}
