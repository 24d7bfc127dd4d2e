//! Universal constructions: any [`SeqSpec`] becomes a crash-tolerant
//! concurrent object.
//!
//! [`UniversalTo`] replicates the object at every process and feeds all
//! replicas the same operation sequence through total-order broadcast. An
//! invoker waits until its own operation comes back through delivery.
//!
//! [`UniversalLlsc`] keeps one copy of the object in a single LL/SC cell
//! `STATE = {value, sn[], res[]}` next to an announce board
//! `BOARD[1..n]` of single-writer registers. An invoker announces
//! `(op, sn)`, then in `apply` links `STATE`, reads the board entry by
//! entry, folds in every announced operation that is next in line for its
//! owner, and tries to store the result. If that fails it links again and,
//! if its own operation is still missing, reads the board a second time,
//! folds again and tries once more. The second read matters: whoever wins
//! the race against that last SC linked after the first failure, hence
//! after the announcement, and so folded it in. Re-applying only the own
//! operation on the second try loses operations when the winner is itself
//! on its second try. No step waits on another process, so each operation
//! takes at most `2n + 6` of its invoker's steps.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::agreement::{Instances, ToLayer, LANE_DELIVER, LANE_TASK};
use crate::objects::SeqSpec;
use crate::registers::{AtomicRegister, LlscRegister};
use crate::sim::{Automaton, Context, EventKind, EventLog, Lane};
use crate::ProcessId;

/// Object name of replica and commit records.
pub const INTERNAL: &str = "universal";

const LANE_CLIENT: Lane = 0;

#[derive(Serialize, Deserialize)]
struct Command<O> {
    op: O,
    proc: ProcessId,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Record<T> {
    /// A replica applied a delivered operation and reached `state`.
    Apply { index: usize, state: T },
    /// A successful SC on `STATE` applied these `(owner, sn)` operations.
    Commit(Vec<(ProcessId, u64)>),
}

#[derive(Clone, Debug)]
struct Client<O, R> {
    ops: VecDeque<O>,
    current: Option<O>,
    result: Option<R>,
}

impl<O, R> Client<O, R> {
    fn new(ops: Vec<O>) -> Self {
        Client {
            ops: ops.into(),
            current: None,
            result: None,
        }
    }
}

fn clients<O, R>(n: usize, workloads: Vec<Vec<O>>) -> Vec<Client<O, R>> {
    assert!(workloads.len() <= n, "more workloads than processes");
    let mut out: Vec<Client<O, R>> = workloads.into_iter().map(Client::new).collect();
    out.resize_with(n, || Client::new(Vec::new()));
    out
}

/// State machine replication over total-order broadcast.
#[derive(Clone, Debug)]
pub struct UniversalTo<S: SeqSpec> {
    spec: S,
    name: String,
    layers: Vec<ToLayer>,
    instances: Instances,
    replicas: Vec<S::State>,
    applied: Vec<usize>,
    clients: Vec<Client<S::Op, S::Ret>>,
}

impl<S: SeqSpec> UniversalTo<S> {
    /// `name` is the object name used in invoke/respond records.
    pub fn new(spec: S, name: impl Into<String>, n: usize, workloads: Vec<Vec<S::Op>>) -> Self {
        let initial = spec.initial();
        UniversalTo {
            spec,
            name: name.into(),
            layers: ProcessId::all(n).map(ToLayer::new).collect(),
            instances: Instances::new(n),
            replicas: vec![initial; n],
            applied: vec![0; n],
            clients: clients(n, workloads),
        }
    }

    pub fn replica(&self, p: ProcessId) -> &S::State {
        &self.replicas[p.index()]
    }
}

impl<S: SeqSpec> Automaton for UniversalTo<S> {
    fn lanes(&self) -> Lane {
        3
    }

    fn is_enabled(&self, pid: ProcessId, lane: Lane) -> bool {
        let i = pid.index();
        match lane {
            LANE_CLIENT => {
                let c = &self.clients[i];
                match c.current {
                    Some(_) => c.result.is_some(),
                    None => !c.ops.is_empty(),
                }
            }
            LANE_TASK => self.layers[i].task_enabled(),
            _ => self.layers[i].deliver_enabled(),
        }
    }

    fn step(&mut self, pid: ProcessId, lane: Lane, cx: &mut Context<'_>) {
        let i = pid.index();
        match lane {
            LANE_CLIENT => {
                let c = &mut self.clients[i];
                if let Some(result) = c.result.take() {
                    let op = c.current.take().expect("operation in progress");
                    cx.respond(&self.name, &op, &result);
                    return;
                }
                let op = c.ops.pop_front().expect("enabled");
                cx.invoke(&self.name, &op);
                let payload =
                    serde_json::to_vec(&Command { op: &op, proc: pid }).expect("serializable");
                c.current = Some(op);
                self.layers[i].broadcast(payload, cx);
            }
            LANE_TASK => self.layers[i].task_step(&mut self.instances, cx),
            LANE_DELIVER => {
                let m = self.layers[i].deliver_next(cx);
                let cmd: Command<S::Op> =
                    serde_json::from_slice(&m.payload).expect("commands are well formed");
                let (next, res) = self.spec.delta(&self.replicas[i], &cmd.op);
                self.replicas[i] = next;
                cx.internal(
                    INTERNAL,
                    &Record::Apply {
                        index: self.applied[i],
                        state: &self.replicas[i],
                    },
                    None,
                );
                self.applied[i] += 1;
                if cmd.proc == pid {
                    self.clients[i].result = Some(res);
                }
            }
            _ => unreachable!("three lanes"),
        }
    }

    fn receive(&mut self, pid: ProcessId, _: ProcessId, payload: &[u8], cx: &mut Context<'_>) {
        if !self.layers[pid.index()].receive(payload, cx) {
            cx.note("undecodable message");
        }
    }
}

/// All replicas went through the same sequence of states.
pub fn check_replica_convergence(log: &EventLog) -> Result<usize, String> {
    let mut states: Vec<serde_json::Value> = Vec::new();
    for e in log
        .iter()
        .filter(|e| e.kind == EventKind::Internal && e.obj.as_deref() == Some(INTERNAL))
    {
        let Some(apply) = e.op.as_ref().and_then(|op| op.get("apply")) else {
            continue;
        };
        let index = apply
            .get("index")
            .and_then(|v| v.as_u64())
            .ok_or("apply record without index")? as usize;
        let state = apply.get("state").cloned().unwrap_or_default();
        match states.get(index) {
            Some(s) if *s != state => {
                return Err(format!("{} diverges at operation {index}", e.pid))
            }
            Some(_) => {}
            None if index == states.len() => states.push(state),
            None => return Err(format!("{} skipped to operation {index}", e.pid)),
        }
    }
    Ok(states.len())
}

/// An announcement on the board.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardEntry<O> {
    pub op: O,
    pub sn: u64,
}

/// Contents of the `STATE` cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StateCell<T, R> {
    pub value: T,
    /// Number of each process's operations applied to `value`.
    pub sn: Vec<u64>,
    /// Result of each process's last applied operation.
    pub res: Vec<Option<R>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Idle,
    LinkState,
    ReadBoard(usize),
    Store,
    RecoveryLink,
    RecoveryReadBoard(usize),
    RecoveryStore,
    FinalLink,
}

#[derive(Clone, Debug)]
struct Local<S: SeqSpec> {
    sn: u64,
    stage: Stage,
    state: Option<StateCell<S::State, S::Ret>>,
    board: Vec<Option<BoardEntry<S::Op>>>,
    op: Option<S::Op>,
    ops: VecDeque<S::Op>,
}

/// Wait-free construction over LL/SC with an announce board.
#[derive(Clone, Debug)]
pub struct UniversalLlsc<S: SeqSpec> {
    spec: S,
    name: String,
    board: Vec<AtomicRegister<Option<BoardEntry<S::Op>>>>,
    state: LlscRegister<StateCell<S::State, S::Ret>>,
    locals: Vec<Local<S>>,
}

impl<S: SeqSpec> UniversalLlsc<S> {
    pub fn new(spec: S, name: impl Into<String>, n: usize, workloads: Vec<Vec<S::Op>>) -> Self {
        assert!(workloads.len() <= n, "more workloads than processes");
        let cell = StateCell {
            value: spec.initial(),
            sn: vec![0; n],
            res: vec![None; n],
        };
        let mut workloads = workloads;
        workloads.resize_with(n, Vec::new);
        UniversalLlsc {
            name: name.into(),
            board: ProcessId::all(n)
                .map(|p| AtomicRegister::single_writer(format!("BOARD[{}]", p.get()), None, p))
                .collect(),
            state: LlscRegister::new("STATE", cell, n),
            locals: workloads
                .into_iter()
                .map(|ops| Local {
                    sn: 0,
                    stage: Stage::Idle,
                    state: None,
                    board: vec![None; n],
                    op: None,
                    ops: ops.into(),
                })
                .collect(),
            spec,
        }
    }

    pub fn stage(&self, p: ProcessId) -> Stage {
        self.locals[p.index()].stage
    }

    pub fn state(&self) -> &StateCell<S::State, S::Ret> {
        self.state.peek()
    }

    /// Applies owner `l`'s announced operation if it is next in line.
    fn fold(
        spec: &S,
        cell: &mut StateCell<S::State, S::Ret>,
        l: usize,
        entry: &Option<BoardEntry<S::Op>>,
    ) -> bool {
        match entry {
            Some(e) if e.sn == cell.sn[l] + 1 => {
                let (value, res) = spec.delta(&cell.value, &e.op);
                cell.value = value;
                cell.res[l] = Some(res);
                cell.sn[l] += 1;
                true
            }
            _ => false,
        }
    }
}

impl<S: SeqSpec> Automaton for UniversalLlsc<S> {
    fn is_enabled(&self, pid: ProcessId, _: Lane) -> bool {
        let l = &self.locals[pid.index()];
        l.stage != Stage::Idle || !l.ops.is_empty()
    }

    fn step(&mut self, pid: ProcessId, _: Lane, cx: &mut Context<'_>) {
        let i = pid.index();
        let n = self.locals.len();
        let local = &mut self.locals[i];
        match local.stage {
            Stage::Idle => {
                let op = local.ops.pop_front().expect("enabled");
                cx.invoke(&self.name, &op);
                local.sn += 1;
                self.board[i].write_in(
                    cx,
                    Some(BoardEntry {
                        op: op.clone(),
                        sn: local.sn,
                    }),
                );
                local.op = Some(op);
                local.stage = Stage::LinkState;
            }
            Stage::LinkState => {
                local.state = Some(self.state.ll_in(cx));
                local.stage = Stage::ReadBoard(0);
            }
            Stage::ReadBoard(l) => {
                local.board[l] = self.board[l].read_in(cx);
                local.stage = if l + 1 < n {
                    Stage::ReadBoard(l + 1)
                } else {
                    Stage::Store
                };
            }
            Stage::Store | Stage::RecoveryStore => {
                let mut cell = local.state.take().expect("linked");
                let mut folded: Vec<(ProcessId, u64)> = Vec::new();
                for l in 0..n {
                    if Self::fold(&self.spec, &mut cell, l, &local.board[l]) {
                        folded.push((ProcessId::from_index(l), cell.sn[l]));
                    }
                }
                let first = local.stage == Stage::Store;
                if self.state.sc_in(cx, cell) {
                    cx.internal(INTERNAL, &Record::<()>::Commit(folded), None);
                    local.stage = Stage::FinalLink;
                } else {
                    local.stage = if first {
                        Stage::RecoveryLink
                    } else {
                        Stage::FinalLink
                    };
                }
            }
            Stage::RecoveryLink => {
                let cell = self.state.ll_in(cx);
                if local.sn == cell.sn[i] + 1 {
                    local.state = Some(cell);
                    local.stage = Stage::RecoveryReadBoard(0);
                } else {
                    local.stage = Stage::FinalLink;
                }
            }
            Stage::RecoveryReadBoard(l) => {
                local.board[l] = self.board[l].read_in(cx);
                local.stage = if l + 1 < n {
                    Stage::RecoveryReadBoard(l + 1)
                } else {
                    Stage::RecoveryStore
                };
            }
            Stage::FinalLink => {
                let cell = self.state.ll_in(cx);
                let op = local.op.take().expect("operation in progress");
                let res = cell.res[i].clone().expect("own operation applied");
                cx.respond(&self.name, &op, &res);
                local.stage = Stage::Idle;
            }
        }
    }
}

/// Own steps an operation of [`UniversalLlsc`] takes with `n` processes.
pub fn llsc_step_bound(n: usize) -> usize {
    2 * n + 6
}

/// Every announced operation was committed at most once, and every
/// operation that returned was committed exactly once.
pub fn check_exactly_once(log: &EventLog, obj: &str) -> Result<usize, String> {
    let mut committed: BTreeSet<(ProcessId, u64)> = BTreeSet::new();
    for e in log
        .iter()
        .filter(|e| e.kind == EventKind::Internal && e.obj.as_deref() == Some(INTERNAL))
    {
        let Some(commit) = e.op.as_ref().and_then(|op| op.get("commit")) else {
            continue;
        };
        let pairs: Vec<(ProcessId, u64)> =
            serde_json::from_value(commit.clone()).map_err(|err| err.to_string())?;
        for pair in pairs {
            if !committed.insert(pair) {
                return Err(format!(
                    "operation {} of {} committed twice",
                    pair.1, pair.0
                ));
            }
        }
    }
    let mut responded: BTreeMap<ProcessId, u64> = BTreeMap::new();
    for e in log
        .iter()
        .filter(|e| e.kind == EventKind::Respond && e.obj.as_deref() == Some(obj))
    {
        let k = responded.entry(e.pid).or_default();
        *k += 1;
        if !committed.contains(&(e.pid, *k)) {
            return Err(format!(
                "operation {k} of {} returned without being committed",
                e.pid
            ));
        }
    }
    Ok(committed.len())
}

/// Largest number of own steps any completed operation took.
pub fn max_operation_steps(log: &EventLog, obj: &str) -> usize {
    let mut open: BTreeMap<ProcessId, u64> = BTreeMap::new();
    let mut worst = 0;
    for e in log.iter().filter(|e| e.obj.as_deref() == Some(obj)) {
        match e.kind {
            EventKind::Invoke => {
                open.insert(e.pid, e.seq);
            }
            EventKind::Respond => {
                if let Some(from) = open.remove(&e.pid) {
                    worst = worst.max(crate::sim::own_steps(log, e.pid, from, e.seq));
                }
            }
            _ => {}
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lincheck::{check, extract_history};
    use crate::objects::{CounterOp, CounterRet, CounterSpec, StackOp, StackRet, StackSpec};
    use crate::sim::{run, Kernel, KernelConfig, ProcessStep, RunStatus};

    fn p(i: u32) -> ProcessId {
        ProcessId::new(i)
    }

    #[test]
    fn to_single_client_stack() {
        let sys = UniversalTo::new(
            StackSpec::default(),
            "stack",
            3,
            vec![vec![StackOp::Push(3), StackOp::Pop]],
        );
        let out = run(sys, KernelConfig::new(3, 2)).unwrap();
        let h = extract_history::<StackSpec>(&out.log, "stack").unwrap();
        assert_eq!(h.ops[1].ret, Some(StackRet::Value(3)));
    }

    #[test]
    fn to_replicas_converge() {
        for seed in 0..20 {
            let wl = vec![
                vec![StackOp::Push(1)],
                vec![StackOp::Push(2)],
                vec![StackOp::Pop],
            ];
            let out = run(
                UniversalTo::new(StackSpec::default(), "stack", 3, wl),
                KernelConfig::new(3, seed),
            )
            .unwrap();
            assert_eq!(out.status, RunStatus::Quiescent);
            assert_eq!(check_replica_convergence(&out.log), Ok(3));
            let a = out.automaton.replica(p(1));
            assert!(ProcessId::all(3).all(|q| out.automaton.replica(q) == a));
            let h = extract_history::<StackSpec>(&out.log, "stack").unwrap();
            assert!(check(&StackSpec::default(), &h).is_linearizable());
        }
    }

    #[test]
    fn llsc_solo_increment() {
        let sys = UniversalLlsc::new(CounterSpec, "counter", 2, vec![vec![CounterOp::Increment]]);
        let out = run(sys, KernelConfig::new(2, 0)).unwrap();
        assert_eq!(out.automaton.state().sn, vec![1, 0]);
        let h = extract_history::<CounterSpec>(&out.log, "counter").unwrap();
        assert_eq!(h.ops[0].ret, Some(CounterRet::Count(1)));
        assert_eq!(check_exactly_once(&out.log, "counter"), Ok(1));
        assert!(max_operation_steps(&out.log, "counter") <= llsc_step_bound(2));
    }

    fn local(i: u32) -> ProcessStep {
        ProcessStep::Local { pid: p(i), lane: 0 }
    }

    fn drive(k: &mut Kernel<UniversalLlsc<CounterSpec>>, steps: &[u32]) {
        for &s in steps {
            k.execute(local(s)).unwrap();
        }
    }

    #[test]
    fn loser_returns_helped_result() {
        let sys = UniversalLlsc::new(
            CounterSpec,
            "counter",
            2,
            vec![vec![CounterOp::Increment]; 2],
        );
        let mut k = Kernel::new(sys, KernelConfig::new(2, 0)).unwrap();
        // Both announce and link; p1 reads the board after p2 announced.
        drive(&mut k, &[1, 2, 1, 2, 1, 1, 2, 2]);
        // p1 stores first, folding both increments.
        drive(&mut k, &[1]);
        assert_eq!(k.automaton().state().sn, vec![1, 1]);
        // p2's SC fails, re-link finds its operation applied.
        drive(&mut k, &[2, 2]);
        assert_eq!(k.automaton().stage(p(2)), Stage::FinalLink);
        drive(&mut k, &[2, 1]);
        let out = k.run();
        let h = extract_history::<CounterSpec>(&out.log, "counter").unwrap();
        let rets: Vec<_> = h.ops.iter().map(|o| o.ret.clone().unwrap()).collect();
        assert_eq!(rets, vec![CounterRet::Count(1), CounterRet::Count(2)]);
        assert_eq!(check_exactly_once(&out.log, "counter"), Ok(2));
    }

    #[test]
    fn loser_reapplies_itself_on_second_try() {
        let sys = UniversalLlsc::new(
            CounterSpec,
            "counter",
            2,
            vec![vec![CounterOp::Increment]; 2],
        );
        let mut k = Kernel::new(sys, KernelConfig::new(2, 0)).unwrap();
        // p1 links and reads the board before p2 announces.
        drive(&mut k, &[1, 1, 1, 1]);
        drive(&mut k, &[2, 2, 2, 2]);
        drive(&mut k, &[1]);
        drive(&mut k, &[2]);
        assert_eq!(k.automaton().stage(p(2)), Stage::RecoveryLink);
        drive(&mut k, &[2]);
        assert_eq!(k.automaton().stage(p(2)), Stage::RecoveryReadBoard(0));
        drive(&mut k, &[2, 2]);
        assert_eq!(k.automaton().stage(p(2)), Stage::RecoveryStore);
        let out = k.run();
        let h = extract_history::<CounterSpec>(&out.log, "counter").unwrap();
        assert!(check(&CounterSpec, &h).is_linearizable());
        assert_eq!(check_exactly_once(&out.log, "counter"), Ok(2));
    }

    #[test]
    fn second_try_winner_helps_the_other_loser() {
        let wl = vec![
            vec![CounterOp::Increment; 2],
            vec![CounterOp::Increment],
            vec![CounterOp::Increment],
        ];
        let sys = UniversalLlsc::new(CounterSpec, "counter", 3, wl);
        let mut k = Kernel::new(sys, KernelConfig::new(3, 0)).unwrap();
        // p1 reads the board alone; p3 sees p1 and p3; p1 wins.
        drive(&mut k, &[1, 1, 1, 1, 1, 3, 3, 3, 3, 3, 1, 1]);
        // p3 loses, re-links and retries while p1 starts again and p2 runs
        // its first try.
        drive(&mut k, &[3, 3, 3, 3, 3, 1, 1, 2, 2, 2, 2, 2]);
        drive(&mut k, &[3, 3]);
        assert_eq!(k.automaton().state().sn, vec![1, 0, 1]);
        // p1 and p2 both lose their first try and re-link after p3's win.
        drive(&mut k, &[1, 1, 1, 1, 1, 2, 2]);
        assert_eq!(k.automaton().stage(p(1)), Stage::RecoveryReadBoard(0));
        assert_eq!(k.automaton().stage(p(2)), Stage::RecoveryReadBoard(0));
        // p1's second try reads p2's announcement and applies it too.
        drive(&mut k, &[1, 1, 1, 1]);
        assert_eq!(k.automaton().state().sn, vec![2, 1, 1]);
        drive(&mut k, &[2, 2, 2, 2]);
        assert_eq!(k.automaton().stage(p(2)), Stage::FinalLink);
        let out = k.run();
        assert_eq!(out.status, RunStatus::Quiescent);
        let h = extract_history::<CounterSpec>(&out.log, "counter").unwrap();
        assert!(check(&CounterSpec, &h).is_linearizable());
        assert_eq!(check_exactly_once(&out.log, "counter"), Ok(4));
        assert!(max_operation_steps(&out.log, "counter") <= llsc_step_bound(3));
    }

    #[test]
    fn llsc_random_runs_with_crashes() {
        for seed in 0..40 {
            let wl = (1..=3)
                .map(|i| vec![StackOp::Push(i), StackOp::Pop])
                .collect();
            let mut cfg = KernelConfig::new(3, seed);
            cfg.crash_plan.insert(p(1), seed % 17);
            cfg.crash_plan.insert(p(2), seed % 23 + 3);
            let out = run(
                UniversalLlsc::new(StackSpec::default(), "stack", 3, wl),
                cfg,
            )
            .unwrap();
            assert_eq!(out.status, RunStatus::Quiescent);
            let h = extract_history::<StackSpec>(&out.log, "stack").unwrap();
            assert!(
                check(&StackSpec::default(), &h).is_linearizable(),
                "seed {seed}"
            );
            assert!(check_exactly_once(&out.log, "stack").is_ok());
            assert!(max_operation_steps(&out.log, "stack") <= llsc_step_bound(3));
        }
    }
}
