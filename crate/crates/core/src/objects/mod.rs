//! Sequential specifications.
//!
//! A [`SeqSpec`] is a deterministic state machine: `delta(state, op)`
//! returns the next state and the operation's result. Operations are typed,
//! so an operation outside a spec's alphabet is rejected when it is parsed.

mod ledger;

use std::fmt::Debug;
use std::hash::Hash;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{ProcessId, Word};

pub use ledger::{
    ledger_as_universal_object, ChainViolation, LedgerBlock, LedgerDecodeError, LedgerOp,
    LedgerRet, LedgerSpec, LedgerState, ReplayError, GENESIS_HASH,
};

pub trait SeqSpec {
    type State: Clone + Eq + Hash + Debug + Serialize;
    type Op: Clone + PartialEq + Debug + Serialize + DeserializeOwned;
    type Ret: Clone + PartialEq + Debug + Serialize + DeserializeOwned;

    fn initial(&self) -> Self::State;

    fn delta(&self, state: &Self::State, op: &Self::Op) -> (Self::State, Self::Ret);
}

/// Random operation source for sweeps.
pub trait Workload: SeqSpec {
    /// The `k`-th operation issued by `pid`. Written values are distinct
    /// across processes and indices so histories stay informative.
    fn sample_op<R: Rng + ?Sized>(&self, rng: &mut R, pid: ProcessId, k: u32) -> Self::Op;
}

fn unique_value(pid: ProcessId, k: u32) -> Word {
    u64::from(pid.get()) * 1000 + u64::from(k) + 1
}

/// Default stack capacity used by scenarios and tests.
pub const DEFAULT_STACK_CAPACITY: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackSpec {
    pub capacity: usize,
}

impl Default for StackSpec {
    fn default() -> Self {
        StackSpec {
            capacity: DEFAULT_STACK_CAPACITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackOp {
    Push(Word),
    Pop,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackRet {
    Ok,
    Full,
    Empty,
    Value(Word),
}

impl SeqSpec for StackSpec {
    type State = Vec<Word>;
    type Op = StackOp;
    type Ret = StackRet;

    fn initial(&self) -> Vec<Word> {
        Vec::new()
    }

    fn delta(&self, state: &Vec<Word>, op: &StackOp) -> (Vec<Word>, StackRet) {
        let mut next = state.clone();
        let ret = match op {
            StackOp::Push(_) if next.len() >= self.capacity => StackRet::Full,
            StackOp::Push(v) => {
                next.push(*v);
                StackRet::Ok
            }
            StackOp::Pop => next.pop().map_or(StackRet::Empty, StackRet::Value),
        };
        (next, ret)
    }
}

impl Workload for StackSpec {
    fn sample_op<R: Rng + ?Sized>(&self, rng: &mut R, pid: ProcessId, k: u32) -> StackOp {
        if rng.gen_bool(0.5) {
            StackOp::Push(unique_value(pid, k))
        } else {
            StackOp::Pop
        }
    }
}

/// Counter whose increment returns the new count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CounterSpec;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterOp {
    Increment,
    Read,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterRet {
    Count(u64),
}

impl SeqSpec for CounterSpec {
    type State = u64;
    type Op = CounterOp;
    type Ret = CounterRet;

    fn initial(&self) -> u64 {
        0
    }

    fn delta(&self, state: &u64, op: &CounterOp) -> (u64, CounterRet) {
        match op {
            CounterOp::Increment => (state + 1, CounterRet::Count(state + 1)),
            CounterOp::Read => (*state, CounterRet::Count(*state)),
        }
    }
}

impl Workload for CounterSpec {
    fn sample_op<R: Rng + ?Sized>(&self, rng: &mut R, _: ProcessId, _: u32) -> CounterOp {
        if rng.gen_bool(0.6) {
            CounterOp::Increment
        } else {
            CounterOp::Read
        }
    }
}

/// Read/write register holding a [`Word`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RegisterSpec {
    pub initial: Word,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegisterOp {
    Write(Word),
    Read,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegisterRet {
    Ok,
    Value(Word),
}

impl SeqSpec for RegisterSpec {
    type State = Word;
    type Op = RegisterOp;
    type Ret = RegisterRet;

    fn initial(&self) -> Word {
        self.initial
    }

    fn delta(&self, state: &Word, op: &RegisterOp) -> (Word, RegisterRet) {
        match op {
            RegisterOp::Write(v) => (*v, RegisterRet::Ok),
            RegisterOp::Read => (*state, RegisterRet::Value(*state)),
        }
    }
}

impl Workload for RegisterSpec {
    fn sample_op<R: Rng + ?Sized>(&self, rng: &mut R, pid: ProcessId, k: u32) -> RegisterOp {
        if rng.gen_bool(0.5) {
            RegisterOp::Write(unique_value(pid, k))
        } else {
            RegisterOp::Read
        }
    }
}

/// One-shot consensus as an object: the first proposal wins.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConsensusSpec;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusOp {
    Propose(Word),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusRet {
    Decided(Word),
}

impl SeqSpec for ConsensusSpec {
    type State = Option<Word>;
    type Op = ConsensusOp;
    type Ret = ConsensusRet;

    fn initial(&self) -> Option<Word> {
        None
    }

    fn delta(&self, state: &Option<Word>, op: &ConsensusOp) -> (Option<Word>, ConsensusRet) {
        let ConsensusOp::Propose(v) = op;
        let decided = state.unwrap_or(*v);
        (Some(decided), ConsensusRet::Decided(decided))
    }
}

impl Workload for ConsensusSpec {
    fn sample_op<R: Rng + ?Sized>(&self, _: &mut R, pid: ProcessId, k: u32) -> ConsensusOp {
        ConsensusOp::Propose(unique_value(pid, k))
    }
}
