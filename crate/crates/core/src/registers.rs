//! Shared-memory primitives: atomic read/write registers and LL/SC cells.
//!
//! Each access is one atomic kernel step, which is what makes these
//! registers atomic. The `*_in` variants log the access through the step's
//! [`Context`]; the plain variants are for direct use and tests.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::sim::{to_value, Context, EventLog, ProcessId};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RegisterError {
    #[error("{pid} may not read {register}")]
    UnauthorizedRead { register: String, pid: ProcessId },
    #[error("{pid} may not write {register}")]
    UnauthorizedWrite { register: String, pid: ProcessId },
    #[error("{pid} invoked SC on {register} without a prior LL")]
    ScWithoutLl { register: String, pid: ProcessId },
}

/// Which processes may perform an operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Access {
    Any,
    Only(BTreeSet<ProcessId>),
}

impl Access {
    pub fn single(p: ProcessId) -> Self {
        Access::Only([p].into_iter().collect())
    }

    pub fn allows(&self, p: ProcessId) -> bool {
        match self {
            Access::Any => true,
            Access::Only(set) => set.contains(&p),
        }
    }
}

/// Operation recorded in register access records.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegisterAccess<T> {
    Read,
    Write(T),
    Ll,
    Sc(T),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomicRegister<T> {
    name: String,
    value: T,
    readers: Access,
    writers: Access,
}

impl<T: Clone + Serialize> AtomicRegister<T> {
    /// Multi-writer multi-reader register.
    pub fn new(name: impl Into<String>, initial: T) -> Self {
        Self::with_access(name, initial, Access::Any, Access::Any)
    }

    /// Single-writer multi-reader register owned by `owner`.
    pub fn single_writer(name: impl Into<String>, initial: T, owner: ProcessId) -> Self {
        Self::with_access(name, initial, Access::Any, Access::single(owner))
    }

    pub fn with_access(
        name: impl Into<String>,
        initial: T,
        readers: Access,
        writers: Access,
    ) -> Self {
        AtomicRegister {
            name: name.into(),
            value: initial,
            readers,
            writers,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn check_reader(&self, p: ProcessId) -> Result<(), RegisterError> {
        if self.readers.allows(p) {
            Ok(())
        } else {
            Err(RegisterError::UnauthorizedRead {
                register: self.name.clone(),
                pid: p,
            })
        }
    }

    pub fn check_writer(&self, p: ProcessId) -> Result<(), RegisterError> {
        if self.writers.allows(p) {
            Ok(())
        } else {
            Err(RegisterError::UnauthorizedWrite {
                register: self.name.clone(),
                pid: p,
            })
        }
    }

    pub fn read(&self, p: ProcessId) -> Result<T, RegisterError> {
        self.check_reader(p)?;
        Ok(self.value.clone())
    }

    pub fn write(&mut self, p: ProcessId, v: T) -> Result<(), RegisterError> {
        self.check_writer(p)?;
        self.value = v;
        Ok(())
    }

    /// Logged read by the stepping process. Access rights are validated when
    /// a protocol is wired, so a violation here is a wiring bug.
    pub fn read_in(&self, cx: &mut Context<'_>) -> T {
        let v = self.read(cx.pid()).unwrap_or_else(|e| panic!("{e}"));
        cx.register_access(
            &self.name,
            to_value(&RegisterAccess::<T>::Read),
            to_value(&v),
        );
        v
    }

    pub fn write_in(&mut self, cx: &mut Context<'_>, v: T) {
        cx.register_access(
            &self.name,
            to_value(&RegisterAccess::Write(v.clone())),
            Value::Null,
        );
        self.write(cx.pid(), v).unwrap_or_else(|e| panic!("{e}"));
    }
}

/// A memory cell accessed with load-linked / store-conditional.
///
/// `sc` by `p` succeeds iff no successful `sc` happened since `p`'s last
/// `ll`. There are no spurious failures.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LlscRegister<T> {
    name: String,
    value: T,
    linked: Vec<bool>,
    ever_linked: Vec<bool>,
}

impl<T: Clone + Serialize> LlscRegister<T> {
    pub fn new(name: impl Into<String>, initial: T, n: usize) -> Self {
        LlscRegister {
            name: name.into(),
            value: initial,
            linked: vec![false; n],
            ever_linked: vec![false; n],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Current value without linking; not a process operation.
    pub fn peek(&self) -> &T {
        &self.value
    }

    pub fn ll(&mut self, p: ProcessId) -> T {
        self.linked[p.index()] = true;
        self.ever_linked[p.index()] = true;
        self.value.clone()
    }

    pub fn sc(&mut self, p: ProcessId, v: T) -> Result<bool, RegisterError> {
        if !self.ever_linked[p.index()] {
            return Err(RegisterError::ScWithoutLl {
                register: self.name.clone(),
                pid: p,
            });
        }
        if !self.linked[p.index()] {
            return Ok(false);
        }
        self.value = v;
        self.linked.iter_mut().for_each(|l| *l = false);
        Ok(true)
    }

    pub fn ll_in(&mut self, cx: &mut Context<'_>) -> T {
        let v = self.ll(cx.pid());
        cx.register_access(&self.name, to_value(&RegisterAccess::<T>::Ll), to_value(&v));
        v
    }

    pub fn sc_in(&mut self, cx: &mut Context<'_>, v: T) -> bool {
        let op = to_value(&RegisterAccess::Sc(v.clone()));
        let ok = self.sc(cx.pid(), v).unwrap_or_else(|e| panic!("{e}"));
        cx.register_access(&self.name, op, Value::Bool(ok));
        ok
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("register {register} at seq {seq}: {detail}")]
pub struct AtomicityViolation {
    pub register: String,
    pub seq: u64,
    pub detail: String,
}

#[derive(Default)]
struct Replay {
    value: Option<Value>,
    linked: BTreeSet<ProcessId>,
}

/// Replays every register access in the log, per register and in log
/// order, against a sequential register (with LL/SC link tracking), and
/// checks each recorded result. A register's initial value is taken from its
/// first read when no write precedes it.
pub fn check_register_atomicity(log: &EventLog) -> Result<usize, AtomicityViolation> {
    let mut regs: BTreeMap<&str, Replay> = BTreeMap::new();
    let mut count = 0;
    for e in log.iter().filter(|e| e.is_register_access()) {
        let name = e.obj.as_deref().unwrap_or("");
        let fail = |detail: String| AtomicityViolation {
            register: name.to_string(),
            seq: e.seq,
            detail,
        };
        let op: RegisterAccess<Value> =
            e.op.clone()
                .map(serde_json::from_value)
                .transpose()
                .map_err(|err| fail(format!("unparseable access: {err}")))?
                .ok_or_else(|| fail("access without an operation".into()))?;
        let result = e.result.clone().unwrap_or(Value::Null);
        let reg = regs.entry(name).or_default();
        match op {
            RegisterAccess::Read | RegisterAccess::Ll => {
                match &reg.value {
                    Some(v) if *v != result => {
                        return Err(fail(format!("read {result} but register holds {v}")));
                    }
                    Some(_) => {}
                    None => reg.value = Some(result),
                }
                if matches!(op, RegisterAccess::Ll) {
                    reg.linked.insert(e.pid);
                }
            }
            RegisterAccess::Write(v) => reg.value = Some(v),
            RegisterAccess::Sc(v) => {
                let expected = reg.linked.contains(&e.pid);
                if result != Value::Bool(expected) {
                    return Err(fail(format!("sc returned {result}, expected {expected}")));
                }
                if expected {
                    reg.value = Some(v);
                    reg.linked.clear();
                }
            }
        }
        count += 1;
    }
    Ok(count)
}
