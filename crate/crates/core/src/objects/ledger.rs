//! Append-only ledger with SHA-256 hash chaining.
//!
//! Block digest: `SHA-256(appender as u32 BE ‖ prev_hash ‖ len(payload) as
//! u32 BE ‖ payload)`. The first block links to [`GENESIS_HASH`]; the state
//! also commits to the digest of its last block, so a change to the final
//! block is as visible as a change to any other.
//!
//! Binary encoding: `head (32 bytes)`, then per block a `u32 BE` record
//! length followed by `appender u32 BE ‖ prev_hash ‖ payload`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SeqSpec;
use crate::ProcessId;

pub const GENESIS_HASH: [u8; 32] = [0; 32];

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LedgerBlock {
    #[serde(with = "hex::serde")]
    pub payload: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub prev_hash: [u8; 32],
    pub appender: ProcessId,
}

impl LedgerBlock {
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.appender.get().to_be_bytes());
        h.update(self.prev_hash);
        h.update((self.payload.len() as u32).to_be_bytes());
        h.update(&self.payload);
        h.finalize().into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("chain broken at block {index}")]
pub struct ChainViolation {
    pub index: usize,
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum LedgerDecodeError {
    #[error("truncated at byte {0}")]
    Truncated(usize),
    #[error("block record at byte {0} is shorter than its header")]
    ShortRecord(usize),
    #[error("block record at byte {0} names process 0")]
    BadAppender(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LedgerState {
    pub blocks: Vec<LedgerBlock>,
    /// Digest of the last block, or the genesis hash when empty.
    #[serde(with = "hex::serde")]
    pub head: [u8; 32],
}

impl Default for LedgerState {
    fn default() -> Self {
        LedgerState {
            blocks: Vec::new(),
            head: GENESIS_HASH,
        }
    }
}

impl LedgerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, payload: Vec<u8>, appender: ProcessId) {
        let block = LedgerBlock {
            payload,
            prev_hash: self.head,
            appender,
        };
        self.head = block.digest();
        self.blocks.push(block);
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Ok iff every link holds; otherwise the smallest index whose link
    /// fails. A stale head commitment is reported at the last block.
    pub fn verify_chain(&self) -> Result<(), ChainViolation> {
        let mut expected = GENESIS_HASH;
        for (index, block) in self.blocks.iter().enumerate() {
            if block.prev_hash != expected {
                return Err(ChainViolation { index });
            }
            expected = block.digest();
        }
        if self.head != expected {
            return Err(ChainViolation {
                index: self.blocks.len().saturating_sub(1),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.head.to_vec();
        for b in &self.blocks {
            out.extend_from_slice(&((4 + 32 + b.payload.len()) as u32).to_be_bytes());
            out.extend_from_slice(&b.appender.get().to_be_bytes());
            out.extend_from_slice(&b.prev_hash);
            out.extend_from_slice(&b.payload);
        }
        out
    }

    /// Inverse of [`encode`](Self::encode). Does not verify the chain.
    pub fn decode(bytes: &[u8]) -> Result<Self, LedgerDecodeError> {
        let head: [u8; 32] = bytes
            .get(..32)
            .ok_or(LedgerDecodeError::Truncated(0))?
            .try_into()
            .unwrap();
        let mut at = 32;
        let mut blocks = Vec::new();
        while at < bytes.len() {
            let len_bytes = bytes
                .get(at..at + 4)
                .ok_or(LedgerDecodeError::Truncated(at))?;
            let len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
            let rec = bytes
                .get(at + 4..at + 4 + len)
                .ok_or(LedgerDecodeError::Truncated(at))?;
            if len < 36 {
                return Err(LedgerDecodeError::ShortRecord(at));
            }
            let appender = u32::from_be_bytes(rec[..4].try_into().unwrap());
            if appender == 0 {
                return Err(LedgerDecodeError::BadAppender(at));
            }
            blocks.push(LedgerBlock {
                appender: ProcessId::new(appender),
                prev_hash: rec[4..36].try_into().unwrap(),
                payload: rec[36..].to_vec(),
            });
            at += 4 + len;
        }
        Ok(LedgerState { blocks, head })
    }

    /// One line per block: index, appender, prev hash, own digest, payload.
    pub fn dump(&self) -> String {
        let mut out = format!("head {}\n", hex::encode(self.head));
        for (i, b) in self.blocks.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i:>4} {} prev={} hash={} payload={}",
                b.appender,
                hex::encode(b.prev_hash),
                hex::encode(b.digest()),
                hex::encode(&b.payload)
            );
        }
        out
    }
}

/// The ledger as a sequential object: `append` adds a block, `read`
/// returns a snapshot of the whole list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LedgerSpec;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerOp {
    Append {
        #[serde(with = "hex::serde")]
        payload: Vec<u8>,
        appender: ProcessId,
    },
    Read,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerRet {
    Appended,
    Blocks(Vec<LedgerBlock>),
}

impl SeqSpec for LedgerSpec {
    type State = LedgerState;
    type Op = LedgerOp;
    type Ret = LedgerRet;

    fn initial(&self) -> LedgerState {
        LedgerState::new()
    }

    fn delta(&self, state: &LedgerState, op: &LedgerOp) -> (LedgerState, LedgerRet) {
        match op {
            LedgerOp::Append { payload, appender } => {
                let mut next = state.clone();
                next.append(payload.clone(), *appender);
                (next, LedgerRet::Appended)
            }
            LedgerOp::Read => (state.clone(), LedgerRet::Blocks(state.blocks.clone())),
        }
    }
}

impl super::Workload for LedgerSpec {
    fn sample_op<R: rand::Rng + ?Sized>(&self, rng: &mut R, pid: ProcessId, k: u32) -> LedgerOp {
        if rng.gen_bool(0.6) {
            LedgerOp::Append {
                payload: format!("{pid}:{k}").into_bytes(),
                appender: pid,
            }
        } else {
            LedgerOp::Read
        }
    }
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
#[error("block {index}: {reason}")]
pub struct ReplayError {
    pub index: usize,
    pub reason: String,
}

/// Replays each block payload, decoded as a JSON operation of `spec`,
/// from the initial state. Returns the final state and every result.
pub fn ledger_as_universal_object<S: SeqSpec>(
    spec: &S,
    ledger: &LedgerState,
) -> Result<(S::State, Vec<S::Ret>), ReplayError> {
    let mut state = spec.initial();
    let mut results = Vec::with_capacity(ledger.len());
    for (index, block) in ledger.blocks.iter().enumerate() {
        let op: S::Op = serde_json::from_slice(&block.payload).map_err(|e| ReplayError {
            index,
            reason: e.to_string(),
        })?;
        let (next, r) = spec.delta(&state, &op);
        state = next;
        results.push(r);
    }
    Ok((state, results))
}
