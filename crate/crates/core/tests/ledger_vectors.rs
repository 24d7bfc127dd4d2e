//! Digests computed independently with Python's hashlib over
//! `appender (u32 BE) || prev_hash || len(payload) (u32 BE) || payload`.

use seqthink::objects::{LedgerState, GENESIS_HASH};
use seqthink::ProcessId;
use serde::Deserialize;

#[derive(Deserialize)]
struct Block {
    appender: u32,
    payload: String,
    prev_hash: String,
    digest: String,
}

#[derive(Deserialize)]
struct Chain {
    blocks: Vec<Block>,
    head: String,
}

fn vectors() -> Vec<Chain> {
    serde_json::from_str(include_str!("data/ledger_vectors.json")).unwrap()
}

#[test]
fn digests_match_reference() {
    for chain in vectors() {
        let mut ledger = LedgerState::new();
        for b in &chain.blocks {
            ledger.append(hex::decode(&b.payload).unwrap(), ProcessId::new(b.appender));
            let last = ledger.blocks.last().unwrap();
            assert_eq!(hex::encode(last.prev_hash), b.prev_hash);
            assert_eq!(hex::encode(last.digest()), b.digest);
        }
        assert_eq!(hex::encode(ledger.head), chain.head);
        assert_eq!(ledger.verify_chain(), Ok(()));
        assert_eq!(LedgerState::decode(&ledger.encode()).unwrap(), ledger);
    }
}

#[test]
fn genesis_is_all_zero() {
    assert_eq!(GENESIS_HASH, [0u8; 32]);
    assert_eq!(LedgerState::new().verify_chain(), Ok(()));
}
