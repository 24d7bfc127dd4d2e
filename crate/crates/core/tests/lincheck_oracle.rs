mod common;

use common::{for_each_register_history, interval_shapes, naive_linearizable, RegHistory};
use proptest::prelude::*;
use seqthink::lincheck::{check, History, Operation, Verdict};
use seqthink::objects::{RegisterOp, RegisterRet, RegisterSpec};
use seqthink::ProcessId;

#[test]
fn shapes_count_distinct_precedence_relations() {
    let counts: Vec<usize> = (1..=5).map(|k| interval_shapes(k).len()).collect();
    assert_eq!(counts, vec![1, 2, 6, 24, 120]);
}

#[test]
fn agrees_with_oracle_on_small_histories_with_pending_ops() {
    let spec = RegisterSpec::default();
    let mut checked = 0;
    for k in 1..=3 {
        for shape in interval_shapes(k) {
            for pending in 0u32..(1 << k) {
                for_each_register_history(&shape, pending, |h| {
                    checked += 1;
                    assert_eq!(
                        check(&spec, h).is_linearizable(),
                        naive_linearizable(h),
                        "{h:?}"
                    );
                });
            }
        }
    }
    assert!(checked > 500);
}

/// Replays `witness` with a plain u64 register.
fn witness_ok(h: &RegHistory, witness: &[usize]) -> bool {
    let mut value = 0;
    for (pos, &i) in witness.iter().enumerate() {
        let op = &h.ops[i];
        match (&op.op, &op.ret) {
            (RegisterOp::Write(v), _) => value = *v,
            (RegisterOp::Read, Some(RegisterRet::Value(v))) if *v != value => return false,
            (RegisterOp::Read, _) => {}
        }
        // Nothing placed later may have responded before `op` was invoked.
        if witness[pos + 1..]
            .iter()
            .any(|&j| h.ops[j].responded.is_some_and(|r| r < op.invoked))
        {
            return false;
        }
    }
    let placed: std::collections::BTreeSet<usize> = witness.iter().copied().collect();
    (0..h.ops.len()).all(|i| h.ops[i].responded.is_none() || placed.contains(&i))
}

fn arb_history() -> impl Strategy<Value = RegHistory> {
    let op = (
        any::<bool>(),
        0u64..4,
        0u64..20,
        1u64..8,
        prop::bool::weighted(0.15),
    );
    prop::collection::vec(op, 1..8).prop_map(|raw| {
        let ops = raw
            .into_iter()
            .enumerate()
            .map(|(i, (write, v, start, len, pending))| {
                let invoked = start * 10 + i as u64;
                let (op, ret) = if write {
                    (RegisterOp::Write(v + 1), RegisterRet::Ok)
                } else {
                    (RegisterOp::Read, RegisterRet::Value(v))
                };
                Operation {
                    pid: ProcessId::new(i as u32 + 1),
                    op,
                    ret: (!pending).then_some(ret),
                    invoked,
                    responded: (!pending).then_some(invoked + len * 10),
                }
            })
            .collect();
        History::new(ops)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn verdict_matches_oracle(h in arb_history()) {
        let v = check(&RegisterSpec::default(), &h);
        prop_assert_eq!(v.is_linearizable(), naive_linearizable(&h));
    }

    #[test]
    fn witnesses_replay_and_respect_real_time(h in arb_history()) {
        if let Verdict::Linearizable { witness } = check(&RegisterSpec::default(), &h) {
            prop_assert!(witness_ok(&h, &witness), "{:?}", witness);
        }
    }

    #[test]
    fn cores_are_one_minimal(h in arb_history()) {
        if let Verdict::NotLinearizable { core } = check(&RegisterSpec::default(), &h) {
            let relaxed = h.relax(&core);
            prop_assert!(!naive_linearizable(&relaxed));
            for k in 0..core.len() {
                let mut fewer = core.clone();
                fewer.remove(k);
                prop_assert!(naive_linearizable(&h.relax(&fewer)));
            }
        }
    }
}
