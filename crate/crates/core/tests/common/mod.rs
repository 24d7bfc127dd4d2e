//! Reference implementations shared by the integration tests. Nothing here
//! calls into the checker under test.

#![allow(dead_code)]

use seqthink::lincheck::{History, Operation};
use seqthink::objects::{RegisterOp, RegisterRet};
use seqthink::ProcessId;

pub type RegHistory = History<RegisterOp, RegisterRet>;

/// Linearizability by brute force: try every subset of pending operations
/// and every ordering of the chosen operations, abandoning an ordering at
/// its first real-time or value mismatch. The register starts at 0.
pub fn naive_linearizable(h: &RegHistory) -> bool {
    let pending: Vec<usize> = (0..h.ops.len())
        .filter(|&i| h.ops[i].responded.is_none())
        .collect();
    for mask in 0u32..(1 << pending.len()) {
        let chosen: Vec<usize> = (0..h.ops.len())
            .filter(|i| match pending.iter().position(|p| p == i) {
                Some(k) => mask & (1 << k) != 0,
                None => true,
            })
            .collect();
        let mut order = Vec::with_capacity(chosen.len());
        let mut used = vec![false; chosen.len()];
        if permute(h, &chosen, &mut used, &mut order, 0) {
            return true;
        }
    }
    false
}

fn permute(
    h: &RegHistory,
    chosen: &[usize],
    used: &mut [bool],
    order: &mut Vec<usize>,
    value: u64,
) -> bool {
    if order.len() == chosen.len() {
        return true;
    }
    for k in 0..chosen.len() {
        if used[k] {
            continue;
        }
        let op = &h.ops[chosen[k]];
        // Every unplaced chosen operation that responded before `op` was
        // invoked must already be placed.
        let blocked = (0..chosen.len()).any(|j| {
            !used[j] && j != k && h.ops[chosen[j]].responded.is_some_and(|r| r < op.invoked)
        });
        if blocked {
            continue;
        }
        let next = match (&op.op, &op.ret) {
            (RegisterOp::Write(v), _) => *v,
            (RegisterOp::Read, Some(RegisterRet::Value(v))) if *v != value => continue,
            (RegisterOp::Read, _) => value,
        };
        used[k] = true;
        order.push(chosen[k]);
        if permute(h, chosen, used, order, next) {
            return true;
        }
        order.pop();
        used[k] = false;
    }
    false
}

/// Endpoint sequences for `k` operations, invocations in index order, one
/// per distinct real-time precedence relation. Each entry gives the
/// (invocation, response) positions of every operation.
pub fn interval_shapes(k: usize) -> Vec<Vec<(u64, u64)>> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    let mut seq = Vec::new();
    shapes(k, 0, &mut Vec::new(), &mut seq, &mut seen, &mut out);
    out
}

fn shapes(
    k: usize,
    next: usize,
    open: &mut Vec<usize>,
    seq: &mut Vec<(bool, usize)>,
    seen: &mut std::collections::BTreeSet<Vec<(usize, usize)>>,
    out: &mut Vec<Vec<(u64, u64)>>,
) {
    if next == k && open.is_empty() {
        let mut pos = vec![(0u64, 0u64); k];
        for (t, &(inv, i)) in seq.iter().enumerate() {
            if inv {
                pos[i].0 = t as u64;
            } else {
                pos[i].1 = t as u64;
            }
        }
        let prec: Vec<(usize, usize)> = (0..k)
            .flat_map(|a| (0..k).map(move |b| (a, b)))
            .filter(|&(a, b)| pos[a].1 < pos[b].0)
            .collect();
        if seen.insert(prec) {
            out.push(pos);
        }
        return;
    }
    if next < k {
        seq.push((true, next));
        open.push(next);
        shapes(k, next + 1, open, seq, seen, out);
        open.pop();
        seq.pop();
    }
    for idx in 0..open.len() {
        let o = open.remove(idx);
        seq.push((false, o));
        shapes(k, next, open, seq, seen, out);
        seq.pop();
        open.insert(idx, o);
    }
}

/// Calls `f` on every register history over the given shapes: each
/// operation is a write or a read, writes carry distinct values 1, 2, ...
/// in index order, a read returns 0 or any written value, and operations
/// in `pending_mask` have no response.
pub fn for_each_register_history(
    shape: &[(u64, u64)],
    pending_mask: u32,
    mut f: impl FnMut(&RegHistory),
) {
    let k = shape.len();
    for writes in 0u32..(1 << k) {
        let n_writes = writes.count_ones() as u64;
        let reads: Vec<usize> = (0..k)
            .filter(|&i| writes & (1 << i) == 0 && pending_mask & (1 << i) == 0)
            .collect();
        let combos = (n_writes + 1).pow(reads.len() as u32);
        for mut c in 0..combos {
            let mut ops = Vec::with_capacity(k);
            let mut next_value = 1;
            for (i, &(inv, resp)) in shape.iter().enumerate() {
                let pending = pending_mask & (1 << i) != 0;
                let (op, ret) = if writes & (1 << i) != 0 {
                    next_value += 1;
                    (RegisterOp::Write(next_value - 1), RegisterRet::Ok)
                } else if pending {
                    (RegisterOp::Read, RegisterRet::Value(0))
                } else {
                    let v = c % (n_writes + 1);
                    c /= n_writes + 1;
                    (RegisterOp::Read, RegisterRet::Value(v))
                };
                ops.push(Operation {
                    pid: ProcessId::new(i as u32 + 1),
                    op,
                    ret: (!pending).then_some(ret),
                    invoked: inv,
                    responded: (!pending).then_some(resp),
                });
            }
            f(&History::new(ops));
        }
    }
}
