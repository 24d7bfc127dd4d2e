//! Acceptance criteria, one line each. Runs as a plain binary so every line
//! is printed whether or not a criterion fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use seqthink::abd;
use seqthink::agreement::{self, ConsensusSystem};
use seqthink::harness::{run_scenario, sweep, Outcome};
use seqthink::lincheck::{self, Verdict};
use seqthink::mutex::{self, Flag, Tournament};
use seqthink::objects::{LedgerState, RegisterOp, RegisterRet, RegisterSpec};
use seqthink::scenario::{ObjectKind, Protocol, Scenario};
use seqthink::sim::{explore, AdversaryKind, ExploreOptions, Kernel, KernelConfig, ProcessStep};
use seqthink::universal;
use seqthink::ProcessId;

type Criterion = fn() -> Result<String, String>;

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("mutual exclusion", mutual_exclusion),
        ("wait predicate", wait_predicate),
        ("abd linearizability", abd_linearizability),
        ("new/old inversion", new_old_inversion),
        ("consensus from ll/sc", consensus),
        ("to-broadcast", to_broadcast),
        ("universal constructions", universal_constructions),
        ("checker vs oracle", checker_soundness),
        ("ledger tamper evidence", ledger_tamper),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!(
                "criterion {:>2} PASS  {name}: {detail} ({secs:.1} s)",
                k + 1
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "criterion {:>2} FAIL  {name}: {detail} ({secs:.1} s)",
                    k + 1
                );
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn p(i: u32) -> ProcessId {
    ProcessId::new(i)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mutual_exclusion() -> Result<String, String> {
    let start = Instant::now();
    let two = sweep(&Scenario::new(Protocol::Mutex, 2), 0..=9_999).map_err(|e| e.to_string())?;
    let four = sweep(&Scenario::new(Protocol::Mutex, 4), 0..=1_999).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    for (label, s) in [("n = 2", &two), ("n = 4", &four)] {
        ensure(
            s.mutex_violations == 0 && s.budget_exhausted == 0 && s.accepted == s.runs,
            || format!("{label}: {}", s.summary(Protocol::Mutex).trim()),
        )?;
    }
    ensure(elapsed < Duration::from_secs(60), || {
        format!("took {:.1} s, target 60 s", elapsed.as_secs_f64())
    })?;
    Ok(format!(
        "violations 0/{} (n = 2), 0/{} (n = 4); budget exhaustions 0; sweeps {:.1} s",
        two.runs,
        four.runs,
        elapsed.as_secs_f64()
    ))
}

/// Drives a two-process tournament through `script` and then lets p1 take
/// `extra` steps alone. Returns whether p1 got into the critical section.
fn p1_admitted(script: &[u32], extra: usize) -> bool {
    let mut k = Kernel::new(Tournament::new(2, 1, 1), KernelConfig::new(2, 0)).unwrap();
    for &s in script {
        k.execute(ProcessStep::Local { pid: p(s), lane: 0 })
            .unwrap();
    }
    for _ in 0..extra {
        if k.automaton().in_critical_section(p(1)) {
            break;
        }
        k.execute(ProcessStep::Local { pid: p(1), lane: 0 })
            .unwrap();
    }
    k.automaton().in_critical_section(p(1))
}

fn wait_predicate() -> Result<String, String> {
    // Literal reading: p_i proceeds iff FLAG[j] = down or LAST != i.
    for flag in [Flag::Up, Flag::Down] {
        for last in 1..=2u8 {
            for me in 1..=2u8 {
                let literal = flag == Flag::Down || last != me;
                ensure(mutex::wait_predicate(flag, last, me) == literal, || {
                    format!(
                        "predicate({flag:?}, LAST = {last}, i = {me}) disagrees with the formula"
                    )
                })?;
            }
        }
    }
    // Each step: raise flag, write LAST. p1 is side 1 at the only node.
    // Both flags up, LAST = 1: p1 spins.
    let blocked = !p1_admitted(&[1, 2, 2, 1], 50);
    // FLAG[2] down (p2 never starts), LAST = 1: admitted.
    let flag_down = p1_admitted(&[1, 1], 50);
    // Both flags up, LAST = 2: admitted.
    let last_other = p1_admitted(&[1, 2, 1, 2], 50);
    ensure(blocked && flag_down && last_other, || {
        format!("blocked {blocked}, admitted with FLAG[2] down {flag_down}, admitted with LAST = 2 {last_other}")
    })?;
    Ok(
        "flags up and LAST = 1 keeps p1 waiting for 50 steps; FLAG[2] down or LAST = 2 admits it"
            .into(),
    )
}

fn abd_linearizability() -> Result<String, String> {
    let mut parts = Vec::new();
    for (n, ops) in [(3usize, 4u32), (5, 2)] {
        let mut t = Scenario::new(Protocol::Abd, n);
        t.random_crashes = (n - 1) / 2;
        t.ops_per_process = ops;
        t.crash_horizon = 100 * n as u64;
        let s = sweep(&t, 0..=1_999).map_err(|e| e.to_string())?;
        ensure(s.accepted == 2_000, || {
            format!("n = {n}: {}", s.summary(Protocol::Abd).trim())
        })?;
        parts.push(format!(
            "n = {n}: {}/2000 accepted ({} crashes, {} ops)",
            s.accepted,
            t.random_crashes,
            ops * n as u32
        ));
    }
    Ok(parts.join("; "))
}

fn inversion_scenario(skip: bool) -> Scenario {
    let mut s = Scenario::new(Protocol::Abd, 3);
    s.name = "abd-inversion".into();
    s.violating = true;
    s.skip_read_phase2 = skip;
    s.adversary = AdversaryKind::Scripted(
        abd::INVERSION_SCRIPT
            .iter()
            .map(|e| e.parse().unwrap())
            .collect(),
    );
    for (i, op) in [(1, "\"read\""), (2, "\"read\""), (3, "{ write = 1 }")] {
        let table: toml::Table = toml::from_str(&format!("op = {op}")).unwrap();
        s.ops.insert(p(i), vec![table["op"].clone()]);
    }
    s
}

fn read_results(report: &seqthink::harness::Report) -> Vec<Option<RegisterRet>> {
    let h = lincheck::extract_history::<RegisterSpec>(&report.log, abd::OBJECT).unwrap();
    let mut reads: Vec<_> = h.ops.iter().filter(|o| o.op == RegisterOp::Read).collect();
    reads.sort_by_key(|o| o.pid);
    reads.into_iter().map(|o| o.ret.clone()).collect()
}

fn new_old_inversion() -> Result<String, String> {
    let broken = run_scenario(&inversion_scenario(true)).map_err(|e| e.to_string())?;
    let fixed = run_scenario(&inversion_scenario(false)).map_err(|e| e.to_string())?;
    let (rb, rf) = (read_results(&broken), read_results(&fixed));
    ensure(
        matches!(broken.verdict, Some(Verdict::NotLinearizable { .. })),
        || {
            format!(
                "phase 2 disabled: reads {rb:?}, verdict {:?}",
                broken.verdict
            )
        },
    )?;
    ensure(
        matches!(fixed.verdict, Some(Verdict::Linearizable { .. })),
        || format!("phase 2 enabled: reads {rf:?}, verdict {:?}", fixed.verdict),
    )?;
    let v = |x: u64| Some(RegisterRet::Value(x));
    ensure(rb == vec![v(1), v(0)] && rf == vec![v(1), v(1)], || {
        format!("reads {rb:?} / {rf:?}")
    })?;
    Ok("phase 2 disabled: reads 1 then 0, REJECTED; enabled: reads 1 then 1, ACCEPTED".into())
}

fn consensus() -> Result<String, String> {
    let mut parts = Vec::new();
    for n in [2usize, 3] {
        let proposals: Vec<Option<u64>> = (1..=n as u64).map(|v| Some(10 * v)).collect();
        let valid: BTreeSet<u64> = proposals.iter().flatten().copied().collect();
        let root =
            Kernel::new(ConsensusSystem::new(n, proposals), KernelConfig::new(n, 0)).unwrap();
        let mut problem: Option<String> = None;
        let mut worst = 0;
        let stats = explore(
            &root,
            ExploreOptions {
                max_crashes: n - 1,
                max_depth: 64,
            },
            |k, terminal| {
                if problem.is_some() {
                    return;
                }
                let decided: BTreeSet<u64> = ProcessId::all(n)
                    .filter_map(|q| k.automaton().decided(q))
                    .collect();
                if decided.len() > 1 {
                    problem = Some(format!("disagreement {decided:?}"));
                } else if !decided.is_subset(&valid) {
                    problem = Some(format!("decided {decided:?}, proposals {valid:?}"));
                }
                let steps = universal::max_operation_steps(k.log(), agreement::CONSENSUS_OBJECT);
                worst = worst.max(steps);
                if steps > 3 {
                    problem = Some(format!("a proposer took {steps} own steps"));
                }
                if terminal {
                    if let Some(q) = ProcessId::all(n)
                        .find(|&q| !k.is_crashed(q) && k.automaton().decided(q).is_none())
                    {
                        problem = Some(format!("{q} did not crash and never decided"));
                    }
                }
            },
        );
        if let Some(e) = problem {
            return Err(format!("n = {n}: {e}"));
        }
        ensure(stats.truncated == 0, || {
            format!("n = {n}: {} paths cut", stats.truncated)
        })?;
        parts.push(format!(
            "n = {n}: {} schedules, at most {worst} own steps",
            stats.leaves
        ));
    }
    Ok(format!(
        "agreement and validity everywhere; {}",
        parts.join("; ")
    ))
}

fn to_broadcast() -> Result<String, String> {
    let mut t = Scenario::new(Protocol::To, 4);
    t.random_crashes = 1;
    t.crash_horizon = 400;
    let s = sweep(&t, 0..=999).map_err(|e| e.to_string())?;
    ensure(s.accepted == 1_000, || {
        s.summary(Protocol::To).trim().to_string()
    })?;
    Ok("validity, integrity, order, both terminations and prefix-relatedness hold in 1000/1000 runs".into())
}

fn universal_constructions() -> Result<String, String> {
    let mut via_to = Scenario::new(Protocol::UniversalTo, 4);
    via_to.object = ObjectKind::Stack;
    via_to.random_crashes = 1;
    via_to.crash_horizon = 600;
    let s4 = sweep(&via_to, 0..=999).map_err(|e| e.to_string())?;
    ensure(s4.accepted == 1_000, || {
        format!("TO-based: {}", s4.summary(Protocol::UniversalTo).trim())
    })?;

    let mut via_llsc = Scenario::new(Protocol::UniversalLlsc, 4);
    via_llsc.object = ObjectKind::Stack;
    via_llsc.random_crashes = 3;
    via_llsc.crash_horizon = 80;
    let s7 = sweep(&via_llsc, 0..=999).map_err(|e| e.to_string())?;
    ensure(s7.accepted == 1_000, || {
        format!(
            "LL/SC-based: {}",
            s7.summary(Protocol::UniversalLlsc).trim()
        )
    })?;

    // Everyone but the survivor crashes at seeded points.
    let bound = universal::llsc_step_bound(4);
    let mut worst = 0;
    for survivor in 1..=4u32 {
        for seed in 0..50u64 {
            let mut s = Scenario::new(Protocol::UniversalLlsc, 4);
            s.seed = seed;
            s.ops_per_process = 3;
            for q in (1..=4).filter(|&q| q != survivor) {
                s.crash_plan
                    .insert(p(q), (seed * 7 + u64::from(q) * 5) % 40);
            }
            let r = run_scenario(&s).map_err(|e| e.to_string())?;
            let done = lincheck::extract_history::<seqthink::objects::StackSpec>(&r.log, "stack")
                .unwrap()
                .ops
                .iter()
                .filter(|o| o.pid == p(survivor) && !o.is_pending())
                .count();
            let steps = universal::max_operation_steps(&r.log, "stack");
            worst = worst.max(steps);
            ensure(
                r.outcome() == Outcome::Pass && done == 3 && steps <= bound,
                || {
                    format!(
                        "survivor p{survivor} seed {seed}: {done}/3 operations, {steps} steps\n{}",
                        r.summary()
                    )
                },
            )?;
        }
    }
    Ok(format!(
        "TO-based 1000/1000, LL/SC-based 1000/1000 accepted; lone survivors finish in at most {worst} own steps (bound {bound})"
    ))
}

fn checker_soundness() -> Result<String, String> {
    let spec = RegisterSpec::default();
    let mut histories = 0usize;
    let mut disagreements = Vec::new();
    for k in 1..=6usize {
        // Pending operations are enumerated for up to five operations.
        let masks = if k <= 5 { 1u32 << k } else { 1 };
        for shape in common::interval_shapes(k) {
            for pending in 0..masks {
                common::for_each_register_history(&shape, pending, |h| {
                    histories += 1;
                    let fast = lincheck::check(&spec, h).is_linearizable();
                    if fast != common::naive_linearizable(h) && disagreements.len() < 3 {
                        disagreements.push(format!("{h:?}"));
                    }
                });
            }
        }
    }
    ensure(disagreements.is_empty(), || {
        format!("disagreements, e.g. {}", disagreements.join("; "))
    })?;
    Ok(format!(
        "0 disagreements over {histories} register histories of 1..6 operations"
    ))
}

type Mutation = Box<dyn Fn(&mut LedgerState)>;

fn ledger_tamper() -> Result<String, String> {
    let mut mutations = 0usize;
    for len in 1..=32usize {
        let mut ledger = LedgerState::new();
        for i in 0..len {
            ledger.append(format!("payload {i:02}").into_bytes(), p(i as u32 % 5 + 1));
        }
        for b in 0..len {
            let payload_bits = ledger.blocks[b].payload.len() * 8;
            // Every payload bit, every appender bit, every 5th prev-hash bit.
            let mut cases: Vec<Mutation> = Vec::new();
            for bit in 0..payload_bits {
                cases.push(Box::new(move |l: &mut LedgerState| {
                    l.blocks[b].payload[bit / 8] ^= 1 << (bit % 8)
                }));
            }
            for bit in 0..32 {
                let flipped = ledger.blocks[b].appender.get() ^ (1 << bit);
                // Process 0 does not exist and cannot be represented.
                if let Ok(q) = ProcessId::try_from(flipped) {
                    cases.push(Box::new(move |l: &mut LedgerState| {
                        l.blocks[b].appender = q
                    }));
                }
            }
            for bit in (0..256).step_by(5) {
                cases.push(Box::new(move |l: &mut LedgerState| {
                    l.blocks[b].prev_hash[bit / 8] ^= 1 << (bit % 8)
                }));
            }
            for mutate in &cases {
                let mut t = ledger.clone();
                mutate(&mut t);
                mutations += 1;
                match t.verify_chain() {
                    Err(v) if v.index >= b => {}
                    other => return Err(format!("length {len}, block {b}: {other:?}")),
                }
            }
        }
    }
    Ok(format!("{mutations} single-bit mutations over chains of length 1..32, all detected at or after the mutated block"))
}

fn determinism() -> Result<String, String> {
    let mut templates = vec![
        Scenario::new(Protocol::Mutex, 2),
        Scenario::new(Protocol::Mutex, 4),
        Scenario {
            random_crashes: 1,
            ops_per_process: 4,
            ..Scenario::new(Protocol::Abd, 3)
        },
        Scenario {
            random_crashes: 2,
            ..Scenario::new(Protocol::Abd, 5)
        },
        Scenario {
            random_crashes: 1,
            crash_horizon: 400,
            ..Scenario::new(Protocol::To, 4)
        },
        Scenario {
            random_crashes: 1,
            crash_horizon: 600,
            ..Scenario::new(Protocol::UniversalTo, 4)
        },
        Scenario {
            random_crashes: 3,
            crash_horizon: 80,
            ..Scenario::new(Protocol::UniversalLlsc, 4)
        },
        inversion_scenario(true),
        inversion_scenario(false),
    ];
    templates[0].name = "mutex2".into();
    let mut runs = 0;
    for t in &templates {
        for seed in [0u64, 1, 17, 999] {
            let s = t.with_seed(seed);
            let a = run_scenario(&s).map_err(|e| e.to_string())?;
            let b = run_scenario(&s.clone()).map_err(|e| e.to_string())?;
            ensure(a.digest == b.digest && a.outcome() == b.outcome(), || {
                format!("{} seed {seed}: {} vs {}", t.name, a.digest, b.digest)
            })?;
            let reparsed = seqthink::sim::EventLog::from_records(&a.log.to_records())
                .map_err(|e| e.to_string())?;
            ensure(reparsed.digest() == a.digest, || {
                format!("{} seed {seed}: records round trip", t.name)
            })?;
            runs += 1;
        }
    }
    Ok(format!(
        "{runs} passing and failing runs replayed with identical log digests and verdicts"
    ))
}
