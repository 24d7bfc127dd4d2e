//! Runs scenarios, applies the property checks that fit the protocol, and
//! aggregates seed sweeps. Also hosts the canned demos.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use serde::Serialize;

use crate::abd::{self, AbdSystem};
use crate::agreement::{self, ConsensusSystem, ToSystem};
use crate::lincheck::{self, Verdict};
use crate::mutex::{self, CsInterval, Tournament};
use crate::objects::{
    ConsensusSpec, CounterSpec, LedgerSpec, RegisterSpec, SeqSpec, StackSpec, Workload,
};
use crate::registers::check_register_atomicity;
use crate::scenario::{ObjectKind, Protocol, Scenario, ScenarioError};
use crate::sim::{self, Automaton, EventLog, RunOutcome, RunStatus};
use crate::universal::{self, UniversalLlsc, UniversalTo};
use crate::ProcessId;

/// Own steps a consensus proposal may take.
pub const CONSENSUS_STEP_BOUND: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Undecided,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

/// Overall result of a run, ordered by severity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Pass,
    Undecided,
    Violation,
}

impl Outcome {
    /// Process exit status: 0 pass, 1 violation, 2 undecided or budget.
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Violation => 1,
            Outcome::Undecided => 2,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub scenario: String,
    pub protocol: &'static str,
    pub n: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub steps: u64,
    pub crashed: Vec<ProcessId>,
    pub digest: String,
    pub checks: Vec<Check>,
    /// Linearizability verdict, for protocols that implement an object.
    pub verdict: Option<Verdict>,
    /// The checked history, one operation per line, indexed as in `verdict`.
    pub history: Vec<String>,
    /// Mutex runs only.
    pub cs_intervals: Vec<CsInterval>,
    #[serde(skip)]
    pub log: EventLog,
}

impl Report {
    pub fn outcome(&self) -> Outcome {
        let worst = self.checks.iter().map(|c| match c.status {
            CheckStatus::Pass => Outcome::Pass,
            CheckStatus::Undecided => Outcome::Undecided,
            CheckStatus::Fail => Outcome::Violation,
        });
        let budget = if self.status == RunStatus::BudgetExhausted {
            Outcome::Undecided
        } else {
            Outcome::Pass
        };
        worst.fold(budget, Outcome::max)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self, name: &str) -> bool {
        self.check(name)
            .is_some_and(|c| c.status == CheckStatus::Fail)
    }

    /// The verdict as printed: `yes`, `NO` or `undecided`.
    pub fn linearizable(&self) -> Option<&'static str> {
        self.verdict.as_ref().map(|v| match v {
            Verdict::Linearizable { .. } => "yes",
            Verdict::NotLinearizable { .. } => "NO",
            Verdict::Undecided { .. } => "undecided",
        })
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario: {} ({}, n = {}, seed = {})",
            self.scenario, self.protocol, self.n, self.seed
        );
        let crashed: Vec<String> = self.crashed.iter().map(ToString::to_string).collect();
        let status = match self.status {
            RunStatus::Quiescent => "quiescent",
            RunStatus::BudgetExhausted => "step budget exhausted",
        };
        let _ = writeln!(
            out,
            "run: {status} after {} steps; crashed: [{}]",
            self.steps,
            crashed.join(", ")
        );
        let _ = writeln!(out, "log digest: {}", self.digest);
        for c in &self.checks {
            let mark = match c.status {
                CheckStatus::Pass => "ok",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Undecided => "??",
            };
            let _ = writeln!(out, "  [{mark:>4}] {}: {}", c.name, c.detail);
        }
        if let Some(v) = &self.verdict {
            let _ = writeln!(out, "history:");
            for (i, line) in self.history.iter().enumerate() {
                let _ = writeln!(out, "  #{i:<3} {line}");
            }
            let _ = writeln!(
                out,
                "linearizable: {}",
                self.linearizable().unwrap_or_default()
            );
            match v {
                Verdict::Linearizable { witness } => {
                    let _ = writeln!(out, "witness order: {witness:?}");
                }
                Verdict::NotLinearizable { core } => {
                    let _ = writeln!(out, "violation core: {core:?}");
                    for &i in core {
                        let _ = writeln!(out, "  #{i:<3} {}", self.history[i]);
                    }
                }
                Verdict::Undecided { completed, bound } => {
                    let _ = writeln!(
                        out,
                        "{completed} completed operations exceed the search bound of {bound}"
                    );
                }
            }
        }
        if self.protocol == Protocol::Mutex.name() {
            let violations = usize::from(self.failed("mutual exclusion"));
            let _ = writeln!(out, "mutual exclusion violations: {violations}/1");
        }
        out
    }
}

fn check_from<T>(name: &'static str, r: Result<T, String>, ok: impl FnOnce(T) -> String) -> Check {
    match r {
        Ok(v) => Check {
            name,
            status: CheckStatus::Pass,
            detail: ok(v),
        },
        Err(detail) => Check {
            name,
            status: CheckStatus::Fail,
            detail,
        },
    }
}

struct Builder {
    checks: Vec<Check>,
    verdict: Option<Verdict>,
    history: Vec<String>,
    cs_intervals: Vec<CsInterval>,
}

impl Builder {
    fn new(log: &EventLog) -> Self {
        let checks = vec![
            check_from("log well-formed", sim::check_log_well_formed(log), |_| {
                format!("{} events", log.len())
            }),
            check_from("crash finality", sim::check_crash_finality(log), |_| {
                "no step after a crash".into()
            }),
        ];
        Builder {
            checks,
            verdict: None,
            history: Vec::new(),
            cs_intervals: Vec::new(),
        }
    }

    fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn lincheck<S: SeqSpec>(&mut self, spec: &S, log: &EventLog, obj: &str) {
        let history = match lincheck::extract_history::<S>(log, obj) {
            Ok(h) => h,
            Err(e) => {
                self.push(Check {
                    name: "linearizable",
                    status: CheckStatus::Fail,
                    detail: e.to_string(),
                });
                return;
            }
        };
        let verdict = lincheck::check(spec, &history);
        let (status, detail) = match &verdict {
            Verdict::Linearizable { witness } => (
                CheckStatus::Pass,
                format!(
                    "{} operations, witness of length {}",
                    history.len(),
                    witness.len()
                ),
            ),
            Verdict::NotLinearizable { core } => (
                CheckStatus::Fail,
                format!("no linearization; core of {} operations", core.len()),
            ),
            Verdict::Undecided { completed, bound } => (
                CheckStatus::Undecided,
                format!("{completed} completed operations, bound {bound}"),
            ),
        };
        self.push(Check {
            name: "linearizable",
            status,
            detail,
        });
        self.history = history.ops.iter().map(ToString::to_string).collect();
        self.verdict = Some(verdict);
    }

    fn step_bound(&mut self, log: &EventLog, obj: &str, bound: usize) {
        let worst = universal::max_operation_steps(log, obj);
        let r = if worst <= bound {
            Ok(worst)
        } else {
            Err(format!(
                "an operation took {worst} own steps, bound {bound}"
            ))
        };
        self.push(check_from("wait-free step bound", r, |w| {
            format!("at most {w} own steps per operation (bound {bound})")
        }));
    }

    fn finish<A>(self, s: &Scenario, out: RunOutcome<A>) -> Report {
        Report {
            scenario: s.name.clone(),
            protocol: s.protocol.name(),
            n: s.n,
            seed: s.seed,
            status: out.status,
            steps: out.steps,
            crashed: out.crashed,
            digest: out.log.digest(),
            checks: self.checks,
            verdict: self.verdict,
            history: self.history,
            cs_intervals: self.cs_intervals,
            log: out.log,
        }
    }
}

fn execute<A: Automaton>(s: &Scenario, automaton: A) -> Result<RunOutcome<A>, ScenarioError> {
    sim::run(automaton, s.kernel_config()).map_err(|e| ScenarioError {
        field: "scenario".into(),
        message: e.to_string(),
    })
}

/// Runs one scenario at its seed and checks everything that applies.
pub fn run_scenario(s: &Scenario) -> Result<Report, ScenarioError> {
    s.validate()?;
    match s.protocol {
        Protocol::Mutex => run_mutex(s),
        Protocol::Abd => run_abd(s),
        Protocol::Consensus => run_consensus(s),
        Protocol::To => run_to(s),
        Protocol::UniversalTo | Protocol::UniversalLlsc => match s.object {
            ObjectKind::Stack => run_universal(s, StackSpec::default()),
            ObjectKind::Counter => run_universal(s, CounterSpec),
            ObjectKind::Register => run_universal(s, RegisterSpec::default()),
            ObjectKind::Ledger => run_universal(s, LedgerSpec),
        },
    }
}

fn run_mutex(s: &Scenario) -> Result<Report, ScenarioError> {
    let out = execute(s, Tournament::new(s.n, s.cycles, s.cs_steps))?;
    let log = &out.log;
    let mut b = Builder::new(log);
    b.push(check_from(
        "mutual exclusion",
        mutex::check_mutual_exclusion(log),
        |k| format!("{k} critical sections, none overlapping"),
    ));
    if out.status == RunStatus::Quiescent {
        b.push(check_from(
            "acquires complete",
            mutex::check_acquires_complete(log),
            |k| format!("{k} acquires answered"),
        ));
    }
    b.push(check_from(
        "register atomicity",
        check_register_atomicity(log).map_err(|e| e.to_string()),
        |k| format!("{k} register accesses"),
    ));
    b.cs_intervals = mutex::cs_intervals(log);
    Ok(b.finish(s, out))
}

fn run_abd(s: &Scenario) -> Result<Report, ScenarioError> {
    let spec = RegisterSpec::default();
    let system = AbdSystem::new(s.n, s.workloads(&spec)?).skip_read_phase2(s.skip_read_phase2);
    let out = execute(s, system)?;
    let log = &out.log;
    let mut b = Builder::new(log);
    b.push(check_from(
        "quorum intersection",
        abd::check_quorum_intersection(log, s.n),
        |k| format!("{k} completed phases, each heard from a majority"),
    ));
    b.push(check_from(
        "replica timestamps monotonic",
        abd::check_replica_monotonic(log),
        |_| "no replica went back".into(),
    ));
    if out.status == RunStatus::Quiescent {
        b.push(check_from(
            "reliable delivery",
            sim::check_reliable_delivery(log),
            |_| "every owed message arrived".into(),
        ));
    }
    b.lincheck(&spec, log, abd::OBJECT);
    Ok(b.finish(s, out))
}

fn run_consensus(s: &Scenario) -> Result<Report, ScenarioError> {
    let spec = ConsensusSpec;
    let proposals = s
        .workloads(&spec)?
        .into_iter()
        .map(|ops| {
            ops.into_iter()
                .next()
                .map(|crate::objects::ConsensusOp::Propose(v)| v)
        })
        .collect();
    let out = execute(s, ConsensusSystem::new(s.n, proposals))?;
    let log = &out.log;
    let mut b = Builder::new(log);
    b.step_bound(log, agreement::CONSENSUS_OBJECT, CONSENSUS_STEP_BOUND);
    b.lincheck(&spec, log, agreement::CONSENSUS_OBJECT);
    Ok(b.finish(s, out))
}

fn run_to(s: &Scenario) -> Result<Report, ScenarioError> {
    let out = execute(s, ToSystem::new(s.n, s.payloads()))?;
    let log = &out.log;
    let mut b = Builder::new(log);
    let complete = out.status == RunStatus::Quiescent;
    b.push(check_from(
        "to-broadcast properties",
        agreement::check_to_properties(log, s.n, complete),
        |_| {
            let delivered: usize = agreement::delivery_sequences(log)
                .values()
                .map(Vec::len)
                .max()
                .unwrap_or(0);
            format!(
                "validity, integrity, order{}; longest delivery sequence {delivered}",
                if complete { ", termination" } else { "" }
            )
        },
    ));
    Ok(b.finish(s, out))
}

fn run_universal<S: Workload + Clone>(s: &Scenario, spec: S) -> Result<Report, ScenarioError> {
    let obj = s.object.name();
    let workloads = s.workloads(&spec)?;
    if s.protocol == Protocol::UniversalTo {
        let out = execute(s, UniversalTo::new(spec.clone(), obj, s.n, workloads))?;
        let log = &out.log;
        let mut b = Builder::new(log);
        let complete = out.status == RunStatus::Quiescent;
        b.push(check_from(
            "to-broadcast properties",
            agreement::check_to_properties(log, s.n, complete),
            |_| "validity, integrity, order".into(),
        ));
        b.push(check_from(
            "replica convergence",
            universal::check_replica_convergence(log),
            |k| format!("{k} operations applied in one order by every replica"),
        ));
        b.lincheck(&spec, log, obj);
        Ok(b.finish(s, out))
    } else {
        let out = execute(s, UniversalLlsc::new(spec.clone(), obj, s.n, workloads))?;
        let log = &out.log;
        let mut b = Builder::new(log);
        b.push(check_from(
            "exactly once",
            universal::check_exactly_once(log, obj),
            |k| format!("{k} operations committed, each once"),
        ));
        b.step_bound(log, obj, universal::llsc_step_bound(s.n));
        b.lincheck(&spec, log, obj);
        Ok(b.finish(s, out))
    }
}

/// A run that did not pass, kept so it can be replayed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SweepFailure {
    pub seed: u64,
    pub outcome: Outcome,
    pub digest: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SweepSummary {
    pub runs: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub undecided: usize,
    pub budget_exhausted: usize,
    /// Runs whose mutual exclusion check failed (mutex sweeps).
    pub mutex_violations: usize,
    pub failures: Vec<SweepFailure>,
}

impl SweepSummary {
    pub fn outcome(&self) -> Outcome {
        if self.rejected > 0 {
            Outcome::Violation
        } else if self.undecided + self.budget_exhausted > 0 {
            Outcome::Undecided
        } else {
            Outcome::Pass
        }
    }

    fn add(&mut self, r: &Report) {
        self.runs += 1;
        self.mutex_violations += usize::from(r.failed("mutual exclusion"));
        let outcome = r.outcome();
        match outcome {
            Outcome::Pass => self.accepted += 1,
            Outcome::Violation => self.rejected += 1,
            Outcome::Undecided if r.status == RunStatus::BudgetExhausted => {
                self.budget_exhausted += 1
            }
            Outcome::Undecided => self.undecided += 1,
        }
        if outcome != Outcome::Pass {
            let reason = r
                .checks
                .iter()
                .find(|c| c.status != CheckStatus::Pass)
                .map(|c| format!("{}: {}", c.name, c.detail))
                .unwrap_or_else(|| "step budget exhausted".into());
            self.failures.push(SweepFailure {
                seed: r.seed,
                outcome,
                digest: r.digest.clone(),
                reason,
            });
        }
    }

    pub fn summary(&self, protocol: Protocol) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "runs: {}  accepted: {}  rejected: {}  undecided: {}  budget-exhausted: {}",
            self.runs, self.accepted, self.rejected, self.undecided, self.budget_exhausted
        );
        if protocol == Protocol::Mutex {
            let _ = writeln!(
                out,
                "mutual exclusion violations: {}/{}",
                self.mutex_violations, self.runs
            );
        }
        for f in self.failures.iter().take(10) {
            let _ = writeln!(
                out,
                "  seed {} ({:?}, digest {}): {}",
                f.seed,
                f.outcome,
                &f.digest[..16],
                f.reason
            );
        }
        if self.failures.len() > 10 {
            let _ = writeln!(out, "  ... {} more", self.failures.len() - 10);
        }
        out
    }
}

/// Runs `template` once per seed. Runs are independent and may be spread
/// over threads; the summary lists failures in seed order either way.
pub fn sweep(
    template: &Scenario,
    seeds: RangeInclusive<u64>,
) -> Result<SweepSummary, ScenarioError> {
    template.validate()?;
    let seeds: Vec<u64> = seeds.collect();
    let workers = std::thread::available_parallelism()
        .map_or(1, usize::from)
        .min(seeds.len().max(1));
    let chunk = seeds.len().div_ceil(workers).max(1);
    let reports: Vec<Result<Vec<Report>, ScenarioError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&seed| {
                            let mut r = run_scenario(&template.with_seed(seed))?;
                            r.log = EventLog::new();
                            Ok(r)
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut summary = SweepSummary::default();
    for part in reports {
        for r in part? {
            summary.add(&r);
        }
    }
    Ok(summary)
}

/// Parses `A..B` (both ends included) or a single seed.
pub fn parse_seed_range(s: &str) -> Result<RangeInclusive<u64>, String> {
    let bad = |e: std::num::ParseIntError| format!("bad seed range {s:?}: {e}");
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (
                a.trim().parse().map_err(bad)?,
                b.trim().trim_start_matches('=').parse().map_err(bad)?,
            );
            if a > b {
                return Err(format!("empty seed range {s:?}"));
            }
            Ok(a..=b)
        }
        None => {
            let a = s.trim().parse().map_err(bad)?;
            Ok(a..=a)
        }
    }
}

pub mod demos {
    //! Canned runs with a narrative.

    use super::*;
    use crate::mutex::Phase;
    use crate::objects::{CounterOp, CounterRet, LedgerState};
    use crate::sim::{AdversaryKind, Kernel, KernelConfig, ProcessStep};

    pub const NAMES: &[&str] = &[
        "abd-inversion",
        "ledger-tamper",
        "llsc-help",
        "to-prefix",
        "mutex-crash-in-cs",
    ];

    #[derive(Clone, Debug)]
    pub struct Demo {
        pub text: String,
        /// The demo showed what it set out to show.
        pub ok: bool,
    }

    #[derive(Debug, thiserror::Error)]
    #[error("unknown demo {name:?}; available: {}", NAMES.join(", "), name = .0)]
    pub struct UnknownDemo(pub String);

    pub fn run(name: &str) -> Result<Demo, UnknownDemo> {
        Ok(match name {
            "abd-inversion" => abd_inversion(),
            "ledger-tamper" => ledger_tamper(),
            "llsc-help" => llsc_help(),
            "to-prefix" => to_prefix(),
            "mutex-crash-in-cs" => mutex_crash_in_cs(),
            _ => return Err(UnknownDemo(name.to_string())),
        })
    }

    fn abd_inversion() -> Demo {
        let mut text = String::new();
        let _ = writeln!(
            text,
            "p3 writes 1 while p1 and then p2 read; p1's read finishes before p2's starts."
        );
        let _ = writeln!(text, "schedule: {}", abd::INVERSION_SCRIPT.join(" "));
        let mut verdicts = Vec::new();
        for skip in [true, false] {
            let (system, cfg) = abd::inversion_setup(skip);
            let out = sim::run(system, cfg).expect("valid setup");
            let h = lincheck::extract_history::<RegisterSpec>(&out.log, abd::OBJECT)
                .expect("well-formed history");
            let v = lincheck::check(&RegisterSpec::default(), &h);
            let _ = writeln!(
                text,
                "\nread phase 2 {}:",
                if skip { "DISABLED" } else { "enabled" }
            );
            for op in &h.ops {
                let _ = writeln!(text, "  {op}");
            }
            let _ = writeln!(
                text,
                "  linearizable: {}",
                if v.is_linearizable() { "yes" } else { "NO" }
            );
            if let Verdict::NotLinearizable { core } = &v {
                let _ = writeln!(
                    text,
                    "  violation core: {core:?} (the earlier read saw 1, the later read saw 0)"
                );
            }
            let _ = writeln!(text, "  log digest: {}", out.log.digest());
            verdicts.push(v);
        }
        let ok = verdicts[0].is_violation() && verdicts[1].is_linearizable();
        let _ = writeln!(text, "\nThe write-back phase makes p1 store 1 at a majority before returning, so p2's query must see it.");
        Demo { text, ok }
    }

    fn ledger_tamper() -> Demo {
        let mut text = String::new();
        let mut ledger = LedgerState::new();
        for k in 0..8u32 {
            let p = ProcessId::new(k % 3 + 1);
            let op = if k % 4 == 3 {
                CounterOp::Read
            } else {
                CounterOp::Increment
            };
            ledger.append(serde_json::to_vec(&op).expect("serializable"), p);
        }
        let (count, _) = crate::objects::ledger_as_universal_object(&CounterSpec, &ledger)
            .expect("valid payloads");
        let _ = writeln!(
            text,
            "ledger of {} counter operations (replayed count {count}):",
            ledger.len()
        );
        text.push_str(&ledger.dump());
        let _ = writeln!(text, "verify_chain: {:?}", ledger.verify_chain());
        let mut bytes = ledger.encode();
        let target = 4;
        let needle = &ledger.blocks[target].payload;
        // Head, then per block: length, appender, prev hash, payload.
        let offset = 32
            + ledger.blocks[..target]
                .iter()
                .map(|b| 40 + b.payload.len())
                .sum::<usize>()
            + 40;
        bytes[offset + 2] ^= 0x01;
        let tampered = LedgerState::decode(&bytes).expect("structure intact");
        let _ = writeln!(
            text,
            "\nflipped one bit of block {target}'s payload: {:?} -> {:?}",
            String::from_utf8_lossy(needle),
            String::from_utf8_lossy(&tampered.blocks[target].payload)
        );
        let result = tampered.verify_chain();
        match &result {
            Err(v) => {
                let _ = writeln!(text, "verify_chain: violation at block {}", v.index);
            }
            Ok(()) => {
                let _ = writeln!(text, "verify_chain: accepted (tampering went unnoticed)");
            }
        }
        let ok = result.is_err_and(|v| v.index >= target);
        Demo { text, ok }
    }

    /// p1 and p2 both increment. p1 reads the board after p2 announced, so
    /// its SC applies both; p2's SC fails and it returns the result p1
    /// stored for it.
    pub const LLSC_HELP_SCRIPT: &[&str] = &[
        "p1", "p2", "p1", "p2", "p1", "p1", "p2", "p2", "p1", "p2", "p2", "p2", "p1",
    ];

    fn llsc_help() -> Demo {
        let run = |script: &[&str]| {
            let sys = UniversalLlsc::new(
                CounterSpec,
                "counter",
                2,
                vec![vec![CounterOp::Increment]; 2],
            );
            let mut cfg = KernelConfig::new(2, 0);
            cfg.adversary =
                AdversaryKind::Scripted(script.iter().map(|s| s.parse().expect("valid")).collect());
            sim::run(sys, cfg).expect("valid setup")
        };
        let helped = run(LLSC_HELP_SCRIPT);
        let mut text = String::new();
        let _ = writeln!(text, "schedule: {}", LLSC_HELP_SCRIPT.join(" "));
        text.push_str(&helped.log.to_text());
        let h =
            lincheck::extract_history::<CounterSpec>(&helped.log, "counter").expect("well-formed");
        let ret = |h: &lincheck::History<CounterOp, CounterRet>, p: u32| {
            h.ops
                .iter()
                .find(|o| o.pid == ProcessId::new(p))
                .and_then(|o| o.ret.clone())
        };
        let show = |r: &Option<CounterRet>| serde_json::to_string(r).expect("serializable");
        let p2_helped = ret(&h, 2);
        let commits: Vec<String> = helped
            .log
            .iter()
            .filter(|e| e.obj.as_deref() == Some(universal::INTERNAL))
            .filter_map(|e| Some(format!("{} {}", e.pid, e.op.as_ref()?)))
            .collect();
        let _ = writeln!(text, "\nsuccessful SCs: {}", commits.join("; "));
        let _ = writeln!(
            text,
            "p2 returned {}, taken from res[p2] in the cell p1 stored",
            show(&p2_helped)
        );
        // Same operations, p1 finishing before p2 starts: p2 applies its own.
        let solo = run(&["p1"; 6]);
        let h_solo =
            lincheck::extract_history::<CounterSpec>(&solo.log, "counter").expect("well-formed");
        let p2_solo = ret(&h_solo, 2);
        let _ = writeln!(
            text,
            "sequential schedule (p1 then p2): p2 returned {}",
            show(&p2_solo)
        );
        let p2_own_commit = commits.iter().any(|c| c.starts_with("p2"));
        let ok = p2_helped.is_some() && p2_helped == p2_solo && !p2_own_commit;
        let _ = writeln!(
            text,
            "helped and self-applied results agree: {}",
            if p2_helped == p2_solo { "yes" } else { "NO" }
        );
        Demo { text, ok }
    }

    fn to_prefix() -> Demo {
        let n = 3;
        let payloads = (1..=n as u32)
            .map(|p| vec![format!("m{p}a").into_bytes(), format!("m{p}b").into_bytes()])
            .collect();
        let mut cfg = KernelConfig::new(n, 5);
        cfg.crash_plan.insert(ProcessId::new(3), 60);
        let out = sim::run(ToSystem::new(n, payloads), cfg).expect("valid setup");
        let mut text = String::new();
        // Pick the log point where two sequences differ most in length.
        let mut best = (0usize, 0usize);
        for k in 1..=out.log.len() {
            let seqs = agreement::delivery_sequences(&out.log.prefix(k));
            let lens: Vec<usize> = seqs.values().map(Vec::len).collect();
            let gap = lens.iter().max().unwrap_or(&0) - lens.iter().min().unwrap_or(&0);
            if seqs.len() >= 2 && gap > best.1 {
                best = (k, gap);
            }
        }
        let at = if best.0 == 0 { out.log.len() } else { best.0 };
        let seqs = agreement::delivery_sequences(&out.log.prefix(at));
        let _ = writeln!(
            text,
            "three processes TO-broadcast two messages each; p3 crashes at step 60."
        );
        let _ = writeln!(text, "delivery sequences after log position {at}:");
        let show = |ids: &[agreement::MessageId]| {
            ids.iter()
                .map(|m| format!("{}#{}", m.sender, m.counter))
                .collect::<Vec<_>>()
                .join(" ")
        };
        for (p, ids) in &seqs {
            let _ = writeln!(text, "  {p}: [{}]", show(ids));
        }
        let _ = writeln!(text, "final delivery sequences:");
        for (p, ids) in agreement::delivery_sequences(&out.log) {
            let _ = writeln!(text, "  {p}: [{}]", show(&ids));
        }
        let props = agreement::check_to_properties(&out.log, n, out.status == RunStatus::Quiescent);
        let _ = writeln!(
            text,
            "at every log position one sequence is a prefix of the other: {}",
            if props.is_ok() { "yes" } else { "NO" }
        );
        if let Err(e) = &props {
            let _ = writeln!(text, "  {e}");
        }
        Demo {
            text,
            ok: props.is_ok(),
        }
    }

    fn mutex_crash_in_cs() -> Demo {
        let p1 = ProcessId::new(1);
        let p2 = ProcessId::new(2);
        let mut cfg = KernelConfig::new(2, 0);
        cfg.adversary = AdversaryKind::RoundRobin;
        cfg.step_budget = 2_000;
        let mut k = Kernel::new(Tournament::new(2, 1, 3), cfg).expect("valid setup");
        while !k.automaton().in_critical_section(p1) {
            k.execute(ProcessStep::Local { pid: p1, lane: 0 })
                .expect("p1 runs alone");
        }
        let mut text = String::new();
        let _ = writeln!(
            text,
            "p1 enters the critical section after {} steps and crashes there.",
            k.current_step()
        );
        k.crash(p1).expect("p1 is live");
        let out = k.run();
        let phase = out.automaton.phase(p2);
        let blocked = out.status == RunStatus::BudgetExhausted
            && !matches!(phase, Phase::Critical(_) | Phase::Done);
        let _ = writeln!(
            text,
            "p2 then ran alone for {} steps and is still waiting (phase {phase:?}): FLAG[p1] stays up forever.",
            out.steps
        );
        let _ = writeln!(
            text,
            "acquires complete: {:?}",
            mutex::check_acquires_complete(&out.log)
        );
        Demo { text, ok: blocked }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_demo_shows_its_point() {
        for name in demos::NAMES {
            let d = demos::run(name).unwrap();
            assert!(d.ok, "{name}:\n{}", d.text);
        }
        assert!(demos::run("nope")
            .unwrap_err()
            .to_string()
            .contains("abd-inversion"));
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("0..999").unwrap(), 0..=999);
        assert_eq!(parse_seed_range("4").unwrap(), 4..=4);
        assert!(parse_seed_range("5..2").is_err());
    }

    #[test]
    fn reports_replay() {
        let mut s = Scenario::new(Protocol::Abd, 3);
        s.random_crashes = 1;
        s.seed = 11;
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        assert_eq!(a.digest, b.digest);
        assert_eq!(a.outcome(), Outcome::Pass, "{}", a.summary());
    }

    #[test]
    fn every_protocol_passes_a_small_sweep() {
        let mut templates = vec![
            Scenario::new(Protocol::Mutex, 3),
            Scenario::new(Protocol::Abd, 5),
        ];
        templates.push(Scenario {
            random_crashes: 1,
            ..Scenario::new(Protocol::Consensus, 3)
        });
        templates.push(Scenario {
            random_crashes: 1,
            ..Scenario::new(Protocol::To, 3)
        });
        for object in [
            ObjectKind::Stack,
            ObjectKind::Counter,
            ObjectKind::Register,
            ObjectKind::Ledger,
        ] {
            for protocol in [Protocol::UniversalTo, Protocol::UniversalLlsc] {
                templates.push(Scenario {
                    object,
                    random_crashes: 1,
                    ..Scenario::new(protocol, 3)
                });
            }
        }
        for t in templates {
            let summary = sweep(&t, 0..=9).unwrap();
            assert_eq!(
                summary.accepted,
                10,
                "{} {:?}: {}",
                t.protocol.name(),
                t.object,
                summary.summary(t.protocol)
            );
        }
    }

    #[test]
    fn inversion_scenario_is_rejected() {
        let mut s = Scenario::new(Protocol::Abd, 3);
        s.violating = true;
        s.skip_read_phase2 = true;
        s.adversary = sim::AdversaryKind::Scripted(
            abd::INVERSION_SCRIPT
                .iter()
                .map(|e| e.parse().unwrap())
                .collect(),
        );
        for (p, op) in [(1, "\"read\""), (2, "\"read\""), (3, "{ write = 1 }")] {
            let v: toml::Value =
                toml::from_str::<toml::Table>(&format!("x = {op}")).unwrap()["x"].clone();
            s.ops.insert(ProcessId::new(p), vec![v]);
        }
        let r = run_scenario(&s).unwrap();
        assert_eq!(r.linearizable(), Some("NO"));
        assert_eq!(r.outcome().exit_code(), 1);
        s.skip_read_phase2 = false;
        assert_eq!(run_scenario(&s).unwrap().linearizable(), Some("yes"));
    }
}
