//! Scenario files: which protocol to run, on how many processes, against
//! which adversary and crash plan.
//!
//! Scenarios are TOML:
//!
//! ```toml
//! name = "abd"
//! protocol = "abd"            # mutex | abd | consensus | to | universal-to | universal-llsc
//! n = 3
//! seed = 7
//! adversary = "seeded-random" # round-robin | seeded-random | scripted
//! ops_per_process = 3         # operations sampled from the seed
//! random_crashes = 1          # extra crashes at seeded steps below crash_horizon
//!
//! [crash_plan]
//! p3 = 40                     # crash before kernel step 40; "never" is accepted too
//!
//! [ops]                       # explicit operations replace sampled ones
//! p1 = [{ write = 1 }, "read"]
//! ```

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::objects::Workload;
use crate::sim::{AdversaryKind, Fairness, KernelConfig, ScriptEntry, DEFAULT_STEP_BUDGET};
use crate::ProcessId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Mutex,
    Abd,
    Consensus,
    To,
    UniversalTo,
    UniversalLlsc,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Mutex => "mutex",
            Protocol::Abd => "abd",
            Protocol::Consensus => "consensus",
            Protocol::To => "to",
            Protocol::UniversalTo => "universal-to",
            Protocol::UniversalLlsc => "universal-llsc",
        }
    }

    /// Crashes the protocol tolerates with `n` processes.
    pub fn tolerance(self, n: usize) -> usize {
        match self {
            Protocol::Mutex => 0,
            Protocol::Abd => (n - 1) / 2,
            _ => n - 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    #[default]
    Stack,
    Counter,
    Register,
    Ledger,
}

impl ObjectKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Stack => "stack",
            ObjectKind::Counter => "counter",
            ObjectKind::Register => "register",
            ObjectKind::Ledger => "ledger",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum AdversaryName {
    RoundRobin,
    SeededRandom,
    Scripted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
enum CrashPoint {
    At(u64),
    Never(Never),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Never {
    Never,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    protocol: Protocol,
    n: usize,
    #[serde(default)]
    seed: u64,
    step_budget: Option<u64>,
    adversary: Option<AdversaryName>,
    #[serde(default)]
    fairness: Fairness,
    #[serde(default)]
    script: Vec<String>,
    #[serde(default)]
    crash_plan: BTreeMap<String, CrashPoint>,
    #[serde(default)]
    random_crashes: usize,
    crash_horizon: Option<u64>,
    #[serde(default)]
    violating: bool,
    #[serde(default)]
    skip_read_phase2: bool,
    object: Option<ObjectKind>,
    ops_per_process: Option<u32>,
    cycles: Option<u32>,
    cs_steps: Option<u32>,
    #[serde(default)]
    ops: BTreeMap<String, Vec<toml::Value>>,
}

/// A scenario rejected at load time, with the field at fault.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid scenario: `{field}`: {message}")]
pub struct ScenarioError {
    pub field: String,
    pub message: String,
}

fn invalid(field: impl Into<String>, message: impl fmt::Display) -> ScenarioError {
    ScenarioError {
        field: field.into(),
        message: message.to_string(),
    }
}

pub const DEFAULT_OPS_PER_PROCESS: u32 = 2;
pub const DEFAULT_CRASH_HORIZON: u64 = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub protocol: Protocol,
    pub object: ObjectKind,
    pub n: usize,
    pub seed: u64,
    pub step_budget: u64,
    pub adversary: AdversaryKind,
    pub fairness: Fairness,
    pub crash_plan: BTreeMap<ProcessId, u64>,
    /// Processes, beyond `crash_plan`, crashed at seeded steps.
    pub random_crashes: usize,
    pub crash_horizon: u64,
    /// Allows crash plans beyond the protocol's tolerance.
    pub violating: bool,
    pub skip_read_phase2: bool,
    pub ops_per_process: u32,
    /// Mutex: acquire/release cycles per process.
    pub cycles: u32,
    /// Mutex: local steps spent inside the critical section.
    pub cs_steps: u32,
    /// Explicit operations per process, still untyped.
    pub ops: BTreeMap<ProcessId, Vec<toml::Value>>,
}

impl Scenario {
    pub fn new(protocol: Protocol, n: usize) -> Self {
        Scenario {
            name: protocol.name().to_string(),
            protocol,
            object: ObjectKind::default(),
            n,
            seed: 0,
            step_budget: DEFAULT_STEP_BUDGET,
            adversary: AdversaryKind::SeededRandom,
            fairness: Fairness::Fair,
            crash_plan: BTreeMap::new(),
            random_crashes: 0,
            crash_horizon: DEFAULT_CRASH_HORIZON,
            violating: false,
            skip_read_phase2: false,
            ops_per_process: DEFAULT_OPS_PER_PROCESS,
            cycles: 2,
            cs_steps: 1,
            ops: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario =
            toml::from_str(text).map_err(|e| invalid(error_field(text, &e), e.message().trim()))?;
        let mut s = Scenario::new(raw.protocol, raw.n);
        if let Some(name) = raw.name {
            s.name = name;
        }
        s.seed = raw.seed;
        s.step_budget = raw.step_budget.unwrap_or(DEFAULT_STEP_BUDGET);
        s.fairness = raw.fairness;
        s.adversary = match raw.adversary {
            Some(AdversaryName::RoundRobin) => AdversaryKind::RoundRobin,
            Some(AdversaryName::SeededRandom) => AdversaryKind::SeededRandom,
            Some(AdversaryName::Scripted) => {
                let script = raw
                    .script
                    .iter()
                    .enumerate()
                    .map(|(k, e)| {
                        e.parse::<ScriptEntry>()
                            .map_err(|err| invalid(format!("script[{k}]"), err))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                AdversaryKind::Scripted(script)
            }
            None if raw.script.is_empty() => AdversaryKind::SeededRandom,
            None => return Err(invalid("script", "only used with adversary = \"scripted\"")),
        };
        for (key, point) in raw.crash_plan {
            let p = key
                .parse::<ProcessId>()
                .map_err(|e| invalid(format!("crash_plan.{key}"), e))?;
            if let CrashPoint::At(step) = point {
                s.crash_plan.insert(p, step);
            }
        }
        s.random_crashes = raw.random_crashes;
        s.crash_horizon = raw.crash_horizon.unwrap_or(DEFAULT_CRASH_HORIZON);
        s.violating = raw.violating;
        s.skip_read_phase2 = raw.skip_read_phase2;
        s.object = raw.object.unwrap_or_default();
        if raw.object.is_some()
            && !matches!(s.protocol, Protocol::UniversalTo | Protocol::UniversalLlsc)
        {
            return Err(invalid("object", "only universal protocols take an object"));
        }
        s.ops_per_process = raw.ops_per_process.unwrap_or(DEFAULT_OPS_PER_PROCESS);
        s.cycles = raw.cycles.unwrap_or(s.cycles);
        s.cs_steps = raw.cs_steps.unwrap_or(s.cs_steps);
        for (key, ops) in raw.ops {
            let p = key
                .parse::<ProcessId>()
                .map_err(|e| invalid(format!("ops.{key}"), e))?;
            s.ops.insert(p, ops);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.n == 0 {
            return Err(invalid("n", "a scenario needs at least one process"));
        }
        if self.step_budget == 0 {
            return Err(invalid("step_budget", "must be positive"));
        }
        if matches!(&self.adversary, AdversaryKind::Scripted(s) if s.is_empty()) {
            return Err(invalid("script", "a scripted adversary needs a script"));
        }
        if let AdversaryKind::Scripted(script) = &self.adversary {
            for (k, entry) in script.iter().enumerate() {
                let pids = match *entry {
                    ScriptEntry::Local { pid, .. } => vec![pid],
                    ScriptEntry::Deliver { from, to, .. } => vec![from, to],
                };
                if pids.iter().any(|p| p.index() >= self.n) {
                    return Err(invalid(
                        format!("script[{k}]"),
                        format!("{entry} names a process outside 1..={}", self.n),
                    ));
                }
            }
        }
        for p in self.crash_plan.keys().chain(self.ops.keys()) {
            if p.index() >= self.n {
                let table = if self.crash_plan.contains_key(p) {
                    "crash_plan"
                } else {
                    "ops"
                };
                return Err(invalid(
                    format!("{table}.{p}"),
                    format!("not a process of a {}-process scenario", self.n),
                ));
            }
        }
        let crashes = self.crash_plan.len() + self.random_crashes;
        if crashes > self.n {
            return Err(invalid(
                "random_crashes",
                format!("{crashes} crashes among {} processes", self.n),
            ));
        }
        if self.random_crashes > 0 && self.crash_horizon == 0 {
            return Err(invalid(
                "crash_horizon",
                "must be positive when random_crashes is set",
            ));
        }
        let tolerance = self.protocol.tolerance(self.n);
        if crashes > tolerance && !self.violating {
            let field = if self.random_crashes > 0 {
                "random_crashes"
            } else {
                "crash_plan"
            };
            return Err(invalid(
                field,
                format!(
                    "{crashes} crashes exceed what {} tolerates with n = {} ({tolerance}); set violating = true to run anyway",
                    self.protocol.name(),
                    self.n
                ),
            ));
        }
        if self.skip_read_phase2 && (self.protocol != Protocol::Abd || !self.violating) {
            return Err(invalid(
                "skip_read_phase2",
                "only for abd scenarios marked violating = true",
            ));
        }
        if self.protocol == Protocol::Mutex && !self.ops.is_empty() {
            return Err(invalid(
                "ops",
                "mutex scenarios take cycles and cs_steps instead",
            ));
        }
        if self.protocol == Protocol::Mutex && self.cycles == 0 {
            return Err(invalid("cycles", "must be positive"));
        }
        for (p, ops) in &self.ops {
            match self.protocol {
                Protocol::Mutex => {}
                Protocol::Abd => self
                    .typed_ops::<crate::objects::RegisterSpec>(*p, ops)
                    .map(drop)?,
                Protocol::Consensus => {
                    self.typed_ops::<crate::objects::ConsensusSpec>(*p, ops)?;
                    if ops.len() > 1 {
                        return Err(invalid(format!("ops.{p}"), "one proposal per process"));
                    }
                }
                Protocol::To => {
                    for (k, v) in ops.iter().enumerate() {
                        if v.as_str().is_none() {
                            return Err(invalid(
                                format!("ops.{p}[{k}]"),
                                "broadcast payloads are strings",
                            ));
                        }
                    }
                }
                Protocol::UniversalTo | Protocol::UniversalLlsc => match self.object {
                    ObjectKind::Stack => self
                        .typed_ops::<crate::objects::StackSpec>(*p, ops)
                        .map(drop)?,
                    ObjectKind::Counter => self
                        .typed_ops::<crate::objects::CounterSpec>(*p, ops)
                        .map(drop)?,
                    ObjectKind::Register => self
                        .typed_ops::<crate::objects::RegisterSpec>(*p, ops)
                        .map(drop)?,
                    ObjectKind::Ledger => self
                        .typed_ops::<crate::objects::LedgerSpec>(*p, ops)
                        .map(drop)?,
                },
            }
        }
        Ok(())
    }

    fn typed_ops<S: crate::objects::SeqSpec>(
        &self,
        p: ProcessId,
        ops: &[toml::Value],
    ) -> Result<Vec<S::Op>, ScenarioError> {
        ops.iter()
            .enumerate()
            .map(|(k, v)| parse_op::<S::Op>(v).map_err(|e| invalid(format!("ops.{p}[{k}]"), e)))
            .collect()
    }

    /// Operations of every process: explicit ones if the scenario lists
    /// any, otherwise `ops_per_process` sampled from the seed.
    pub fn workloads<S: Workload>(&self, spec: &S) -> Result<Vec<Vec<S::Op>>, ScenarioError> {
        let mut rng = self.rng(1);
        ProcessId::all(self.n)
            .map(|p| {
                if !self.ops.is_empty() {
                    return match self.ops.get(&p) {
                        Some(ops) => self.typed_ops::<S>(p, ops),
                        None => Ok(Vec::new()),
                    };
                }
                Ok((0..self.ops_per_process)
                    .map(|k| spec.sample_op(&mut rng, p, k))
                    .collect())
            })
            .collect()
    }

    /// Broadcast payloads for the `to` protocol.
    pub fn payloads(&self) -> Vec<Vec<Vec<u8>>> {
        ProcessId::all(self.n)
            .map(|p| {
                if !self.ops.is_empty() {
                    let ops = self.ops.get(&p).map(Vec::as_slice).unwrap_or_default();
                    return ops
                        .iter()
                        .filter_map(|v| v.as_str())
                        .map(|s| s.as_bytes().to_vec())
                        .collect();
                }
                (0..self.ops_per_process)
                    .map(|k| format!("{p}.{k}").into_bytes())
                    .collect()
            })
            .collect()
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// The explicit crash plan plus `random_crashes` seeded ones.
    pub fn effective_crash_plan(&self) -> BTreeMap<ProcessId, u64> {
        let mut plan = self.crash_plan.clone();
        let mut rng = self.rng(2);
        let mut candidates: Vec<ProcessId> = ProcessId::all(self.n)
            .filter(|p| !plan.contains_key(p))
            .collect();
        for _ in 0..self.random_crashes.min(candidates.len()) {
            let p = candidates.swap_remove(rng.gen_range(0..candidates.len()));
            plan.insert(p, rng.gen_range(0..self.crash_horizon));
        }
        plan
    }

    pub fn kernel_config(&self) -> KernelConfig {
        KernelConfig {
            n: self.n,
            seed: self.seed,
            step_budget: self.step_budget,
            adversary: self.adversary.clone(),
            fairness: self.fairness,
            crash_plan: self.effective_crash_plan(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Scenario {
            seed,
            ..self.clone()
        }
    }
}

/// The key a TOML error is about: named in the message for missing and
/// unknown fields, otherwise the key on the line the error points at.
fn error_field(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message();
    if msg.starts_with("missing field") || msg.starts_with("unknown field") {
        if let Some(name) = msg.split('`').nth(1) {
            return name.to_string();
        }
    }
    e.span()
        .and_then(|span| {
            let start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
            let line = text[start..].lines().next()?;
            let key = line.split_once('=')?.0.trim();
            (!key.is_empty()).then(|| key.to_string())
        })
        .unwrap_or_else(|| "scenario".to_string())
}

/// Parses one operation written in TOML, e.g. `"pop"` or `{ push = 3 }`.
pub fn parse_op<O: DeserializeOwned>(v: &toml::Value) -> Result<O, String> {
    let json = serde_json::to_value(v).map_err(|e| e.to_string())?;
    serde_json::from_value(json).map_err(|e| format!("{v}: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objects::{RegisterOp, RegisterSpec};

    const ABD: &str = r#"
        name = "abd"
        protocol = "abd"
        n = 5
        seed = 9
        random_crashes = 1
        [crash_plan]
        p2 = 30
        p4 = "never"
        [ops]
        p1 = [{ write = 4 }, "read"]
    "#;

    #[test]
    fn parses_full_scenario() {
        let s = Scenario::parse(ABD).unwrap();
        assert_eq!(s.n, 5);
        assert_eq!(s.crash_plan, BTreeMap::from([(ProcessId::new(2), 30)]));
        let wl = s.workloads(&RegisterSpec::default()).unwrap();
        assert_eq!(wl[0], vec![RegisterOp::Write(4), RegisterOp::Read]);
        assert!(wl[1].is_empty());
        let plan = s.effective_crash_plan();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan, s.effective_crash_plan());
    }

    fn field_of(text: &str) -> String {
        Scenario::parse(text).unwrap_err().field
    }

    #[test]
    fn diagnostics_name_the_field() {
        assert_eq!(
            field_of("protocol = \"abd\"\nn = 3\n[crash_plan]\np1 = 5\np2 = 6"),
            "crash_plan"
        );
        assert_eq!(field_of("protocol = \"abd\"\nn = 0"), "n");
        assert_eq!(
            field_of("protocol = \"abd\"\nn = 3\n[ops]\np1 = [\"peek\"]"),
            "ops.p1[0]"
        );
        assert_eq!(
            field_of("protocol = \"abd\"\nn = 3\n[ops]\np7 = [\"read\"]"),
            "ops.p7"
        );
        assert_eq!(
            field_of("protocol = \"abd\"\nn = 3\nskip_read_phase2 = true"),
            "skip_read_phase2"
        );
        assert_eq!(
            field_of("protocol = \"mutex\"\nn = 2\nrandom_crashes = 1"),
            "random_crashes"
        );
        assert_eq!(
            field_of("protocol = \"abd\"\nn = 3\nadversary = \"scripted\"\nscript = [\"q1\"]"),
            "script[0]"
        );
        assert_eq!(
            field_of("protocol = \"abd\"\nn = 3\nstep_budget = 0"),
            "step_budget"
        );
        assert!(field_of("protocol = \"abd\"\nn = 3\nspeed = 2").contains("speed"));
        assert_eq!(field_of("protocol = \"paxos\"\nn = 3"), "protocol");
        assert_eq!(field_of("n = 3"), "protocol");
    }

    #[test]
    fn violating_lifts_tolerance() {
        let s = Scenario::parse(
            "protocol = \"abd\"\nn = 3\nviolating = true\n[crash_plan]\np1 = 5\np2 = 6",
        )
        .unwrap();
        assert_eq!(s.kernel_config().crash_plan.len(), 2);
    }

    #[test]
    fn sampled_workloads_follow_seed() {
        let s = Scenario::new(Protocol::Abd, 3);
        let a = s.workloads(&RegisterSpec::default()).unwrap();
        assert_eq!(a, s.workloads(&RegisterSpec::default()).unwrap());
        assert!(a
            .iter()
            .all(|ops| ops.len() == DEFAULT_OPS_PER_PROCESS as usize));
    }
}
