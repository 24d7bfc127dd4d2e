//! Schedulers that pick the next enabled step.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Lane, ProcessId, ProcessStep};

/// Steps a process may be starved for under a fair adversary, per process.
pub const FAIRNESS_WINDOW_PER_PROCESS: u64 = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fairness {
    #[default]
    Fair,
    Unfair,
}

/// One entry of a scripted schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScriptEntry {
    /// A local step of `pid` on `lane`.
    Local { pid: ProcessId, lane: Lane },
    /// Delivery of a pending message from `from` to `to`: the oldest one,
    /// or the most recent one when `newest` is set.
    Deliver {
        from: ProcessId,
        to: ProcessId,
        newest: bool,
    },
}

impl fmt::Display for ScriptEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScriptEntry::Local { pid, lane: 0 } => write!(f, "{pid}"),
            ScriptEntry::Local { pid, lane } => write!(f, "{pid}:{lane}"),
            ScriptEntry::Deliver { from, to, newest } => {
                write!(f, "{from}->{to}{}", if *newest { "!" } else { "" })
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("bad script entry {0:?}: expected `pN`, `pN:LANE`, `pA->pB` or `pA->pB!`")]
pub struct ScriptParseError(pub String);

impl FromStr for ScriptEntry {
    type Err = ScriptParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScriptParseError(s.to_string());
        let s = s.trim();
        if let Some((from, to)) = s.split_once("->") {
            let (to, newest) = match to.trim().strip_suffix('!') {
                Some(t) => (t, true),
                None => (to, false),
            };
            let from = from.trim().parse::<ProcessId>().map_err(|_| bad())?;
            let to = to.trim().parse::<ProcessId>().map_err(|_| bad())?;
            return Ok(ScriptEntry::Deliver { from, to, newest });
        }
        let (pid, lane) = match s.split_once(':') {
            Some((p, l)) => (p, l.parse::<Lane>().map_err(|_| bad())?),
            None => (s, 0),
        };
        let pid = pid.parse::<ProcessId>().map_err(|_| bad())?;
        Ok(ScriptEntry::Local { pid, lane })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum AdversaryKind {
    RoundRobin,
    #[default]
    SeededRandom,
    /// Follows the script while its entries are enabled, skipping entries
    /// that are not, then falls back to round-robin.
    Scripted(Vec<ScriptEntry>),
}

impl AdversaryKind {
    pub fn name(&self) -> &'static str {
        match self {
            AdversaryKind::RoundRobin => "round-robin",
            AdversaryKind::SeededRandom => "seeded-random",
            AdversaryKind::Scripted(_) => "scripted",
        }
    }
}

/// An enabled step together with the process that would take it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnabledStep {
    pub step: ProcessStep,
    pub actor: ProcessId,
    /// Sender, for deliveries.
    pub from: Option<ProcessId>,
}

#[derive(Clone, Debug)]
pub struct Adversary {
    kind: AdversaryKind,
    fairness: Fairness,
    window: u64,
    rng: ChaCha8Rng,
    script_pos: usize,
    rr_last: Option<ProcessId>,
    rr_cursor: BTreeMap<ProcessId, usize>,
    enabled_since: BTreeMap<ProcessStep, u64>,
    max_wait: u64,
}

impl Adversary {
    pub fn new(kind: AdversaryKind, fairness: Fairness, n: usize, seed: u64) -> Self {
        Adversary {
            kind,
            fairness,
            window: FAIRNESS_WINDOW_PER_PROCESS * n.max(1) as u64,
            rng: ChaCha8Rng::seed_from_u64(seed),
            script_pos: 0,
            rr_last: None,
            rr_cursor: BTreeMap::new(),
            enabled_since: BTreeMap::new(),
            max_wait: 0,
        }
    }

    /// Fairness window: a fair adversary never leaves a continuously enabled
    /// step waiting longer than this while fewer than `window / 2` steps are
    /// enabled at once.
    pub fn window(&self) -> u64 {
        self.window
    }

    /// Longest time any chosen step had been continuously enabled.
    pub fn max_wait(&self) -> u64 {
        self.max_wait
    }

    /// Chooses a member of `enabled`, which must be non-empty and sorted in
    /// kernel order.
    pub fn next(&mut self, enabled: &[EnabledStep], now: u64) -> ProcessStep {
        assert!(
            !enabled.is_empty(),
            "adversary asked to choose from nothing"
        );
        self.enabled_since
            .retain(|s, _| enabled.iter().any(|e| e.step == *s));
        for e in enabled {
            self.enabled_since.entry(e.step).or_insert(now);
        }

        let choice = self
            .scripted(enabled)
            .or_else(|| self.forced(now))
            .unwrap_or_else(|| match self.kind {
                AdversaryKind::SeededRandom => enabled[self.rng.gen_range(0..enabled.len())].step,
                AdversaryKind::RoundRobin | AdversaryKind::Scripted(_) => self.round_robin(enabled),
            });

        if let Some(since) = self.enabled_since.remove(&choice) {
            self.max_wait = self.max_wait.max(now - since);
        }
        if let Some(actor) = enabled.iter().find(|e| e.step == choice).map(|e| e.actor) {
            self.rr_last = Some(actor);
        }
        choice
    }

    fn scripted(&mut self, enabled: &[EnabledStep]) -> Option<ProcessStep> {
        let AdversaryKind::Scripted(script) = &self.kind else {
            return None;
        };
        while self.script_pos < script.len() {
            let entry = script[self.script_pos];
            self.script_pos += 1;
            let hit = match entry {
                ScriptEntry::Local { pid, lane } => enabled
                    .iter()
                    .find(|e| e.step == ProcessStep::Local { pid, lane }),
                ScriptEntry::Deliver { from, to, newest } => {
                    let mut matching = enabled.iter().filter(|e| {
                        matches!(e.step, ProcessStep::Deliver(_))
                            && e.actor == to
                            && e.from == Some(from)
                    });
                    if newest {
                        matching.next_back()
                    } else {
                        matching.next()
                    }
                }
            };
            if let Some(hit) = hit {
                return Some(hit.step);
            }
        }
        None
    }

    fn forced(&self, now: u64) -> Option<ProcessStep> {
        if self.fairness == Fairness::Unfair {
            return None;
        }
        let (step, since) = self
            .enabled_since
            .iter()
            .min_by_key(|(step, since)| (**since, **step))?;
        (now - since >= self.window / 2).then_some(*step)
    }

    fn round_robin(&mut self, enabled: &[EnabledStep]) -> ProcessStep {
        let max_pid = enabled.iter().map(|e| e.actor).max().expect("non-empty");
        let start = self.rr_last.map(|p| p.get()).unwrap_or(0);
        let actor = enabled
            .iter()
            .map(|e| e.actor)
            .filter(|a| a.get() > start)
            .min()
            .or_else(|| enabled.iter().map(|e| e.actor).min())
            .unwrap_or(max_pid);
        let mine: Vec<ProcessStep> = enabled
            .iter()
            .filter(|e| e.actor == actor)
            .map(|e| e.step)
            .collect();
        let cursor = self.rr_cursor.entry(actor).or_insert(0);
        let pick = mine[*cursor % mine.len()];
        *cursor += 1;
        pick
    }
}
