//! Exhaustive enumeration of schedules for small configurations.

use super::{Automaton, Kernel, ProcessId};

#[derive(Clone, Copy, Debug)]
pub struct ExploreOptions {
    /// Also branch on crashing any live process that has a step enabled.
    pub max_crashes: usize,
    /// Paths longer than this are cut and counted as truncated.
    pub max_depth: usize,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            max_crashes: 0,
            max_depth: 256,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExploreStats {
    pub nodes: usize,
    /// Complete executions (no step enabled).
    pub leaves: usize,
    pub truncated: usize,
}

/// Depth-first walk over every interleaving (and, optionally, every crash
/// point) reachable from `root`. `visit` sees every reached kernel state;
/// the flag is true for terminal states.
pub fn explore<A, F>(root: &Kernel<A>, options: ExploreOptions, mut visit: F) -> ExploreStats
where
    A: Automaton + Clone,
    F: FnMut(&Kernel<A>, bool),
{
    let mut stats = ExploreStats::default();
    walk(root, options, 0, 0, &mut visit, &mut stats);
    stats
}

fn walk<A, F>(
    kernel: &Kernel<A>,
    options: ExploreOptions,
    depth: usize,
    crashes: usize,
    visit: &mut F,
    stats: &mut ExploreStats,
) where
    A: Automaton + Clone,
    F: FnMut(&Kernel<A>, bool),
{
    stats.nodes += 1;
    let enabled = kernel.enabled_steps();
    let terminal = enabled.is_empty();
    visit(kernel, terminal);
    if terminal {
        stats.leaves += 1;
        return;
    }
    if depth >= options.max_depth {
        stats.truncated += 1;
        return;
    }
    for e in &enabled {
        let mut next = kernel.clone();
        next.execute(e.step).expect("enumerated step is enabled");
        walk(&next, options, depth + 1, crashes, visit, stats);
    }
    if crashes < options.max_crashes {
        let mut actors: Vec<ProcessId> = enabled.iter().map(|e| e.actor).collect();
        actors.sort();
        actors.dedup();
        for p in actors {
            let mut next = kernel.clone();
            next.crash(p).expect("actor is live");
            walk(&next, options, depth + 1, crashes + 1, visit, stats);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Context, KernelConfig, Lane};

    #[derive(Clone)]
    struct Steps(Vec<u32>);

    impl Automaton for Steps {
        fn is_enabled(&self, pid: ProcessId, _: Lane) -> bool {
            self.0[pid.index()] > 0
        }
        fn step(&mut self, pid: ProcessId, _: Lane, _: &mut Context<'_>) {
            self.0[pid.index()] -= 1;
        }
    }

    #[test]
    fn counts_interleavings() {
        // Two processes with 2 and 3 steps: C(5, 2) = 10 interleavings.
        let k = Kernel::new(Steps(vec![2, 3]), KernelConfig::new(2, 0)).unwrap();
        let stats = explore(&k, ExploreOptions::default(), |_, _| {});
        assert_eq!(stats.leaves, 10);
        assert_eq!(stats.truncated, 0);
    }

    #[test]
    fn crash_branches_add_executions() {
        let k = Kernel::new(Steps(vec![1, 1]), KernelConfig::new(2, 0)).unwrap();
        let plain = explore(&k, ExploreOptions::default(), |_, _| {});
        let crashy = explore(
            &k,
            ExploreOptions {
                max_crashes: 1,
                ..Default::default()
            },
            |_, _| {},
        );
        assert_eq!(plain.leaves, 2);
        assert!(crashy.leaves > plain.leaves);
    }
}
