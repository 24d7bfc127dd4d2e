use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqthink::harness::{self, demos, Outcome, Report};
use seqthink::lincheck::{self, Verdict};
use seqthink::objects::{ConsensusSpec, CounterSpec, LedgerSpec, RegisterSpec, SeqSpec, StackSpec};
use seqthink::scenario::{ObjectKind, Protocol, Scenario};
use seqthink::sim::{EventKind, EventLog, Fairness};

const USAGE_ERROR: u8 = 3;

#[derive(Parser)]
#[command(
    name = "seqthink",
    version,
    about = "Run, sweep and check concurrent protocol simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file once, or over a range of seeds.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a canned demonstration; without a name, list them.
    Demo { name: Option<String> },
    /// Check a recorded history for linearizability.
    Check {
        /// Line-delimited event records, as written by `--out`.
        history: PathBuf,
        /// Sequential specification to check against.
        #[arg(long, value_enum)]
        spec: SpecArg,
        /// Object name in the records; defaults to the first invoked object.
        #[arg(long)]
        object: Option<String>,
        /// Largest number of completed operations to search.
        #[arg(long, default_value_t = lincheck::DEFAULT_BOUND)]
        bound: usize,
    },
    /// Run a universal construction on a sequential object.
    Universal {
        #[arg(long, value_enum)]
        alg: Alg,
        #[arg(long, value_enum, default_value = "stack")]
        object: ObjectArg,
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Operations per process.
        #[arg(long, default_value_t = 2)]
        ops: u32,
        /// Processes crashed at seeded steps.
        #[arg(long, default_value_t = 0)]
        crashes: usize,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run the tournament mutex and print critical-section intervals.
    Mutex {
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        cycles: u32,
        #[arg(long, default_value_t = 1)]
        cs_steps: u32,
        /// Let the adversary starve processes.
        #[arg(long)]
        unfair: bool,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Args)]
struct RunOpts {
    /// Seed overriding the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    /// Inclusive seed range `A..B`.
    #[arg(long)]
    sweep: Option<String>,
    /// Kernel step budget.
    #[arg(long)]
    budget: Option<u64>,
    /// Write the event log as records (or the sweep summary as JSON) here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Records,
}

#[derive(Clone, Copy, ValueEnum)]
enum Alg {
    To,
    Llsc,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectArg {
    Stack,
    Counter,
    Register,
    Ledger,
}

impl From<ObjectArg> for ObjectKind {
    fn from(o: ObjectArg) -> Self {
        match o {
            ObjectArg::Stack => ObjectKind::Stack,
            ObjectArg::Counter => ObjectKind::Counter,
            ObjectArg::Register => ObjectKind::Register,
            ObjectArg::Ledger => ObjectKind::Ledger,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SpecArg {
    Stack,
    Counter,
    Register,
    Ledger,
    Consensus,
}

/// Error that maps to the usage exit status.
struct Usage(String);

impl<E: std::fmt::Display> From<E> for Usage {
    fn from(e: E) -> Self {
        Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(USAGE_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run { scenario, opts } => cmd_run(&scenario, &opts),
        Command::Demo { name } => cmd_demo(name.as_deref()),
        Command::Check {
            history,
            spec,
            object,
            bound,
        } => cmd_check(&history, spec, object.as_deref(), bound),
        Command::Universal {
            alg,
            object,
            n,
            ops,
            crashes,
            opts,
        } => {
            let protocol = match alg {
                Alg::To => Protocol::UniversalTo,
                Alg::Llsc => Protocol::UniversalLlsc,
            };
            let mut s = Scenario::new(protocol, n);
            s.name = format!("{}-{}", protocol.name(), ObjectKind::from(object).name());
            s.object = object.into();
            s.ops_per_process = ops;
            s.random_crashes = crashes;
            run_or_sweep(s, &opts)
        }
        Command::Mutex {
            n,
            cycles,
            cs_steps,
            unfair,
            opts,
        } => {
            let mut s = Scenario::new(Protocol::Mutex, n);
            s.cycles = cycles;
            s.cs_steps = cs_steps;
            if unfair {
                s.fairness = Fairness::Unfair;
            }
            run_or_sweep(s, &opts)
        }
    };
    match result {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(USAGE_ERROR)
        }
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, Usage> {
    let text = fs::read_to_string(path).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    Scenario::parse(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))
}

fn cmd_run(path: &Path, opts: &RunOpts) -> Result<Outcome, Usage> {
    run_or_sweep(load_scenario(path)?, opts)
}

fn run_or_sweep(mut s: Scenario, opts: &RunOpts) -> Result<Outcome, Usage> {
    if let Some(seed) = opts.seed {
        s.seed = seed;
    }
    if let Some(budget) = opts.budget {
        s.step_budget = budget;
    }
    s.validate()?;
    if let Some(range) = &opts.sweep {
        let seeds = harness::parse_seed_range(range).map_err(Usage)?;
        let summary = harness::sweep(&s, seeds)?;
        let json = serde_json::to_string(&summary)?;
        match opts.format {
            Format::Text => print!("{}", summary.summary(s.protocol)),
            Format::Records => println!("{json}"),
        }
        if let Some(out) = &opts.out {
            fs::write(out, json + "\n")?;
        }
        return Ok(summary.outcome());
    }
    let report = harness::run_scenario(&s)?;
    match opts.format {
        Format::Text => {
            print!("{}", report.summary());
            if s.protocol == Protocol::Mutex {
                print_intervals(&report);
            }
        }
        Format::Records => {
            print!("{}", report.log.to_records());
            println!("{}", serde_json::json!({ "report": report }));
        }
    }
    if let Some(out) = &opts.out {
        fs::write(out, report.log.to_records())?;
    }
    Ok(report.outcome())
}

fn print_intervals(report: &Report) {
    println!("critical sections (log positions):");
    for pid in seqthink::ProcessId::all(report.n) {
        let spans: Vec<String> = report
            .cs_intervals
            .iter()
            .filter(|c| c.pid == pid)
            .map(|c| match c.exit {
                Some(exit) => format!("[{}, {exit})", c.enter),
                None => format!("[{}, never)", c.enter),
            })
            .collect();
        println!("  {pid}: {}", spans.join(" "));
    }
}

fn demo_dir_scenarios() -> Vec<(String, PathBuf)> {
    let Some(dir) = std::env::var_os("SEQTHINK_DEMO_DIR") else {
        return Vec::new();
    };
    let Ok(entries) = fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut out: Vec<(String, PathBuf)> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p.clone())))
        .collect();
    out.sort();
    out
}

fn cmd_demo(name: Option<&str>) -> Result<Outcome, Usage> {
    let canned = demo_dir_scenarios();
    let Some(name) = name else {
        println!("demos:");
        for n in demos::NAMES {
            println!("  {n}");
        }
        for (n, path) in &canned {
            println!("  {n} ({})", path.display());
        }
        return Ok(Outcome::Pass);
    };
    match demos::run(name) {
        Ok(d) => {
            print!("{}", d.text);
            Ok(if d.ok {
                Outcome::Pass
            } else {
                Outcome::Violation
            })
        }
        Err(unknown) => match canned.iter().find(|(n, _)| n == name) {
            Some((_, path)) => {
                let report = harness::run_scenario(&load_scenario(path)?)?;
                print!("{}", report.log.to_text());
                print!("{}", report.summary());
                Ok(report.outcome())
            }
            None => {
                let extra: Vec<&str> = canned.iter().map(|(n, _)| n.as_str()).collect();
                if extra.is_empty() {
                    Err(Usage(unknown.to_string()))
                } else {
                    Err(Usage(format!("{unknown}, {}", extra.join(", "))))
                }
            }
        },
    }
}

fn cmd_check(
    path: &Path,
    spec: SpecArg,
    object: Option<&str>,
    bound: usize,
) -> Result<Outcome, Usage> {
    let text = fs::read_to_string(path).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    let log =
        EventLog::from_records(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    let object = match object {
        Some(o) => o.to_string(),
        None => log
            .iter()
            .find(|e| e.kind == EventKind::Invoke)
            .and_then(|e| e.obj.clone())
            .ok_or_else(|| Usage(format!("{}: no invocations", path.display())))?,
    };
    match spec {
        SpecArg::Stack => check_with(&StackSpec::default(), &log, &object, bound),
        SpecArg::Counter => check_with(&CounterSpec, &log, &object, bound),
        SpecArg::Register => check_with(&RegisterSpec::default(), &log, &object, bound),
        SpecArg::Ledger => check_with(&LedgerSpec, &log, &object, bound),
        SpecArg::Consensus => check_with(&ConsensusSpec, &log, &object, bound),
    }
}

fn check_with<S: SeqSpec>(
    spec: &S,
    log: &EventLog,
    object: &str,
    bound: usize,
) -> Result<Outcome, Usage> {
    let history = lincheck::extract_history::<S>(log, object)
        .map_err(|e| Usage(format!("object {object:?}: {e}")))?;
    println!(
        "object {object}: {} operations ({} completed)",
        history.len(),
        history.completed()
    );
    for (i, op) in history.ops.iter().enumerate() {
        println!("  #{i:<3} {op}");
    }
    let verdict = lincheck::check_bounded(spec, &history, bound);
    Ok(match verdict {
        Verdict::Linearizable { witness } => {
            println!("linearizable: yes");
            println!("witness order: {witness:?}");
            Outcome::Pass
        }
        Verdict::NotLinearizable { core } => {
            println!("linearizable: NO");
            println!("violation core: {core:?}");
            for i in core {
                println!("  #{i:<3} {}", history.ops[i]);
            }
            Outcome::Violation
        }
        Verdict::Undecided { completed, bound } => {
            println!("linearizable: undecided ({completed} completed operations exceed the bound of {bound})");
            Outcome::Undecided
        }
    })
}
