//! A deterministic laboratory for building concurrent objects out of
//! sequential specifications.
//!
//! The crate runs protocol automata over a seeded adversarial scheduler
//! ([`sim`]) and checks every resulting history with a linearizability
//! checker ([`lincheck`]). The protocols:
//!
//! - [`mutex`]: Peterson's two-process lock and a tournament tree of them.
//! - [`abd`]: a quorum-replicated atomic register over crash-prone message
//!   passing.
//! - [`agreement`]: consensus from LL/SC, and total-order broadcast from a
//!   sequence of consensus instances.
//! - [`universal`]: replicated objects on top of total-order broadcast, and a
//!   wait-free construction directly over LL/SC with helping.
//!
//! Shared-memory primitives live in [`registers`], sequential specifications
//! (including a hash-chained ledger) in [`objects`]. [`harness`] wires
//! scenarios, property checks and sweeps together for the CLI.

pub mod abd;
pub mod agreement;
pub mod harness;
pub mod lincheck;
pub mod mutex;
pub mod objects;
pub mod registers;
pub mod scenario;
pub mod sim;
pub mod universal;

pub use sim::ProcessId;

/// Value held by registers and written through the emulated register.
pub type Word = u64;
