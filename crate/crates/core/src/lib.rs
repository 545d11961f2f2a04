//! Online bounded-delay packet scheduling.
//!
//! Packets arrive over integer time slots; each packet has a release slot, a
//! deadline slot, and a nonnegative weight, and at every slot a scheduler may
//! transmit at most one pending packet. An instance is *s-bounded* when every
//! packet's deadline is within `s - 1` slots of its release.
//!
//! The crate bundles everything needed to study this model end to end:
//!
//! * [`domain`]: packets, instances, schedules, the canonical tie-broken
//!   orderings, validation, and the JSON wire formats.
//! * [`offline`]: the exact offline optimum (computed as a maximum-weight
//!   bipartite matching), a small brute-force oracle, and a canonicalization
//!   pass that normalizes optimal schedules to the earliest-deadline form the
//!   audits expect.
//! * [`engine`] and [`policies`]: a replayable simulation engine with 0/1-slot
//!   lookahead and the online policies `Greedy`, `EdfAlpha`, `ToggleH`
//!   (marking-based, for 4-bounded instances), and `LcAlpha` (plan-based with
//!   1-slot lookahead, for 2-bounded instances).
//! * [`adversary`]: the adaptive lower-bound game against 1-lookahead policies
//!   on 2-bounded instances, its closed-form weight sequence and ratio
//!   formulas, plus seeded random instance generators.
//! * [`audit`]: charge-ledger constructions that replay a trace against the
//!   canonical optimum and certify the per-run competitive bound (golden ratio
//!   for `ToggleH`, `(sqrt(13) - 1) / 2` for `LcAlpha`).

pub mod adversary;
pub mod audit;
pub mod constants;
pub mod domain;
pub mod engine;
pub mod offline;
pub mod policies;
