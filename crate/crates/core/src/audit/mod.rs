//! Charge-based audits of recorded runs.
//!
//! An audit replays a competitive-analysis argument on one concrete run. The
//! weight of every packet in a canonical optimal schedule is distributed onto
//! slots of the algorithm's schedule by a fixed first-match rule set,
//! yielding a [`ChargeLedger`]; a verifier then checks that the ledger
//! conserves weight and that no slot (or designated pair of slots) collects
//! more than `bound` times the weight the algorithm transmitted there. A
//! failing audit names the first offending slot, which is exactly a
//! counterexample to the bound being replayed.
//!
//! Two rule sets are provided: [`toggleh_charges`] with bound phi for the
//! marking policy, and [`lcalpha_charges`] with the lookahead policy's ratio
//! bound. Both consume the trace's per-step snapshots (pending ids, step
//! kind, plan), so traces from other policies are rejected.

pub mod lcalpha;
pub mod toggleh;

pub use lcalpha::{lcalpha_charges, verify_lcalpha};
pub use toggleh::{toggleh_charges, verify_toggleh};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_schedule, Packet, PacketId, ViolationList};
use crate::engine::Trace;
use crate::offline::OptResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChargeRule {
    SpecialUp,
    SpecialBack,
    FullUp,
    RegularUp,
    RegularBack,
    FullBack,
    CloseSplit,
    DistantSplit,
    ChainSingleUp,
    ChainSingleFwd,
    ChainBegin,
    ChainEnd,
    ChainFwd,
    ChainLink,
}

/// One charge: part of the weight of the optimal packet scheduled at
/// `from_opt_slot`, assigned to the algorithm's step `to_alg_slot`. Regular
/// back charges may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeEntry {
    pub from_opt_slot: i64,
    pub to_alg_slot: i64,
    pub amount: f64,
    pub rule: ChargeRule,
}

/// A split charge assigned jointly to two steps. The rule set deliberately
/// leaves the distribution between `first` and `second` open; verification
/// bounds the pair as a whole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCharge {
    pub from_opt_slot: i64,
    pub first: i64,
    pub second: i64,
    pub amount: f64,
    pub rule: ChargeRule,
}

/// Outgoing side of the ledger: how one optimal packet was distributed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub packet: PacketId,
    pub weight: f64,
    pub charged: f64,
    pub rule: ChargeRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeLedger {
    pub algorithm: String,
    /// Competitive factor the per-slot checks are made against.
    pub bound: f64,
    pub entries: Vec<ChargeEntry>,
    pub pairs: Vec<PairCharge>,
    /// Slots where the algorithm's packet is lighter than the optimum's and
    /// the optimum's packet was still pending (the steps charged via chains).
    pub chaining_steps: Vec<i64>,
    /// Keyed by optimal slot; every scheduled optimal packet appears exactly
    /// once, with the rule that matched it first.
    pub sources: BTreeMap<i64, SourceRecord>,
    pub notes: Vec<String>,
}

impl ChargeLedger {
    /// Per-slot totals of individual entries; pair amounts are not included
    /// because they are bounded jointly.
    pub fn slot_totals(&self) -> BTreeMap<i64, f64> {
        let mut totals = BTreeMap::new();
        for e in &self.entries {
            *totals.entry(e.to_alg_slot).or_insert(0.0) += e.amount;
        }
        totals
    }

    pub fn total_charged(&self) -> f64 {
        self.sources.values().map(|s| s.charged).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail { slot: i64, reason: String },
}

/// Totals for a pair of jointly bounded steps and the capacity they were
/// checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTotal {
    pub first: i64,
    pub second: i64,
    pub charge: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub algorithm: String,
    pub bound: f64,
    pub slot_totals: BTreeMap<i64, f64>,
    pub pair_totals: Vec<PairTotal>,
    pub checks: Vec<CheckResult>,
    pub verdict: Verdict,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        matches!(self.verdict, Verdict::Pass) && self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit requires a canonical optimal schedule")]
    NotCanonical,
    #[error("optimal schedule does not fit the traced instance: {0}")]
    InvalidOpt(ViolationList),
    #[error("trace was produced by '{actual}', this audit replays '{expected}' runs")]
    WrongAlgorithm { expected: String, actual: String },
    #[error("slot {0}: step carries no usable policy details for this audit")]
    MissingInfo(i64),
    #[error("slot {0}: optimal schedule uses a slot the run never reached")]
    MissingStep(i64),
    #[error("slot {slot}: no charging rule applies to packet {packet}; weight ties can cause this, perturb the instance first")]
    Unclassifiable { slot: i64, packet: PacketId },
}

/// Slack for bound checks: the rule amounts are exact in real arithmetic, so
/// anything beyond rounding noise is a genuine violation.
pub(crate) fn within(value: f64, cap: f64) -> bool {
    value <= cap + 1e-9 * cap.abs().max(1.0)
}

pub(crate) fn conserved(charged: f64, weight: f64) -> bool {
    (charged - weight).abs() <= 1e-9 * weight.abs().max(1.0)
}

/// The optimal schedule as slot -> packet, checked against the trace's
/// realized instance and the canonical flag both audits require.
pub(crate) fn opt_packets(
    trace: &Trace,
    opt: &OptResult,
) -> Result<BTreeMap<i64, Packet>, AuditError> {
    if !opt.canonical {
        return Err(AuditError::NotCanonical);
    }
    let violations = validate_schedule(&trace.instance, &opt.schedule);
    if !violations.is_empty() {
        return Err(AuditError::InvalidOpt(ViolationList(violations)));
    }
    Ok(opt
        .schedule
        .slots
        .iter()
        .map(|(&slot, &id)| (slot, *trace.instance.packet(id).expect("validated id")))
        .collect())
}

/// The algorithm's real packet per slot (fillers and idle steps excluded).
pub(crate) fn alg_packets(trace: &Trace) -> BTreeMap<i64, Packet> {
    trace.steps.iter().filter_map(|s| s.real_packet().map(|p| (s.slot, *p))).collect()
}

pub(crate) fn alg_slot_of(trace: &Trace) -> BTreeMap<PacketId, i64> {
    trace.steps.iter().filter_map(|s| s.real_packet().map(|p| (p.id, s.slot))).collect()
}

pub(crate) fn check(checks: &mut Vec<CheckResult>, name: &str, pass: bool, detail: Option<String>) {
    checks.push(CheckResult { name: name.to_string(), pass, detail });
}

/// Conservation and exclusivity checks shared by both verifiers; returns the
/// first failure so the caller can fold it into the verdict.
pub(crate) fn conservation_checks(
    ledger: &ChargeLedger,
    checks: &mut Vec<CheckResult>,
) -> Option<(i64, String)> {
    let mut recharged: BTreeMap<i64, f64> = BTreeMap::new();
    for e in &ledger.entries {
        *recharged.entry(e.from_opt_slot).or_insert(0.0) += e.amount;
    }
    for p in &ledger.pairs {
        *recharged.entry(p.from_opt_slot).or_insert(0.0) += p.amount;
    }

    let mut first: Option<(i64, String)> = None;
    let remember = |slot: i64, reason: String, first: &mut Option<(i64, String)>| {
        if first.as_ref().map_or(true, |(s, _)| slot < *s) {
            *first = Some((slot, reason));
        }
    };

    let mut conservation_bad = None;
    for (&slot, src) in &ledger.sources {
        let total = recharged.remove(&slot).unwrap_or(0.0);
        if !conserved(total, src.weight) || !conserved(src.charged, src.weight) {
            let reason = format!(
                "packet {} weighs {} but its charges sum to {total}",
                src.packet, src.weight
            );
            if conservation_bad.is_none() {
                conservation_bad = Some(reason.clone());
            }
            remember(slot, reason, &mut first);
        }
    }
    check(checks, "conservation", conservation_bad.is_none(), conservation_bad);

    let orphan = recharged.keys().next().copied();
    check(
        checks,
        "exclusivity",
        orphan.is_none(),
        orphan.map(|slot| format!("charges from optimal slot {slot} lack a source record")),
    );
    if let Some(slot) = orphan {
        remember(slot, "charges lack a source record".to_string(), &mut first);
    }
    first
}
