//! Charge replay for the 1-lookahead policy on 2-bounded inputs, bound R.
//!
//! Classification is first-match over five rules. A packet the policy
//! transmitted one step before its optimal slot charges back in full (1);
//! a packet no heavier than the policy's own pick charges up in full (2);
//! a lighter-than-pick packet splits onto the pair (t, t+1) when a
//! closeness guard holds (3) and onto (t, t+2) otherwise (4). What remains
//! are chaining steps, where the policy's pick is lighter than the optimal
//! packet and that packet is still pending: maximal runs of such steps form
//! chains, charged by position within the run (5).
//!
//! Rule 3's second guard asks whether step t+1 receives a full back charge,
//! which depends on classifications not made yet; full back charges are
//! fully determined by the two schedules alone, so they are precomputed.
//! Chain membership is likewise a pure function of the schedules and is
//! precomputed before any rule runs.

use std::collections::BTreeSet;

use crate::constants::lc_constants;
use crate::domain::Packet;
use crate::engine::{StepInfo, Trace, TraceStep};
use crate::offline::OptResult;

use super::{
    alg_packets, check, conservation_checks, opt_packets, within, AuditError, AuditReport,
    ChargeEntry, ChargeLedger, ChargeRule, PairCharge, PairTotal, SourceRecord, Verdict,
};

const ALGORITHM: &str = "lcalpha";

fn plan_head_weight(step: &TraceStep) -> Result<f64, AuditError> {
    match &step.info {
        StepInfo::Plan { p1, .. } => Ok(p1.as_ref().map_or(0.0, |p| p.weight)),
        _ => Err(AuditError::MissingInfo(step.slot)),
    }
}

pub fn lcalpha_charges(trace: &Trace, opt: &OptResult) -> Result<ChargeLedger, AuditError> {
    if trace.algorithm != ALGORITHM {
        return Err(AuditError::WrongAlgorithm {
            expected: ALGORITHM.to_string(),
            actual: trace.algorithm.clone(),
        });
    }
    let opt_by_slot = opt_packets(trace, opt)?;
    let alg = alg_packets(trace);
    let consts = lc_constants();
    let (two_alpha, delta, ratio) = (2.0 * consts.alpha, consts.delta, consts.ratio);

    let scheduled_previous_step =
        |t: i64, j: &Packet| alg.get(&(t - 1)).is_some_and(|e| e.id == j.id);

    // Step u collects a full back charge exactly when it transmitted the
    // packet the optimum plays next; rule 1 always claims such a packet.
    let full_back_received: BTreeSet<i64> = opt_by_slot
        .iter()
        .filter(|&(&t, j)| scheduled_previous_step(t, j))
        .map(|(&t, _)| t - 1)
        .collect();

    let mut chaining: BTreeSet<i64> = BTreeSet::new();
    for (&t, j) in &opt_by_slot {
        let step = trace.step_at(t).ok_or(AuditError::MissingStep(t))?;
        if step.weight() < j.weight && step.pending.contains(&j.id) {
            chaining.insert(t);
        }
    }

    let mut ledger = ChargeLedger {
        algorithm: trace.algorithm.clone(),
        bound: ratio,
        entries: Vec::new(),
        pairs: Vec::new(),
        chaining_steps: chaining.iter().copied().collect(),
        sources: Default::default(),
        notes: Vec::new(),
    };

    for (&t, j) in &opt_by_slot {
        let step = trace.step_at(t).expect("checked in the chain pass");
        let f = step.real_packet();
        let w_f = step.weight();
        let w_g = trace.step_at(t + 1).map_or(0.0, |s| s.weight());
        let w_j = j.weight;

        let mut entries = Vec::new();
        let mut pair = None;

        let rule = if scheduled_previous_step(t, j) {
            entries.push((t - 1, w_j, ChargeRule::FullBack));
            ChargeRule::FullBack
        } else if w_f >= w_j && !f.is_some_and(|f| opt_by_slot.get(&(t + 1)).map(|k| k.id) == Some(f.id)) {
            entries.push((t, w_j, ChargeRule::FullUp));
            ChargeRule::FullUp
        } else if w_f > w_j
            && (two_alpha * w_j < w_f + w_g
                || (!full_back_received.contains(&(t + 1))
                    && two_alpha * (plan_head_weight(step)? - w_g) < w_f + w_g))
        {
            pair = Some((t + 1, ChargeRule::CloseSplit));
            ChargeRule::CloseSplit
        } else if w_f > w_j {
            pair = Some((t + 2, ChargeRule::DistantSplit));
            ChargeRule::DistantSplit
        } else if chaining.contains(&t) {
            let prev = chaining.contains(&(t - 1));
            let next = chaining.contains(&(t + 1));
            match (prev, next) {
                (false, false) => {
                    entries.push((t, w_j.min(ratio * w_f), ChargeRule::ChainSingleUp));
                    if w_j > ratio * w_f {
                        entries.push((t + 1, w_j - ratio * w_f, ChargeRule::ChainSingleFwd));
                    }
                    ChargeRule::ChainSingleUp
                }
                (false, true) => {
                    entries.push((t, 2.0 * delta * w_j, ChargeRule::ChainBegin));
                    entries.push((t + 1, (1.0 - 2.0 * delta) * w_j, ChargeRule::ChainBegin));
                    ChargeRule::ChainBegin
                }
                (true, false) => {
                    let held = (ratio - 1.0 + 2.0 * delta) * w_f;
                    entries.push((t - 1, delta * w_j, ChargeRule::ChainEnd));
                    entries.push((t, held, ChargeRule::ChainEnd));
                    entries.push((t + 1, (1.0 - delta) * w_j - held, ChargeRule::ChainFwd));
                    ChargeRule::ChainEnd
                }
                (true, true) => {
                    entries.push((t - 1, delta * w_j, ChargeRule::ChainLink));
                    entries.push((t, delta * w_j, ChargeRule::ChainLink));
                    entries.push((t + 1, (1.0 - 2.0 * delta) * w_j, ChargeRule::ChainLink));
                    ChargeRule::ChainLink
                }
            }
        } else {
            return Err(AuditError::Unclassifiable { slot: t, packet: j.id });
        };

        let mut charged = 0.0;
        for (to, amount, rule) in entries {
            if trace.step_at(to).is_none() {
                return Err(AuditError::MissingStep(to));
            }
            charged += amount;
            ledger.entries.push(ChargeEntry { from_opt_slot: t, to_alg_slot: to, amount, rule });
        }
        if let Some((second, rule)) = pair {
            if trace.step_at(second).is_none() {
                return Err(AuditError::MissingStep(second));
            }
            charged += w_j;
            ledger.pairs.push(PairCharge {
                from_opt_slot: t,
                first: t,
                second,
                amount: w_j,
                rule,
            });
        }
        ledger.sources.insert(t, SourceRecord { packet: j.id, weight: w_j, charged, rule });
    }
    Ok(ledger)
}

pub fn verify_lcalpha(ledger: &ChargeLedger, trace: &Trace) -> AuditReport {
    let mut checks = Vec::new();
    let mut first_bad = conservation_checks(ledger, &mut checks);
    let note = |bad: &Option<(i64, String)>, first_bad: &mut Option<(i64, String)>| {
        if first_bad.is_none() {
            first_bad.clone_from(bad);
        }
    };

    let stray = ledger
        .entries
        .iter()
        .map(|e| e.to_alg_slot)
        .chain(ledger.pairs.iter().flat_map(|p| [p.first, p.second]))
        .find(|&slot| trace.step_at(slot).is_none());
    let stray_bad =
        stray.map(|slot| (slot, "charge to a slot outside the run".to_string()));
    check(&mut checks, "targets", stray.is_none(), stray_bad.clone().map(|(_, r)| r));
    note(&stray_bad, &mut first_bad);

    // Pairwise disjointness: a slot bounded jointly in one pair must not be
    // shared with any other pair, or the joint capacities would double-count.
    let mut seen = BTreeSet::new();
    let mut overlap_bad = None;
    for p in &ledger.pairs {
        for slot in [p.first, p.second] {
            if !seen.insert(slot) && overlap_bad.is_none() {
                overlap_bad = Some((slot, format!("slot {slot} belongs to two split pairs")));
            }
        }
    }
    check(&mut checks, "pairs-disjoint", overlap_bad.is_none(), overlap_bad.clone().map(|(_, r)| r));
    note(&overlap_bad, &mut first_bad);

    // A chaining step is charged only through its chain: no full charge, no
    // split pair membership.
    let mut chain_bad = None;
    for &c in &ledger.chaining_steps {
        let full = ledger.entries.iter().any(|e| {
            e.to_alg_slot == c && matches!(e.rule, ChargeRule::FullUp | ChargeRule::FullBack)
        });
        let in_pair = ledger.pairs.iter().any(|p| p.first == c || p.second == c);
        if (full || in_pair) && chain_bad.is_none() {
            let kind = if full { "a full charge" } else { "a split pair" };
            chain_bad = Some((c, format!("chaining step {c} received {kind}")));
        }
    }
    check(&mut checks, "chain-isolation", chain_bad.is_none(), chain_bad.clone().map(|(_, r)| r));
    note(&chain_bad, &mut first_bad);

    let mut full_bad = None;
    let mut fulls: BTreeSet<i64> = BTreeSet::new();
    for e in &ledger.entries {
        if matches!(e.rule, ChargeRule::FullUp | ChargeRule::FullBack)
            && !fulls.insert(e.to_alg_slot)
            && full_bad.is_none()
        {
            full_bad = Some((e.to_alg_slot, format!("slot {} received two full charges", e.to_alg_slot)));
        }
    }
    check(&mut checks, "one-full-charge", full_bad.is_none(), full_bad.clone().map(|(_, r)| r));
    note(&full_bad, &mut first_bad);

    // Split-charged packets must be followed by the policy's own pick in the
    // optimum (k = f); chains must hand the optimal packet to the policy's
    // next step (g = j). Both are structural facts the rules rely on.
    let alg = alg_packets(trace);
    let mut shape_bad = None;
    for p in &ledger.pairs {
        let k = ledger.sources.get(&(p.first + 1)).map(|s| s.packet);
        if alg.get(&p.first).map(|f| f.id) != k && shape_bad.is_none() {
            shape_bad = Some((
                p.first,
                format!("split at {} but the pick there is not the next optimal packet", p.first),
            ));
        }
    }
    for &c in &ledger.chaining_steps {
        if !ledger.chaining_steps.contains(&(c + 1)) {
            continue;
        }
        if alg.get(&(c + 1)).map(|g| g.id) != ledger.sources.get(&c).map(|s| s.packet)
            && shape_bad.is_none()
        {
            shape_bad = Some((
                c,
                format!("consecutive chaining steps {c},{} without the handover", c + 1),
            ));
        }
    }
    check(&mut checks, "structure", shape_bad.is_none(), shape_bad.clone().map(|(_, r)| r));
    note(&shape_bad, &mut first_bad);

    // Bound scan: paired steps are checked jointly (their own totals plus
    // the undistributed pair amount), everything else individually.
    let slot_totals = ledger.slot_totals();
    let total_at = |slot: i64| slot_totals.get(&slot).copied().unwrap_or(0.0);
    let paired: BTreeSet<i64> = ledger.pairs.iter().flat_map(|p| [p.first, p.second]).collect();

    let mut pair_totals = Vec::new();
    let mut bound_bad: Option<(i64, String)> = None;
    for p in &ledger.pairs {
        let charge = p.amount + total_at(p.first) + total_at(p.second);
        let capacity = ledger.bound
            * (trace.step_at(p.first).map_or(0.0, |s| s.weight())
                + trace.step_at(p.second).map_or(0.0, |s| s.weight()));
        pair_totals.push(PairTotal { first: p.first, second: p.second, charge, capacity });
        if !within(charge, capacity) && bound_bad.is_none() {
            bound_bad = Some((
                p.first,
                format!("pair ({}, {}) collects {charge} against capacity {capacity}", p.first, p.second),
            ));
        }
    }
    for step in &trace.steps {
        if paired.contains(&step.slot) {
            continue;
        }
        let total = total_at(step.slot);
        let capacity = ledger.bound * step.weight();
        if !within(total, capacity) && bound_bad.is_none() {
            bound_bad = Some((
                step.slot,
                format!("slot collects {total} against capacity {capacity}"),
            ));
        }
    }
    check(&mut checks, "bounds", bound_bad.is_none(), bound_bad.clone().map(|(_, r)| r));

    let verdict = match bound_bad.or(first_bad) {
        Some((slot, reason)) => Verdict::Fail { slot, reason },
        None => Verdict::Pass,
    };
    AuditReport {
        algorithm: ledger.algorithm.clone(),
        bound: ledger.bound,
        slot_totals,
        pair_totals,
        checks,
        verdict,
    }
}
