//! Charge replay for the marking policy, bound phi.
//!
//! Each optimal packet j at slot t is distributed by the first matching
//! rule: (1) at an e-step with j the heaviest pending, w_h/phi goes up to t
//! and w_h/phi^2 back to t-1; (2) a still-pending j goes up to t in full;
//! (3) a j the policy already transmitted sends w_h/phi^2 up to t and the
//! remainder (possibly negative) back to the step that transmitted it.
//! Verification then confirms that every step, alone or paired with its
//! successor, collects at most phi times the transmitted weight.

use std::collections::BTreeSet;

use crate::constants::phi;
use crate::domain::{heaviest, Packet};
use crate::engine::{StepInfo, ToggleKind, Trace, TraceStep};
use crate::offline::OptResult;

use super::{
    alg_slot_of, check, conservation_checks, opt_packets, within, AuditError,
    AuditReport, ChargeEntry, ChargeLedger, ChargeRule, PairTotal, SourceRecord, Verdict,
};

const ALGORITHM: &str = "toggleh";

fn pending_packets<'a>(trace: &'a Trace, step: &TraceStep) -> Vec<&'a Packet> {
    step.pending.iter().filter_map(|&id| trace.instance.packet(id)).collect()
}

fn is_e_step(step: &TraceStep) -> Option<bool> {
    match step.info {
        StepInfo::Toggle { kind, .. } => Some(kind == ToggleKind::E),
        _ => None,
    }
}

pub fn toggleh_charges(trace: &Trace, opt: &OptResult) -> Result<ChargeLedger, AuditError> {
    if trace.algorithm != ALGORITHM {
        return Err(AuditError::WrongAlgorithm {
            expected: ALGORITHM.to_string(),
            actual: trace.algorithm.clone(),
        });
    }
    let opt_by_slot = opt_packets(trace, opt)?;
    let alg_slot = alg_slot_of(trace);
    let phi = phi();

    let mut ledger = ChargeLedger {
        algorithm: trace.algorithm.clone(),
        bound: phi,
        entries: Vec::new(),
        pairs: Vec::new(),
        chaining_steps: Vec::new(),
        sources: Default::default(),
        notes: Vec::new(),
    };

    for (&t, j) in &opt_by_slot {
        let step = trace.step_at(t).ok_or(AuditError::MissingStep(t))?;
        let e_step = is_e_step(step).ok_or(AuditError::MissingInfo(t))?;
        let pending = pending_packets(trace, step);
        let h = heaviest(pending.iter().copied());
        let w_h = h.map_or(0.0, |p| p.weight);

        let mut put = |to: i64, amount: f64, rule: ChargeRule| {
            ledger.entries.push(ChargeEntry { from_opt_slot: t, to_alg_slot: to, amount, rule });
        };

        let rule = if e_step && h.is_some_and(|h| h.id == j.id) {
            if trace.step_at(t - 1).is_none() {
                return Err(AuditError::MissingStep(t - 1));
            }
            put(t, w_h / phi, ChargeRule::SpecialUp);
            put(t - 1, w_h / (phi * phi), ChargeRule::SpecialBack);
            ChargeRule::SpecialUp
        } else if step.pending.contains(&j.id) {
            put(t, j.weight, ChargeRule::FullUp);
            ChargeRule::FullUp
        } else {
            let Some(&src) = alg_slot.get(&j.id) else {
                return Err(AuditError::Unclassifiable { slot: t, packet: j.id });
            };
            put(t, w_h / (phi * phi), ChargeRule::RegularUp);
            put(src, j.weight - w_h / (phi * phi), ChargeRule::RegularBack);
            ChargeRule::RegularUp
        };
        let charged: f64 = ledger
            .entries
            .iter()
            .filter(|e| e.from_opt_slot == t)
            .map(|e| e.amount)
            .sum();
        ledger.sources.insert(t, SourceRecord { packet: j.id, weight: j.weight, charged, rule });
    }
    Ok(ledger)
}

pub fn verify_toggleh(ledger: &ChargeLedger, trace: &Trace) -> AuditReport {
    let mut checks = Vec::new();
    let mut first_bad = conservation_checks(ledger, &mut checks);

    let stray = ledger.entries.iter().find(|e| trace.step_at(e.to_alg_slot).is_none());
    check(
        &mut checks,
        "targets",
        stray.is_none(),
        stray.map(|e| format!("charge to slot {} which the run never reached", e.to_alg_slot)),
    );
    if let Some(e) = stray {
        if first_bad.is_none() {
            first_bad = Some((e.to_alg_slot, "charge to a slot outside the run".to_string()));
        }
    }

    let slot_totals = ledger.slot_totals();
    let phi = phi();

    // The up-charge cap: an f-step that receives a regular back charge must
    // receive an up charge below w_h/phi, else the paired-step argument
    // breaks down before the scan can notice.
    let mut cap_bad: Option<(i64, String)> = None;
    for step in &trace.steps {
        if is_e_step(step) != Some(false) {
            continue;
        }
        let got_back = ledger
            .entries
            .iter()
            .any(|e| e.to_alg_slot == step.slot && e.rule == ChargeRule::RegularBack);
        if !got_back {
            continue;
        }
        let up: f64 = ledger
            .entries
            .iter()
            .filter(|e| {
                e.to_alg_slot == step.slot
                    && matches!(
                        e.rule,
                        ChargeRule::SpecialUp | ChargeRule::FullUp | ChargeRule::RegularUp
                    )
            })
            .map(|e| e.amount)
            .sum();
        let w_h = heaviest(pending_packets(trace, step).iter().copied()).map_or(0.0, |p| p.weight);
        if !within(up, w_h / phi) && cap_bad.is_none() {
            cap_bad = Some((
                step.slot,
                format!("up charge {up} reaches w_h/phi = {} at a back-charged f-step", w_h / phi),
            ));
        }
    }
    check(&mut checks, "up-charge-cap", cap_bad.is_none(), cap_bad.clone().map(|(_, r)| r));
    if first_bad.is_none() {
        first_bad = cap_bad;
    }

    // Left-to-right repair scan: a step over its own budget must borrow from
    // its immediate successor, and the pair must fit the combined budget.
    let mut pair_totals = Vec::new();
    let mut consumed: BTreeSet<i64> = BTreeSet::new();
    let mut scan_bad: Option<(i64, String)> = None;
    for step in &trace.steps {
        let t = step.slot;
        if consumed.contains(&t) {
            continue;
        }
        let total = slot_totals.get(&t).copied().unwrap_or(0.0);
        if within(total, ledger.bound * step.weight()) {
            continue;
        }
        let next = trace.step_at(t + 1).filter(|n| !consumed.contains(&n.slot));
        let paired = next.map(|n| {
            let combined = total + slot_totals.get(&n.slot).copied().unwrap_or(0.0);
            (combined, ledger.bound * (step.weight() + n.weight()))
        });
        match paired {
            Some((combined, capacity)) if within(combined, capacity) => {
                pair_totals.push(PairTotal { first: t, second: t + 1, charge: combined, capacity });
                consumed.insert(t + 1);
            }
            _ => {
                scan_bad = Some((
                    t,
                    format!(
                        "slot collects {total} against capacity {}, and pairing with slot {} does not absorb it",
                        ledger.bound * step.weight(),
                        t + 1
                    ),
                ));
                break;
            }
        }
    }
    check(&mut checks, "scan", scan_bad.is_none(), scan_bad.clone().map(|(_, r)| r));

    let verdict = match scan_bad.or(first_bad) {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Instance;
    use crate::engine::{run, Lookahead};
    use crate::offline::optimal_schedule;
    use crate::policies::ToggleH;

    fn audited_run(inst: &Instance) -> (Trace, ChargeLedger) {
        let trace = run(&mut ToggleH::default(), inst, Lookahead::Zero).unwrap();
        let opt = optimal_schedule(inst).unwrap();
        let ledger = toggleh_charges(&trace, &opt).unwrap();
        (trace, ledger)
    }

    fn staircase() -> Instance {
        let phi = phi();
        Instance::new(
            vec![
                Packet::new(0, 1, 1, 0.9),
                Packet::new(1, 1, 2, 0.9),
                Packet::new(2, 1, 3, 1.0),
                Packet::new(3, 1, 4, phi),
            ],
            Some(4),
        )
        .unwrap()
    }

    #[test]
    fn staircase_ledger_matches_hand_applied_rules() {
        let phi = phi();
        let (trace, ledger) = audited_run(&staircase());

        let expect = [
            (1, 1, 0.9, ChargeRule::FullUp),
            (2, 2, 0.9, ChargeRule::FullUp),
            (3, 3, phi / (phi * phi), ChargeRule::RegularUp),
            (3, 1, 1.0 - phi / (phi * phi), ChargeRule::RegularBack),
            (4, 4, 0.0, ChargeRule::RegularUp),
            (4, 3, phi, ChargeRule::RegularBack),
        ];
        assert_eq!(ledger.entries.len(), expect.len());
        for (from, to, amount, rule) in expect {
            let e = ledger
                .entries
                .iter()
                .find(|e| e.from_opt_slot == from && e.to_alg_slot == to)
                .unwrap_or_else(|| panic!("no entry {from} -> {to}"));
            assert!((e.amount - amount).abs() < 1e-12, "{from} -> {to}: {}", e.amount);
            assert_eq!(e.rule, rule, "{from} -> {to}");
        }
        assert!(ledger.pairs.is_empty());

        let report = verify_toggleh(&ledger, &trace);
        assert!(report.passed(), "{:?}", report);
        assert!(report.pair_totals.is_empty());
        assert!((report.slot_totals[&3] - (phi + 1.0 / phi)).abs() < 1e-12);
    }

    #[test]
    fn identical_schedules_charge_every_packet_to_its_own_slot() {
        let inst = Instance::new(
            vec![Packet::new(0, 0, 0, 1.0), Packet::new(1, 1, 1, 2.0), Packet::new(2, 2, 2, 0.5)],
            Some(4),
        )
        .unwrap();
        let (trace, ledger) = audited_run(&inst);
        assert_eq!(ledger.entries.len(), 3);
        for e in &ledger.entries {
            assert_eq!(e.rule, ChargeRule::FullUp);
            assert_eq!(e.from_opt_slot, e.to_alg_slot);
        }
        assert!(verify_toggleh(&ledger, &trace).passed());
    }

    #[test]
    fn inflated_amount_fails_with_the_corrupted_slot() {
        let (trace, mut ledger) = audited_run(&staircase());
        let e = ledger.entries.iter_mut().find(|e| e.rule == ChargeRule::RegularBack).unwrap();
        e.amount += 10.0;
        let slot = e.to_alg_slot;
        let report = verify_toggleh(&ledger, &trace);
        assert!(!report.passed());
        match report.verdict {
            Verdict::Fail { slot: witness, .. } => assert_eq!(witness, slot),
            Verdict::Pass => panic!("corruption went unnoticed"),
        }
    }

    #[test]
    fn foreign_trace_is_rejected() {
        let inst = staircase();
        let trace = run(&mut crate::policies::Greedy, &inst, Lookahead::Zero).unwrap();
        let opt = optimal_schedule(&inst).unwrap();
        assert!(matches!(
            toggleh_charges(&trace, &opt),
            Err(AuditError::WrongAlgorithm { .. })
        ));
    }

    #[test]
    fn non_canonical_optimum_is_rejected() {
        let inst = staircase();
        let trace = run(&mut ToggleH::default(), &inst, Lookahead::Zero).unwrap();
        let mut opt = optimal_schedule(&inst).unwrap();
        opt.canonical = false;
        assert!(matches!(toggleh_charges(&trace, &opt), Err(AuditError::NotCanonical)));
    }
}
