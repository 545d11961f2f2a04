//! Exact offline optimum.
//!
//! The feasible packet sets of an instance (those admitting an injective
//! assignment to slots inside their windows) form a transversal matroid, so a
//! maximum-weight schedule can be found greedily: consider packets by
//! descending weight and keep each one iff the kept set stays matchable,
//! checked with an augmenting path. Both the matching path and the
//! independent brute-force oracle emit the same deterministic normal form: the
//! chosen set placed earliest-deadline-first, which already satisfies the
//! earliest-deadline property that [`canonicalize`] enforces and the audits
//! assume. Equal optima therefore compare equal as whole schedules.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    canonical_cmp, canonical_less, heavier_cmp, schedule_weight, DomainError, Instance, Packet,
    PacketId, Schedule,
};

/// An optimum schedule plus its weight. `canonical` records that the schedule
/// is in the earliest-deadline normal form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub schedule: Schedule,
    pub weight: f64,
    pub canonical: bool,
}

#[derive(Debug, Error)]
pub enum OfflineError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("oracle guard: {packets} packets over {span} slots exceeds the 16/16 limit")]
    OracleTooLarge { packets: usize, span: i64 },
}

/// Slots that can matter for any schedule: each packet only ever needs the
/// first `n` slots of its window (any optimum using a later slot can be
/// shifted down), which keeps the universe small even for huge windows.
fn slot_universe(inst: &Instance) -> Vec<i64> {
    let n = inst.packets.len() as i64;
    let mut slots = BTreeSet::new();
    for p in &inst.packets {
        let hi = p.deadline.min(p.release + n - 1);
        for t in p.release..=hi {
            slots.insert(t);
        }
    }
    slots.into_iter().collect()
}

fn augment(
    p: usize,
    cand: &[Vec<usize>],
    owner: &mut [Option<usize>],
    visited: &mut [bool],
) -> bool {
    for &s in &cand[p] {
        if visited[s] {
            continue;
        }
        visited[s] = true;
        if owner[s].is_none() || augment(owner[s].unwrap(), cand, owner, visited) {
            owner[s] = Some(p);
            return true;
        }
    }
    false
}

/// Places a matchable packet set slot by slot, always picking the canonically
/// minimal packet feasible at the slot. The result is a deterministic
/// function of the set alone and satisfies the earliest-deadline property.
fn place_earliest_deadline(inst: &Instance, chosen: &BTreeSet<PacketId>, slots: &[i64]) -> Schedule {
    let mut remaining: Vec<&Packet> =
        inst.packets.iter().filter(|p| chosen.contains(&p.id)).collect();
    let mut out = BTreeMap::new();
    for &t in slots {
        if remaining.is_empty() {
            break;
        }
        let pick = remaining
            .iter()
            .enumerate()
            .filter(|(_, p)| p.feasible_at(t))
            .min_by(|(_, a), (_, b)| canonical_cmp(a, b))
            .map(|(i, _)| i);
        if let Some(i) = pick {
            let p = remaining.swap_remove(i);
            out.insert(t, p.id);
        }
    }
    assert!(remaining.is_empty(), "earliest-deadline placement failed on a matchable set");
    Schedule { slots: out }
}

/// Maximum-weight offline schedule, in canonical form.
pub fn optimal_schedule(inst: &Instance) -> Result<OptResult, OfflineError> {
    inst.validate()?;
    if inst.is_empty() {
        return Ok(OptResult { schedule: Schedule::new(), weight: 0.0, canonical: true });
    }
    let slots = slot_universe(inst);
    let slot_idx: BTreeMap<i64, usize> = slots.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let n = inst.packets.len();
    let cand: Vec<Vec<usize>> = inst
        .packets
        .iter()
        .map(|p| {
            let hi = p.deadline.min(p.release + n as i64 - 1);
            (p.release..=hi).map(|t| slot_idx[&t]).collect()
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| heavier_cmp(&inst.packets[b], &inst.packets[a]));

    let mut owner: Vec<Option<usize>> = vec![None; slots.len()];
    for &p in &order {
        let mut visited = vec![false; slots.len()];
        augment(p, &cand, &mut owner, &mut visited);
    }

    let chosen: BTreeSet<PacketId> =
        owner.iter().flatten().map(|&p| inst.packets[p].id).collect();
    let schedule = place_earliest_deadline(inst, &chosen, &slots);
    let weight = schedule_weight(inst, &schedule)?;
    Ok(OptResult { schedule, weight, canonical: true })
}

/// Exact optimum by dynamic programming over packet subsets, slot by slot.
/// Deliberately separate from the matching path so the two can check each
/// other; guarded to at most 16 packets over a span of at most 16 slots.
pub fn brute_force_optimal(inst: &Instance) -> Result<OptResult, OfflineError> {
    inst.validate()?;
    let Some((lo, hi)) = inst.horizon() else {
        return Ok(OptResult { schedule: Schedule::new(), weight: 0.0, canonical: true });
    };
    let n = inst.packets.len();
    let span = hi - lo + 1;
    if n > 16 || span > 16 {
        return Err(OfflineError::OracleTooLarge { packets: n, span });
    }

    let full = 1usize << n;
    let mut dp = vec![f64::NEG_INFINITY; full];
    dp[0] = 0.0;
    // choice[si][mask]: 0 = idle at this slot, k + 1 = packet index k scheduled
    let mut choice: Vec<Vec<u8>> = Vec::with_capacity(span as usize);
    for t in lo..=hi {
        let mut next = dp.clone();
        let mut next_choice = vec![0u8; full];
        for mask in 0..full {
            if dp[mask] == f64::NEG_INFINITY {
                continue;
            }
            for (k, p) in inst.packets.iter().enumerate() {
                if mask & (1 << k) != 0 || !p.feasible_at(t) {
                    continue;
                }
                let nm = mask | (1 << k);
                let v = dp[mask] + p.weight;
                if v > next[nm] {
                    next[nm] = v;
                    next_choice[nm] = k as u8 + 1;
                }
            }
        }
        dp = next;
        choice.push(next_choice);
    }

    let mut best_mask = 0usize;
    for mask in 0..full {
        if dp[mask] > dp[best_mask] {
            best_mask = mask;
        }
    }

    let mut mask = best_mask;
    let mut chosen = BTreeSet::new();
    for si in (0..choice.len()).rev() {
        let c = choice[si][mask];
        if c > 0 {
            let k = (c - 1) as usize;
            chosen.insert(inst.packets[k].id);
            mask ^= 1 << k;
        }
    }
    debug_assert_eq!(mask, 0);

    let slots: Vec<i64> = (lo..=hi).collect();
    let schedule = place_earliest_deadline(inst, &chosen, &slots);
    let weight = schedule_weight(inst, &schedule)?;
    Ok(OptResult { schedule, weight, canonical: true })
}

/// Rewrites a valid schedule into the earliest-deadline normal form by
/// swapping violating pairs until a fixpoint: whenever `p` at `t` and `p'` at
/// `t' > t` could exchange places (`p'` already released at `t`, `t'` still
/// within `p`'s deadline) the canonically smaller packet must sit first. The
/// scheduled packet set, and hence the weight, is unchanged.
pub fn canonicalize(inst: &Instance, sch: &Schedule) -> Result<Schedule, OfflineError> {
    let violations = crate::domain::validate_schedule(inst, sch);
    if !violations.is_empty() {
        return Err(DomainError::InvalidSchedule(crate::domain::ViolationList(violations)).into());
    }
    let by_id: BTreeMap<PacketId, &Packet> = inst.packets.iter().map(|p| (p.id, p)).collect();
    let mut placed: Vec<(i64, &Packet)> =
        sch.slots.iter().map(|(&t, id)| (t, by_id[id])).collect();

    let max_passes = placed.len() * placed.len() + 1;
    for _ in 0..max_passes {
        let mut changed = false;
        for i in 0..placed.len() {
            for j in (i + 1)..placed.len() {
                let (ti, pi) = placed[i];
                let (tj, pj) = placed[j];
                let swappable = pj.release <= ti && tj <= pi.deadline;
                if swappable && !canonical_less(pi, pj) {
                    placed[i] = (ti, pj);
                    placed[j] = (tj, pi);
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(Schedule { slots: placed.into_iter().map(|(t, p)| (t, p.id)).collect() });
        }
    }
    unreachable!("canonicalize failed to reach a fixpoint");
}
