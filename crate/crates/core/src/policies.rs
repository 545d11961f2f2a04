//! Online policies.
//!
//! * [`Greedy`]: heaviest pending packet; 2-competitive on any input.
//! * [`EdfAlpha`]: canonically minimal pending packet whose weight is within a
//!   factor `alpha` of the heaviest; with `alpha = phi` this is the classic
//!   baseline for 3-bounded inputs, with `alpha = sqrt 3` for 4-bounded ones.
//! * [`ToggleH`]: the marking policy for 4-bounded instances. Keeps at most
//!   one marked packet; a set mark both protects the heaviest packet from
//!   being cannibalized twice and licenses one cheaper "e-step".
//! * [`LcAlpha`]: the 1-lookahead policy for 2-bounded instances. Builds the
//!   optimal three-slot plan over pending plus lookahead packets and departs
//!   from it only when the plan's second packet is newly released and clearly
//!   outweighs an expiring first packet.

use serde::{Deserialize, Serialize};

use crate::constants::{lc_constants, phi, sqrt3, LcConstants};
use crate::domain::{canonical_cmp, canonical_min, heavier_cmp, heaviest, Packet, PacketId};
use crate::engine::{Choice, OnlinePolicy, PolicyError, StepContext, StepInfo, ToggleKind};

/// Heaviest pending packet (weight ties to the lower id), `None` when empty.
pub fn greedy_step(pending: &[Packet]) -> Option<PacketId> {
    heaviest(pending).map(|p| p.id)
}

pub struct Greedy;

impl OnlinePolicy for Greedy {
    fn name(&self) -> String {
        "greedy".into()
    }

    fn choose(&mut self, ctx: &StepContext<'_>) -> Result<Choice, PolicyError> {
        Ok(Choice { packet: greedy_step(ctx.pending), info: StepInfo::Pick })
    }
}

/// Canonically minimal pending packet with weight at least `w_h / alpha`,
/// where `h` is the heaviest pending packet. `alpha = 1` degenerates to `h`
/// itself.
pub fn edf_alpha_step(pending: &[Packet], alpha: f64) -> Option<PacketId> {
    let h = heaviest(pending)?;
    let threshold = h.weight / alpha;
    canonical_min(pending.iter().filter(|p| p.weight >= threshold)).map(|p| p.id)
}

pub struct EdfAlpha {
    alpha: f64,
}

impl EdfAlpha {
    pub fn new(alpha: f64) -> Result<Self, PolicyError> {
        if !alpha.is_finite() || alpha < 1.0 {
            return Err(PolicyError::Invalid(format!(
                "edf threshold must be a finite number >= 1, got {alpha}"
            )));
        }
        Ok(EdfAlpha { alpha })
    }

    /// `alpha = phi`, the variant whose ratio stays below phi on 3-bounded
    /// inputs (but not on 4-bounded ones).
    pub fn golden() -> Self {
        EdfAlpha { alpha: phi() }
    }

    /// `alpha = sqrt 3`, the variant with a sqrt-3 bound on 4-bounded inputs.
    pub fn sqrt3() -> Self {
        EdfAlpha { alpha: sqrt3() }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl OnlinePolicy for EdfAlpha {
    fn name(&self) -> String {
        format!("edf:{}", self.alpha)
    }

    fn choose(&mut self, ctx: &StepContext<'_>) -> Result<Choice, PolicyError> {
        Ok(Choice { packet: edf_alpha_step(ctx.pending, self.alpha), info: StepInfo::Pick })
    }
}

/// Memory of the marking policy: at most one marked packet id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ToggleState {
    pub marked: Option<PacketId>,
}

/// Outcome of one marking-policy step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToggleStep {
    pub packet: PacketId,
    pub kind: ToggleKind,
    /// Mark in effect during the step, after dropping a stale mark whose
    /// packet is no longer pending.
    pub mark_before: Option<PacketId>,
    pub state_after: ToggleState,
}

/// One step of the marking policy at slot `t`.
///
/// With `h` the heaviest pending packet, `s` the second-heaviest, `f` the
/// canonically minimal pending packet with weight at least `w_h / phi` and
/// `e` the one with weight at least `w_h / phi^2`:
///
/// * if `h` is unmarked, or `w_s >= w_h / phi`, or `e` is not expiring,
///   schedule `f` (an f-step), clear any mark, and mark `h` iff `h`'s
///   deadline is `t + 3` while `f`'s is `t + 2`;
/// * otherwise schedule `e` (an e-step) and unmark `h`.
pub fn toggleh_step(state: &ToggleState, pending: &[Packet], t: i64) -> Option<ToggleStep> {
    if pending.is_empty() {
        return None;
    }
    let marked = state.marked.filter(|m| pending.iter().any(|p| p.id == *m));
    let gr = phi();
    let h = heaviest(pending)?;
    let second = pending.iter().filter(|p| p.id != h.id).max_by(|a, b| heavier_cmp(a, b));
    let f = canonical_min(pending.iter().filter(|p| p.weight >= h.weight / gr))
        .expect("h always qualifies for f");
    let e = canonical_min(pending.iter().filter(|p| p.weight >= h.weight / (gr * gr)))
        .expect("h always qualifies for e");

    let h_unmarked = marked != Some(h.id);
    let second_heavy = second.map_or(false, |s| s.weight >= h.weight / gr);
    let e_alive = e.deadline > t;

    if h_unmarked || second_heavy || e_alive {
        debug_assert!(f.id == h.id || second_heavy, "f below h implies a heavy second packet");
        let mark = (h.deadline == t + 3 && f.deadline == t + 2).then_some(h.id);
        Some(ToggleStep {
            packet: f.id,
            kind: ToggleKind::F,
            mark_before: marked,
            state_after: ToggleState { marked: mark },
        })
    } else {
        Some(ToggleStep {
            packet: e.id,
            kind: ToggleKind::E,
            mark_before: marked,
            state_after: ToggleState { marked: None },
        })
    }
}

#[derive(Debug, Default)]
pub struct ToggleH {
    state: ToggleState,
}

impl ToggleH {
    pub fn new() -> Self {
        ToggleH::default()
    }
}

impl OnlinePolicy for ToggleH {
    fn name(&self) -> String {
        "toggleh".into()
    }

    fn begin_run(&mut self) {
        self.state = ToggleState::default();
    }

    fn choose(&mut self, ctx: &StepContext<'_>) -> Result<Choice, PolicyError> {
        match toggleh_step(&self.state, ctx.pending, ctx.slot) {
            None => Ok(Choice { packet: None, info: StepInfo::Pick }),
            Some(step) => {
                let info = StepInfo::Toggle {
                    kind: step.kind,
                    mark_before: step.mark_before,
                    mark_after: step.state_after.marked,
                };
                self.state = step.state_after;
                Ok(Choice { packet: Some(step.packet), info })
            }
        }
    }
}

/// The optimal three-slot lookahead plan: the maximum-weight feasible choice
/// of packets for slots `t`, `t + 1`, `t + 2`, placed in earliest-deadline
/// order. `p1` is what runs now if the plan is followed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub p1: Option<Packet>,
    pub p2: Option<Packet>,
    pub p3: Option<Packet>,
}

fn plan_augment(
    p: usize,
    all: &[&Packet],
    t: i64,
    owner: &mut [Option<usize>; 3],
    visited: &mut [bool; 3],
) -> bool {
    for s in 0..3 {
        if visited[s] || !all[p].feasible_at(t + s as i64) {
            continue;
        }
        visited[s] = true;
        if owner[s].is_none() || plan_augment(owner[s].unwrap(), all, t, owner, visited) {
            owner[s] = Some(p);
            return true;
        }
    }
    false
}

/// Builds the plan over `pending` and `lookahead` at slot `t`. Requires
/// 2-bounded packets (anything visible can only occupy slots `t..t+2`), which
/// keeps the plan a three-slot assignment.
pub fn compute_plan(
    pending: &[Packet],
    lookahead: &[Packet],
    t: i64,
) -> Result<Plan, PolicyError> {
    for p in pending.iter().chain(lookahead) {
        if p.span() > 2 {
            return Err(PolicyError::NotTwoBounded { id: p.id, span: p.span() });
        }
    }
    debug_assert!(pending.iter().all(|p| p.release <= t && p.deadline >= t));
    debug_assert!(lookahead.iter().all(|p| p.release == t + 1));

    let all: Vec<&Packet> = pending.iter().chain(lookahead).collect();
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&a, &b| heavier_cmp(all[b], all[a]));

    let mut owner: [Option<usize>; 3] = [None; 3];
    for &p in &order {
        let mut visited = [false; 3];
        plan_augment(p, &all, t, &mut owner, &mut visited);
    }

    let mut chosen: Vec<&Packet> = owner.iter().flatten().map(|&i| all[i]).collect();
    let mut placed: [Option<Packet>; 3] = [None; 3];
    for (s, slot_pick) in placed.iter_mut().enumerate() {
        let slot = t + s as i64;
        let pick = chosen
            .iter()
            .enumerate()
            .filter(|(_, p)| p.feasible_at(slot))
            .min_by(|(_, a), (_, b)| canonical_cmp(a, b))
            .map(|(i, _)| i);
        if let Some(i) = pick {
            *slot_pick = Some(*chosen.swap_remove(i));
        }
    }
    debug_assert!(chosen.is_empty(), "plan placement must use every chosen packet");
    Ok(Plan { p1: placed[0], p2: placed[1], p3: placed[2] })
}

/// One step of the 1-lookahead policy: follow the plan head `p1` unless the
/// backup guard fires, i.e. `p2` was released this very slot and `p1` is
/// lighter than `p2`, `p3`, and their mean scaled by `1 / (2 alpha)`. Returns
/// the chosen id and whether the backup was taken; `None` without a plan
/// head.
pub fn lcalpha_step(plan: &Plan, t: i64, consts: &LcConstants) -> Option<(PacketId, bool)> {
    let p1 = plan.p1?;
    if let (Some(p2), Some(p3)) = (plan.p2, plan.p3) {
        let cap = p2
            .weight
            .min(p3.weight)
            .min((p2.weight + p3.weight) / (2.0 * consts.alpha));
        if p2.release == t && p1.weight < cap {
            debug_assert_eq!(p1.deadline, t, "the plan head must be expiring when skipped");
            return Some((p2.id, true));
        }
    }
    Some((p1.id, false))
}

pub struct LcAlpha {
    consts: LcConstants,
}

impl LcAlpha {
    pub fn new() -> Self {
        LcAlpha { consts: lc_constants() }
    }

    pub fn constants(&self) -> &LcConstants {
        &self.consts
    }
}

impl Default for LcAlpha {
    fn default() -> Self {
        LcAlpha::new()
    }
}

impl OnlinePolicy for LcAlpha {
    fn name(&self) -> String {
        "lcalpha".into()
    }

    fn choose(&mut self, ctx: &StepContext<'_>) -> Result<Choice, PolicyError> {
        let plan = compute_plan(ctx.pending, ctx.lookahead, ctx.slot)?;
        let decision = lcalpha_step(&plan, ctx.slot, &self.consts);
        let info = StepInfo::Plan {
            p1: plan.p1,
            p2: plan.p2,
            p3: plan.p3,
            chose_backup: decision.map_or(false, |(_, backup)| backup),
        };
        Ok(Choice { packet: decision.map(|(id, _)| id), info })
    }
}
