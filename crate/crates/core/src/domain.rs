//! Core domain types: packets, instances, schedules, and the tie-broken
//! orderings everything else builds on.
//!
//! Weights are `f64` and compared exactly; determinism comes from breaking
//! weight ties by packet id, never from perturbing stored values behind the
//! caller's back. Callers that need pairwise-distinct weights (the analysis
//! assumes them) can apply [`perturb`] explicitly; the generators do.

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type PacketId = u64;

/// Ids at or above this value are reserved for the synthetic weight-zero
/// fillers the engine fabricates when a step has no pending packet. Instances
/// must stay below it so fillers never collide with real packets.
pub const FILLER_ID_BASE: PacketId = 1 << 62;

/// A unit-length job: transmittable at any slot in `[release, deadline]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: PacketId,
    #[serde(rename = "r")]
    pub release: i64,
    #[serde(rename = "d")]
    pub deadline: i64,
    #[serde(rename = "w")]
    pub weight: f64,
}

impl Packet {
    pub fn new(id: PacketId, release: i64, deadline: i64, weight: f64) -> Self {
        Packet { id, release, deadline, weight }
    }

    /// Number of slots in the feasible window.
    pub fn span(&self) -> i64 {
        self.deadline - self.release + 1
    }

    /// Tight packets must be sent at their release slot or dropped.
    pub fn is_tight(&self) -> bool {
        self.release == self.deadline
    }

    pub fn feasible_at(&self, t: i64) -> bool {
        self.release <= t && t <= self.deadline
    }

    pub fn expires_at(&self, t: i64) -> bool {
        self.deadline == t
    }

    pub fn is_filler(&self) -> bool {
        self.id >= FILLER_ID_BASE
    }
}

/// `f64` under the total order of [`f64::total_cmp`], for use inside sort keys.
#[derive(Debug, Clone, Copy)]
pub struct TotalF64(pub f64);

impl PartialEq for TotalF64 {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for TotalF64 {}

impl PartialOrd for TotalF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TotalF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Sort key realizing the canonical order: earlier deadline first, then larger
/// weight, then smaller id. A strict total order on well-formed instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CanonicalKey {
    pub deadline: i64,
    pub weight_desc: std::cmp::Reverse<TotalF64>,
    pub id: PacketId,
}

/// Sort key for "heavier": larger weight first, ties to the smaller id.
/// Ordered so that the heaviest packet has the *largest* key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct HeavierKey {
    pub weight: TotalF64,
    pub id_desc: std::cmp::Reverse<PacketId>,
}

impl Packet {
    pub fn canonical_key(&self) -> CanonicalKey {
        CanonicalKey {
            deadline: self.deadline,
            weight_desc: std::cmp::Reverse(TotalF64(self.weight)),
            id: self.id,
        }
    }

    pub fn heavier_key(&self) -> HeavierKey {
        HeavierKey { weight: TotalF64(self.weight), id_desc: std::cmp::Reverse(self.id) }
    }
}

pub fn canonical_cmp(a: &Packet, b: &Packet) -> Ordering {
    a.canonical_key().cmp(&b.canonical_key())
}

/// Strict canonical precedence: `a` before `b`.
pub fn canonical_less(a: &Packet, b: &Packet) -> bool {
    canonical_cmp(a, b) == Ordering::Less
}

pub fn heavier_cmp(a: &Packet, b: &Packet) -> Ordering {
    a.heavier_key().cmp(&b.heavier_key())
}

/// Strictly heavier: larger weight, or equal weight and smaller id.
pub fn heavier(a: &Packet, b: &Packet) -> bool {
    heavier_cmp(a, b) == Ordering::Greater
}

/// Heaviest packet of an iterator, `None` when empty.
pub fn heaviest<'a, I>(packets: I) -> Option<&'a Packet>
where
    I: IntoIterator<Item = &'a Packet>,
{
    packets.into_iter().max_by(|a, b| heavier_cmp(a, b))
}

/// Canonically minimal packet of an iterator, `None` when empty.
pub fn canonical_min<'a, I>(packets: I) -> Option<&'a Packet>
where
    I: IntoIterator<Item = &'a Packet>,
{
    packets.into_iter().min_by(|a, b| canonical_cmp(a, b))
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// A scheduling instance: a packet multiset plus an optional declared
/// s-bound. `distinct_weights` records that all weights are pairwise
/// distinct; generators set it, hand-written instances may not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_bound: Option<u32>,
    pub packets: Vec<Packet>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub distinct_weights: bool,
}

impl Instance {
    /// Builds and validates an instance. The distinct-weights flag starts
    /// unset; see [`perturb`].
    pub fn new(packets: Vec<Packet>, s_bound: Option<u32>) -> Result<Self, DomainError> {
        let inst = Instance { s_bound, packets, distinct_weights: false };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let mut seen = BTreeSet::new();
        for p in &self.packets {
            if p.id >= FILLER_ID_BASE {
                return Err(DomainError::ReservedId(p.id));
            }
            if !seen.insert(p.id) {
                return Err(DomainError::DuplicateId(p.id));
            }
            if p.release < 0 {
                return Err(DomainError::NegativeRelease { id: p.id, release: p.release });
            }
            if p.deadline < p.release {
                return Err(DomainError::DeadlineBeforeRelease {
                    id: p.id,
                    release: p.release,
                    deadline: p.deadline,
                });
            }
            if !p.weight.is_finite() || p.weight < 0.0 {
                return Err(DomainError::BadWeight { id: p.id, weight: p.weight });
            }
            if let Some(s) = self.s_bound {
                if s == 0 || p.span() > s as i64 {
                    return Err(DomainError::SpanExceedsBound { id: p.id, span: p.span(), s });
                }
            }
        }
        if self.distinct_weights {
            let mut by_weight: Vec<&Packet> = self.packets.iter().collect();
            by_weight.sort_by_key(|p| (TotalF64(p.weight), p.id));
            for pair in by_weight.windows(2) {
                if pair[0].weight == pair[1].weight {
                    return Err(DomainError::WeightCollision {
                        a: pair[0].id,
                        b: pair[1].id,
                        weight: pair[0].weight,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn packet(&self, id: PacketId) -> Option<&Packet> {
        self.packets.iter().find(|p| p.id == id)
    }

    /// `(min release, max deadline)` over all packets, `None` when empty.
    pub fn horizon(&self) -> Option<(i64, i64)> {
        let lo = self.packets.iter().map(|p| p.release).min()?;
        let hi = self.packets.iter().map(|p| p.deadline).max()?;
        Some((lo, hi))
    }

    /// Largest window span actually present (the effective s-bound).
    pub fn max_span(&self) -> Option<i64> {
        self.packets.iter().map(|p| p.span()).max()
    }

    /// True when every packet's window fits in `s` slots.
    pub fn is_s_bounded(&self, s: u32) -> bool {
        self.max_span().map_or(true, |m| m <= s as i64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DomainError> {
        let inst: Instance =
            serde_json::from_str(text).map_err(|e| DomainError::Json(e.to_string()))?;
        inst.validate()?;
        Ok(inst)
    }
}

/// Returns a copy of `inst` with `i * eta` added to the weight of the `i`-th
/// packet (in stored order), realizing an infinitesimal perturbation for
/// instances with weight ties. `eta` defaults to `1e-9` times the maximum
/// weight. The distinct-weights flag on the result reflects whether the
/// perturbed weights really are pairwise distinct.
pub fn perturb(inst: &Instance, eta: Option<f64>) -> Instance {
    let max_w = inst.packets.iter().map(|p| p.weight).fold(0.0f64, f64::max);
    let eta = eta.unwrap_or(if max_w > 0.0 { 1e-9 * max_w } else { 1e-9 });
    let packets: Vec<Packet> = inst
        .packets
        .iter()
        .enumerate()
        .map(|(i, p)| Packet { weight: p.weight + i as f64 * eta, ..*p })
        .collect();
    let mut out = Instance { s_bound: inst.s_bound, packets, distinct_weights: false };
    let mut ws: Vec<TotalF64> = out.packets.iter().map(|p| TotalF64(p.weight)).collect();
    ws.sort();
    out.distinct_weights = ws.windows(2).all(|w| w[0] != w[1]);
    out
}

/// A (partial) assignment of slots to packet ids. At most one packet per slot
/// is structural; use [`Schedule::from_pairs`] to catch slot conflicts when
/// building from a list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub slots: BTreeMap<i64, PacketId>,
}

impl Schedule {
    pub fn new() -> Self {
        Schedule::default()
    }

    pub fn from_pairs<I>(pairs: I) -> Result<Self, DomainError>
    where
        I: IntoIterator<Item = (i64, PacketId)>,
    {
        let mut slots = BTreeMap::new();
        for (slot, id) in pairs {
            match slots.entry(slot) {
                Entry::Vacant(v) => {
                    v.insert(id);
                }
                Entry::Occupied(_) => return Err(DomainError::SlotConflict { slot }),
            }
        }
        Ok(Schedule { slots })
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    /// Ids of all scheduled packets, ascending.
    pub fn packet_ids(&self) -> BTreeSet<PacketId> {
        self.slots.values().copied().collect()
    }

    pub fn slot_of(&self, id: PacketId) -> Option<i64> {
        self.slots.iter().find(|(_, &pid)| pid == id).map(|(&t, _)| t)
    }
}

/// One defect found when checking a schedule against an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    UnknownPacket { slot: i64, id: PacketId },
    BeforeRelease { slot: i64, id: PacketId },
    AfterDeadline { slot: i64, id: PacketId },
    RepeatedPacket { id: PacketId, first_slot: i64, second_slot: i64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownPacket { slot, id } => {
                write!(f, "slot {slot}: packet {id} is not part of the instance")
            }
            Violation::BeforeRelease { slot, id } => {
                write!(f, "slot {slot}: packet {id} is scheduled before its release")
            }
            Violation::AfterDeadline { slot, id } => {
                write!(f, "slot {slot}: packet {id} is scheduled after its deadline")
            }
            Violation::RepeatedPacket { id, first_slot, second_slot } => {
                write!(f, "packet {id} is scheduled twice (slots {first_slot} and {second_slot})")
            }
        }
    }
}

/// Checks feasibility of `sch` for `inst`; an empty result means valid.
/// Unknown ids are reported as violations, never panics.
pub fn validate_schedule(inst: &Instance, sch: &Schedule) -> Vec<Violation> {
    let by_id: BTreeMap<PacketId, &Packet> = inst.packets.iter().map(|p| (p.id, p)).collect();
    let mut first_slot: BTreeMap<PacketId, i64> = BTreeMap::new();
    let mut out = Vec::new();
    for (&slot, &id) in &sch.slots {
        match by_id.get(&id) {
            None => out.push(Violation::UnknownPacket { slot, id }),
            Some(p) => {
                if slot < p.release {
                    out.push(Violation::BeforeRelease { slot, id });
                }
                if slot > p.deadline {
                    out.push(Violation::AfterDeadline { slot, id });
                }
            }
        }
        match first_slot.entry(id) {
            Entry::Vacant(v) => {
                v.insert(slot);
            }
            Entry::Occupied(o) => out.push(Violation::RepeatedPacket {
                id,
                first_slot: *o.get(),
                second_slot: slot,
            }),
        }
    }
    out
}

/// Total weight of a valid schedule, summed in ascending slot order.
pub fn schedule_weight(inst: &Instance, sch: &Schedule) -> Result<f64, DomainError> {
    let violations = validate_schedule(inst, sch);
    if !violations.is_empty() {
        return Err(DomainError::InvalidSchedule(ViolationList(violations)));
    }
    let by_id: BTreeMap<PacketId, f64> = inst.packets.iter().map(|p| (p.id, p.weight)).collect();
    Ok(sch.slots.values().map(|id| by_id[id]).sum())
}

/// Newtype so the error can carry the full list while staying printable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationList(pub Vec<Violation>);

impl fmt::Display for ViolationList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut sep = "";
        for v in &self.0 {
            write!(f, "{sep}{v}")?;
            sep = "; ";
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("duplicate packet id {0}")]
    DuplicateId(PacketId),
    #[error("packet id {0} lies in the reserved filler range")]
    ReservedId(PacketId),
    #[error("packet {id}: negative release {release}")]
    NegativeRelease { id: PacketId, release: i64 },
    #[error("packet {id}: deadline {deadline} precedes release {release}")]
    DeadlineBeforeRelease { id: PacketId, release: i64, deadline: i64 },
    #[error("packet {id}: weight {weight} is not finite and nonnegative")]
    BadWeight { id: PacketId, weight: f64 },
    #[error("packet {id}: window of {span} slots exceeds the declared {s}-bound")]
    SpanExceedsBound { id: PacketId, span: i64, s: u32 },
    #[error("distinct_weights set, but packets {a} and {b} share weight {weight}")]
    WeightCollision { a: PacketId, b: PacketId, weight: f64 },
    #[error("slot {slot} assigned more than one packet")]
    SlotConflict { slot: i64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(ViolationList),
    #[error("malformed instance JSON: {0}")]
    Json(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(id: PacketId, r: i64, d: i64, w: f64) -> Packet {
        Packet::new(id, r, d, w)
    }

    #[test]
    fn canonical_order_prefers_earlier_deadline() {
        let a = pkt(7, 0, 2, 5.0);
        let b = pkt(3, 0, 3, 9.0);
        assert!(canonical_less(&a, &b));
        assert!(!canonical_less(&b, &a));
    }

    #[test]
    fn canonical_order_breaks_deadline_ties_by_weight_then_id() {
        let light = pkt(1, 0, 2, 1.0);
        let heavy = pkt(2, 0, 2, 4.0);
        assert!(canonical_less(&heavy, &light));

        let first = pkt(1, 0, 2, 4.0);
        let second = pkt(2, 0, 2, 4.0);
        assert!(canonical_less(&first, &second));
    }

    #[test]
    fn heavier_breaks_weight_ties_by_lower_id() {
        let a = pkt(1, 0, 5, 4.0);
        let b = pkt(2, 0, 1, 4.0);
        assert!(heavier(&a, &b));
        assert!(!heavier(&b, &a));
        let c = pkt(9, 0, 1, 4.5);
        assert!(heavier(&c, &a));
        let all = [a, b, c];
        assert_eq!(heaviest(all.iter()).map(|p| p.id), Some(9));
    }

    #[test]
    fn instance_validation_catches_defects() {
        assert!(matches!(
            Instance::new(vec![pkt(1, 0, 1, 1.0), pkt(1, 0, 1, 2.0)], None),
            Err(DomainError::DuplicateId(1))
        ));
        assert!(matches!(
            Instance::new(vec![pkt(1, 3, 2, 1.0)], None),
            Err(DomainError::DeadlineBeforeRelease { .. })
        ));
        assert!(matches!(
            Instance::new(vec![pkt(1, -1, 2, 1.0)], None),
            Err(DomainError::NegativeRelease { .. })
        ));
        assert!(matches!(
            Instance::new(vec![pkt(1, 0, 4, 1.0)], Some(4)),
            Err(DomainError::SpanExceedsBound { .. })
        ));
        assert!(Instance::new(vec![pkt(1, 0, 3, 1.0)], Some(4)).is_ok());
        assert!(matches!(
            Instance::new(vec![pkt(1, 0, 1, f64::NAN)], None),
            Err(DomainError::BadWeight { .. })
        ));
        assert!(matches!(
            Instance::new(vec![pkt(FILLER_ID_BASE, 0, 1, 1.0)], None),
            Err(DomainError::ReservedId(_))
        ));
    }

    #[test]
    fn distinct_weights_flag_is_checked() {
        let mut inst = Instance::new(vec![pkt(1, 0, 1, 2.0), pkt(2, 0, 1, 2.0)], None).unwrap();
        inst.distinct_weights = true;
        assert!(matches!(inst.validate(), Err(DomainError::WeightCollision { a: 1, b: 2, .. })));
    }

    #[test]
    fn schedule_from_pairs_rejects_slot_conflicts() {
        let err = Schedule::from_pairs([(4, 1), (4, 2)]).unwrap_err();
        assert!(matches!(err, DomainError::SlotConflict { slot: 4 }));
    }

    #[test]
    fn validate_schedule_reports_window_violations() {
        let inst = Instance::new(vec![pkt(1, 2, 3, 1.0), pkt(2, 0, 0, 1.0)], None).unwrap();
        let sch = Schedule::from_pairs([(1, 1)]).unwrap();
        assert_eq!(validate_schedule(&inst, &sch), vec![Violation::BeforeRelease { slot: 1, id: 1 }]);

        let sch = Schedule::from_pairs([(1, 2)]).unwrap();
        assert_eq!(validate_schedule(&inst, &sch), vec![Violation::AfterDeadline { slot: 1, id: 2 }]);

        let sch = Schedule::from_pairs([(1, 9)]).unwrap();
        assert_eq!(validate_schedule(&inst, &sch), vec![Violation::UnknownPacket { slot: 1, id: 9 }]);

        let sch = Schedule::from_pairs([(2, 1), (3, 1)]).unwrap();
        assert_eq!(
            validate_schedule(&inst, &sch),
            vec![Violation::RepeatedPacket { id: 1, first_slot: 2, second_slot: 3 }]
        );
    }

    #[test]
    fn schedule_weight_sums_valid_schedules_and_rejects_invalid_ones() {
        let phi = crate::constants::phi();
        let inst = Instance::new(
            vec![pkt(0, 1, 1, 0.9), pkt(1, 1, 2, 0.9), pkt(2, 1, 3, 1.0), pkt(3, 1, 4, phi)],
            Some(4),
        )
        .unwrap();
        let sch = Schedule::from_pairs([(1, 0), (2, 1), (3, 2), (4, 3)]).unwrap();
        assert_eq!(schedule_weight(&inst, &sch).unwrap(), 0.9 + 0.9 + 1.0 + phi);

        let bad = Schedule::from_pairs([(5, 3)]).unwrap();
        assert!(schedule_weight(&inst, &bad).is_err());
    }

    #[test]
    fn instance_json_round_trips_byte_for_byte() {
        let text = r#"{"s_bound":4,"packets":[{"id":0,"r":1,"d":1,"w":0.9},{"id":1,"r":1,"d":2,"w":0.9},{"id":2,"r":1,"d":3,"w":1.0},{"id":3,"r":1,"d":4,"w":1.618033988749895}]}"#;
        let inst = Instance::from_json(text).unwrap();
        assert_eq!(inst.to_json(), text);
    }

    #[test]
    fn schedule_json_uses_string_slot_keys() {
        let sch = Schedule::from_pairs([(1, 0), (2, 3)]).unwrap();
        let text = serde_json::to_string(&sch).unwrap();
        assert_eq!(text, r#"{"slots":{"1":0,"2":3}}"#);
        let back: Schedule = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sch);
    }

    #[test]
    fn perturb_separates_tied_weights() {
        let inst = Instance::new(
            vec![pkt(0, 0, 1, 1.0), pkt(1, 0, 1, 1.0), pkt(2, 1, 2, 1.0)],
            Some(2),
        )
        .unwrap();
        let out = perturb(&inst, None);
        assert!(out.distinct_weights);
        assert!(out.validate().is_ok());
        assert_eq!(out.packets[0].weight, 1.0);
        assert!(out.packets[1].weight > 1.0);
        assert!(out.packets[2].weight > out.packets[1].weight);
        for (a, b) in inst.packets.iter().zip(&out.packets) {
            assert!((b.weight - a.weight).abs() <= 2.0 * 1e-9 * 1.0 + f64::EPSILON);
        }
    }
}
