//! Replayable online simulation.
//!
//! The engine walks integer slots, feeds each step's pending and lookahead
//! sets to a policy, and records everything an audit needs to replay the run:
//! the chosen packet, the policy's own step classification, and a snapshot of
//! the pending ids. Steps with an empty pending set inside the active horizon
//! get a synthetic weight-zero filler packet (flagged, excluded from totals
//! and schedules) so policies and audits can always assume at least one
//! pending packet.
//!
//! Releases come from a [`ReleaseSource`] rather than a fixed list so that an
//! adaptive adversary can decide future releases only after observing the
//! policy's choices. The engine queries releases in slot order, at most one
//! slot ahead (for lookahead), and reports each choice back to the source
//! before querying anything past the following slot.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, Instance, Packet, PacketId, Schedule, FILLER_ID_BASE};

/// How far the policy can see: releases of the next slot, or nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Lookahead {
    Zero,
    One,
}

impl From<Lookahead> for u8 {
    fn from(l: Lookahead) -> u8 {
        match l {
            Lookahead::Zero => 0,
            Lookahead::One => 1,
        }
    }
}

impl TryFrom<u8> for Lookahead {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Lookahead::Zero),
            1 => Ok(Lookahead::One),
            other => Err(format!("lookahead must be 0 or 1, got {other}")),
        }
    }
}

/// What a policy sees at one step. `pending` is sorted by id and nonempty
/// whenever the engine is inside the active horizon (possibly via a filler);
/// `lookahead` holds the packets released at `slot + 1`, empty under
/// [`Lookahead::Zero`].
#[derive(Debug)]
pub struct StepContext<'a> {
    pub slot: i64,
    pub pending: &'a [Packet],
    pub lookahead: &'a [Packet],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToggleKind {
    #[serde(rename = "f-step")]
    F,
    #[serde(rename = "e-step")]
    E,
}

/// Policy-specific step annotation, kept in the trace for audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepInfo {
    /// Plain pick (greedy and threshold policies).
    Pick,
    /// Marking policy: which branch ran and the mark around the step.
    Toggle { kind: ToggleKind, mark_before: Option<PacketId>, mark_after: Option<PacketId> },
    /// Plan-based policy: the three plan heads and whether the backup
    /// (second plan packet) was preferred over the first.
    Plan { p1: Option<Packet>, p2: Option<Packet>, p3: Option<Packet>, chose_backup: bool },
}

/// A policy's decision for one step. `packet` must be a pending id.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub packet: Option<PacketId>,
    pub info: StepInfo,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("plan requires 2-bounded input, packet {id} spans {span} slots")]
    NotTwoBounded { id: PacketId, span: i64 },
    #[error("{0}")]
    Invalid(String),
}

/// An online scheduling policy. Implementations keep their own memory and
/// must reset it in [`OnlinePolicy::begin_run`].
pub trait OnlinePolicy {
    fn name(&self) -> String;
    fn begin_run(&mut self) {}
    fn choose(&mut self, ctx: &StepContext<'_>) -> Result<Choice, PolicyError>;
}

/// Feeds releases to the engine slot by slot. `release_at` is called at most
/// once per slot in nondecreasing order; `observe` reports the choice at `t`
/// before any query for slots beyond `t + 1`, which is what lets an adaptive
/// source condition future releases on past choices without ever retracting
/// a lookahead the policy has already seen.
pub trait ReleaseSource {
    /// First slot of the run, `None` if nothing is ever released.
    fn start(&self) -> Option<i64>;
    fn release_at(&mut self, t: i64) -> Vec<Packet>;
    fn observe(&mut self, _t: i64, _chosen: Option<&Packet>) {}
    /// True when no packet will be released at slot `t` or later.
    fn exhausted(&self, t: i64) -> bool;
    /// Next slot `>= t` with a release, if known; lets the engine skip dead
    /// air between disconnected bursts.
    fn next_release_at(&self, _t: i64) -> Option<i64> {
        None
    }
}

/// Replays a fixed instance.
pub struct InstanceSource {
    start: Option<i64>,
    releases: BTreeMap<i64, Vec<Packet>>,
}

impl InstanceSource {
    pub fn new(inst: &Instance) -> Self {
        let mut releases: BTreeMap<i64, Vec<Packet>> = BTreeMap::new();
        for p in &inst.packets {
            releases.entry(p.release).or_default().push(*p);
        }
        for v in releases.values_mut() {
            v.sort_by_key(|p| p.id);
        }
        InstanceSource { start: releases.keys().next().copied(), releases }
    }
}

impl ReleaseSource for InstanceSource {
    fn start(&self) -> Option<i64> {
        self.start
    }

    fn release_at(&mut self, t: i64) -> Vec<Packet> {
        self.releases.remove(&t).unwrap_or_default()
    }

    fn exhausted(&self, t: i64) -> bool {
        self.releases.range(t..).next().is_none()
    }

    fn next_release_at(&self, t: i64) -> Option<i64> {
        self.releases.range(t..).next().map(|(&k, _)| k)
    }
}

/// One recorded step. `pending` snapshots the real pending ids at the start
/// of the step (empty when a filler was synthesized); `synthetic` marks steps
/// that transmitted a filler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub slot: i64,
    pub scheduled: Option<Packet>,
    pub synthetic: bool,
    pub info: StepInfo,
    pub pending: Vec<PacketId>,
}

impl TraceStep {
    /// Weight actually transmitted at this step (fillers count as zero
    /// through their zero weight).
    pub fn weight(&self) -> f64 {
        self.scheduled.map_or(0.0, |p| p.weight)
    }

    /// The transmitted packet if it is a real one.
    pub fn real_packet(&self) -> Option<&Packet> {
        self.scheduled.as_ref().filter(|p| !p.is_filler())
    }
}

/// Full record of one run: the realized instance (what the source actually
/// released), every step, and the total transmitted weight (fillers
/// excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub algorithm: String,
    pub lookahead: Lookahead,
    pub instance: Instance,
    pub steps: Vec<TraceStep>,
    pub total_weight: f64,
}

impl Trace {
    pub fn step_at(&self, slot: i64) -> Option<&TraceStep> {
        self.steps.binary_search_by_key(&slot, |s| s.slot).ok().map(|i| &self.steps[i])
    }

    /// The schedule the run realized, synthetic fillers omitted.
    pub fn schedule(&self) -> Schedule {
        Schedule {
            slots: self
                .steps
                .iter()
                .filter_map(|s| s.real_packet().map(|p| (s.slot, p.id)))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("policy chose packet {id} at slot {slot}, but it is not pending there")]
    NonPending { slot: i64, id: PacketId },
    #[error("policy failed at slot {slot}")]
    Policy {
        slot: i64,
        #[source]
        source: PolicyError,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Runs a policy over a fixed instance.
pub fn run(
    policy: &mut dyn OnlinePolicy,
    inst: &Instance,
    lookahead: Lookahead,
) -> Result<Trace, EngineError> {
    inst.validate()?;
    let mut source = InstanceSource::new(inst);
    run_source(policy, &mut source, lookahead)
}

/// Runs a policy against an arbitrary release source, walking slots from the
/// first release until the source is exhausted and nothing is pending.
pub fn run_source(
    policy: &mut dyn OnlinePolicy,
    source: &mut dyn ReleaseSource,
    lookahead: Lookahead,
) -> Result<Trace, EngineError> {
    policy.begin_run();
    let mut steps: Vec<TraceStep> = Vec::new();
    let mut realized: Vec<Packet> = Vec::new();
    let mut pending: Vec<Packet> = Vec::new();
    let mut cache: BTreeMap<i64, Vec<Packet>> = BTreeMap::new();
    let mut horizon: Option<i64> = None;

    let Some(start) = source.start() else {
        return Ok(finish(policy, lookahead, realized, steps));
    };

    let mut t = start;
    loop {
        let arrivals = cache.remove(&t).unwrap_or_else(|| source.release_at(t));
        for p in arrivals {
            horizon = Some(horizon.map_or(p.deadline, |h| h.max(p.deadline)));
            realized.push(p);
            pending.push(p);
        }
        pending.retain(|p| p.deadline >= t);

        if pending.is_empty() && horizon.map_or(true, |h| t > h) {
            if source.exhausted(t) && cache.range(t..).all(|(_, v)| v.is_empty()) {
                break;
            }
            // dead air: jump to the next release
            let next = cache
                .range(t..)
                .find(|(_, v)| !v.is_empty())
                .map(|(&k, _)| k)
                .into_iter()
                .chain(source.next_release_at(t))
                .min();
            t = next.unwrap_or(t + 1);
            continue;
        }

        let la: &[Packet] = match lookahead {
            Lookahead::Zero => &[],
            Lookahead::One => {
                cache.entry(t + 1).or_insert_with(|| source.release_at(t + 1)).as_slice()
            }
        };
        let la = la.to_vec();

        let pending_ids: Vec<PacketId> = {
            let mut ids: Vec<PacketId> = pending.iter().map(|p| p.id).collect();
            ids.sort_unstable();
            ids
        };
        if pending.is_empty() {
            pending.push(Packet::new(FILLER_ID_BASE + t as u64, t, t, 0.0));
        }
        pending.sort_by_key(|p| p.id);

        let ctx = StepContext { slot: t, pending: &pending, lookahead: &la };
        let choice = policy.choose(&ctx).map_err(|e| EngineError::Policy { slot: t, source: e })?;
        let scheduled = match choice.packet {
            None => None,
            Some(id) => match pending.iter().find(|p| p.id == id) {
                Some(p) => Some(*p),
                None => return Err(EngineError::NonPending { slot: t, id }),
            },
        };
        source.observe(t, scheduled.as_ref());

        steps.push(TraceStep {
            slot: t,
            scheduled,
            synthetic: scheduled.map_or(false, |p| p.is_filler()),
            info: choice.info,
            pending: pending_ids,
        });

        if let Some(sp) = scheduled {
            pending.retain(|p| p.id != sp.id);
        }
        pending.retain(|p| !p.is_filler() && p.deadline > t);
        t += 1;
    }

    Ok(finish(policy, lookahead, realized, steps))
}

fn finish(
    policy: &dyn OnlinePolicy,
    lookahead: Lookahead,
    mut realized: Vec<Packet>,
    steps: Vec<TraceStep>,
) -> Trace {
    realized.sort_by_key(|p| p.id);
    let instance = Instance { s_bound: None, packets: realized, distinct_weights: false };
    let total_weight = steps.iter().filter_map(|s| s.real_packet()).map(|p| p.weight).sum();
    Trace { algorithm: policy.name(), lookahead, instance, steps, total_weight }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_schedule;
    use crate::policies::Greedy;

    fn pkt(id: PacketId, r: i64, d: i64, w: f64) -> Packet {
        Packet::new(id, r, d, w)
    }

    #[test]
    fn empty_instance_produces_an_empty_trace() {
        let inst = Instance::new(vec![], None).unwrap();
        let trace = run(&mut Greedy, &inst, Lookahead::Zero).unwrap();
        assert!(trace.steps.is_empty());
        assert_eq!(trace.total_weight, 0.0);
    }

    #[test]
    fn fillers_cover_empty_steps_inside_the_horizon_only() {
        // packet 0 is gone after slot 0 but keeps the horizon at 1, so slot 1
        // gets a filler; slot 2 is dead air and skipped.
        let inst =
            Instance::new(vec![pkt(0, 0, 1, 1.0), pkt(1, 3, 3, 2.0)], None).unwrap();
        let trace = run(&mut Greedy, &inst, Lookahead::Zero).unwrap();
        let slots: Vec<i64> = trace.steps.iter().map(|s| s.slot).collect();
        assert_eq!(slots, vec![0, 1, 3]);
        assert!(trace.steps[1].synthetic);
        assert_eq!(trace.steps[1].weight(), 0.0);
        assert!(trace.steps[1].pending.is_empty());
        assert_eq!(trace.total_weight, 3.0);
    }

    #[test]
    fn trace_schedules_replay_as_valid_schedules() {
        let inst = Instance::new(
            vec![pkt(0, 0, 2, 3.0), pkt(1, 0, 1, 2.0), pkt(2, 1, 2, 1.0), pkt(3, 4, 5, 9.0)],
            None,
        )
        .unwrap();
        let trace = run(&mut Greedy, &inst, Lookahead::One).unwrap();
        assert!(validate_schedule(&trace.instance, &trace.schedule()).is_empty());
        assert_eq!(trace.instance.packets, inst.packets);
    }

    #[test]
    fn non_pending_choices_are_hard_errors() {
        struct Rogue;
        impl OnlinePolicy for Rogue {
            fn name(&self) -> String {
                "rogue".into()
            }
            fn choose(&mut self, _ctx: &StepContext<'_>) -> Result<Choice, PolicyError> {
                Ok(Choice { packet: Some(9999), info: StepInfo::Pick })
            }
        }
        let inst = Instance::new(vec![pkt(0, 2, 3, 1.0)], None).unwrap();
        let err = run(&mut Rogue, &inst, Lookahead::Zero).unwrap_err();
        match err {
            EngineError::NonPending { slot, id } => {
                assert_eq!((slot, id), (2, 9999));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn lookahead_exposes_next_slot_releases() {
        struct Probe {
            seen: Vec<(i64, Vec<PacketId>)>,
        }
        impl OnlinePolicy for Probe {
            fn name(&self) -> String {
                "probe".into()
            }
            fn choose(&mut self, ctx: &StepContext<'_>) -> Result<Choice, PolicyError> {
                self.seen.push((ctx.slot, ctx.lookahead.iter().map(|p| p.id).collect()));
                Ok(Choice {
                    packet: crate::policies::greedy_step(ctx.pending),
                    info: StepInfo::Pick,
                })
            }
        }
        let inst = Instance::new(
            vec![pkt(0, 0, 1, 1.0), pkt(1, 1, 2, 1.5), pkt(2, 1, 1, 0.5)],
            None,
        )
        .unwrap();
        let mut probe = Probe { seen: vec![] };
        run(&mut probe, &inst, Lookahead::One).unwrap();
        assert_eq!(probe.seen[0], (0, vec![1, 2]));

        let mut probe = Probe { seen: vec![] };
        run(&mut probe, &inst, Lookahead::Zero).unwrap();
        assert_eq!(probe.seen[0], (0, vec![]));
    }
}
