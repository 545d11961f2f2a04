//! Instance generators: an adaptive lower-bound game against 1-lookahead
//! policies, its closed-form accounting, and random bounded-window fuzzing
//! inputs.
//!
//! The game runs in phases. Phase `i` opens at slot `2i+1` with a tight
//! packet of weight `w_i` and a two-slot packet of weight `w_{i+1}`; a third
//! packet of weight `w_{i+1}` follows at slot `2i+2` and is committed
//! together with the phase, so the policy's lookahead never sees anything
//! that could later be retracted. If the policy answers slot `2i+1` with an
//! expiring packet the next phase opens, otherwise the game stops. After
//! `n` survived phases a single tight closer of weight `w_n` arrives.
//!
//! The weight sequence grows just fast enough that both answers hurt:
//! stopping at phase `k` leaves the ratio at a fixed value independent of
//! `k >= 1`, and surviving all `n` phases drives it to the same limit. The
//! closed forms for both outcomes live here next to the game so tests can
//! cross-check simulated profits against them exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::collections::BTreeMap;

use crate::domain::{heaviest, perturb, Instance, Packet, PacketId};
use crate::engine::{
    run_source, Choice, EngineError, Lookahead, OnlinePolicy, PolicyError, ReleaseSource,
    StepContext, StepInfo, Trace,
};
use crate::offline::{optimal_schedule, OfflineError};

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("lower-bound game needs at least one phase")]
    NoPhases,
    #[error("weight-sequence parameter delta must be a positive finite real, got {0}")]
    BadDelta(f64),
    #[error("phase {k} out of range for a {phases}-phase game")]
    PhaseOutOfRange { k: usize, phases: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Offline(#[from] OfflineError),
}

/// Parameters of the lower-bound game: phase count, the small weight
/// perturbation `delta`, and the derived growth constants.
///
/// `ratio` is the value the game certifies, `(1 + sqrt 17) / 4`. The two
/// growth rates `alpha = ratio + 1/2` and `beta = ratio + 1` are the roots
/// of `(2 ratio - 2) x^2 - (ratio + 1) x + (ratio + 1)`, which is what makes
/// the stopped-game ratio independent of the stopping phase; `gamma = ratio`
/// balances the constant term via `gamma (2 ratio - 2) = 2 - ratio`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbParams {
    pub phases: usize,
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub ratio: f64,
}

impl LbParams {
    pub fn new(phases: usize, delta: f64) -> Result<Self, AdversaryError> {
        if phases == 0 {
            return Err(AdversaryError::NoPhases);
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(AdversaryError::BadDelta(delta));
        }
        let ratio = (1.0 + 17.0_f64.sqrt()) / 4.0;
        let params = LbParams {
            phases,
            delta,
            alpha: ratio + 0.5,
            beta: ratio + 1.0,
            gamma: ratio,
            ratio,
        };
        let poly = |x: f64| (2.0 * ratio - 2.0) * x * x - (ratio + 1.0) * x + (ratio + 1.0);
        debug_assert!(poly(params.alpha).abs() < 1e-12);
        debug_assert!(poly(params.beta).abs() < 1e-12);
        debug_assert!((params.gamma * (2.0 * ratio - 2.0) - (2.0 - ratio)).abs() < 1e-12);
        debug_assert!(1.0 < params.alpha && params.alpha < params.beta);
        Ok(params)
    }
}

/// The game's weight sequence `w_0 .. w_n`, `w_0 = 1`.
pub fn lb_weights(params: &LbParams) -> Vec<f64> {
    let LbParams { alpha, beta, gamma, delta, .. } = *params;
    let mut w = Vec::with_capacity(params.phases + 1);
    w.push(1.0);
    for i in 1..=params.phases {
        let a = alpha.powi(i as i32 - 1) * (alpha - 1.0);
        let b = beta.powi(i as i32 - 1) * (beta - 1.0);
        w.push((gamma + 1.0) * a + delta * (b - a));
    }
    w
}

/// Prefix sums `S_k = w_0 + .. + w_k`.
pub fn partial_sums(weights: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

/// Policy and optimum profit when the policy breaks off in phase `k < n`:
/// the policy banks both heavy packets of the refused phase but forfeits
/// `w_k`, while the optimum additionally cashes the tight packet.
pub fn stopped_profits(k: usize, weights: &[f64]) -> Result<(f64, f64), AdversaryError> {
    if k + 1 >= weights.len() {
        return Err(AdversaryError::PhaseOutOfRange { k, phases: weights.len().saturating_sub(1) });
    }
    let s = partial_sums(weights);
    let alg = 2.0 * s[k + 1] - weights[k] - weights[0];
    let opt = 2.0 * s[k + 1] + weights[k] - 2.0 * weights[0];
    Ok((alg, opt))
}

pub fn stopped_ratio(k: usize, weights: &[f64]) -> Result<f64, AdversaryError> {
    let (alg, opt) = stopped_profits(k, weights)?;
    Ok(opt / alg)
}

/// Profits when the policy survives every phase and the closer expires on
/// it.
pub fn full_game_profits(weights: &[f64]) -> (f64, f64) {
    let n = weights.len() - 1;
    let s = partial_sums(weights);
    (2.0 * s[n] - weights[0], 2.0 * s[n] + weights[n] - 2.0 * weights[0])
}

pub fn full_game_ratio(weights: &[f64]) -> f64 {
    let (alg, opt) = full_game_profits(weights);
    opt / alg
}

/// One continuation decision: what the policy played at the phase's opening
/// slot and whether that kept the game alive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: usize,
    pub slot: i64,
    pub chosen: Option<PacketId>,
    pub continued: bool,
}

/// Release source that plays the game. Phase 0 is committed up front; each
/// later phase (or the terminal closer) is committed the moment the previous
/// phase's opening slot has been observed, which is earlier than any
/// lookahead query for its slots.
pub struct AdversarySource {
    phases: usize,
    weights: Vec<f64>,
    committed: BTreeMap<i64, Vec<Packet>>,
    next_decision: usize,
    stopped: Option<usize>,
    transcript: Vec<PhaseRecord>,
}

impl AdversarySource {
    pub fn new(params: &LbParams) -> Self {
        let mut source = AdversarySource {
            phases: params.phases,
            weights: lb_weights(params),
            committed: BTreeMap::new(),
            next_decision: 0,
            stopped: None,
            transcript: Vec::new(),
        };
        source.commit_phase(0);
        source
    }

    fn commit_phase(&mut self, i: usize) {
        let t = 2 * i as i64 + 1;
        let id = 3 * i as u64;
        if i < self.phases {
            self.committed.entry(t).or_default().extend([
                Packet::new(id, t, t, self.weights[i]),
                Packet::new(id + 1, t, t + 1, self.weights[i + 1]),
            ]);
            self.committed
                .entry(t + 1)
                .or_default()
                .push(Packet::new(id + 2, t + 1, t + 2, self.weights[i + 1]));
        } else {
            self.committed.entry(t).or_default().push(Packet::new(id, t, t, self.weights[i]));
        }
    }

    /// Phase the policy refused, `None` if it survived all of them.
    pub fn stopped(&self) -> Option<usize> {
        self.stopped
    }

    pub fn transcript(&self) -> &[PhaseRecord] {
        &self.transcript
    }
}

impl ReleaseSource for AdversarySource {
    fn start(&self) -> Option<i64> {
        self.committed.keys().next().copied()
    }

    fn release_at(&mut self, t: i64) -> Vec<Packet> {
        self.committed.remove(&t).unwrap_or_default()
    }

    fn observe(&mut self, t: i64, chosen: Option<&Packet>) {
        if self.stopped.is_some() || self.next_decision >= self.phases {
            return;
        }
        if t != 2 * self.next_decision as i64 + 1 {
            return;
        }
        // Idling (a synthetic filler) cannot happen here while the game is
        // alive, but a policy returning no packet is treated like a
        // non-expiring choice: the game stops.
        let real = chosen.filter(|p| !p.is_filler());
        let continued = real.is_some_and(|p| p.deadline == t);
        self.transcript.push(PhaseRecord {
            phase: self.next_decision,
            slot: t,
            chosen: real.map(|p| p.id),
            continued,
        });
        if continued {
            self.next_decision += 1;
            self.commit_phase(self.next_decision);
        } else {
            self.stopped = Some(self.next_decision);
        }
    }

    fn exhausted(&self, t: i64) -> bool {
        self.committed.range(t..).next().is_none()
            && (self.stopped.is_some() || self.next_decision >= self.phases)
    }

    fn next_release_at(&self, t: i64) -> Option<i64> {
        self.committed.range(t..).next().map(|(&k, _)| k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryOutcome {
    /// Phases the policy survived.
    pub k: usize,
    pub stopped_early: bool,
    pub alg_weight: f64,
    pub opt_weight: f64,
    pub ratio: f64,
    pub transcript: Vec<PhaseRecord>,
    pub trace: Trace,
}

/// Plays the game against `policy` (which sees one slot of lookahead) and
/// prices the realized instance with the exact offline solver.
pub fn run_lb_adversary(
    policy: &mut dyn OnlinePolicy,
    params: &LbParams,
) -> Result<AdversaryOutcome, AdversaryError> {
    let mut source = AdversarySource::new(params);
    let trace = run_source(policy, &mut source, Lookahead::One)?;
    debug_assert!(trace.instance.max_span().unwrap_or(1) <= 2);
    let opt = optimal_schedule(&trace.instance)?;
    let k = source.stopped().unwrap_or(params.phases);
    Ok(AdversaryOutcome {
        k,
        stopped_early: k < params.phases,
        alg_weight: trace.total_weight,
        opt_weight: opt.weight,
        ratio: opt.weight / trace.total_weight,
        transcript: source.transcript().to_vec(),
        trace,
    })
}

/// Strawman that keeps the game alive as long as possible: heaviest
/// expiring packet if any, else heaviest overall.
pub struct ExpiringFirst;

impl OnlinePolicy for ExpiringFirst {
    fn name(&self) -> String {
        "expiring-first".into()
    }

    fn choose(&mut self, ctx: &StepContext<'_>) -> Result<Choice, PolicyError> {
        let expiring = heaviest(ctx.pending.iter().filter(|p| p.expires_at(ctx.slot)));
        let pick = expiring.or_else(|| heaviest(ctx.pending.iter()));
        Ok(Choice { packet: pick.map(|p| p.id), info: StepInfo::Pick })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightDist {
    Uniform,
    Exp,
}

/// Random instance with `count` packets, windows of at most `s` slots,
/// releases in `[0, horizon)`, weights drawn from `dist` and then nudged
/// pairwise distinct. Deterministic in `seed`.
pub fn gen_random_sbounded(
    seed: u64,
    count: usize,
    s: u32,
    horizon: i64,
    dist: WeightDist,
) -> Instance {
    assert!(s >= 1, "windows need at least one slot");
    assert!(horizon >= 1, "release range must be nonempty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let packets = (0..count)
        .map(|id| {
            let r = rng.random_range(0..horizon);
            let d = r + rng.random_range(0..s as i64);
            let w = match dist {
                WeightDist::Uniform => rng.random::<f64>(),
                WeightDist::Exp => -(1.0 - rng.random::<f64>()).ln(),
            };
            Packet::new(id as PacketId, r, d, w)
        })
        .collect();
    let inst = Instance::new(packets, Some(s)).expect("generated within bounds");
    perturb(&inst, None)
}
