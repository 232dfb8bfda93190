//! Cooperator selection policies.
//!
//! Each ego keeps its own [`PolicyState`]. Handshake-based policies read the
//! benchmark table gathered in the current round; the UCB policy relies only
//! on the gains it realized in earlier rounds.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{AgentId, Frame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulingError {
    #[error("agent {0} not present in frame")]
    UnknownAgent(AgentId),
    #[error("gain reported for candidate {0} which was not chosen")]
    UnchosenGain(AgentId),
    #[error("no realized gain for chosen candidate {0}")]
    MissingGain(AgentId),
    #[error("invalid policy parameters: {0}")]
    InvalidPolicy(String),
}

fn default_beta() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Policy {
    NoFusion,
    ClosestAgent,
    SingleRandom,
    MultipleRandom {
        k: usize,
    },
    FullCommunication,
    HistoricalBest,
    MassUcb {
        #[serde(default = "default_beta")]
        beta: f64,
    },
}

impl Policy {
    pub fn validate(&self) -> Result<(), SchedulingError> {
        match *self {
            Policy::MultipleRandom { k } if k < 1 => {
                Err(SchedulingError::InvalidPolicy("k must be >= 1".into()))
            }
            Policy::MassUcb { beta } if !(beta.is_finite() && beta >= 0.0) => Err(
                SchedulingError::InvalidPolicy("beta must be finite and >= 0".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn uses_handshake(&self) -> bool {
        matches!(self, Policy::HistoricalBest)
    }

    /// Picks at most one cooperator.
    pub fn is_single_agent(&self) -> bool {
        matches!(
            self,
            Policy::ClosestAgent
                | Policy::SingleRandom
                | Policy::HistoricalBest
                | Policy::MassUcb { .. }
        )
    }

    /// Stable identifier used in file names and table rows.
    pub fn key(&self) -> String {
        match self {
            Policy::NoFusion => "no_fusion".into(),
            Policy::ClosestAgent => "closest_agent".into(),
            Policy::SingleRandom => "single_random".into(),
            Policy::MultipleRandom { k } => format!("multiple_random_k{k}"),
            Policy::FullCommunication => "full_communication".into(),
            Policy::HistoricalBest => "historical_best".into(),
            Policy::MassUcb { beta } => format!("mass_ucb_b{beta}"),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::NoFusion => write!(f, "No Fusion"),
            Policy::ClosestAgent => write!(f, "Closest Agent"),
            Policy::SingleRandom => write!(f, "Single Random"),
            Policy::MultipleRandom { k } => write!(f, "Multiple Random (k={k})"),
            Policy::FullCommunication => write!(f, "Full Communication"),
            Policy::HistoricalBest => write!(f, "Historical Best"),
            Policy::MassUcb { beta } => write!(f, "MASS-UCB (beta={beta})"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub pulls: u64,
    pub mean_gain: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub arms: BTreeMap<AgentId, ArmStats>,
    pub rounds: u64,
    pub last_cooperator: Option<AgentId>,
    /// Benchmarks returned by the most recent handshake.
    pub last_gains: BTreeMap<AgentId, u32>,
}

impl PolicyState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_handshake(&mut self, replies: &[(AgentId, u32)]) {
        self.last_gains = replies.iter().copied().collect();
    }

    pub fn arm(&self, id: AgentId) -> ArmStats {
        self.arms.get(&id).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    pub ego: AgentId,
    pub policy: Policy,
    pub chosen: Vec<AgentId>,
    /// Benchmark values consulted when choosing (handshake policies only).
    pub benchmarks: Vec<(AgentId, u32)>,
    pub used_handshake: bool,
}

fn closest(
    ego: AgentId,
    candidates: &[AgentId],
    frame: &Frame,
) -> Result<AgentId, SchedulingError> {
    let ego_pose = frame
        .agent(ego)
        .ok_or(SchedulingError::UnknownAgent(ego))?
        .pose;
    let mut best: Option<(f64, AgentId)> = None;
    for &c in candidates {
        let d = frame
            .agent(c)
            .ok_or(SchedulingError::UnknownAgent(c))?
            .pose
            .planar_distance(&ego_pose);
        // candidates are sorted, so strict < keeps the smallest id on ties
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, c));
        }
    }
    Ok(best.expect("candidates nonempty").1)
}

/// UCB index of an arm that has been pulled at least once.
pub fn ucb_index(stats: ArmStats, rounds: u64, beta: f64) -> f64 {
    let t = rounds.max(1) as f64;
    stats.mean_gain + beta * (2.0 * t.ln() / stats.pulls as f64).sqrt()
}

/// Chooses cooperators for `ego` among `candidates`. Deterministic given
/// `(state, frame, seed)`; every tie goes to the smallest candidate id.
pub fn schedule(
    policy: Policy,
    ego: AgentId,
    candidates: &[AgentId],
    frame: &Frame,
    state: &PolicyState,
    seed: u64,
) -> Result<ScheduleDecision, SchedulingError> {
    policy.validate()?;
    let mut cands: Vec<AgentId> = candidates.iter().copied().filter(|c| *c != ego).collect();
    cands.sort();
    cands.dedup();

    let mut decision = ScheduleDecision {
        ego,
        policy,
        chosen: Vec::new(),
        benchmarks: Vec::new(),
        used_handshake: policy.uses_handshake(),
    };
    if cands.is_empty() {
        return Ok(decision);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    decision.chosen = match policy {
        Policy::NoFusion => Vec::new(),
        Policy::ClosestAgent => vec![closest(ego, &cands, frame)?],
        Policy::SingleRandom => vec![cands[rng.random_range(0..cands.len())]],
        Policy::MultipleRandom { k } => {
            let k = k.min(cands.len());
            let mut picked: Vec<AgentId> = index::sample(&mut rng, cands.len(), k)
                .iter()
                .map(|i| cands[i])
                .collect();
            picked.sort();
            picked
        }
        Policy::FullCommunication => cands.clone(),
        Policy::HistoricalBest => {
            decision.benchmarks = cands
                .iter()
                .filter_map(|c| state.last_gains.get(c).map(|g| (*c, *g)))
                .collect();
            let mut best: Option<(u32, AgentId)> = None;
            for &(c, g) in &decision.benchmarks {
                if best.is_none_or(|(bg, _)| g > bg) {
                    best = Some((g, c));
                }
            }
            match best {
                Some((_, c)) => vec![c],
                None => vec![closest(ego, &cands, frame)?],
            }
        }
        Policy::MassUcb { beta } => {
            if let Some(&fresh) = cands.iter().find(|c| state.arm(**c).pulls == 0) {
                vec![fresh]
            } else {
                let mut best: Option<(f64, AgentId)> = None;
                for &c in &cands {
                    let idx = ucb_index(state.arm(c), state.rounds, beta);
                    if best.is_none_or(|(bi, _)| idx > bi) {
                        best = Some((idx, c));
                    }
                }
                vec![best.expect("candidates nonempty").1]
            }
        }
    };
    Ok(decision)
}

/// Folds the realized per-cooperator gains of one round into `state`.
pub fn update_state(
    state: &mut PolicyState,
    decision: &ScheduleDecision,
    realized_gains: &BTreeMap<AgentId, u32>,
) -> Result<(), SchedulingError> {
    if let Some(extra) = realized_gains.keys().find(|c| !decision.chosen.contains(c)) {
        return Err(SchedulingError::UnchosenGain(*extra));
    }
    if let Some(missing) = decision
        .chosen
        .iter()
        .find(|c| !realized_gains.contains_key(c))
    {
        return Err(SchedulingError::MissingGain(*missing));
    }
    state.rounds += 1;
    for (&c, &g) in realized_gains {
        let arm = state.arms.entry(c).or_default();
        arm.pulls += 1;
        arm.mean_gain += (g as f64 - arm.mean_gain) / arm.pulls as f64;
    }
    if let Some(&first) = decision.chosen.first() {
        state.last_cooperator = Some(first);
    }
    if decision.used_handshake {
        state.last_gains.extend(decision.benchmarks.iter().copied());
    }
    Ok(())
}

/// Outcome of a stationary bandit run.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditRun {
    /// Cumulative pseudo-regret after each round.
    pub cumulative_regret: Vec<f64>,
    pub pulls: Vec<u64>,
}

impl BanditRun {
    pub fn regret_at(&self, rounds: usize) -> f64 {
        if rounds == 0 {
            0.0
        } else {
            self.cumulative_regret[rounds - 1]
        }
    }
}

/// Runs the UCB policy against arms paying `scale` with probability
/// `success[i]` and zero otherwise.
pub fn simulate_stationary_ucb(
    success: &[f64],
    scale: u32,
    rounds: usize,
    beta: f64,
    seed: u64,
) -> BanditRun {
    let ego = AgentId(0);
    let arms: Vec<AgentId> = (1..=success.len() as u32).map(AgentId).collect();
    let frame = Frame::new(0, Vec::new(), Vec::new());
    let best = success.iter().copied().fold(f64::NEG_INFINITY, f64::max) * scale as f64;
    let mut reward_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fba_4d17);
    let mut state = PolicyState::new();
    let mut regret = 0.0;
    let mut cumulative_regret = Vec::with_capacity(rounds);
    let mut pulls = vec![0u64; success.len()];
    for t in 0..rounds {
        let d = schedule(
            Policy::MassUcb { beta },
            ego,
            &arms,
            &frame,
            &state,
            seed.wrapping_add(t as u64),
        )
        .expect("ucb never consults the frame");
        let arm = d.chosen[0];
        let i = (arm.0 - 1) as usize;
        pulls[i] += 1;
        let gain = if reward_rng.random_bool(success[i]) {
            scale
        } else {
            0
        };
        regret += best - success[i] * scale as f64;
        cumulative_regret.push(regret);
        update_state(&mut state, &d, &BTreeMap::from([(arm, gain)])).expect("gain for chosen arm");
    }
    BanditRun {
        cumulative_regret,
        pulls,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Agent, AgentKind, BoxSize, Pose, Vec2};
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};

    fn frame_with_distances(ds: &[f64]) -> Frame {
        let mut agents = vec![Agent::new(
            AgentId(0),
            AgentKind::ControlledCav,
            Pose::origin(),
            Vec2::ZERO,
            BoxSize::CAR,
        )];
        for (i, d) in ds.iter().enumerate() {
            agents.push(Agent::new(
                AgentId(i as u32 + 1),
                AgentKind::UncontrolledCav,
                Pose::planar(*d, 0.0, 0.0),
                Vec2::ZERO,
                BoxSize::CAR,
            ));
        }
        Frame::new(0, agents, vec![])
    }

    fn ids(n: u32) -> Vec<AgentId> {
        (1..=n).map(AgentId).collect()
    }

    const SELECTING: [Policy; 6] = [
        Policy::ClosestAgent,
        Policy::SingleRandom,
        Policy::MultipleRandom { k: 2 },
        Policy::FullCommunication,
        Policy::HistoricalBest,
        Policy::MassUcb { beta: 1.0 },
    ];

    #[test]
    fn forced_choice() {
        let f = frame_with_distances(&[10.0]);
        for p in SELECTING {
            let d = schedule(p, AgentId(0), &ids(1), &f, &PolicyState::new(), 3).unwrap();
            assert_eq!(d.chosen, vec![AgentId(1)], "{p}");
        }
        let d = schedule(
            Policy::NoFusion,
            AgentId(0),
            &ids(1),
            &f,
            &PolicyState::new(),
            3,
        )
        .unwrap();
        assert!(d.chosen.is_empty());
    }

    #[test]
    fn empty_candidates_degenerate() {
        let f = frame_with_distances(&[]);
        for p in SELECTING {
            let d = schedule(p, AgentId(0), &[], &f, &PolicyState::new(), 0).unwrap();
            assert!(d.chosen.is_empty());
        }
    }

    #[test]
    fn closest_agent_argmin() {
        let f = frame_with_distances(&[8.0, 15.0, 3.0]);
        let d = schedule(
            Policy::ClosestAgent,
            AgentId(0),
            &ids(3),
            &f,
            &PolicyState::new(),
            0,
        )
        .unwrap();
        assert_eq!(d.chosen, vec![AgentId(3)]);
    }

    #[test]
    fn closest_agent_tie_smallest_id() {
        let f = frame_with_distances(&[5.0, 5.0]);
        let rev = [AgentId(2), AgentId(1)];
        let d = schedule(
            Policy::ClosestAgent,
            AgentId(0),
            &rev,
            &f,
            &PolicyState::new(),
            0,
        )
        .unwrap();
        assert_eq!(d.chosen, vec![AgentId(1)]);
    }

    #[test]
    fn ucb_example() {
        let mut state = PolicyState::new();
        state.rounds = 10;
        state.arms.insert(
            AgentId(1),
            ArmStats {
                pulls: 5,
                mean_gain: 2.0,
            },
        );
        state.arms.insert(
            AgentId(2),
            ArmStats {
                pulls: 5,
                mean_gain: 1.0,
            },
        );
        let bonus = (2.0 * 10f64.ln() / 5.0).sqrt();
        assert!((bonus - 0.96).abs() < 0.005);
        assert!((ucb_index(state.arm(AgentId(1)), 10, 1.0) - (2.0 + bonus)).abs() < 1e-12);
        let f = frame_with_distances(&[1.0, 2.0]);
        let d = schedule(
            Policy::MassUcb { beta: 1.0 },
            AgentId(0),
            &ids(2),
            &f,
            &state,
            0,
        )
        .unwrap();
        assert_eq!(d.chosen, vec![AgentId(1)]);
        assert!(d.benchmarks.is_empty() && !d.used_handshake);
    }

    #[test]
    fn ucb_unpulled_first_in_id_order() {
        let mut state = PolicyState::new();
        state.rounds = 3;
        state.arms.insert(
            AgentId(1),
            ArmStats {
                pulls: 3,
                mean_gain: 100.0,
            },
        );
        let f = frame_with_distances(&[1.0, 2.0, 3.0]);
        let d = schedule(
            Policy::MassUcb { beta: 1.0 },
            AgentId(0),
            &ids(3),
            &f,
            &state,
            0,
        )
        .unwrap();
        assert_eq!(d.chosen, vec![AgentId(2)]);
    }

    #[test]
    fn historical_best_uses_gain_table_and_falls_back() {
        let f = frame_with_distances(&[8.0, 15.0, 3.0]);
        let mut state = PolicyState::new();
        let d = schedule(Policy::HistoricalBest, AgentId(0), &ids(3), &f, &state, 0).unwrap();
        assert_eq!(d.chosen, vec![AgentId(3)]);
        state.record_handshake(&[(AgentId(1), 4), (AgentId(2), 9), (AgentId(3), 9)]);
        let d = schedule(Policy::HistoricalBest, AgentId(0), &ids(3), &f, &state, 0).unwrap();
        assert_eq!(d.chosen, vec![AgentId(2)]);
        assert_eq!(d.benchmarks.len(), 3);
    }

    #[test]
    fn multiple_random_clips_k() {
        let f = frame_with_distances(&[1.0, 2.0, 3.0]);
        let d = schedule(
            Policy::MultipleRandom { k: 10 },
            AgentId(0),
            &ids(3),
            &f,
            &PolicyState::new(),
            9,
        )
        .unwrap();
        assert_eq!(d.chosen, ids(3));
        let d = schedule(
            Policy::MultipleRandom { k: 2 },
            AgentId(0),
            &ids(3),
            &f,
            &PolicyState::new(),
            9,
        )
        .unwrap();
        assert_eq!(d.chosen.len(), 2);
        assert!(d.chosen[0] < d.chosen[1]);
    }

    #[test]
    fn invalid_parameters() {
        let f = frame_with_distances(&[1.0]);
        assert!(schedule(
            Policy::MultipleRandom { k: 0 },
            AgentId(0),
            &ids(1),
            &f,
            &PolicyState::new(),
            0
        )
        .is_err());
        assert!(schedule(
            Policy::MassUcb { beta: -1.0 },
            AgentId(0),
            &ids(1),
            &f,
            &PolicyState::new(),
            0
        )
        .is_err());
    }

    #[test]
    fn single_random_is_roughly_uniform() {
        let f = frame_with_distances(&[1.0, 2.0, 3.0, 4.0]);
        let mut counts = [0usize; 4];
        for seed in 0..4000 {
            let d = schedule(
                Policy::SingleRandom,
                AgentId(0),
                &ids(4),
                &f,
                &PolicyState::new(),
                seed,
            )
            .unwrap();
            counts[(d.chosen[0].0 - 1) as usize] += 1;
        }
        // binomial(4000, 1/4): sigma ~ 27
        assert!(
            counts.iter().all(|c| (*c as i64 - 1000).abs() < 135),
            "{counts:?}"
        );
    }

    #[test]
    fn running_mean_update() {
        let mut state = PolicyState::new();
        state.arms.insert(
            AgentId(1),
            ArmStats {
                pulls: 1,
                mean_gain: 2.0,
            },
        );
        let d = ScheduleDecision {
            ego: AgentId(0),
            policy: Policy::ClosestAgent,
            chosen: vec![AgentId(1)],
            benchmarks: vec![],
            used_handshake: false,
        };
        update_state(&mut state, &d, &BTreeMap::from([(AgentId(1), 4)])).unwrap();
        assert_eq!(
            state.arm(AgentId(1)),
            ArmStats {
                pulls: 2,
                mean_gain: 3.0
            }
        );
        assert_eq!(state.last_cooperator, Some(AgentId(1)));
        assert_eq!(state.rounds, 1);
    }

    #[test]
    fn no_fusion_round_only_counts() {
        let mut state = PolicyState::new();
        let f = frame_with_distances(&[1.0]);
        let d = schedule(Policy::NoFusion, AgentId(0), &ids(1), &f, &state, 0).unwrap();
        update_state(&mut state, &d, &BTreeMap::new()).unwrap();
        assert_eq!(state.rounds, 1);
        assert!(state.arms.is_empty());
    }

    #[test]
    fn gain_for_unchosen_rejected() {
        let mut state = PolicyState::new();
        let f = frame_with_distances(&[1.0, 2.0]);
        let d = schedule(Policy::ClosestAgent, AgentId(0), &ids(2), &f, &state, 0).unwrap();
        let err = update_state(
            &mut state,
            &d,
            &BTreeMap::from([(AgentId(1), 1), (AgentId(2), 1)]),
        )
        .unwrap_err();
        assert_eq!(err, SchedulingError::UnchosenGain(AgentId(2)));
        assert_eq!(state, PolicyState::new());
        let err = update_state(&mut state, &d, &BTreeMap::new()).unwrap_err();
        assert_eq!(err, SchedulingError::MissingGain(AgentId(1)));
    }

    #[test]
    fn stationary_means_converge() {
        // SingleRandom over two arms with Bernoulli(p) * 4 gains
        let p = [0.3, 0.7];
        let f = frame_with_distances(&[1.0, 2.0]);
        let mut state = PolicyState::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in 0..100 {
            let d = schedule(Policy::SingleRandom, AgentId(0), &ids(2), &f, &state, t).unwrap();
            let c = d.chosen[0];
            let g = if rng.random_bool(p[(c.0 - 1) as usize]) {
                4
            } else {
                0
            };
            update_state(&mut state, &d, &BTreeMap::from([(c, g)])).unwrap();
        }
        for (i, pi) in p.iter().enumerate() {
            let arm = state.arm(AgentId(i as u32 + 1));
            let mu = 4.0 * pi;
            let sigma = 4.0 * (pi * (1.0 - pi) / arm.pulls as f64).sqrt();
            assert!(
                (arm.mean_gain - mu).abs() <= 3.0 * sigma,
                "arm {i}: {arm:?}"
            );
        }
        assert_eq!(state.rounds, 100);
    }

    #[test]
    fn ucb_prefers_best_arm() {
        let run = simulate_stationary_ucb(&[0.9, 0.5, 0.2], 1, 1000, 1.0, 4);
        assert_eq!(run.pulls.iter().sum::<u64>(), 1000);
        assert!(run.pulls[0] > run.pulls[1] && run.pulls[1] > run.pulls[2]);
    }

    proptest! {
        #[test]
        fn decision_deterministic(seed in any::<u64>(), ds in prop::collection::vec(1.0..50.0f64, 1..8), k in 1usize..5) {
            let f = frame_with_distances(&ds);
            let c = ids(ds.len() as u32);
            for p in [Policy::SingleRandom, Policy::MultipleRandom { k }, Policy::ClosestAgent] {
                let a = schedule(p, AgentId(0), &c, &f, &PolicyState::new(), seed).unwrap();
                let b = schedule(p, AgentId(0), &c, &f, &PolicyState::new(), seed).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert!(a.chosen.iter().all(|x| c.contains(x)));
            }
        }

        #[test]
        fn historical_best_scale_invariant(gains in prop::collection::vec(0u32..50, 1..8), scale in 1u32..20) {
            let f = frame_with_distances(&vec![5.0; gains.len()]);
            let c = ids(gains.len() as u32);
            let mut s1 = PolicyState::new();
            s1.record_handshake(&c.iter().copied().zip(gains.iter().copied()).collect::<Vec<_>>());
            let mut s2 = PolicyState::new();
            s2.record_handshake(&c.iter().copied().zip(gains.iter().map(|g| g * scale)).collect::<Vec<_>>());
            let a = schedule(Policy::HistoricalBest, AgentId(0), &c, &f, &s1, 0).unwrap();
            let b = schedule(Policy::HistoricalBest, AgentId(0), &c, &f, &s2, 0).unwrap();
            prop_assert_eq!(a.chosen, b.chosen);
        }

        #[test]
        fn ucb_rounds_equal_total_pulls(rounds in 1usize..200, seed in any::<u64>()) {
            let run = simulate_stationary_ucb(&[0.6, 0.4], 3, rounds, 1.0, seed);
            prop_assert_eq!(run.pulls.iter().sum::<u64>(), rounds as u64);
        }
    }
}
