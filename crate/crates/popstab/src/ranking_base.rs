//! The non-self-stabilizing ranking protocol.
//!
//! Ranks are assigned phase by phase. The schedule `f_1 > f_2 > ... > f_{K+1}`
//! splits `{2, ..., n}` into intervals `(f_{k+1}, f_k]`; in phase k the agent
//! currently holding the lowest live rank (the "unaware leader") hands out
//! exactly those ranks. Leader election runs first through a pluggable stage;
//! once its winner is done it turns into a waiting agent, counts down against
//! phase agents and then takes rank 1 to start assigning.

use thiserror::Error;

use crate::engine::Protocol;
use crate::util::{ceil_log2, ceil_scaled_log2};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamError {
    #[error("population size must be at least 2, got {0}")]
    InvalidPopulation(u32),
    #[error("{0} must be positive")]
    NonPositiveConstant(&'static str),
}

/// Rank boundaries per phase: `f[1] = n`, `f[i] = ceil(f[i-1] / 2)`, down to
/// `f[K+1] = 1` with `K = ceil(log2 n)` phases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseSchedule {
    f: Vec<u32>,
}

impl PhaseSchedule {
    pub fn new(n: u32) -> Result<Self, ParamError> {
        if n < 2 {
            return Err(ParamError::InvalidPopulation(n));
        }
        let k_max = ceil_log2(n) as usize;
        let mut f = Vec::with_capacity(k_max + 2);
        f.push(0); // index 0 unused; boundaries are 1-indexed
        f.push(n);
        for i in 2..=k_max + 1 {
            f.push(f[i - 1].div_ceil(2));
        }
        debug_assert_eq!(f[k_max], 2);
        debug_assert_eq!(f[k_max + 1], 1);
        Ok(PhaseSchedule { f })
    }

    /// Number of phases K.
    pub fn phase_count(&self) -> u32 {
        (self.f.len() - 2) as u32
    }

    /// Largest rank assigned in phase k, for k in [1, K+1].
    pub fn f(&self, k: u32) -> u32 {
        self.f[k as usize]
    }

    /// Count of ranks handed out in phase k: `f_k - f_{k+1}`.
    pub fn span(&self, k: u32) -> u32 {
        self.f(k) - self.f(k + 1)
    }
}

/// Parameters of the non-self-stabilizing protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct NonSSParams {
    pub n: u32,
    pub c_wait: f64,
    pub w_max: u32,
}

impl NonSSParams {
    pub fn new(n: u32, c_wait: f64) -> Result<Self, ParamError> {
        if n < 2 {
            return Err(ParamError::InvalidPopulation(n));
        }
        if c_wait <= 0.0 {
            return Err(ParamError::NonPositiveConstant("c_wait"));
        }
        let w_max = ceil_scaled_log2(c_wait, n).max(1);
        Ok(NonSSParams { n, c_wait, w_max })
    }

    /// Same as `new` but pins the waiting bound directly (used by the
    /// small-scale exhaustive checks).
    pub fn with_w_max(n: u32, c_wait: f64, w_max: u32) -> Result<Self, ParamError> {
        if w_max == 0 {
            return Err(ParamError::NonPositiveConstant("w_max"));
        }
        let mut p = Self::new(n, c_wait)?;
        p.w_max = w_max;
        Ok(p)
    }
}

/// Opaque leader-election substate; only the owning plugin interprets the
/// payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeState(pub u32);

/// Pluggable leader-election stage. The dispatcher hands two leader-electing
/// agents to `transition` and promotes whichever agent reports both
/// `is_leader` and `leader_done` into the waiting state.
pub trait LeaderElection {
    /// Substate for agent `agent` in the canonical initial configuration.
    fn initial(&self, agent: usize) -> LeState;

    /// Transition for two leader-electing agents. Each side carries
    /// (substate, leader_done).
    fn transition(
        &self,
        u: (LeState, bool),
        v: (LeState, bool),
    ) -> ((LeState, bool), (LeState, bool));

    /// Whether this substate has declared itself leader.
    fn is_leader(&self, s: LeState) -> bool;

    /// Nominal substate-space size reported to the state audit.
    fn state_count(&self) -> u64;
}

const ORACLE_ORDINARY: u32 = u32::MAX;

/// Deterministic stand-in for a real leader-election protocol.
///
/// Agent 0 is designated; on its `ceil(log2 n)`-th interaction with another
/// leader-electing agent it sets `leader_done` and declares itself leader.
/// Every other agent stays a non-leader forever. The countdown lives in the
/// substate payload but is oracle bookkeeping, not protocol memory, so the
/// audit counts the two roles (designated, ordinary).
#[derive(Debug, Clone)]
pub struct OracleLeaderElection {
    meetings: u32,
}

impl OracleLeaderElection {
    pub fn new(n: u32) -> Self {
        OracleLeaderElection {
            meetings: ceil_log2(n.max(2)),
        }
    }
}

impl LeaderElection for OracleLeaderElection {
    fn initial(&self, agent: usize) -> LeState {
        if agent == 0 {
            LeState(self.meetings)
        } else {
            LeState(ORACLE_ORDINARY)
        }
    }

    fn transition(
        &self,
        u: (LeState, bool),
        v: (LeState, bool),
    ) -> ((LeState, bool), (LeState, bool)) {
        let advance = |(s, done): (LeState, bool)| {
            if s.0 == ORACLE_ORDINARY {
                return (s, done);
            }
            let left = s.0.saturating_sub(1);
            (LeState(left), done || left == 0)
        };
        (advance(u), advance(v))
    }

    fn is_leader(&self, s: LeState) -> bool {
        s.0 != ORACLE_ORDINARY && s.0 == 0
    }

    fn state_count(&self) -> u64 {
        2
    }
}

/// Agent state of the non-self-stabilizing protocol: exactly one live role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NonSSState {
    LeaderElecting { le: LeState, leader_done: bool },
    Waiting { wait_count: u32 },
    Phase { phase: u32 },
    Ranked { rank: u32 },
}

impl NonSSState {
    pub fn rank(&self) -> Option<u32> {
        match self {
            NonSSState::Ranked { rank } => Some(*rank),
            _ => None,
        }
    }

    fn is_leader_electing(&self) -> bool {
        matches!(self, NonSSState::LeaderElecting { .. })
    }
}

/// Projection of an agent onto the rank-assignment machinery, shared with
/// the self-stabilizing variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RankingRole {
    Ranked(u32),
    Waiting(u32),
    Phase(u32),
}

pub(crate) struct RankingStep {
    pub u: RankingRole,
    pub v: RankingRole,
    pub u_became_waiting: bool,
}

/// The core ranking interaction.
///
/// If the responder is not a phase agent nothing happens. Otherwise, by the
/// initiator's role: a ranked initiator may assign the responder the next
/// rank of the responder's phase (and either advances its own rank or, at
/// the end of a non-final phase, starts waiting), and tells responders of a
/// finished phase to advance; a phase initiator merges phases to the
/// maximum; a waiting initiator counts the meeting down and takes rank 1 at
/// zero.
pub(crate) fn ranking_step(
    u: RankingRole,
    v: RankingRole,
    sched: &PhaseSchedule,
    w_max: u32,
) -> RankingStep {
    let RankingRole::Phase(k) = v else {
        return RankingStep {
            u,
            v,
            u_became_waiting: false,
        };
    };
    match u {
        RankingRole::Ranked(r) => {
            let span = sched.span(k);
            let mut new_u = u;
            let mut new_v = v;
            let mut became_waiting = false;
            if r <= span {
                new_v = RankingRole::Ranked(sched.f(k + 1) + r);
                if r < span {
                    new_u = RankingRole::Ranked(r + 1);
                } else if k < sched.phase_count() {
                    new_u = RankingRole::Waiting(w_max);
                    became_waiting = true;
                }
                // r == span in the final phase: the leader keeps rank 1.
            }
            if r == sched.f(k) {
                // v saw the largest rank of its phase; mutually exclusive
                // with the branch above since span < f(k). Phases are capped
                // at K so adversarial states cannot push the counter out of
                // its domain.
                if k < sched.phase_count() {
                    new_v = RankingRole::Phase(k + 1);
                }
            }
            RankingStep {
                u: new_u,
                v: new_v,
                u_became_waiting: became_waiting,
            }
        }
        RankingRole::Phase(p) => {
            let m = p.max(k);
            RankingStep {
                u: RankingRole::Phase(m),
                v: RankingRole::Phase(m),
                u_became_waiting: false,
            }
        }
        RankingRole::Waiting(w) => {
            let new_u = if w <= 1 {
                RankingRole::Ranked(1)
            } else {
                RankingRole::Waiting(w - 1)
            };
            RankingStep {
                u: new_u,
                v,
                u_became_waiting: false,
            }
        }
    }
}

fn to_role(s: &NonSSState) -> Option<RankingRole> {
    match s {
        NonSSState::Ranked { rank } => Some(RankingRole::Ranked(*rank)),
        NonSSState::Waiting { wait_count } => Some(RankingRole::Waiting(*wait_count)),
        NonSSState::Phase { phase } => Some(RankingRole::Phase(*phase)),
        NonSSState::LeaderElecting { .. } => None,
    }
}

fn from_role(r: RankingRole) -> NonSSState {
    match r {
        RankingRole::Ranked(rank) => NonSSState::Ranked { rank },
        RankingRole::Waiting(wait_count) => NonSSState::Waiting { wait_count },
        RankingRole::Phase(phase) => NonSSState::Phase { phase },
    }
}

/// The ranking transition for two non-leader-electing agents.
pub fn ranking_transition(
    u: &NonSSState,
    v: &NonSSState,
    sched: &PhaseSchedule,
    params: &NonSSParams,
) -> (NonSSState, NonSSState) {
    debug_assert!(!u.is_leader_electing() && !v.is_leader_electing());
    let (Some(ru), Some(rv)) = (to_role(u), to_role(v)) else {
        return (*u, *v);
    };
    let out = ranking_step(ru, rv, sched, params.w_max);
    (from_role(out.u), from_role(out.v))
}

/// Full dispatcher: leader election, the winner's hand-off to waiting, the
/// phase-1 start epidemic, and the ranking protocol.
pub fn space_efficient_transition<L: LeaderElection>(
    u: &NonSSState,
    v: &NonSSState,
    le: &L,
    sched: &PhaseSchedule,
    params: &NonSSParams,
) -> (NonSSState, NonSSState) {
    let mut new_u = *u;
    let mut new_v = *v;

    if let (
        NonSSState::LeaderElecting {
            le: su,
            leader_done: du,
        },
        NonSSState::LeaderElecting {
            le: sv,
            leader_done: dv,
        },
    ) = (&new_u, &new_v)
    {
        let ((su, du), (sv, dv)) = le.transition((*su, *du), (*sv, *dv));
        new_u = NonSSState::LeaderElecting {
            le: su,
            leader_done: du,
        };
        new_v = NonSSState::LeaderElecting {
            le: sv,
            leader_done: dv,
        };
    }

    // The finished leader becomes a waiting agent and the interaction ends.
    let done_leader = |s: &NonSSState| match s {
        NonSSState::LeaderElecting {
            le: st,
            leader_done,
        } => *leader_done && le.is_leader(*st),
        _ => false,
    };
    if done_leader(&new_u) {
        return (
            NonSSState::Waiting {
                wait_count: params.w_max,
            },
            new_v,
        );
    }
    if done_leader(&new_v) {
        return (
            new_u,
            NonSSState::Waiting {
                wait_count: params.w_max,
            },
        );
    }

    match (new_u.is_leader_electing(), new_v.is_leader_electing()) {
        (true, false) => (NonSSState::Phase { phase: 1 }, new_v),
        (false, true) => (new_u, NonSSState::Phase { phase: 1 }),
        (false, false) => ranking_transition(&new_u, &new_v, sched, params),
        (true, true) => (new_u, new_v),
    }
}

/// Exact size of the representable state domain:
/// n ranks + waiting counters + phase counters + 2 * |Q_LE|.
pub fn nonss_state_count<L: LeaderElection>(params: &NonSSParams, le: &L) -> u64 {
    u64::from(params.n)
        + u64::from(params.w_max)
        + u64::from(ceil_log2(params.n))
        + 2 * le.state_count()
}

/// Membership in the start-ranking configuration class: exactly one waiting
/// agent with a full counter, everyone else in phase 1 or still electing a
/// leader without having won, and nobody ranked.
pub fn is_start_ranking_config<L: LeaderElection>(
    states: &[NonSSState],
    params: &NonSSParams,
    le: &L,
) -> bool {
    let mut waiting_full = 0usize;
    for s in states {
        match s {
            NonSSState::Waiting { wait_count } if *wait_count == params.w_max => waiting_full += 1,
            NonSSState::Waiting { .. } => return false,
            NonSSState::Phase { phase } if *phase == 1 => {}
            NonSSState::Phase { .. } => return false,
            NonSSState::LeaderElecting { le: st, .. } if !le.is_leader(*st) => {}
            NonSSState::LeaderElecting { .. } => return false,
            NonSSState::Ranked { .. } => return false,
        }
    }
    waiting_full == 1
}

/// The complete non-self-stabilizing protocol with its leader-election
/// plugin, packaged for the engine.
#[derive(Debug, Clone)]
pub struct SpaceEfficientRanking<L> {
    params: NonSSParams,
    schedule: PhaseSchedule,
    le: L,
}

impl<L: LeaderElection> SpaceEfficientRanking<L> {
    pub fn new(params: NonSSParams, le: L) -> Result<Self, ParamError> {
        let schedule = PhaseSchedule::new(params.n)?;
        Ok(SpaceEfficientRanking {
            params,
            schedule,
            le,
        })
    }

    pub fn params(&self) -> &NonSSParams {
        &self.params
    }

    pub fn schedule(&self) -> &PhaseSchedule {
        &self.schedule
    }

    pub fn le(&self) -> &L {
        &self.le
    }

    /// Canonical initial configuration: every agent leader-electing.
    pub fn initial_states(&self) -> Vec<NonSSState> {
        (0..self.params.n as usize)
            .map(|i| NonSSState::LeaderElecting {
                le: self.le.initial(i),
                leader_done: false,
            })
            .collect()
    }
}

impl<L: LeaderElection> Protocol for SpaceEfficientRanking<L> {
    type State = NonSSState;

    fn transition(&self, u: &NonSSState, v: &NonSSState) -> (NonSSState, NonSSState) {
        space_efficient_transition(u, v, &self.le, &self.schedule, &self.params)
    }

    fn rank(&self, s: &NonSSState) -> Option<u32> {
        s.rank()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn params8() -> (NonSSParams, PhaseSchedule) {
        let p = NonSSParams::new(8, 2.0).unwrap();
        let s = PhaseSchedule::new(8).unwrap();
        (p, s)
    }

    #[test]
    fn schedule_256() {
        let s = PhaseSchedule::new(256).unwrap();
        assert_eq!(s.phase_count(), 8);
        let fs: Vec<u32> = (1..=9).map(|k| s.f(k)).collect();
        assert_eq!(fs, vec![256, 128, 64, 32, 16, 8, 4, 2, 1]);
    }

    #[test]
    fn schedule_7() {
        let s = PhaseSchedule::new(7).unwrap();
        assert_eq!(s.phase_count(), 3);
        let fs: Vec<u32> = (1..=4).map(|k| s.f(k)).collect();
        assert_eq!(fs, vec![7, 4, 2, 1]);
        // Phase ranges: phase 1 -> {5,6,7}, phase 2 -> {3,4}, phase 3 -> {2}.
        assert_eq!((s.f(2) + 1, s.f(1)), (5, 7));
        assert_eq!((s.f(3) + 1, s.f(2)), (3, 4));
        assert_eq!((s.f(4) + 1, s.f(3)), (2, 2));
    }

    #[test]
    fn schedule_2() {
        let s = PhaseSchedule::new(2).unwrap();
        assert_eq!(s.phase_count(), 1);
        assert_eq!(s.f(1), 2);
        assert_eq!(s.f(2), 1);
    }

    #[test]
    fn schedule_rejects_small_n() {
        assert!(PhaseSchedule::new(0).is_err());
        assert!(PhaseSchedule::new(1).is_err());
    }

    #[test]
    fn schedule_partitions_ranks() {
        // The intervals (f_{k+1}, f_k] partition {2, ..., n}.
        for n in 2..=4096u32 {
            let s = PhaseSchedule::new(n).unwrap();
            let mut covered = vec![false; n as usize + 1];
            for k in 1..=s.phase_count() {
                assert!(s.f(k) > s.f(k + 1), "n={n} k={k}");
                for r in s.f(k + 1) + 1..=s.f(k) {
                    assert!(!covered[r as usize], "n={n} rank {r} covered twice");
                    covered[r as usize] = true;
                }
            }
            assert!((2..=n).all(|r| covered[r as usize]), "n={n} gap");
            assert_eq!(s.f(s.phase_count() + 1), 1);
        }
    }

    #[test]
    fn ranked_initiator_assigns_and_advances() {
        let (p, s) = params8();
        let u = NonSSState::Ranked { rank: 3 };
        let v = NonSSState::Phase { phase: 1 };
        let (nu, nv) = ranking_transition(&u, &v, &s, &p);
        assert_eq!(nu, NonSSState::Ranked { rank: 4 });
        assert_eq!(nv, NonSSState::Ranked { rank: 7 });
    }

    #[test]
    fn ranked_initiator_ends_phase_and_waits() {
        let (p, s) = params8();
        let u = NonSSState::Ranked { rank: 4 };
        let v = NonSSState::Phase { phase: 1 };
        let (nu, nv) = ranking_transition(&u, &v, &s, &p);
        // 4 = f1 - f2 and phase 1 < K = 3: leader hands out rank 8 and waits.
        assert_eq!(nv, NonSSState::Ranked { rank: 8 });
        assert_eq!(nu, NonSSState::Waiting { wait_count: 6 });
    }

    #[test]
    fn last_rank_of_phase_bumps_responder() {
        let (p, s) = params8();
        let u = NonSSState::Ranked { rank: 8 };
        let v = NonSSState::Phase { phase: 1 };
        let (nu, nv) = ranking_transition(&u, &v, &s, &p);
        assert_eq!(nu, u);
        assert_eq!(nv, NonSSState::Phase { phase: 2 });
    }

    #[test]
    fn phase_agents_broadcast_max() {
        let (p, s) = params8();
        let u = NonSSState::Phase { phase: 3 };
        let v = NonSSState::Phase { phase: 1 };
        let (nu, nv) = ranking_transition(&u, &v, &s, &p);
        assert_eq!(nu, NonSSState::Phase { phase: 3 });
        assert_eq!(nv, NonSSState::Phase { phase: 3 });
    }

    #[test]
    fn waiting_initiator_counts_down_to_rank_one() {
        let (p, s) = params8();
        let u = NonSSState::Waiting { wait_count: 1 };
        let v = NonSSState::Phase { phase: 2 };
        let (nu, nv) = ranking_transition(&u, &v, &s, &p);
        assert_eq!(nu, NonSSState::Ranked { rank: 1 });
        assert_eq!(nv, v);
    }

    #[test]
    fn ranked_responder_is_untouched() {
        let (p, s) = params8();
        let u = NonSSState::Waiting { wait_count: 3 };
        let v = NonSSState::Ranked { rank: 5 };
        assert_eq!(ranking_transition(&u, &v, &s, &p), (u, v));
    }

    #[test]
    fn final_phase_leader_keeps_rank_one() {
        let p = NonSSParams::new(2, 2.0).unwrap();
        let s = PhaseSchedule::new(2).unwrap();
        let u = NonSSState::Ranked { rank: 1 };
        let v = NonSSState::Phase { phase: 1 };
        let (nu, nv) = ranking_transition(&u, &v, &s, &p);
        assert_eq!(nu, NonSSState::Ranked { rank: 1 });
        assert_eq!(nv, NonSSState::Ranked { rank: 2 });
    }

    fn proto(n: u32) -> SpaceEfficientRanking<OracleLeaderElection> {
        SpaceEfficientRanking::new(
            NonSSParams::new(n, 2.0).unwrap(),
            OracleLeaderElection::new(n),
        )
        .unwrap()
    }

    #[test]
    fn done_leader_becomes_waiting_and_interaction_ends() {
        let p = proto(8);
        let u = NonSSState::LeaderElecting {
            le: LeState(0),
            leader_done: true,
        };
        for v in [
            NonSSState::Phase { phase: 1 },
            NonSSState::Ranked { rank: 3 },
            NonSSState::LeaderElecting {
                le: LeState(ORACLE_ORDINARY),
                leader_done: false,
            },
        ] {
            let (nu, nv) = p.transition(&u, &v);
            assert_eq!(nu, NonSSState::Waiting { wait_count: 6 });
            assert_eq!(nv, v, "responder untouched");
        }
    }

    #[test]
    fn non_leader_joins_phase_one() {
        let p = proto(8);
        let u = NonSSState::LeaderElecting {
            le: LeState(ORACLE_ORDINARY),
            leader_done: true,
        };
        let v = NonSSState::Phase { phase: 1 };
        let (nu, nv) = p.transition(&u, &v);
        assert_eq!(nu, NonSSState::Phase { phase: 1 });
        assert_eq!(nv, v);
    }

    #[test]
    fn main_pairs_delegate_to_ranking() {
        let p = proto(4);
        let u = NonSSState::Ranked { rank: 2 };
        let v = NonSSState::Phase { phase: 1 };
        let (nu, nv) = p.transition(&u, &v);
        // n=4: f = [4,2,1], span(1) = 2: rank 2 assigns f2+2 = 4 and waits.
        assert_eq!(nv, NonSSState::Ranked { rank: 4 });
        assert_eq!(nu, NonSSState::Waiting { wait_count: 4 });
    }

    #[test]
    fn oracle_counts_meetings_then_declares() {
        let le = OracleLeaderElection::new(8);
        let mut s = (le.initial(0), false);
        let other = (le.initial(1), false);
        for i in 0..3 {
            assert!(!s.1, "not done after {i} meetings");
            assert!(!le.is_leader(s.0));
            let (ns, no) = le.transition(s, other);
            assert_eq!(no, other, "ordinary agents never change");
            s = ns;
        }
        assert!(s.1);
        assert!(le.is_leader(s.0));
    }

    #[test]
    fn state_count_formula() {
        let p = NonSSParams::new(256, 2.0).unwrap();
        assert_eq!(nonss_state_count(&p, &OracleLeaderElection::new(256)), 284);
        let p = NonSSParams::new(1024, 2.0).unwrap();
        assert_eq!(
            nonss_state_count(&p, &OracleLeaderElection::new(1024)),
            1058
        );
    }

    #[test]
    fn state_count_overhead_ratio_bounded() {
        // (count - n) / log2(n) = c_wait + 1 + 2|Q_LE|/log2(n) stays below 4.
        for exp in 7..=13u32 {
            let n = 1u32 << exp;
            let p = NonSSParams::new(n, 2.0).unwrap();
            let count = nonss_state_count(&p, &OracleLeaderElection::new(n));
            let ratio = (count - u64::from(n)) as f64 / f64::from(exp);
            assert!(ratio <= 4.0, "n={n} ratio={ratio}");
        }
    }

    #[test]
    fn start_ranking_membership() {
        let p = NonSSParams::new(8, 2.0).unwrap();
        let le = OracleLeaderElection::new(8);
        let full = NonSSState::Waiting {
            wait_count: p.w_max,
        };
        let phase1 = NonSSState::Phase { phase: 1 };

        let mut states = vec![full];
        states.extend(std::iter::repeat_n(phase1, 7));
        assert!(is_start_ranking_config(&states, &p, &le));

        let mut two_waiting = states.clone();
        two_waiting[1] = full;
        assert!(!is_start_ranking_config(&two_waiting, &p, &le));

        let mut partial = states.clone();
        partial[0] = NonSSState::Waiting {
            wait_count: p.w_max - 1,
        };
        assert!(!is_start_ranking_config(&partial, &p, &le));

        // Leader-electing non-winners are allowed.
        let mut with_le = states.clone();
        with_le[3] = NonSSState::LeaderElecting {
            le: LeState(ORACLE_ORDINARY),
            leader_done: false,
        };
        assert!(is_start_ranking_config(&with_le, &p, &le));

        let mut ranked = states;
        ranked[3] = NonSSState::Ranked { rank: 2 };
        assert!(!is_start_ranking_config(&ranked, &p, &le));
    }

    /// Exhaustive reachability from the canonical start-ranking
    /// configuration at tiny scale.
    ///
    /// The protocol's no-duplicate guarantee is probabilistic, not
    /// adversarial: a schedule that lets the waiting leader finish its
    /// countdown before the phase-advance notice reaches the last phase
    /// agent produces a duplicate (e.g. at n=3 the leader re-assigns rank
    /// 3). The exhaustive check therefore pins the properties that hold on
    /// every schedule: counters stay in bounds, the leader lineage is
    /// unique (never two waiting agents, never two agents below the
    /// current assignment boundary), and every duplicate-free
    /// configuration can still reach a valid silent ranking. Duplicate
    /// configurations are dead ends by design here; the self-stabilizing
    /// variant adds the detection and reset that repairs them.
    #[test]
    fn exhaustive_small_scale_safety() {
        for n in 2..=5u32 {
            let params = NonSSParams::with_w_max(n, 2.0, 2).unwrap();
            let sched = PhaseSchedule::new(n).unwrap();
            let le = OracleLeaderElection::new(n);

            let mut start: Vec<NonSSState> = vec![NonSSState::Waiting { wait_count: 2 }];
            start.extend((1..n).map(|_| NonSSState::Phase { phase: 1 }));
            start.sort_unstable();

            let mut ids: HashMap<Vec<NonSSState>, usize> = HashMap::new();
            let mut configs: Vec<Vec<NonSSState>> = vec![start.clone()];
            let mut edges: Vec<Vec<usize>> = Vec::new();
            ids.insert(start, 0);
            let mut next_unexplored = 0usize;
            while next_unexplored < configs.len() {
                let config = configs[next_unexplored].clone();
                let mut out = Vec::new();
                for i in 0..config.len() {
                    for j in 0..config.len() {
                        if i == j {
                            continue;
                        }
                        let (nu, nv) = space_efficient_transition(
                            &config[i], &config[j], &le, &sched, &params,
                        );
                        let mut next = config.clone();
                        next[i] = nu;
                        next[j] = nv;
                        next.sort_unstable();
                        let id = *ids.entry(next.clone()).or_insert_with(|| {
                            configs.push(next);
                            configs.len() - 1
                        });
                        out.push(id);
                    }
                }
                edges.push(out);
                next_unexplored += 1;
            }

            let has_duplicate = |c: &[NonSSState]| {
                let mut ranks: Vec<u32> = c.iter().filter_map(|s| s.rank()).collect();
                let total = ranks.len();
                ranks.sort_unstable();
                ranks.dedup();
                ranks.len() != total
            };
            let is_valid = |c: &[NonSSState]| {
                let mut ranks: Vec<u32> = c.iter().filter_map(|s| s.rank()).collect();
                ranks.sort_unstable();
                ranks.len() == c.len() && ranks.iter().zip(1..).all(|(&r, i)| r == i)
            };

            // Safety facts that hold on every schedule.
            for config in &configs {
                let waiting = config
                    .iter()
                    .filter(|s| matches!(s, NonSSState::Waiting { .. }))
                    .count();
                assert!(waiting <= 1, "two waiting agents at n={n}: {config:?}");
                for s in config {
                    match s {
                        NonSSState::Waiting { wait_count } => {
                            assert!((1..=params.w_max).contains(wait_count))
                        }
                        NonSSState::Phase { phase } => {
                            assert!((1..=sched.phase_count()).contains(phase))
                        }
                        NonSSState::Ranked { rank } => assert!((1..=n).contains(rank)),
                        NonSSState::LeaderElecting { .. } => {
                            panic!("leader election reappeared: {config:?}")
                        }
                    }
                }
            }

            // Backward reachability from the valid rankings: every
            // duplicate-free configuration can still stabilize.
            let mut can_stabilize = vec![false; configs.len()];
            for (id, c) in configs.iter().enumerate() {
                can_stabilize[id] = is_valid(c);
            }
            loop {
                let mut changed = false;
                for id in 0..configs.len() {
                    if !can_stabilize[id] && edges[id].iter().any(|&t| can_stabilize[t]) {
                        can_stabilize[id] = true;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            for (id, c) in configs.iter().enumerate() {
                if !has_duplicate(c) {
                    assert!(
                        can_stabilize[id],
                        "duplicate-free config cannot stabilize at n={n}: {c:?}"
                    );
                }
            }
            assert!(
                configs.iter().any(|c| is_valid(c)),
                "no valid ranking reachable at n={n}"
            );
        }
    }
}
