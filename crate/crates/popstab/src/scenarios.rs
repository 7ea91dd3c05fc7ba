//! Initial-configuration generators: canonical starts plus adversarial
//! configurations for exercising self-stabilization.

use thiserror::Error;

use crate::engine::{Configuration, Rng};
use crate::ranking_base::{LeaderElection, NonSSState, SpaceEfficientRanking};
use crate::stable_ranking::{
    index_to_state, ss_state_count, MainSub, SSParams, StableState, UnrankedRole,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("population size must be at least 2, got {0}")]
    InvalidPopulation(u32),
    #[error("duplicate rank {dup} invalid for n={n}: must be in [1, n-1]")]
    InvalidDuplicateRank { dup: u32, n: u32 },
    #[error("scenario {0} is not defined for the non-self-stabilizing protocol")]
    NotAvailableForNonSS(&'static str),
    #[error("unknown scenario kind {0:?}")]
    UnknownKind(String),
}

/// The supported initial configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Every agent freshly triggered: full reset counters, random coins.
    FreshTriggered,
    /// Every agent in the initial leader-election state, fair coins. For the
    /// non-self-stabilizing protocol this is the canonical all-electing start.
    AllElecting,
    /// n-1 agents ranked 2..=n plus one phase-1 agent with a full liveness
    /// counter: no valid ranking, no reset underway.
    Fig2Adversarial,
    /// A permutation of [n] with the rank-n holder overwritten by a
    /// duplicate value.
    DuplicateRanks,
    /// Ranks 1..=n-1 assigned and a single phase agent left over.
    LoneUnranked,
    /// Every agent drawn uniformly from the full representable state domain.
    RandomArbitrary,
}

impl ScenarioKind {
    pub fn parse(s: &str) -> Result<Self, ScenarioError> {
        match s {
            "fresh_triggered" => Ok(ScenarioKind::FreshTriggered),
            "all_electing" => Ok(ScenarioKind::AllElecting),
            "fig2" | "fig2_adversarial" => Ok(ScenarioKind::Fig2Adversarial),
            "duplicate_ranks" => Ok(ScenarioKind::DuplicateRanks),
            "lone_unranked" => Ok(ScenarioKind::LoneUnranked),
            "random_arbitrary" => Ok(ScenarioKind::RandomArbitrary),
            other => Err(ScenarioError::UnknownKind(other.to_string())),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ScenarioKind::FreshTriggered => "fresh_triggered",
            ScenarioKind::AllElecting => "all_electing",
            ScenarioKind::Fig2Adversarial => "fig2_adversarial",
            ScenarioKind::DuplicateRanks => "duplicate_ranks",
            ScenarioKind::LoneUnranked => "lone_unranked",
            ScenarioKind::RandomArbitrary => "random_arbitrary",
        }
    }
}

/// A scenario request: the kind, the population size, and the kind-specific
/// extras.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n: u32,
    /// Rank value written over the rank-n holder in `DuplicateRanks`;
    /// defaults to n/2.
    pub duplicate_rank: Option<u32>,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, n: u32) -> Self {
        ScenarioSpec {
            kind,
            n,
            duplicate_rank: None,
        }
    }
}

/// Builds an initial configuration for the self-stabilizing protocol.
pub fn build_stable(
    spec: &ScenarioSpec,
    params: &SSParams,
    rng: &mut Rng,
) -> Result<Configuration<StableState>, ScenarioError> {
    let n = spec.n;
    if n < 2 {
        return Err(ScenarioError::InvalidPopulation(n));
    }
    debug_assert_eq!(params.n, n);
    let states: Vec<StableState> = match spec.kind {
        ScenarioKind::FreshTriggered => (0..n)
            .map(|_| StableState::Unranked {
                coin: rng.coin(),
                role: UnrankedRole::Resetting {
                    reset_count: params.r_max,
                    delay_count: params.d_max,
                },
            })
            .collect(),
        ScenarioKind::AllElecting => (0..n)
            .map(|_| StableState::Unranked {
                coin: rng.coin(),
                role: UnrankedRole::Electing {
                    le_count: params.l_max,
                    coin_count: params.coin_count_max,
                    leader_done: false,
                    is_leader: false,
                },
            })
            .collect(),
        ScenarioKind::Fig2Adversarial => {
            let mut states = vec![StableState::Unranked {
                coin: rng.coin(),
                role: UnrankedRole::Main {
                    alive_count: params.l_max,
                    sub: MainSub::Phase { phase: 1 },
                },
            }];
            states.extend((2..=n).map(|rank| StableState::Ranked { rank }));
            states
        }
        ScenarioKind::DuplicateRanks => {
            let dup = spec.duplicate_rank.unwrap_or(n / 2).max(1);
            if dup >= n {
                return Err(ScenarioError::InvalidDuplicateRank { dup, n });
            }
            let mut states: Vec<StableState> =
                (1..n).map(|rank| StableState::Ranked { rank }).collect();
            states.push(StableState::Ranked { rank: dup });
            states
        }
        ScenarioKind::LoneUnranked => {
            let mut states: Vec<StableState> =
                (1..n).map(|rank| StableState::Ranked { rank }).collect();
            states.push(StableState::Unranked {
                coin: rng.coin(),
                role: UnrankedRole::Main {
                    alive_count: params.l_max,
                    sub: MainSub::Phase { phase: 1 },
                },
            });
            states
        }
        ScenarioKind::RandomArbitrary => {
            let domain = ss_state_count(params);
            (0..n)
                .map(|_| index_to_state(rng.bounded(domain), params))
                .collect()
        }
    };
    Ok(Configuration::new(states).expect("n >= 2 checked above"))
}

/// Builds an initial configuration for the non-self-stabilizing protocol.
/// Only the canonical all-electing start is defined for it.
pub fn build_nonss<L: LeaderElection>(
    spec: &ScenarioSpec,
    protocol: &SpaceEfficientRanking<L>,
) -> Result<Configuration<NonSSState>, ScenarioError> {
    if spec.n < 2 {
        return Err(ScenarioError::InvalidPopulation(spec.n));
    }
    debug_assert_eq!(protocol.params().n, spec.n);
    match spec.kind {
        ScenarioKind::AllElecting => {
            Ok(Configuration::new(protocol.initial_states()).expect("n >= 2 checked above"))
        }
        other => Err(ScenarioError::NotAvailableForNonSS(other.label())),
    }
}

/// Whether the non-self-stabilizing protocol defines this scenario.
pub fn nonss_supports(kind: ScenarioKind) -> bool {
    matches!(kind, ScenarioKind::AllElecting)
}
