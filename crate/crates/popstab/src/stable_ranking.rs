//! The self-stabilizing ranking stack.
//!
//! The base ranking machinery is wrapped with error detection and a global
//! reset: duplicate ranks, two waiting agents, or an expired liveness
//! counter trigger a reset epidemic that drives the whole population back
//! into leader election, after which ranking restarts from scratch. Ranked
//! agents carry nothing but their rank; every unranked agent carries a
//! synthetic coin that flips on each interaction it responds to.

use crate::engine::Protocol;
use crate::ranking_base::{ParamError, PhaseSchedule, RankingRole};
use crate::util::{ceil_log2, ceil_scaled_log2};

/// Parameters of the self-stabilizing protocol. All counter bounds are
/// derived from n unless overridden.
#[derive(Debug, Clone, PartialEq)]
pub struct SSParams {
    pub n: u32,
    pub c_wait: f64,
    pub c_live: f64,
    /// Waiting counter bound, ceil(c_wait * log2 n).
    pub w_max: u32,
    /// Liveness and leader-election timer bound, ceil(c_live * log2 n).
    pub l_max: u32,
    /// Dormancy bound; defaults to l_max.
    pub d_max: u32,
    /// Reset epidemic counter bound; defaults to ceil(2 log2 n).
    pub r_max: u32,
    /// Consecutive-heads target for leader election, ceil(log2 n).
    pub coin_count_max: u32,
    /// Whether an electing initiator also runs down its timer when it meets
    /// a dormant agent (off: the timer only moves between electing agents).
    pub le_decrements_vs_dormant: bool,
}

/// Optional overrides for the derived parameter set.
#[derive(Debug, Clone, Default)]
pub struct SSOverrides {
    pub c_wait: Option<f64>,
    pub c_live: Option<f64>,
    pub w_max: Option<u32>,
    pub l_max: Option<u32>,
    pub d_max: Option<u32>,
    pub r_max: Option<u32>,
    pub le_decrements_vs_dormant: bool,
}

impl SSParams {
    pub fn new(n: u32) -> Result<Self, ParamError> {
        Self::with_overrides(n, &SSOverrides::default())
    }

    pub fn with_overrides(n: u32, ov: &SSOverrides) -> Result<Self, ParamError> {
        if n < 2 {
            return Err(ParamError::InvalidPopulation(n));
        }
        let c_wait = ov.c_wait.unwrap_or(2.0);
        let c_live = ov.c_live.unwrap_or(4.0);
        if c_wait <= 0.0 {
            return Err(ParamError::NonPositiveConstant("c_wait"));
        }
        if c_live <= 0.0 {
            return Err(ParamError::NonPositiveConstant("c_live"));
        }
        let w_max = ov
            .w_max
            .unwrap_or_else(|| ceil_scaled_log2(c_wait, n))
            .max(1);
        let l_max = ov
            .l_max
            .unwrap_or_else(|| ceil_scaled_log2(c_live, n))
            .max(1);
        let d_max = ov.d_max.unwrap_or(l_max).max(1);
        let r_max = ov.r_max.unwrap_or_else(|| ceil_scaled_log2(2.0, n)).max(1);
        Ok(SSParams {
            n,
            c_wait,
            c_live,
            w_max,
            l_max,
            d_max,
            r_max,
            coin_count_max: ceil_log2(n),
            le_decrements_vs_dormant: ov.le_decrements_vs_dormant,
        })
    }
}

/// Sub-role of a main-state unranked agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MainSub {
    Waiting { wait_count: u32 },
    Phase { phase: u32 },
}

/// Role of an unranked agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnrankedRole {
    /// Reset epidemic: propagating while `reset_count > 0`, dormant after.
    Resetting { reset_count: u32, delay_count: u32 },
    /// Leader election with its interaction timer and heads-in-a-row count.
    Electing {
        le_count: u32,
        coin_count: u32,
        leader_done: bool,
        is_leader: bool,
    },
    /// Ranking with the liveness watchdog.
    Main { alive_count: u32, sub: MainSub },
}

/// Agent state of the self-stabilizing protocol. Ranked agents store their
/// rank and nothing else; unranked agents carry the synthetic coin plus one
/// live role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StableState {
    Ranked { rank: u32 },
    Unranked { coin: bool, role: UnrankedRole },
}

impl StableState {
    pub fn rank(&self) -> Option<u32> {
        match self {
            StableState::Ranked { rank } => Some(*rank),
            StableState::Unranked { .. } => None,
        }
    }

    pub fn coin(&self) -> Option<bool> {
        match self {
            StableState::Ranked { .. } => None,
            StableState::Unranked { coin, .. } => Some(*coin),
        }
    }

    pub fn is_resetting(&self) -> bool {
        matches!(
            self,
            StableState::Unranked {
                role: UnrankedRole::Resetting { .. },
                ..
            }
        )
    }

    /// Resetting with a live epidemic counter.
    pub fn is_propagating(&self) -> bool {
        matches!(
            self,
            StableState::Unranked { role: UnrankedRole::Resetting { reset_count, .. }, .. }
            if *reset_count > 0
        )
    }

    /// Resetting, epidemic done, waiting out the delay.
    pub fn is_dormant(&self) -> bool {
        self.is_resetting() && !self.is_propagating()
    }

    pub fn is_electing(&self) -> bool {
        matches!(
            self,
            StableState::Unranked {
                role: UnrankedRole::Electing { .. },
                ..
            }
        )
    }

    /// Ranked or unranked-main: the states of the ranking machinery proper.
    pub fn in_main_state(&self) -> bool {
        matches!(
            self,
            StableState::Ranked { .. }
                | StableState::Unranked {
                    role: UnrankedRole::Main { .. },
                    ..
                }
        )
    }

    pub fn is_main_waiting(&self) -> bool {
        matches!(
            self,
            StableState::Unranked {
                role: UnrankedRole::Main {
                    sub: MainSub::Waiting { .. },
                    ..
                },
                ..
            }
        )
    }

    pub fn is_main_phase(&self) -> bool {
        matches!(
            self,
            StableState::Unranked {
                role: UnrankedRole::Main {
                    sub: MainSub::Phase { .. },
                    ..
                },
                ..
            }
        )
    }

    pub fn phase(&self) -> Option<u32> {
        match self {
            StableState::Unranked {
                role:
                    UnrankedRole::Main {
                        sub: MainSub::Phase { phase },
                        ..
                    },
                ..
            } => Some(*phase),
            _ => None,
        }
    }

    fn alive_count(&self) -> Option<u32> {
        match self {
            StableState::Unranked {
                role: UnrankedRole::Main { alive_count, .. },
                ..
            } => Some(*alive_count),
            _ => None,
        }
    }

    fn set_alive_count(&mut self, value: u32) {
        if let StableState::Unranked {
            role: UnrankedRole::Main { alive_count, .. },
            ..
        } = self
        {
            *alive_count = value;
        }
    }

    /// Bounds check against the declared state domain.
    pub fn is_within_bounds(&self, params: &SSParams) -> bool {
        match self {
            StableState::Ranked { rank } => (1..=params.n).contains(rank),
            StableState::Unranked { role, .. } => match role {
                UnrankedRole::Resetting {
                    reset_count,
                    delay_count,
                } => *reset_count <= params.r_max && *delay_count <= params.d_max,
                UnrankedRole::Electing {
                    le_count,
                    coin_count,
                    ..
                } => *le_count <= params.l_max && *coin_count <= params.coin_count_max,
                UnrankedRole::Main { alive_count, sub } => {
                    *alive_count <= params.l_max
                        && match sub {
                            MainSub::Waiting { wait_count } => {
                                (1..=params.w_max).contains(wait_count)
                            }
                            MainSub::Phase { phase } => (1..=ceil_log2(params.n)).contains(phase),
                        }
                }
            },
        }
    }
}

/// The fresh electing state entered after dormancy runs out.
fn initial_electing(params: &SSParams) -> UnrankedRole {
    UnrankedRole::Electing {
        le_count: params.l_max,
        coin_count: params.coin_count_max,
        leader_done: false,
        is_leader: false,
    }
}

/// Resets one agent: it keeps its coin (0 if it was ranked and had none) and
/// starts the reset epidemic with both counters full.
pub fn trigger_reset(s: &StableState, params: &SSParams) -> StableState {
    StableState::Unranked {
        coin: s.coin().unwrap_or(false),
        role: UnrankedRole::Resetting {
            reset_count: params.r_max,
            delay_count: params.d_max,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ResetRole {
    Propagating,
    Dormant,
    Computing,
}

fn reset_role(s: &StableState) -> ResetRole {
    match s {
        StableState::Unranked {
            role: UnrankedRole::Resetting { reset_count, .. },
            ..
        } => {
            if *reset_count > 0 {
                ResetRole::Propagating
            } else {
                ResetRole::Dormant
            }
        }
        _ => ResetRole::Computing,
    }
}

fn decrement_reset_count(s: &mut StableState) -> u32 {
    if let StableState::Unranked {
        role: UnrankedRole::Resetting { reset_count, .. },
        ..
    } = s
    {
        *reset_count = reset_count.saturating_sub(1);
        *reset_count
    } else {
        unreachable!("decrement_reset_count on non-resetting agent")
    }
}

fn set_reset_count(s: &mut StableState, value: u32) {
    if let StableState::Unranked {
        role: UnrankedRole::Resetting { reset_count, .. },
        ..
    } = s
    {
        *reset_count = value;
    }
}

/// A dormant agent counts its delay down; at zero it forgets the reset state
/// and enters leader election (coin kept) in the same interaction.
fn decrement_delay(s: &mut StableState, params: &SSParams) {
    if let StableState::Unranked {
        coin,
        role: UnrankedRole::Resetting { delay_count, .. },
    } = s
    {
        *delay_count = delay_count.saturating_sub(1);
        if *delay_count == 0 {
            *s = StableState::Unranked {
                coin: *coin,
                role: initial_electing(params),
            };
        }
    }
}

/// Turns a computing agent into a propagating one carrying `reset_count`.
fn infect(s: &mut StableState, reset_count: u32, params: &SSParams) {
    *s = StableState::Unranked {
        coin: s.coin().unwrap_or(false),
        role: UnrankedRole::Resetting {
            reset_count,
            delay_count: params.d_max,
        },
    };
}

/// The reset epidemic rules. Identity unless at least one agent is
/// resetting. A propagating agent infects computing partners with its
/// already-decremented counter; two propagating agents merge to max-1;
/// dormant agents count their delay down on every interaction they are part
/// of and re-enter leader election at zero.
pub fn propagate_reset_transition(
    u: &StableState,
    v: &StableState,
    params: &SSParams,
) -> (StableState, StableState) {
    use ResetRole::*;
    let mut nu = *u;
    let mut nv = *v;
    match (reset_role(u), reset_role(v)) {
        (Computing, Computing) => {}
        (Propagating, Computing) => {
            let rc = decrement_reset_count(&mut nu);
            infect(&mut nv, rc, params);
        }
        (Computing, Propagating) => {
            let rc = decrement_reset_count(&mut nv);
            infect(&mut nu, rc, params);
        }
        (Propagating, Propagating) => {
            let merged = reset_count_of(u).max(reset_count_of(v)).saturating_sub(1);
            set_reset_count(&mut nu, merged);
            set_reset_count(&mut nv, merged);
        }
        (Propagating, Dormant) => {
            decrement_reset_count(&mut nu);
            decrement_delay(&mut nv, params);
        }
        (Dormant, Propagating) => {
            decrement_reset_count(&mut nv);
            decrement_delay(&mut nu, params);
        }
        (Dormant, Computing) => decrement_delay(&mut nu, params),
        (Computing, Dormant) => decrement_delay(&mut nv, params),
        (Dormant, Dormant) => {
            decrement_delay(&mut nu, params);
            decrement_delay(&mut nv, params);
        }
    }
    (nu, nv)
}

fn reset_count_of(s: &StableState) -> u32 {
    match s {
        StableState::Unranked {
            role: UnrankedRole::Resetting { reset_count, .. },
            ..
        } => *reset_count,
        _ => 0,
    }
}

/// One leader-election interaction: only the initiator's state moves; the
/// responder's coin is read. The initiator runs its timer down, drops out of
/// contention on tails, declares itself leader after a full run of heads,
/// and either starts the main protocol as a waiting leader (if it won early
/// enough) or triggers a reset when the timer expires.
///
/// Panics if the initiator is not electing or the responder is ranked; the
/// dispatcher guarantees both.
pub fn fast_le_transition(
    u: &StableState,
    v: &StableState,
    params: &SSParams,
) -> (StableState, StableState) {
    let StableState::Unranked {
        coin: coin_u,
        role:
            UnrankedRole::Electing {
                le_count,
                coin_count,
                leader_done,
                is_leader,
            },
    } = *u
    else {
        panic!("fast_le_transition: initiator must be an electing agent");
    };
    let Some(coin_v) = v.coin() else {
        panic!("fast_le_transition: responder must carry a coin");
    };

    let le_count = le_count.saturating_sub(1);
    let mut leader_done = leader_done;
    let mut coin_count = coin_count;
    let mut is_leader = is_leader;
    if !coin_v {
        leader_done = true;
    }
    if !leader_done {
        coin_count = coin_count.saturating_sub(1);
        if coin_count == 0 {
            is_leader = true;
            leader_done = true;
        }
    }

    // Hand-off to the main protocol; evaluated regardless of leader_done so
    // that a stalled election cannot dodge the timeout reset.
    if is_leader && 2 * le_count >= params.l_max {
        let waiting_leader = StableState::Unranked {
            coin: coin_u,
            role: UnrankedRole::Main {
                alive_count: params.l_max,
                sub: MainSub::Waiting {
                    wait_count: params.w_max,
                },
            },
        };
        return (waiting_leader, *v);
    }
    if le_count == 0 {
        return (trigger_reset(u, params), *v);
    }

    let still_electing = StableState::Unranked {
        coin: coin_u,
        role: UnrankedRole::Electing {
            le_count,
            coin_count,
            leader_done,
            is_leader,
        },
    };
    (still_electing, *v)
}

/// An ordered pair where the ranking machinery could make progress: a
/// waiting leader meeting a phase agent, or a ranked agent low enough to be
/// the unaware leader of the responder's phase.
pub fn is_productive_pair(u: &StableState, v: &StableState, n: u32) -> bool {
    let Some(phase) = v.phase() else {
        return false;
    };
    if u.is_main_waiting() {
        return true;
    }
    match u.rank() {
        Some(r) => u64::from(r) <= u64::from(n) >> phase,
        None => false,
    }
}

fn main_role(s: &StableState) -> Option<RankingRole> {
    match s {
        StableState::Ranked { rank } => Some(RankingRole::Ranked(*rank)),
        StableState::Unranked {
            role: UnrankedRole::Main { sub, .. },
            ..
        } => match sub {
            MainSub::Waiting { wait_count } => Some(RankingRole::Waiting(*wait_count)),
            MainSub::Phase { phase } => Some(RankingRole::Phase(*phase)),
        },
        _ => None,
    }
}

/// Maps a post-ranking role back onto the stable state space. Agents that
/// keep an unranked main role keep their coin and liveness counter; an
/// initiator that just started waiting re-arms both (coin 0, full counter).
fn apply_main_role(orig: &StableState, role: RankingRole, params: &SSParams) -> StableState {
    match role {
        RankingRole::Ranked(rank) => StableState::Ranked { rank },
        RankingRole::Waiting(wait_count) => match orig {
            StableState::Unranked {
                coin,
                role: UnrankedRole::Main { alive_count, .. },
            } => StableState::Unranked {
                coin: *coin,
                role: UnrankedRole::Main {
                    alive_count: *alive_count,
                    sub: MainSub::Waiting { wait_count },
                },
            },
            _ => StableState::Unranked {
                coin: false,
                role: UnrankedRole::Main {
                    alive_count: params.l_max,
                    sub: MainSub::Waiting { wait_count },
                },
            },
        },
        RankingRole::Phase(phase) => match orig {
            StableState::Unranked {
                coin,
                role: UnrankedRole::Main { alive_count, .. },
            } => StableState::Unranked {
                coin: *coin,
                role: UnrankedRole::Main {
                    alive_count: *alive_count,
                    sub: MainSub::Phase { phase },
                },
            },
            _ => unreachable!("ranked agents never project onto a phase"),
        },
    }
}

/// The extended ranking protocol over two main-state agents.
///
/// In order: direct error detection (duplicate rank or two waiting agents
/// reset the initiator and end the interaction); liveness bookkeeping (both
/// counters merge to max-1, the top two ranks run the responder's counter
/// down, a zero counter resets the responder); then by the responder's
/// coin, either re-arm its counter if the pair could have made progress
/// (tails) or run the base ranking transition (heads).
///
/// Panics unless both agents are in main states; the dispatcher guarantees it.
pub fn ranking_plus_transition(
    u: &StableState,
    v: &StableState,
    sched: &PhaseSchedule,
    params: &SSParams,
) -> (StableState, StableState) {
    assert!(
        u.in_main_state() && v.in_main_state(),
        "ranking_plus_transition: both agents must be in main states"
    );
    let mut nu = *u;
    let mut nv = *v;

    let duplicate_rank = matches!((u.rank(), v.rank()), (Some(a), Some(b)) if a == b);
    if duplicate_rank || (u.is_main_waiting() && v.is_main_waiting()) {
        return (trigger_reset(u, params), nv);
    }

    if let (Some(au), Some(av)) = (u.alive_count(), v.alive_count()) {
        let merged = au.max(av).saturating_sub(1);
        nu.set_alive_count(merged);
        nv.set_alive_count(merged);
    }
    if let Some(r) = u.rank() {
        if (r == params.n - 1 || r == params.n) && nv.alive_count().is_some() {
            let av = nv.alive_count().unwrap();
            nv.set_alive_count(av.saturating_sub(1));
        }
    }
    if nv.alive_count() == Some(0) {
        return (nu, trigger_reset(v, params));
    }

    match nv.coin() {
        Some(false) => {
            if is_productive_pair(&nu, &nv, params.n) {
                nv.set_alive_count(params.l_max);
            }
            (nu, nv)
        }
        Some(true) => {
            let (ru, rv) = (
                main_role(&nu).expect("main initiator"),
                main_role(&nv).expect("main responder"),
            );
            let out = crate::ranking_base::ranking_step(ru, rv, sched, params.w_max);
            let mut final_u = if out.u == ru {
                nu
            } else {
                apply_main_role(&nu, out.u, params)
            };
            let final_v = if out.v == rv {
                nv
            } else {
                apply_main_role(&nv, out.v, params)
            };
            if out.u_became_waiting {
                // Freshly waiting leaders start on tails with a full counter.
                if let StableState::Unranked {
                    coin,
                    role: UnrankedRole::Main { alive_count, .. },
                } = &mut final_u
                {
                    *coin = false;
                    *alive_count = params.l_max;
                }
            }
            (final_u, final_v)
        }
        // A ranked responder carries no coin; nothing further happens.
        None => (nu, nv),
    }
}

/// The full dispatcher. Exactly one subprotocol runs per interaction, picked
/// from the agents' roles on entry: the reset epidemic if anyone is
/// resetting; leader election between two electing agents; the start-ranking
/// hand-off when an electing agent meets a main-state agent; the extended
/// ranking protocol between two main-state agents. The responder's coin
/// flips at the end if it still has one.
pub fn stable_transition(
    u: &StableState,
    v: &StableState,
    sched: &PhaseSchedule,
    params: &SSParams,
) -> (StableState, StableState) {
    let (nu, mut nv) = if u.is_resetting() || v.is_resetting() {
        let (mut nu, nv) = propagate_reset_transition(u, v, params);
        if params.le_decrements_vs_dormant && u.is_electing() && v.is_dormant() {
            if let StableState::Unranked {
                role: UnrankedRole::Electing { le_count, .. },
                ..
            } = &mut nu
            {
                *le_count = le_count.saturating_sub(1);
                if *le_count == 0 {
                    nu = trigger_reset(&nu, params);
                }
            }
        }
        (nu, nv)
    } else if u.is_electing() && v.is_electing() {
        fast_le_transition(u, v, params)
    } else if u.is_electing() && v.in_main_state() {
        (to_phase_agent(u, params), *v)
    } else if v.is_electing() && u.in_main_state() {
        (*u, to_phase_agent(v, params))
    } else {
        ranking_plus_transition(u, v, sched, params)
    };
    if let StableState::Unranked { coin, .. } = &mut nv {
        *coin = !*coin;
    }
    (nu, nv)
}

/// An electing agent that met the main protocol joins it as a fresh phase-1
/// agent, keeping its coin.
fn to_phase_agent(s: &StableState, params: &SSParams) -> StableState {
    StableState::Unranked {
        coin: s.coin().unwrap_or(false),
        role: UnrankedRole::Main {
            alive_count: params.l_max,
            sub: MainSub::Phase { phase: 1 },
        },
    }
}

/// Exact size of the representable state domain.
pub fn ss_state_count(params: &SSParams) -> u64 {
    u64::from(params.n) + 2 * role_block_size(params)
}

/// State-count decomposition (each unranked block already includes the
/// factor two for the coin). The parts sum to `ss_state_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateBreakdown {
    pub ranks: u64,
    pub resetting: u64,
    pub electing: u64,
    pub main_unranked: u64,
}

impl StateBreakdown {
    pub fn total(&self) -> u64 {
        self.ranks + self.resetting + self.electing + self.main_unranked
    }

    pub fn overhead(&self) -> u64 {
        self.total() - self.ranks
    }
}

pub fn ss_state_breakdown(params: &SSParams) -> StateBreakdown {
    StateBreakdown {
        ranks: u64::from(params.n),
        resetting: 2 * reset_block_size(params),
        electing: 2 * electing_block_size(params),
        main_unranked: 2 * main_block_size(params),
    }
}

fn reset_block_size(params: &SSParams) -> u64 {
    u64::from(params.r_max + 1) * u64::from(params.d_max + 1)
}

fn electing_block_size(params: &SSParams) -> u64 {
    u64::from(params.l_max + 1) * u64::from(params.coin_count_max + 1) * 4
}

fn main_block_size(params: &SSParams) -> u64 {
    u64::from(params.l_max + 1) * u64::from(params.w_max + ceil_log2(params.n))
}

fn role_block_size(params: &SSParams) -> u64 {
    reset_block_size(params) + electing_block_size(params) + main_block_size(params)
}

/// Bijection index -> state over the representable domain; the inverse of
/// [`state_to_index`]. Drives uniform sampling of arbitrary states and the
/// exhaustive enumeration oracle for the state count.
pub fn index_to_state(index: u64, params: &SSParams) -> StableState {
    let n = u64::from(params.n);
    if index < n {
        return StableState::Ranked {
            rank: (index + 1) as u32,
        };
    }
    let index = index - n;
    let roles = role_block_size(params);
    debug_assert!(index < 2 * roles);
    let coin = index >= roles;
    let mut idx = index % roles;

    let reset = reset_block_size(params);
    if idx < reset {
        let d = u64::from(params.d_max + 1);
        return StableState::Unranked {
            coin,
            role: UnrankedRole::Resetting {
                reset_count: (idx / d) as u32,
                delay_count: (idx % d) as u32,
            },
        };
    }
    idx -= reset;

    let elect = electing_block_size(params);
    if idx < elect {
        let per_le = u64::from(params.coin_count_max + 1) * 4;
        let le_count = (idx / per_le) as u32;
        let rem = idx % per_le;
        let coin_count = (rem / 4) as u32;
        let flags = rem % 4;
        return StableState::Unranked {
            coin,
            role: UnrankedRole::Electing {
                le_count,
                coin_count,
                leader_done: flags & 1 == 1,
                is_leader: flags & 2 == 2,
            },
        };
    }
    idx -= elect;

    let sub_count = u64::from(params.w_max + ceil_log2(params.n));
    let alive_count = (idx / sub_count) as u32;
    let sub_idx = (idx % sub_count) as u32;
    let sub = if sub_idx < params.w_max {
        MainSub::Waiting {
            wait_count: sub_idx + 1,
        }
    } else {
        MainSub::Phase {
            phase: sub_idx - params.w_max + 1,
        }
    };
    StableState::Unranked {
        coin,
        role: UnrankedRole::Main { alive_count, sub },
    }
}

/// Bijection state -> index; the inverse of [`index_to_state`].
pub fn state_to_index(s: &StableState, params: &SSParams) -> u64 {
    let n = u64::from(params.n);
    match s {
        StableState::Ranked { rank } => u64::from(*rank) - 1,
        StableState::Unranked { coin, role } => {
            let role_idx = match role {
                UnrankedRole::Resetting {
                    reset_count,
                    delay_count,
                } => {
                    u64::from(*reset_count) * u64::from(params.d_max + 1) + u64::from(*delay_count)
                }
                UnrankedRole::Electing {
                    le_count,
                    coin_count,
                    leader_done,
                    is_leader,
                } => {
                    reset_block_size(params)
                        + u64::from(*le_count) * u64::from(params.coin_count_max + 1) * 4
                        + u64::from(*coin_count) * 4
                        + u64::from(*leader_done)
                        + 2 * u64::from(*is_leader)
                }
                UnrankedRole::Main { alive_count, sub } => {
                    let sub_idx = match sub {
                        MainSub::Waiting { wait_count } => wait_count - 1,
                        MainSub::Phase { phase } => params.w_max + phase - 1,
                    };
                    reset_block_size(params)
                        + electing_block_size(params)
                        + u64::from(*alive_count) * u64::from(params.w_max + ceil_log2(params.n))
                        + u64::from(sub_idx)
                }
            };
            n + u64::from(*coin) * role_block_size(params) + role_idx
        }
    }
}

/// Configuration classes used by the diagnostics, in priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigClass {
    /// Ranks form a permutation of [n].
    Legal,
    /// At least one propagating agent: a reset is underway.
    Triggered,
    /// Election settled: all electing, timers barely used, every agent done,
    /// exactly one winner.
    SafeRanking,
    /// Everyone dormant or in the fresh electing state, coins balanced.
    LeaderElection,
    /// All agents in main states.
    AllMain,
    Other,
}

impl ConfigClass {
    pub fn label(&self) -> &'static str {
        match self {
            ConfigClass::Legal => "legal",
            ConfigClass::Triggered => "triggered",
            ConfigClass::SafeRanking => "safe_ranking",
            ConfigClass::LeaderElection => "leader_election",
            ConfigClass::AllMain => "main",
            ConfigClass::Other => "other",
        }
    }
}

fn is_legal(states: &[StableState]) -> bool {
    let n = states.len();
    let mut seen = vec![false; n + 1];
    for s in states {
        match s.rank() {
            Some(r) if (1..=n as u32).contains(&r) && !seen[r as usize] => seen[r as usize] = true,
            _ => return false,
        }
    }
    true
}

fn is_safe_ranking(states: &[StableState], params: &SSParams) -> bool {
    let mut leaders = 0usize;
    for s in states {
        match s {
            StableState::Unranked {
                role:
                    UnrankedRole::Electing {
                        le_count,
                        leader_done,
                        is_leader,
                        ..
                    },
                ..
            } => {
                // le_count >= (7/8) l_max, in integer arithmetic.
                if !*leader_done || 8 * u64::from(*le_count) < 7 * u64::from(params.l_max) {
                    return false;
                }
                leaders += usize::from(*is_leader);
            }
            _ => return false,
        }
    }
    leaders == 1
}

fn is_leader_election(states: &[StableState], params: &SSParams) -> bool {
    let fresh = initial_electing(params);
    let mut heads = 0i64;
    let mut tails = 0i64;
    for s in states {
        match s {
            StableState::Unranked { coin, role } => {
                let ok = match role {
                    UnrankedRole::Resetting { .. } => s.is_dormant(),
                    UnrankedRole::Electing { .. } => *role == fresh,
                    UnrankedRole::Main { .. } => false,
                };
                if !ok {
                    return false;
                }
                if *coin {
                    heads += 1;
                } else {
                    tails += 1;
                }
            }
            StableState::Ranked { .. } => return false,
        }
    }
    // |#heads - #tails| <= n / (4 log2 n), kept in integers.
    let imbalance = (heads - tails).unsigned_abs();
    4 * u64::from(ceil_log2(params.n)) * imbalance <= u64::from(params.n)
}

fn is_all_main(states: &[StableState]) -> bool {
    states.iter().all(StableState::in_main_state)
}

/// All classes the configuration belongs to, for diagnostics.
pub fn matching_classes(states: &[StableState], params: &SSParams) -> Vec<ConfigClass> {
    let mut out = Vec::new();
    if is_legal(states) {
        out.push(ConfigClass::Legal);
    }
    if states.iter().any(StableState::is_propagating) {
        out.push(ConfigClass::Triggered);
    }
    if is_safe_ranking(states, params) {
        out.push(ConfigClass::SafeRanking);
    }
    if is_leader_election(states, params) {
        out.push(ConfigClass::LeaderElection);
    }
    if is_all_main(states) {
        out.push(ConfigClass::AllMain);
    }
    out
}

/// First matching class in priority order (legal, triggered, safe-ranking,
/// leader-election, all-main), or `Other`.
pub fn classify_configuration(states: &[StableState], params: &SSParams) -> ConfigClass {
    matching_classes(states, params)
        .first()
        .copied()
        .unwrap_or(ConfigClass::Other)
}

/// The self-stabilizing protocol packaged for the engine.
#[derive(Debug, Clone)]
pub struct StableRanking {
    params: SSParams,
    schedule: PhaseSchedule,
}

impl StableRanking {
    pub fn new(params: SSParams) -> Result<Self, ParamError> {
        let schedule = PhaseSchedule::new(params.n)?;
        Ok(StableRanking { params, schedule })
    }

    pub fn params(&self) -> &SSParams {
        &self.params
    }

    pub fn schedule(&self) -> &PhaseSchedule {
        &self.schedule
    }
}

impl Protocol for StableRanking {
    type State = StableState;

    fn transition(&self, u: &StableState, v: &StableState) -> (StableState, StableState) {
        stable_transition(u, v, &self.schedule, &self.params)
    }

    fn rank(&self, s: &StableState) -> Option<u32> {
        s.rank()
    }
}
