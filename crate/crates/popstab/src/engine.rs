//! Uniform-random-scheduler simulation core.
//!
//! A run holds a population of agent states and repeatedly draws an ordered
//! pair of distinct agents uniformly at random. The initiator/responder
//! asymmetry matters: every protocol transition in this crate treats the
//! first agent as initiator. Time is measured in interactions throughout.

use std::collections::HashMap;
use std::hash::Hash;

use thiserror::Error;

/// Golden-ratio increment used by the SplitMix64 stream.
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("population size must be at least 2, got {0}")]
    InvalidPopulation(u32),
}

/// SplitMix64 finalizer (Steele, Lea, Flood 2014). Bijective on u64 with
/// strong avalanche; also used to derive per-replica seeds.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic 64-bit PRNG (SplitMix64, period 2^64).
///
/// Identical seeds yield bitwise identical draw sequences. Bounded draws use
/// the rejection-free Lemire multiply-shift reduction; the residual bias of
/// at most n/2^64 is negligible for every population size used here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw from `[0, bound)` without rejection.
    #[inline]
    pub fn bounded(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        ((u128::from(self.next_u64()) * u128::from(bound)) >> 64) as u64
    }

    /// Fair coin.
    #[inline]
    pub fn coin(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }
}

/// Derives the seed for one replica from a master seed.
///
/// Distinct replica indices give distinct seeds: the index is folded in with
/// an odd multiplier (a bijection mod 2^64) before the bijective finalizer.
pub fn derive_replica_seed(master_seed: u64, replica_index: u64) -> u64 {
    mix64(master_seed.wrapping_add(replica_index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Draws an ordered pair of distinct agent indices uniform over the
/// n(n-1) possibilities: initiator first, responder second.
#[inline]
pub fn draw_pair(rng: &mut Rng, n: u32) -> Result<(u32, u32), EngineError> {
    if n < 2 {
        return Err(EngineError::InvalidPopulation(n));
    }
    let i = rng.bounded(u64::from(n)) as u32;
    let j = rng.bounded(u64::from(n - 1)) as u32;
    let j = if j >= i { j + 1 } else { j };
    Ok((i, j))
}

/// An ordered population of agent states plus the number of interactions
/// applied so far. The population size is fixed for the lifetime of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration<S> {
    states: Vec<S>,
    step_count: u64,
}

impl<S> Configuration<S> {
    pub fn new(states: Vec<S>) -> Result<Self, EngineError> {
        if states.len() < 2 {
            return Err(EngineError::InvalidPopulation(states.len() as u32));
        }
        Ok(Configuration {
            states,
            step_count: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// A population protocol: a deterministic total transition function over
/// ordered state pairs, plus the output map from state to assigned rank.
pub trait Protocol {
    type State: Clone + PartialEq;

    /// Applies one interaction: `(initiator, responder) -> (initiator', responder')`.
    fn transition(&self, u: &Self::State, v: &Self::State) -> (Self::State, Self::State);

    /// Output function: the rank held by this state, if any.
    fn rank(&self, s: &Self::State) -> Option<u32>;
}

/// In-process record handed to observers after every applied interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepEvent {
    pub step: u64,
    pub initiator: u32,
    pub responder: u32,
    pub changed: bool,
}

/// Synchronous per-step callback. The engine owns no I/O; anything an
/// experiment wants to record goes through an observer.
pub trait Observer<S> {
    fn on_step(&mut self, event: &StepEvent, old: (&S, &S), new: (&S, &S));
}

/// No-op observer for plain runs.
impl<S> Observer<S> for () {
    #[inline]
    fn on_step(&mut self, _event: &StepEvent, _old: (&S, &S), _new: (&S, &S)) {}
}

/// Applies one scheduled interaction in place. Returns whether any of the
/// two drawn agents changed state. No other agent is touched.
pub fn step<P, O>(
    protocol: &P,
    config: &mut Configuration<P::State>,
    rng: &mut Rng,
    observer: &mut O,
) -> Result<bool, EngineError>
where
    P: Protocol,
    O: Observer<P::State>,
{
    let (i, j) = draw_pair(rng, config.states.len() as u32)?;
    let old_u = config.states[i as usize].clone();
    let old_v = config.states[j as usize].clone();
    let (new_u, new_v) = protocol.transition(&old_u, &old_v);
    let changed = new_u != old_u || new_v != old_v;
    config.states[i as usize] = new_u;
    config.states[j as usize] = new_v;
    config.step_count += 1;
    let event = StepEvent {
        step: config.step_count,
        initiator: i,
        responder: j,
        changed,
    };
    observer.on_step(
        &event,
        (&old_u, &old_v),
        (&config.states[i as usize], &config.states[j as usize]),
    );
    Ok(changed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    PredicateMet,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct RunOutcome<S> {
    pub stop_reason: StopReason,
    pub interactions_used: u64,
    pub final_configuration: Configuration<S>,
}

/// Runs until `stop` holds or `budget` interactions have been applied.
/// The predicate is checked once before the first step and after every step.
pub fn run_until<P, O, F>(
    protocol: &P,
    config: Configuration<P::State>,
    rng: &mut Rng,
    stop: F,
    budget: u64,
    observer: &mut O,
) -> Result<RunOutcome<P::State>, EngineError>
where
    P: Protocol,
    O: Observer<P::State>,
    F: Fn(&Configuration<P::State>) -> bool,
{
    let mut config = config;
    let mut used = 0u64;
    if stop(&config) {
        return Ok(RunOutcome {
            stop_reason: StopReason::PredicateMet,
            interactions_used: 0,
            final_configuration: config,
        });
    }
    while used < budget {
        step(protocol, &mut config, rng, observer)?;
        used += 1;
        if stop(&config) {
            return Ok(RunOutcome {
                stop_reason: StopReason::PredicateMet,
                interactions_used: used,
                final_configuration: config,
            });
        }
    }
    Ok(RunOutcome {
        stop_reason: StopReason::BudgetExhausted,
        interactions_used: used,
        final_configuration: config,
    })
}

/// True iff no interaction between any two agents of the configuration can
/// change a state. Checked over the set of distinct occurring states
/// (O(d^2) transitions for d distinct states), including the pair of two
/// different agents holding the same state value.
pub fn is_silent<P>(protocol: &P, config: &Configuration<P::State>) -> bool
where
    P: Protocol,
    P::State: Eq + Hash,
{
    let mut counts: HashMap<&P::State, usize> = HashMap::new();
    for s in &config.states {
        *counts.entry(s).or_insert(0) += 1;
    }
    for (&a, &count_a) in &counts {
        for &b in counts.keys() {
            // The equal-state pair needs two agents actually holding it.
            if a == b && count_a < 2 {
                continue;
            }
            let (new_a, new_b) = protocol.transition(a, b);
            if new_a != *a || new_b != *b {
                return false;
            }
        }
    }
    true
}
