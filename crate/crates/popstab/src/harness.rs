//! Experiment runner and observers: validity, reset and silence detection,
//! ranked-count time series, fraction-crossing sweep statistics, the
//! potential diagnostic, and CSV export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{
    self, derive_replica_seed, Configuration, EngineError, Observer, Protocol, Rng, StepEvent,
};
use crate::ranking_base::{
    LeaderElection, NonSSParams, OracleLeaderElection, ParamError, SpaceEfficientRanking,
};
use crate::scenarios::{self, ScenarioError, ScenarioKind, ScenarioSpec};
use crate::stable_ranking::{SSParams, StableRanking, StableState, UnrankedRole};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Coarse role of an agent state, shared across both protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Ranked,
    Waiting,
    Phase,
    Electing,
    Resetting,
}

/// Read-only view of an agent state used by the observers. Both protocols'
/// states implement it; leader-electing agents of the non-self-stabilizing
/// protocol count as electing.
pub trait StateInspect {
    fn role(&self) -> Role;
    fn rank(&self) -> Option<u32>;
    fn phase(&self) -> Option<u32>;
    /// `(reset_count, delay_count)` for resetting agents.
    fn reset_counters(&self) -> Option<(u32, u32)>;
}

impl StateInspect for crate::ranking_base::NonSSState {
    fn role(&self) -> Role {
        use crate::ranking_base::NonSSState::*;
        match self {
            LeaderElecting { .. } => Role::Electing,
            Waiting { .. } => Role::Waiting,
            Phase { .. } => Role::Phase,
            Ranked { .. } => Role::Ranked,
        }
    }

    fn rank(&self) -> Option<u32> {
        match self {
            crate::ranking_base::NonSSState::Ranked { rank } => Some(*rank),
            _ => None,
        }
    }

    fn phase(&self) -> Option<u32> {
        match self {
            crate::ranking_base::NonSSState::Phase { phase } => Some(*phase),
            _ => None,
        }
    }

    fn reset_counters(&self) -> Option<(u32, u32)> {
        None
    }
}

impl StateInspect for StableState {
    fn role(&self) -> Role {
        match self {
            StableState::Ranked { .. } => Role::Ranked,
            StableState::Unranked { role, .. } => match role {
                UnrankedRole::Resetting { .. } => Role::Resetting,
                UnrankedRole::Electing { .. } => Role::Electing,
                UnrankedRole::Main { sub, .. } => match sub {
                    crate::stable_ranking::MainSub::Waiting { .. } => Role::Waiting,
                    crate::stable_ranking::MainSub::Phase { .. } => Role::Phase,
                },
            },
        }
    }

    fn rank(&self) -> Option<u32> {
        StableState::rank(self)
    }

    fn phase(&self) -> Option<u32> {
        StableState::phase(self)
    }

    fn reset_counters(&self) -> Option<(u32, u32)> {
        match self {
            StableState::Unranked {
                role:
                    UnrankedRole::Resetting {
                        reset_count,
                        delay_count,
                    },
                ..
            } => Some((*reset_count, *delay_count)),
            _ => None,
        }
    }
}

/// Protocols the harness can observe. The reset signature is the counter
/// pair installed by a fresh trigger, used to log reset events; protocols
/// without resets report none.
pub trait Observable: Protocol {
    fn reset_signature(&self) -> Option<(u32, u32)> {
        None
    }
}

impl<L: LeaderElection> Observable for SpaceEfficientRanking<L> {}

impl Observable for StableRanking {
    fn reset_signature(&self) -> Option<(u32, u32)> {
        Some((self.params().r_max, self.params().d_max))
    }
}

/// True iff the multiset of ranks held by ranked agents equals {1, ..., n}.
pub fn is_valid_ranking<S: StateInspect>(states: &[S]) -> bool {
    let n = states.len();
    let mut seen = vec![false; n + 1];
    let mut ranked = 0usize;
    for s in states {
        if let Some(r) = s.rank() {
            if !(1..=n as u32).contains(&r) || seen[r as usize] {
                return false;
            }
            seen[r as usize] = true;
            ranked += 1;
        }
    }
    ranked == n
}

/// Remaining-work diagnostic: zero if a reset is underway or no pair could
/// make ranking progress, otherwise the sum of 2^-phase over phase agents.
pub fn potential<S: StateInspect>(states: &[S], n: u32) -> f64 {
    let mut has_waiting = false;
    let mut min_rank = u32::MAX;
    let mut min_phase = u32::MAX;
    let mut sum = 0.0;
    for s in states {
        match s.role() {
            Role::Resetting => return 0.0,
            Role::Waiting => has_waiting = true,
            Role::Ranked => min_rank = min_rank.min(s.rank().unwrap()),
            Role::Phase => {
                let p = s.phase().unwrap();
                min_phase = min_phase.min(p);
                sum += 1.0 / (1u64 << p.min(63)) as f64;
            }
            Role::Electing => {}
        }
    }
    let has_phase = min_phase != u32::MAX;
    let rank_assigning =
        min_rank != u32::MAX && has_phase && u64::from(min_rank) <= (u64::from(n) >> min_phase);
    if (has_waiting && has_phase) || rank_assigning {
        sum
    } else {
        0.0
    }
}

/// Per-run event times and observables.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scenario: String,
    pub n: u32,
    pub seed: u64,
    pub replica: u64,
    pub budget: u64,
    pub interactions_used: u64,
    /// Interaction indices at which a fresh reset was triggered.
    pub reset_times: Vec<u64>,
    /// Per requested fraction c: first interaction with >= ceil(c*n) ranked
    /// agents holding distinct ranks.
    pub t_fraction: Vec<(f64, Option<u64>)>,
    /// First interaction index at which ranks form a permutation of [n].
    pub t_valid: Option<u64>,
    /// No state change observed during the confirmation window after t_valid.
    pub silent_confirmed: bool,
}

/// One sampled row of a run's time series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRow {
    pub t: u64,
    pub ranked_count: u32,
    /// Mean phase over phase agents; absent when there are none.
    pub avg_phase: Option<f64>,
    pub potential: f64,
    pub num_resetting: u32,
    pub num_electing: u32,
    pub num_waiting: u32,
}

/// Experiment knobs. `sample_every = 0` disables time-series sampling.
#[derive(Debug, Clone)]
pub struct ExperimentSettings {
    pub budget: u64,
    pub fractions: Vec<f64>,
    pub sample_every: u64,
}

/// Default interaction budget: `factor * n^2 * log2 n`.
pub fn default_budget(n: u32, factor: f64) -> u64 {
    (factor * f64::from(n) * f64::from(n) * f64::from(n).log2()).ceil() as u64
}

/// Silence confirmation window: `ceil(10 * n * log2 n)` interactions.
pub fn confirmation_window(n: u32) -> u64 {
    (10.0 * f64::from(n) * f64::from(n).log2()).ceil() as u64
}

/// Incremental run statistics, updated per step as an engine observer.
struct Tracker {
    n: u32,
    /// occupancy[r] = number of agents currently holding rank r.
    occupancy: Vec<u32>,
    /// Number of rank values held by exactly one agent.
    unique_ranked: u32,
    reset_signature: Option<(u32, u32)>,
    reset_times: Vec<u64>,
    /// (threshold in agents, fraction, first crossing time).
    fractions: Vec<(u32, f64, Option<u64>)>,
}

impl Tracker {
    fn new<S: StateInspect>(
        states: &[S],
        fractions: &[f64],
        reset_signature: Option<(u32, u32)>,
    ) -> Self {
        let n = states.len() as u32;
        let mut t = Tracker {
            n,
            occupancy: vec![0; states.len() + 1],
            unique_ranked: 0,
            reset_signature,
            reset_times: Vec::new(),
            fractions: fractions
                .iter()
                .map(|&c| (((c * f64::from(n)).ceil() as u32).max(1), c, None))
                .collect(),
        };
        for s in states {
            if let Some(r) = s.rank() {
                t.add_rank(r);
            }
        }
        t.check_fractions(0);
        t
    }

    fn add_rank(&mut self, r: u32) {
        let slot = &mut self.occupancy[r as usize];
        *slot += 1;
        match *slot {
            1 => self.unique_ranked += 1,
            2 => self.unique_ranked -= 1,
            _ => {}
        }
    }

    fn remove_rank(&mut self, r: u32) {
        let slot = &mut self.occupancy[r as usize];
        *slot -= 1;
        match *slot {
            0 => self.unique_ranked -= 1,
            1 => self.unique_ranked += 1,
            _ => {}
        }
    }

    fn is_valid(&self) -> bool {
        self.unique_ranked == self.n
    }

    fn check_fractions(&mut self, t: u64) {
        for (threshold, _, time) in &mut self.fractions {
            if time.is_none() && self.unique_ranked >= *threshold {
                *time = Some(t);
            }
        }
    }

    fn agent_update<S: StateInspect>(&mut self, old: &S, new: &S, t: u64) {
        let (old_rank, new_rank) = (old.rank(), new.rank());
        if old_rank != new_rank {
            if let Some(r) = old_rank {
                self.remove_rank(r);
            }
            if let Some(r) = new_rank {
                self.add_rank(r);
            }
        }
        if let Some(sig) = self.reset_signature {
            if new.reset_counters() == Some(sig) && old.reset_counters() != Some(sig) {
                self.reset_times.push(t);
            }
        }
        // A phase agent's saved phase never decreases without a reset in
        // between; a single interaction cannot hide one.
        debug_assert!(
            !matches!((old.role(), new.role()), (Role::Phase, Role::Phase))
                || new.phase() >= old.phase(),
            "phase decreased within one interaction"
        );
    }
}

impl<S: StateInspect> Observer<S> for Tracker {
    fn on_step(&mut self, event: &StepEvent, old: (&S, &S), new: (&S, &S)) {
        if !event.changed {
            return;
        }
        self.agent_update(old.0, new.0, event.step);
        self.agent_update(old.1, new.1, event.step);
        self.check_fractions(event.step);
    }
}

fn sample_row<S: StateInspect>(states: &[S], n: u32, t: u64) -> TimeSeriesRow {
    let mut ranked = 0u32;
    let mut resetting = 0u32;
    let mut electing = 0u32;
    let mut waiting = 0u32;
    let mut phase_agents = 0u32;
    let mut phase_sum = 0.0f64;
    for s in states {
        match s.role() {
            Role::Ranked => ranked += 1,
            Role::Resetting => resetting += 1,
            Role::Electing => electing += 1,
            Role::Waiting => waiting += 1,
            Role::Phase => {
                phase_agents += 1;
                phase_sum += f64::from(s.phase().unwrap());
            }
        }
    }
    debug_assert_eq!(ranked + resetting + electing + waiting + phase_agents, n);
    TimeSeriesRow {
        t,
        ranked_count: ranked,
        avg_phase: (phase_agents > 0).then(|| phase_sum / f64::from(phase_agents)),
        potential: potential(states, n),
        num_resetting: resetting,
        num_electing: electing,
        num_waiting: waiting,
    }
}

/// Runs a prepared initial configuration to stabilization or budget, then
/// holds it for the confirmation window. The caller provides the rng that
/// also built the scenario.
pub fn run_prepared<P>(
    protocol: &P,
    scenario: &str,
    initial: Configuration<P::State>,
    seed: u64,
    replica: u64,
    settings: &ExperimentSettings,
    rng: &mut Rng,
) -> Result<(RunRecord, Vec<TimeSeriesRow>), HarnessError>
where
    P: Observable,
    P::State: StateInspect,
{
    let n = initial.len() as u32;
    let mut tracker = Tracker::new(
        initial.states(),
        &settings.fractions,
        protocol.reset_signature(),
    );
    let mut rows = Vec::new();
    let sample_every = settings.sample_every;
    if sample_every > 0 {
        rows.push(sample_row(initial.states(), n, 0));
    }

    let mut config = initial;
    let mut used = 0u64;
    let mut t_valid = tracker.is_valid().then_some(0u64);

    while t_valid.is_none() && used < settings.budget {
        engine::step(protocol, &mut config, rng, &mut tracker)?;
        used += 1;
        if tracker.is_valid() {
            t_valid = Some(config.step_count());
        }
        if sample_every > 0 && config.step_count() % sample_every == 0 {
            rows.push(sample_row(config.states(), n, config.step_count()));
        }
    }

    let mut silent_confirmed = false;
    if t_valid.is_some() {
        silent_confirmed = true;
        for _ in 0..confirmation_window(n) {
            let changed = engine::step(protocol, &mut config, rng, &mut tracker)?;
            used += 1;
            if changed {
                silent_confirmed = false;
            }
            if sample_every > 0 && config.step_count() % sample_every == 0 {
                rows.push(sample_row(config.states(), n, config.step_count()));
            }
        }
    }

    let record = RunRecord {
        scenario: scenario.to_string(),
        n,
        seed,
        replica,
        budget: settings.budget,
        interactions_used: used,
        reset_times: tracker.reset_times,
        t_fraction: tracker.fractions.iter().map(|&(_, c, t)| (c, t)).collect(),
        t_valid,
        silent_confirmed,
    };
    Ok((record, rows))
}

/// Builds and runs one replica of a self-stabilizing scenario. The replica's
/// rng (derived from the master seed) drives both the scenario build and
/// the run.
pub fn run_experiment_stable(
    spec: &ScenarioSpec,
    params: &SSParams,
    master_seed: u64,
    replica: u64,
    settings: &ExperimentSettings,
) -> Result<(RunRecord, Vec<TimeSeriesRow>), HarnessError> {
    let seed = derive_replica_seed(master_seed, replica);
    let mut rng = Rng::new(seed);
    let protocol = StableRanking::new(params.clone())?;
    let initial = scenarios::build_stable(spec, params, &mut rng)?;
    run_prepared(
        &protocol,
        spec.kind.label(),
        initial,
        seed,
        replica,
        settings,
        &mut rng,
    )
}

/// Builds and runs one replica of the non-self-stabilizing protocol with
/// the oracle leader election, from the canonical all-electing start.
pub fn run_experiment_nonss(
    spec: &ScenarioSpec,
    params: &NonSSParams,
    master_seed: u64,
    replica: u64,
    settings: &ExperimentSettings,
) -> Result<(RunRecord, Vec<TimeSeriesRow>), HarnessError> {
    let seed = derive_replica_seed(master_seed, replica);
    let mut rng = Rng::new(seed);
    let protocol = SpaceEfficientRanking::new(params.clone(), OracleLeaderElection::new(params.n))?;
    let initial = scenarios::build_nonss(spec, &protocol)?;
    run_prepared(
        &protocol,
        spec.kind.label(),
        initial,
        seed,
        replica,
        settings,
        &mut rng,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMetric {
    TFracOverN2,
    TValidOverN2LogN,
}

impl SweepMetric {
    pub fn label(&self) -> &'static str {
        match self {
            SweepMetric::TFracOverN2 => "t_frac_over_n2",
            SweepMetric::TValidOverN2LogN => "t_valid_over_n2logn",
        }
    }
}

/// One aggregated sweep row: quantiles of a normalized stabilization-time
/// metric over all replicas of one (n, fraction) cell.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n: u32,
    pub fraction: f64,
    pub replicas: u32,
    pub min_norm: Option<f64>,
    pub median_norm: Option<f64>,
    pub p90_norm: Option<f64>,
    pub max_norm: Option<f64>,
    pub metric: SweepMetric,
}

#[derive(Debug, Clone)]
pub struct SweepRequest {
    pub kind: ScenarioKind,
    pub ns: Vec<u32>,
    pub replicas: u32,
    pub fractions: Vec<f64>,
    pub master_seed: u64,
    pub budget_factor: f64,
}

/// Which protocol a sweep runs.
#[derive(Debug, Clone)]
pub enum SweepProtocol {
    Stable(crate::stable_ranking::SSOverrides),
    NonSS { c_wait: f64 },
}

/// Runs `replicas` independent replicas per n, in parallel, and aggregates
/// quantiles of t_fraction(c)/n^2 and t_valid/(n^2 log2 n). Replica seeds
/// derive from (n index, replica index); aggregation order is (n, replica).
pub fn sweep(
    req: &SweepRequest,
    protocol: &SweepProtocol,
) -> Result<(Vec<SweepRow>, Vec<RunRecord>), HarnessError> {
    let mut rows = Vec::new();
    let mut all_records = Vec::new();
    for (n_idx, &n) in req.ns.iter().enumerate() {
        let settings = ExperimentSettings {
            budget: default_budget(n, req.budget_factor),
            fractions: req.fractions.clone(),
            sample_every: 0,
        };
        let spec = ScenarioSpec::new(req.kind, n);
        let records: Vec<RunRecord> = (0..req.replicas)
            .into_par_iter()
            .map(|replica| {
                let global = (n_idx as u64) * u64::from(req.replicas) + u64::from(replica);
                match protocol {
                    SweepProtocol::Stable(ov) => {
                        let params = SSParams::with_overrides(n, ov)?;
                        run_experiment_stable(&spec, &params, req.master_seed, global, &settings)
                            .map(|(r, _)| r)
                    }
                    SweepProtocol::NonSS { c_wait } => {
                        let params = NonSSParams::new(n, *c_wait)?;
                        run_experiment_nonss(&spec, &params, req.master_seed, global, &settings)
                            .map(|(r, _)| r)
                    }
                }
            })
            .collect::<Result<Vec<_>, _>>()?;

        let n2 = f64::from(n) * f64::from(n);
        let n2logn = n2 * f64::from(n).log2();
        for (f_idx, &fraction) in req.fractions.iter().enumerate() {
            let frac_norms: Vec<f64> = records
                .iter()
                .filter_map(|r| r.t_fraction[f_idx].1)
                .map(|t| t as f64 / n2)
                .collect();
            rows.push(quantile_row(
                n,
                fraction,
                req.replicas,
                SweepMetric::TFracOverN2,
                frac_norms,
            ));
            let valid_norms: Vec<f64> = records
                .iter()
                .filter_map(|r| r.t_valid)
                .map(|t| t as f64 / n2logn)
                .collect();
            rows.push(quantile_row(
                n,
                fraction,
                req.replicas,
                SweepMetric::TValidOverN2LogN,
                valid_norms,
            ));
        }
        all_records.extend(records);
    }
    Ok((rows, all_records))
}

/// Nearest-rank quantiles over the replicas that recorded the metric;
/// the median of an even count averages the two central values.
fn quantile_row(
    n: u32,
    fraction: f64,
    replicas: u32,
    metric: SweepMetric,
    mut values: Vec<f64>,
) -> SweepRow {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = values.len();
    let (min_norm, median_norm, p90_norm, max_norm) = if k == 0 {
        (None, None, None, None)
    } else {
        let median = if k % 2 == 1 {
            values[k / 2]
        } else {
            (values[k / 2 - 1] + values[k / 2]) / 2.0
        };
        let p90 = values[((0.9 * k as f64).ceil() as usize).clamp(1, k) - 1];
        (
            Some(values[0]),
            Some(median),
            Some(p90),
            Some(values[k - 1]),
        )
    };
    SweepRow {
        n,
        fraction,
        replicas,
        min_norm,
        median_norm,
        p90_norm,
        max_norm,
        metric,
    }
}

/// Formats a float with six significant digits, plain notation.
pub(crate) fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn open_out(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn opt_u64(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_sig(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

/// Writes per-run records. One `t_frac_<c>` column per requested fraction;
/// cells are empty when the event was not reached.
pub fn write_runs_csv(
    records: &[RunRecord],
    fractions: &[f64],
    path: &Path,
) -> Result<(), HarnessError> {
    let mut out = open_out(path)?;
    let mut header =
        "scenario,n,seed,replica,budget,interactions_used,t_valid,silent_confirmed,num_resets"
            .to_string();
    for c in fractions {
        header.push_str(&format!(",t_frac_{c}"));
    }
    writeln!(out, "{header}").map_err(io_err(path))?;
    for r in records {
        let mut line = format!(
            "{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.n,
            r.seed,
            r.replica,
            r.budget,
            r.interactions_used,
            opt_u64(r.t_valid),
            r.silent_confirmed,
            r.reset_times.len()
        );
        for (_, t) in &r.t_fraction {
            line.push(',');
            line.push_str(&opt_u64(*t));
        }
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Writes one run's sampled time series.
pub fn write_timeseries_csv(rows: &[TimeSeriesRow], path: &Path) -> Result<(), HarnessError> {
    let mut out = open_out(path)?;
    writeln!(
        out,
        "t,ranked_count,avg_phase,potential,num_resetting,num_electing,num_waiting"
    )
    .map_err(io_err(path))?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            r.ranked_count,
            opt_sig(r.avg_phase),
            fmt_sig(r.potential),
            r.num_resetting,
            r.num_electing,
            r.num_waiting
        )
        .map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Writes the aggregated sweep table.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), HarnessError> {
    let mut out = open_out(path)?;
    writeln!(
        out,
        "n,fraction,replicas,min_norm,median_norm,p90_norm,max_norm,metric"
    )
    .map_err(io_err(path))?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.n,
            r.fraction,
            r.replicas,
            opt_sig(r.min_norm),
            opt_sig(r.median_norm),
            opt_sig(r.p90_norm),
            opt_sig(r.max_norm),
            r.metric.label()
        )
        .map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stable_ranking::{is_productive_pair, MainSub, SSParams};

    fn ranked(r: u32) -> StableState {
        StableState::Ranked { rank: r }
    }

    fn phase(p: u32) -> StableState {
        StableState::Unranked {
            coin: false,
            role: UnrankedRole::Main {
                alive_count: 5,
                sub: MainSub::Phase { phase: p },
            },
        }
    }

    fn waiting(w: u32) -> StableState {
        StableState::Unranked {
            coin: false,
            role: UnrankedRole::Main {
                alive_count: 5,
                sub: MainSub::Waiting { wait_count: w },
            },
        }
    }

    fn resetting() -> StableState {
        StableState::Unranked {
            coin: false,
            role: UnrankedRole::Resetting {
                reset_count: 3,
                delay_count: 4,
            },
        }
    }

    #[test]
    fn valid_ranking_examples() {
        assert!(is_valid_ranking(&[ranked(1), ranked(2), ranked(3)]));
        assert!(!is_valid_ranking(&[ranked(1), ranked(2), ranked(2)]));
        assert!(!is_valid_ranking(&[ranked(1), ranked(2), phase(1)]));
        assert!(!is_valid_ranking(&[ranked(2), ranked(3), ranked(4)]));
    }

    #[test]
    fn potential_examples() {
        // Phases {1,2,2} with a waiting agent present: a productive pair
        // exists, potential = 1/2 + 1/4 + 1/4 = 1.
        let states = vec![waiting(2), phase(1), phase(2), phase(2)];
        assert_eq!(potential(&states, 4), 1.0);
        // Any resetting agent zeroes it.
        let states = vec![resetting(), phase(1), phase(2), phase(2)];
        assert_eq!(potential(&states, 4), 0.0);
        // All ranked: no phase agents.
        let states: Vec<StableState> = (1..=4).map(ranked).collect();
        assert_eq!(potential(&states, 4), 0.0);
        // Phase agents but no productive pair: high ranks only.
        let states = vec![ranked(4), ranked(3), phase(2), phase(2)];
        assert_eq!(potential(&states, 4), 0.0);
        // Low rank makes the pair rank-assigning: 4 >> 1 = 2 >= 1.
        let states = vec![ranked(1), ranked(3), phase(1), phase(2)];
        assert_eq!(potential(&states, 4), 0.75);
    }

    #[test]
    fn potential_productivity_agrees_with_pair_predicate() {
        // The scan-based existence test matches the pairwise predicate.
        let n = 8u32;
        let candidates = [
            ranked(1),
            ranked(5),
            ranked(8),
            phase(1),
            phase(2),
            phase(3),
            waiting(2),
            resetting(),
        ];
        let mut rng = crate::engine::Rng::new(99);
        for _ in 0..2000 {
            let states: Vec<StableState> = (0..6)
                .map(|_| candidates[rng.bounded(candidates.len() as u64) as usize])
                .collect();
            let any_resetting = states.iter().any(|s| s.role() == Role::Resetting);
            let pairwise = states.iter().enumerate().any(|(i, u)| {
                states
                    .iter()
                    .enumerate()
                    .any(|(j, v)| i != j && is_productive_pair(u, v, n))
            });
            let pot = potential(&states, n);
            if any_resetting || !pairwise {
                assert_eq!(pot, 0.0, "states={states:?}");
            } else {
                assert!(pot > 0.0, "states={states:?}");
            }
        }
    }

    #[test]
    fn run_budget_one_from_invalid_start() {
        let spec = ScenarioSpec::new(ScenarioKind::Fig2Adversarial, 16);
        let params = SSParams::new(16).unwrap();
        let settings = ExperimentSettings {
            budget: 1,
            fractions: vec![0.5],
            sample_every: 4,
        };
        let (record, rows) = run_experiment_stable(&spec, &params, 7, 0, &settings).unwrap();
        assert_eq!(record.t_valid, None);
        assert!(!record.silent_confirmed);
        assert_eq!(record.interactions_used, 1);
        // Fig2 starts with 15 of 16 distinct ranks: fraction 0.5 crossed at t=0.
        assert_eq!(record.t_fraction[0].1, Some(0));
        assert!(!rows.is_empty());
    }

    #[test]
    fn sample_row_counts_sum_to_n() {
        let states = vec![ranked(1), phase(1), waiting(2), resetting(), ranked(2)];
        let row = sample_row(&states, 5, 10);
        assert_eq!(row.ranked_count, 2);
        assert_eq!(row.num_resetting, 1);
        assert_eq!(row.num_waiting, 1);
        assert_eq!(row.num_electing, 0);
        assert_eq!(
            row.ranked_count + row.num_resetting + row.num_electing + row.num_waiting + 1,
            5
        );
        assert_eq!(row.avg_phase, Some(1.0));
    }

    #[test]
    fn fraction_times_monotone_in_fraction() {
        let spec = ScenarioSpec::new(ScenarioKind::AllElecting, 32);
        let params = SSParams::new(32).unwrap();
        let settings = ExperimentSettings {
            budget: default_budget(32, 200.0),
            fractions: vec![0.25, 0.5, 0.75, 1.0],
            sample_every: 0,
        };
        for replica in 0..5 {
            let (record, _) =
                run_experiment_stable(&spec, &params, 123, replica, &settings).unwrap();
            let times: Vec<Option<u64>> = record.t_fraction.iter().map(|&(_, t)| t).collect();
            for w in times.windows(2) {
                if let (Some(a), Some(b)) = (w[0], w[1]) {
                    assert!(a <= b, "t_fraction not monotone: {times:?}");
                }
            }
            if let Some(tv) = record.t_valid {
                for (_, t) in &record.t_fraction {
                    assert!(t.unwrap() <= tv);
                }
            }
        }
    }

    #[test]
    fn fmt_sig_six_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1.00000");
        assert_eq!(fmt_sig(0.123456789), "0.123457");
        assert_eq!(fmt_sig(1234.56789), "1234.57");
        assert_eq!(fmt_sig(1234567.0), "1234567");
    }

    #[test]
    fn csv_outputs_deterministic() {
        let dir = std::env::temp_dir().join(format!("popstab_csv_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let spec = ScenarioSpec::new(ScenarioKind::DuplicateRanks, 16);
        let params = SSParams::new(16).unwrap();
        let settings = ExperimentSettings {
            budget: default_budget(16, 200.0),
            fractions: vec![0.5, 0.9],
            sample_every: 16,
        };
        let mut bytes = Vec::new();
        for pass in 0..2 {
            let (record, rows) = run_experiment_stable(&spec, &params, 11, 0, &settings).unwrap();
            let runs = dir.join(format!("runs_{pass}.csv"));
            let ts = dir.join(format!("ts_{pass}.csv"));
            write_runs_csv(&[record], &settings.fractions, &runs).unwrap();
            write_timeseries_csv(&rows, &ts).unwrap();
            bytes.push((std::fs::read(&runs).unwrap(), std::fs::read(&ts).unwrap()));
        }
        assert_eq!(bytes[0], bytes[1]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn empty_records_write_header_only() {
        let dir = std::env::temp_dir().join(format!("popstab_hdr_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("runs.csv");
        write_runs_csv(&[], &[0.5], &path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            content,
            "scenario,n,seed,replica,budget,interactions_used,t_valid,silent_confirmed,num_resets,t_frac_0.5\n"
        );
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sweep_single_replica_min_equals_max() {
        let req = SweepRequest {
            kind: ScenarioKind::AllElecting,
            ns: vec![16],
            replicas: 1,
            fractions: vec![0.5],
            master_seed: 5,
            budget_factor: 200.0,
        };
        let (rows, records) = sweep(&req, &SweepProtocol::Stable(Default::default())).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(records.len(), 1);
        for row in rows {
            assert_eq!(row.min_norm, row.median_norm);
            assert_eq!(row.median_norm, row.p90_norm);
            assert_eq!(row.p90_norm, row.max_norm);
        }
    }
}
