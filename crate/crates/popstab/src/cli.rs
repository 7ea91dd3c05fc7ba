//! Command-line front end: simulate, sweep, and audit-states.
//!
//! Flags may also come from a JSON config file (same field names, snake
//! case); explicit flags win. The effective configuration is echoed to
//! `effective_config.json` next to the outputs so every run is
//! reproducible from its artifacts.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::harness::{
    self, default_budget, write_runs_csv, write_sweep_csv, write_timeseries_csv,
    ExperimentSettings, SweepProtocol, SweepRequest,
};
use crate::ranking_base::{nonss_state_count, LeaderElection, NonSSParams, OracleLeaderElection};
use crate::scenarios::{self, ScenarioKind, ScenarioSpec};
use crate::stable_ranking::{ss_state_breakdown, SSOverrides, SSParams};
use crate::util::ceil_log2;

pub const SEED_ENV_VAR: &str = "POPSTAB_SEED";

const DEFAULT_N: u32 = 256;
const DEFAULT_SEED: u64 = 1;
const DEFAULT_REPLICAS: u32 = 100;
const DEFAULT_BUDGET_FACTOR: f64 = 200.0;
const DEFAULT_FRACTIONS: [f64; 3] = [0.5, 0.75, 0.9];

#[derive(Parser, Debug)]
#[command(
    name = "popstab",
    version,
    about = "Population-protocol ranking simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation; writes runs.csv and timeseries.csv.
    Simulate(CommonArgs),
    /// Run replicated simulations over several population sizes; writes sweep.csv.
    Sweep(CommonArgs),
    /// Print state-space counts and overhead decomposition.
    AuditStates(AuditArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Protocol: stable (self-stabilizing) or nonss.
    #[arg(long)]
    protocol: Option<String>,
    /// Initial configuration: fresh_triggered, all_electing, fig2,
    /// duplicate_ranks, lone_unranked, random_arbitrary.
    #[arg(long)]
    scenario: Option<String>,
    /// Population size (simulate).
    #[arg(long)]
    n: Option<u32>,
    /// Comma-separated population sizes (sweep).
    #[arg(long = "n-list", value_delimiter = ',')]
    n_list: Option<Vec<u32>>,
    /// Master seed; falls back to POPSTAB_SEED, then 1.
    #[arg(long)]
    seed: Option<u64>,
    /// Replicas per population size (sweep).
    #[arg(long)]
    replicas: Option<u32>,
    /// Fixed interaction budget (simulate only).
    #[arg(long)]
    budget: Option<u64>,
    /// Budget as a multiple of n^2 log2 n.
    #[arg(long = "budget-factor")]
    budget_factor: Option<f64>,
    /// Comma-separated ranked-fraction thresholds in (0, 1].
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Time-series sampling cadence in interactions; 0 disables.
    #[arg(long = "sample-every")]
    sample_every: Option<u64>,
    #[arg(long = "c-wait")]
    c_wait: Option<f64>,
    #[arg(long = "c-live")]
    c_live: Option<f64>,
    #[arg(long = "l-max")]
    l_max: Option<u32>,
    #[arg(long = "d-max")]
    d_max: Option<u32>,
    #[arg(long = "r-max")]
    r_max: Option<u32>,
    /// Output directory for CSV files and the effective config.
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Duplicate rank value for the duplicate_ranks scenario.
    #[arg(long = "duplicate-rank")]
    duplicate_rank: Option<u32>,
    /// JSON config file; explicit flags take precedence over its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    /// Protocol: stable or nonss.
    #[arg(long)]
    protocol: Option<String>,
    /// Population size.
    #[arg(long)]
    n: Option<u32>,
    /// Doubling range start:end, e.g. 128:8192; prints the overhead ratio
    /// per n.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long = "c-wait")]
    c_wait: Option<f64>,
    #[arg(long = "c-live")]
    c_live: Option<f64>,
    #[arg(long = "l-max")]
    l_max: Option<u32>,
    #[arg(long = "d-max")]
    d_max: Option<u32>,
    #[arg(long = "r-max")]
    r_max: Option<u32>,
}

/// File-form of the flags; unknown fields are rejected so typos fail loudly.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub protocol: Option<String>,
    pub scenario: Option<String>,
    pub n: Option<u32>,
    pub n_list: Option<Vec<u32>>,
    pub seed: Option<u64>,
    pub replicas: Option<u32>,
    pub budget: Option<u64>,
    pub budget_factor: Option<f64>,
    pub fractions: Option<Vec<f64>>,
    pub sample_every: Option<u64>,
    pub c_wait: Option<f64>,
    pub c_live: Option<f64>,
    pub l_max: Option<u32>,
    pub d_max: Option<u32>,
    pub r_max: Option<u32>,
    pub out_dir: Option<String>,
    pub duplicate_rank: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ProtocolChoice {
    Stable,
    NonSS,
}

impl ProtocolChoice {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "stable" => Ok(ProtocolChoice::Stable),
            "nonss" => Ok(ProtocolChoice::NonSS),
            other => Err(format!(
                "unknown protocol {other:?}: expected stable or nonss"
            )),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            ProtocolChoice::Stable => "stable",
            ProtocolChoice::NonSS => "nonss",
        }
    }
}

/// Entry point; returns the process exit code (0 ok, 1 stabilization not
/// observed within budget, 2 argument errors).
pub fn run<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::AuditStates(args) => cmd_audit_states(args),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn load_config(path: &Path) -> Result<CliConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
}

/// Flags over config-file fields.
fn merge(args: &CommonArgs) -> Result<CliConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => CliConfig::default(),
    };
    macro_rules! overlay {
        ($($field:ident),*) => {
            $(if args.$field.is_some() { cfg.$field = args.$field.clone(); })*
        };
    }
    overlay!(
        protocol,
        scenario,
        n,
        n_list,
        seed,
        replicas,
        budget,
        budget_factor,
        fractions,
        sample_every,
        c_wait,
        c_live,
        l_max,
        d_max,
        r_max,
        duplicate_rank
    );
    if let Some(dir) = &args.out_dir {
        cfg.out_dir = Some(dir.display().to_string());
    }
    Ok(cfg)
}

fn seed_from(cfg: &CliConfig) -> u64 {
    cfg.seed
        .or_else(|| {
            std::env::var(SEED_ENV_VAR)
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or(DEFAULT_SEED)
}

fn validated_fractions(cfg: &CliConfig) -> Result<Vec<f64>, String> {
    let fractions = cfg
        .fractions
        .clone()
        .unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec());
    if fractions.is_empty() {
        return Err("fractions must not be empty".into());
    }
    for &c in &fractions {
        if !(c > 0.0 && c <= 1.0) {
            return Err(format!("fraction {c} outside (0, 1]"));
        }
    }
    Ok(fractions)
}

fn ss_overrides(cfg: &CliConfig) -> SSOverrides {
    SSOverrides {
        c_wait: cfg.c_wait,
        c_live: cfg.c_live,
        l_max: cfg.l_max,
        d_max: cfg.d_max,
        r_max: cfg.r_max,
        ..Default::default()
    }
}

fn scenario_kind(cfg: &CliConfig) -> Result<ScenarioKind, String> {
    let name = cfg.scenario.as_deref().unwrap_or("all_electing");
    ScenarioKind::parse(name).map_err(|e| e.to_string())
}

fn protocol_choice(cfg: &CliConfig) -> Result<ProtocolChoice, String> {
    ProtocolChoice::parse(cfg.protocol.as_deref().unwrap_or("stable"))
}

fn check_scenario_protocol(protocol: ProtocolChoice, kind: ScenarioKind) -> Result<(), String> {
    if protocol == ProtocolChoice::NonSS && !scenarios::nonss_supports(kind) {
        return Err(format!(
            "scenario {} is not defined for the nonss protocol (use all_electing)",
            kind.label()
        ));
    }
    Ok(())
}

fn prepare_out_dir(cfg: &CliConfig) -> Result<PathBuf, String> {
    let dir = PathBuf::from(cfg.out_dir.clone().unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&dir)
        .map_err(|e| format!("cannot create out dir {}: {e}", dir.display()))?;
    Ok(dir)
}

fn echo_effective_config(cfg: &CliConfig, dir: &Path) -> Result<(), String> {
    let path = dir.join("effective_config.json");
    let text = serde_json::to_string_pretty(cfg).expect("config serializes");
    std::fs::write(&path, text + "\n").map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn cmd_simulate(args: CommonArgs) -> Result<i32, String> {
    let mut cfg = merge(&args)?;
    if cfg.n_list.is_some() {
        return Err("--n-list applies to sweep, not simulate".into());
    }
    let protocol = protocol_choice(&cfg)?;
    let kind = scenario_kind(&cfg)?;
    check_scenario_protocol(protocol, kind)?;
    let n = cfg.n.unwrap_or(DEFAULT_N);
    if n < 2 {
        return Err(format!("population size must be at least 2, got {n}"));
    }
    let seed = seed_from(&cfg);
    let fractions = validated_fractions(&cfg)?;
    let budget_factor = cfg.budget_factor.unwrap_or(DEFAULT_BUDGET_FACTOR);
    if budget_factor <= 0.0 {
        return Err("budget factor must be positive".into());
    }
    let budget = cfg
        .budget
        .unwrap_or_else(|| default_budget(n, budget_factor));
    let sample_every = cfg.sample_every.unwrap_or(u64::from(n));
    let settings = ExperimentSettings {
        budget,
        fractions: fractions.clone(),
        sample_every,
    };

    // Resolve and echo the effective configuration before the run.
    cfg.protocol = Some(protocol.label().to_string());
    cfg.scenario = Some(kind.label().to_string());
    cfg.n = Some(n);
    cfg.seed = Some(seed);
    cfg.budget = Some(budget);
    cfg.budget_factor = Some(budget_factor);
    cfg.fractions = Some(fractions.clone());
    cfg.sample_every = Some(sample_every);
    let out_dir = prepare_out_dir(&cfg)?;
    echo_effective_config(&cfg, &out_dir)?;

    let mut spec = ScenarioSpec::new(kind, n);
    spec.duplicate_rank = cfg.duplicate_rank;
    let (record, rows) = match protocol {
        ProtocolChoice::Stable => {
            let params =
                SSParams::with_overrides(n, &ss_overrides(&cfg)).map_err(|e| e.to_string())?;
            harness::run_experiment_stable(&spec, &params, seed, 0, &settings)
                .map_err(|e| e.to_string())?
        }
        ProtocolChoice::NonSS => {
            let params =
                NonSSParams::new(n, cfg.c_wait.unwrap_or(2.0)).map_err(|e| e.to_string())?;
            harness::run_experiment_nonss(&spec, &params, seed, 0, &settings)
                .map_err(|e| e.to_string())?
        }
    };

    write_runs_csv(
        std::slice::from_ref(&record),
        &fractions,
        &out_dir.join("runs.csv"),
    )
    .map_err(|e| e.to_string())?;
    write_timeseries_csv(&rows, &out_dir.join("timeseries.csv")).map_err(|e| e.to_string())?;

    let t_valid = record
        .t_valid
        .map(|t| t.to_string())
        .unwrap_or_else(|| "-".into());
    println!(
        "scenario={} n={} seed={} t_valid={} resets={} silent_confirmed={}",
        record.scenario,
        record.n,
        record.seed,
        t_valid,
        record.reset_times.len(),
        record.silent_confirmed
    );
    Ok(if record.t_valid.is_some() && record.silent_confirmed {
        0
    } else {
        1
    })
}

fn cmd_sweep(args: CommonArgs) -> Result<i32, String> {
    let mut cfg = merge(&args)?;
    if cfg.budget.is_some() {
        return Err("sweep budgets scale per n: use --budget-factor".into());
    }
    let protocol = protocol_choice(&cfg)?;
    let kind = scenario_kind(&cfg)?;
    check_scenario_protocol(protocol, kind)?;
    let ns = cfg
        .n_list
        .clone()
        .or_else(|| cfg.n.map(|n| vec![n]))
        .unwrap_or_default();
    if ns.is_empty() {
        return Err("sweep needs --n-list".into());
    }
    if let Some(&bad) = ns.iter().find(|&&n| n < 2) {
        return Err(format!("population size must be at least 2, got {bad}"));
    }
    let replicas = cfg.replicas.unwrap_or(DEFAULT_REPLICAS);
    if replicas == 0 {
        return Err("replicas must be at least 1".into());
    }
    let seed = seed_from(&cfg);
    let fractions = validated_fractions(&cfg)?;
    let budget_factor = cfg.budget_factor.unwrap_or(DEFAULT_BUDGET_FACTOR);
    if budget_factor <= 0.0 {
        return Err("budget factor must be positive".into());
    }

    cfg.protocol = Some(protocol.label().to_string());
    cfg.scenario = Some(kind.label().to_string());
    cfg.n_list = Some(ns.clone());
    cfg.seed = Some(seed);
    cfg.replicas = Some(replicas);
    cfg.budget_factor = Some(budget_factor);
    cfg.fractions = Some(fractions.clone());
    let out_dir = prepare_out_dir(&cfg)?;
    echo_effective_config(&cfg, &out_dir)?;

    let request = SweepRequest {
        kind,
        ns,
        replicas,
        fractions,
        master_seed: seed,
        budget_factor,
    };
    let sweep_protocol = match protocol {
        ProtocolChoice::Stable => SweepProtocol::Stable(ss_overrides(&cfg)),
        ProtocolChoice::NonSS => SweepProtocol::NonSS {
            c_wait: cfg.c_wait.unwrap_or(2.0),
        },
    };
    let (rows, records) = harness::sweep(&request, &sweep_protocol).map_err(|e| e.to_string())?;
    write_sweep_csv(&rows, &out_dir.join("sweep.csv")).map_err(|e| e.to_string())?;

    let stabilized = records.iter().filter(|r| r.t_valid.is_some()).count();
    println!(
        "sweep: {} rows, {}/{} replicas stabilized within budget",
        rows.len(),
        stabilized,
        records.len()
    );
    Ok(if stabilized == records.len() { 0 } else { 1 })
}

fn parse_audit_sweep(range: &str) -> Result<Vec<u32>, String> {
    let (start, end) = range
        .split_once(':')
        .ok_or_else(|| format!("invalid sweep range {range:?}: expected start:end"))?;
    let start: u32 = start
        .parse()
        .map_err(|_| format!("invalid sweep start {start:?}"))?;
    let end: u32 = end
        .parse()
        .map_err(|_| format!("invalid sweep end {end:?}"))?;
    if start < 2 || end < start {
        return Err(format!("invalid sweep range {range:?}"));
    }
    let mut ns = Vec::new();
    let mut n = start;
    while n <= end {
        ns.push(n);
        match n.checked_mul(2) {
            Some(next) => n = next,
            None => break,
        }
    }
    Ok(ns)
}

fn cmd_audit_states(args: AuditArgs) -> Result<i32, String> {
    let protocol = ProtocolChoice::parse(args.protocol.as_deref().unwrap_or("stable"))?;
    let ns = match (&args.sweep, args.n) {
        (Some(range), _) => parse_audit_sweep(range)?,
        (None, Some(n)) if n >= 2 => vec![n],
        (None, Some(n)) => return Err(format!("population size must be at least 2, got {n}")),
        (None, None) => vec![DEFAULT_N],
    };
    let sweeping = args.sweep.is_some();
    for n in ns {
        match protocol {
            ProtocolChoice::NonSS => {
                let params =
                    NonSSParams::new(n, args.c_wait.unwrap_or(2.0)).map_err(|e| e.to_string())?;
                let le = OracleLeaderElection::new(n);
                let total = nonss_state_count(&params, &le);
                let overhead = total - u64::from(n);
                print!(
                    "nonss n={n} states={total} (ranks={n} wait={} phase={} le={})",
                    params.w_max,
                    ceil_log2(n),
                    2 * le.state_count()
                );
                if sweeping {
                    print!(
                        " overhead/log2n={:.3}",
                        overhead as f64 / f64::from(n).log2()
                    );
                }
                println!();
            }
            ProtocolChoice::Stable => {
                let ov = SSOverrides {
                    c_wait: args.c_wait,
                    c_live: args.c_live,
                    l_max: args.l_max,
                    d_max: args.d_max,
                    r_max: args.r_max,
                    ..Default::default()
                };
                let params = SSParams::with_overrides(n, &ov).map_err(|e| e.to_string())?;
                let b = ss_state_breakdown(&params);
                print!(
                    "stable n={n} states={} (ranks={} resetting={} electing={} main={})",
                    b.total(),
                    b.ranks,
                    b.resetting,
                    b.electing,
                    b.main_unranked
                );
                if sweeping {
                    let log2n = f64::from(n).log2();
                    print!(
                        " overhead/log2n^2={:.3}",
                        b.overhead() as f64 / (log2n * log2n)
                    );
                }
                println!();
            }
        }
    }
    Ok(0)
}
