//! Simulator and experiment harness for silent self-stabilizing ranking in
//! the population protocol model.
//!
//! n anonymous agents interact in uniformly random ordered pairs and must
//! end up holding the ranks 1..=n, one each. Two protocols are provided:
//!
//! - [`ranking_base`]: the space-efficient but non-self-stabilizing
//!   protocol. A pluggable leader-election stage elects one agent, which
//!   hands out ranks phase by phase while staying unaware of its own role
//!   except when it meets an unranked agent.
//! - [`stable_ranking`]: the self-stabilizing variant. It wraps the same
//!   ranking machinery with error detection (duplicate ranks, stuck
//!   progress) and a reset epidemic that restarts everything from leader
//!   election, so a valid silent configuration is reached from any initial
//!   configuration.
//!
//! [`engine`] holds the scheduler core, [`scenarios`] the canonical and
//! adversarial initial configurations, [`harness`] the experiment runner
//! with CSV export, and [`cli`] the command-line front end.

pub mod cli;
pub mod engine;
pub mod harness;
pub mod ranking_base;
pub mod scenarios;
pub mod stable_ranking;
mod util;

pub use engine::{Configuration, Protocol, Rng};
pub use ranking_base::{NonSSParams, NonSSState, OracleLeaderElection, SpaceEfficientRanking};
pub use scenarios::{ScenarioKind, ScenarioSpec};
pub use stable_ranking::{SSOverrides, SSParams, StableRanking, StableState};
