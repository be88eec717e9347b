//! Simulation, exact solvers and evaluation machinery for cost-aware
//! exploration agents.
//!
//! Three environments share one episode contract ([`episode`]):
//!
//! - [`pandora`]: the discounted Pandora's box problem with an exact oracle.
//! - [`qa`]: question answering with an optional, discounted retrieval step,
//!   plus isotonic calibration of verbalized confidence.
//! - [`codeenv`]: reading a CSV file of unknown dialect, where unit tests and
//!   code attempts carry multiplicative costs. The dataset for it lives in
//!   [`filereading`].

pub mod codeenv;
pub mod episode;
pub mod filereading;
pub mod jsonl;
pub mod pandora;
pub mod qa;
pub mod rng;

pub use episode::{
    classify_action_pattern, discounted_reward, run_batch, run_episode, ActionKind, ActionPattern,
    ActionRecord, ChatTurn, CoreError, CostModel, EnvAction, EnvError, EnvKind, Environment,
    EpisodeStatus, EpisodeTrace, Observation, ObservationRecord, Outcome, Policy, PolicyError,
    Step, Turn,
};

/// Default per-episode step cap.
pub const DEFAULT_MAX_STEPS: usize = 16;
