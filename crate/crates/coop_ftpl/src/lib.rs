//! Cooperative follow-the-perturbed-leader for nonstochastic combinatorial
//! semi-bandits on a communication graph, with a deterministic discrete-time
//! simulator and experiment harness.
//!
//! The setting: agents sit on an undirected network. Each round a random
//! subset activates, plays a binary action with at most `m` of `k`
//! components, and pays a linear loss chosen in advance by an oblivious
//! adversary. Neighbors of active agents observe the played components'
//! losses and exchange small integer vectors produced by geometric
//! resampling; from these each agent builds an almost-unbiased loss estimate
//! without ever computing an action probability. The network regret is the
//! gap between the active agents' cumulative loss and that of the best
//! single action in hindsight.
//!
//! Module map:
//! - [`graph`]: the communication network, closed neighborhoods, exact and
//!   greedy independence numbers.
//! - [`action`]: decision families over `{0,1}^k` and the linear
//!   optimization oracle.
//! - [`perturb`]: lineage-keyed deterministic random streams and the Laplace
//!   sampler.
//! - [`estimator`]: cooperative geometric resampling and the loss estimator.
//! - [`agent`]: the perturbed-leader agent, state updates, parameter tuning.
//! - [`sim`]: the round protocol, loss/activation models, traces, regret.
//! - [`config`]: the flat `key = value` experiment format.
//! - [`harness`]: multi-seed sweeps, the cooperation ablation, CSV/JSONL
//!   emission.
//! - [`verify`]: executable distribution checks backing the estimator.

pub mod action;
pub mod agent;
pub mod config;
pub mod estimator;
pub mod graph;
pub mod harness;
pub mod perturb;
pub mod sim;
pub mod verify;

pub use action::{Action, DecisionFamily, FamilyKind};
pub use agent::{bound_value, tune_parameters, AgentState, TuningResult};
pub use estimator::{KVector, LossEstimate, ObservationFlags, ResampleMode};
pub use graph::{Graph, IndependentSet};
pub use perturb::{derive_stream, RngStream, StreamPurpose};
pub use sim::{
    compute_network_regret, make_lower_bound_instance, no_cooperation_baseline, run_episode,
    ActivationModel, LossModel, RegretTrace, SimConfig,
};
