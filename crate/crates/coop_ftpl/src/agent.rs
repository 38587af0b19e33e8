//! Perturbed-leader agents: prediction, state, and parameter tuning.
//!
//! Each agent keeps a cumulative loss-estimate vector. When active it plays
//! `argmax_a <a, Z − η·L̂>` with a fresh Laplace perturbation `Z`; on request
//! it produces a K-vector for its neighbors through the resampling loop. The
//! tuning rule sets `η` from the horizon, the decision set, the network's
//! independence number, and the total activation mass, and derives the
//! truncation `β = ⌊1/(kη)⌋`.

use thiserror::Error;

use crate::action::{Action, ActionError, DecisionFamily};
use crate::estimator::{coop_gr, EstimatorError, KVector, LossEstimate, ResampleMode};
use crate::perturb::{sample_laplace_vector, RngStream};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("estimate has dimension {got}, agent state has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("estimate carries a negative component at index {index}")]
    NegativeEstimate { index: usize },
    #[error("dimension k={k} rejected: the tuning rule needs log(k) > 0, so k >= 2")]
    DegenerateDimension { k: usize },
    #[error("support size m={m} invalid for k={k}")]
    BadSupportSize { m: usize, k: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("independence number must be at least 1")]
    ZeroAlpha,
    #[error("total activation mass Q={q} must be positive")]
    NonPositiveActivationMass { q: f64 },
    #[error(transparent)]
    Oracle(#[from] ActionError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// One agent's learning state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    /// Cumulative loss estimate L̂; componentwise nondecreasing over rounds.
    pub cum_loss_est: Vec<f64>,
    pub eta: f64,
    pub beta: u32,
    /// The agent's own activation probability, used in its resampling loop.
    pub q_self: f64,
    /// Total linear-optimization oracle invocations attributed to this agent.
    pub oracle_calls: u64,
}

impl AgentState {
    pub fn new(id: usize, k: usize, eta: f64, beta: u32, q_self: f64) -> AgentState {
        assert!(eta > 0.0, "learning rate must be positive");
        assert!(beta >= 1, "truncation must be at least 1");
        assert!((0.0..=1.0).contains(&q_self));
        AgentState {
            id,
            cum_loss_est: vec![0.0; k],
            eta,
            beta,
            q_self,
            oracle_calls: 0,
        }
    }

    /// Perturbed-leader prediction. Consumes exactly `k` draws from the
    /// prediction stream and one oracle call.
    pub fn predict(
        &mut self,
        family: &DecisionFamily,
        stream: &mut RngStream,
    ) -> Result<Action, AgentError> {
        let k = family.dimension();
        let z = sample_laplace_vector(stream, k);
        let score: Vec<f64> = (0..k)
            .map(|i| z[i] - self.eta * self.cum_loss_est[i])
            .collect();
        let action = family.oracle_argmax(&score)?;
        self.oracle_calls += 1;
        Ok(action)
    }

    /// Produce the K-vector requested by neighbors this round, accounting
    /// the resampling oracle calls to this agent.
    pub fn produce_k_vector(
        &mut self,
        family: &DecisionFamily,
        z_stream: &RngStream,
        bernoulli_stream: &RngStream,
        mode: ResampleMode,
    ) -> Result<KVector, AgentError> {
        let outcome = coop_gr(
            &self.cum_loss_est,
            family,
            self.eta,
            self.q_self,
            self.beta,
            z_stream,
            bernoulli_stream,
            mode,
        )?;
        self.oracle_calls += outcome.oracle_calls;
        Ok(outcome.k_vector)
    }

    /// Fold a round's loss estimate into the cumulative state.
    pub fn update(&mut self, est: &LossEstimate) -> Result<(), AgentError> {
        let values = est.values();
        if values.len() != self.cum_loss_est.len() {
            return Err(AgentError::DimensionMismatch {
                expected: self.cum_loss_est.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|&v| v < 0.0) {
            return Err(AgentError::NegativeEstimate { index });
        }
        for (acc, v) in self.cum_loss_est.iter_mut().zip(values) {
            *acc += v;
        }
        Ok(())
    }
}

/// Resolved learning-rate/truncation pair.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TuningResult {
    pub eta: f64,
    pub beta: u32,
    pub alpha1: usize,
    pub q_total: f64,
    /// Set when `⌊1/(kη)⌋` was 0 and the truncation was clamped to 1; the
    /// `β ≤ 1/(kη)` hypothesis no longer holds in that regime.
    pub beta_clamped: bool,
}

/// Tuning rule: `η = √(3·m·ln(k) / (5·k·T·(k·α₁/Q + m)))`, `β = ⌊1/(kη)⌋`
/// clamped to at least 1. Natural logarithm throughout.
pub fn tune_parameters(
    k: usize,
    m: usize,
    horizon: u64,
    alpha1: usize,
    q_total: f64,
) -> Result<TuningResult, AgentError> {
    if k < 2 {
        return Err(AgentError::DegenerateDimension { k });
    }
    if m == 0 || m > k {
        return Err(AgentError::BadSupportSize { m, k });
    }
    if horizon == 0 {
        return Err(AgentError::ZeroHorizon);
    }
    if alpha1 == 0 {
        return Err(AgentError::ZeroAlpha);
    }
    if !q_total.is_finite() || q_total <= 0.0 {
        return Err(AgentError::NonPositiveActivationMass { q: q_total });
    }
    let kf = k as f64;
    let mf = m as f64;
    let cooperation_term = kf * alpha1 as f64 / q_total + mf;
    let eta = (3.0 * mf * kf.ln() / (5.0 * kf * horizon as f64 * cooperation_term)).sqrt();
    let raw_beta = (1.0 / (kf * eta)).floor();
    let beta_clamped = raw_beta < 1.0;
    let beta = if beta_clamped { 1 } else { raw_beta as u32 };
    Ok(TuningResult {
        eta,
        beta,
        alpha1,
        q_total,
        beta_clamped,
    })
}

/// The regret envelope `2Q·√(15·m·k·T·ln(k)·(k·α₁/Q + m))`, used by the
/// harness as an overlay and sanity ceiling.
pub fn bound_value(k: usize, m: usize, horizon: u64, alpha1: usize, q_total: f64) -> f64 {
    let kf = k as f64;
    let mf = m as f64;
    let cooperation_term = kf * alpha1 as f64 / q_total + mf;
    2.0 * q_total * (15.0 * mf * kf * horizon as f64 * kf.ln() * cooperation_term).sqrt()
}
