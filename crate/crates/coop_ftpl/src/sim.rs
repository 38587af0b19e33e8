//! Round-by-round environment: stochastic activations, an oblivious loss
//! sequence, semi-bandit feedback routing, K-vector exchange, and regret
//! accounting.
//!
//! A round has four barriered phases. Active agents predict; neighbors of
//! active agents receive the masked loss feedback; every requested agent
//! produces one K-vector from its *previous* cumulative estimate and
//! broadcasts it identically to all requesters; finally the receivers fold
//! their loss estimates into their state. Every random draw is keyed by
//! `(seed, agent, round, purpose)`, so the schedule — sequential or
//! parallel — cannot change the outcome.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionError, DecisionFamily};
use crate::agent::{bound_value, tune_parameters, AgentError, AgentState};
use crate::estimator::{
    estimate_loss, EstimatorError, KVector, ObservationFlags, ResampleMode,
};
use crate::graph::{Graph, GraphError};
use crate::perturb::{derive_stream, StreamPurpose};

/// Lineage id reserved for the environment's own draws.
const ADVERSARY_ID: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    ConfigValidation(String),
    #[error("protocol violation at round {t}: {message}")]
    ProtocolViolation { t: u64, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// The oblivious adversary: the full loss sequence is fixed (materialized)
/// before any agent draw of the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LossModel {
    /// Independent Bernoulli losses with fixed per-component means.
    IidBernoulli { means: Vec<f64> },
    /// Bernoulli losses whose means switch between fixed segments; the last
    /// segment extends to the horizon.
    PiecewiseSwitching { segments: Vec<LossSegment> },
    /// An explicit `T x k` loss matrix.
    FromFile { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSegment {
    pub rounds: u64,
    pub means: Vec<f64>,
}

impl LossModel {
    pub fn kind_str(&self) -> &'static str {
        match self {
            LossModel::IidBernoulli { .. } => "iid_bernoulli",
            LossModel::PiecewiseSwitching { .. } => "piecewise",
            LossModel::FromFile { .. } => "file",
        }
    }

    fn check_means(means: &[f64], k: usize, what: &str) -> Result<(), SimError> {
        if means.len() != k {
            return Err(SimError::ConfigValidation(format!(
                "{what}: {} means for dimension k={k}",
                means.len()
            )));
        }
        if let Some(&bad) = means.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(SimError::ConfigValidation(format!(
                "{what}: mean {bad} outside [0, 1]"
            )));
        }
        Ok(())
    }

    /// Materialize the full loss sequence from the adversary's own stream.
    pub fn materialize(
        &self,
        k: usize,
        horizon: u64,
        root_seed: u64,
    ) -> Result<Vec<Vec<f64>>, SimError> {
        let mut out = Vec::with_capacity(horizon as usize);
        match self {
            LossModel::IidBernoulli { means } => {
                Self::check_means(means, k, "loss.means")?;
                for t in 1..=horizon {
                    let mut s = derive_stream(root_seed, ADVERSARY_ID, t, StreamPurpose::Adversary);
                    out.push(
                        means
                            .iter()
                            .map(|&m| if s.next_bernoulli(m) { 1.0 } else { 0.0 })
                            .collect(),
                    );
                }
            }
            LossModel::PiecewiseSwitching { segments } => {
                if segments.is_empty() {
                    return Err(SimError::ConfigValidation(
                        "loss.segments: at least one segment required".into(),
                    ));
                }
                for seg in segments {
                    Self::check_means(&seg.means, k, "loss.segments")?;
                    if seg.rounds == 0 {
                        return Err(SimError::ConfigValidation(
                            "loss.segments: zero-length segment".into(),
                        ));
                    }
                }
                let mut seg_idx = 0usize;
                let mut seg_left = segments[0].rounds;
                for t in 1..=horizon {
                    if seg_left == 0 && seg_idx + 1 < segments.len() {
                        seg_idx += 1;
                        seg_left = segments[seg_idx].rounds;
                    }
                    seg_left = seg_left.saturating_sub(1);
                    let means = &segments[seg_idx].means;
                    let mut s = derive_stream(root_seed, ADVERSARY_ID, t, StreamPurpose::Adversary);
                    out.push(
                        means
                            .iter()
                            .map(|&m| if s.next_bernoulli(m) { 1.0 } else { 0.0 })
                            .collect(),
                    );
                }
            }
            LossModel::FromFile { rows } => {
                if (rows.len() as u64) < horizon {
                    return Err(SimError::ConfigValidation(format!(
                        "loss.file: {} rows, horizon {horizon}",
                        rows.len()
                    )));
                }
                for (idx, row) in rows.iter().take(horizon as usize).enumerate() {
                    Self::check_means(row, k, &format!("loss.file row {}", idx + 1))?;
                    out.push(row.clone());
                }
            }
        }
        Ok(out)
    }
}

/// Independent per-agent Bernoulli activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationModel {
    pub q: Vec<f64>,
}

impl ActivationModel {
    pub fn broadcast(q: f64, n: usize) -> ActivationModel {
        ActivationModel { q: vec![q; n] }
    }

    pub fn q_total(&self) -> f64 {
        self.q.iter().sum()
    }

    fn validate(&self, n: usize) -> Result<(), SimError> {
        if self.q.len() != n {
            return Err(SimError::ConfigValidation(format!(
                "activation.q: {} probabilities for {n} agents",
                self.q.len()
            )));
        }
        if let Some(&bad) = self.q.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(SimError::ConfigValidation(format!(
                "activation.q: probability {bad} outside [0, 1]"
            )));
        }
        Ok(())
    }

    /// Draw the active set for round `t` as a bitmask.
    pub fn draw_active_mask(&self, t: u64, root_seed: u64) -> u64 {
        let mut mask = 0u64;
        for (v, &q) in self.q.iter().enumerate() {
            let mut s = derive_stream(root_seed, v as u64, t, StreamPurpose::Activation);
            if s.next_bernoulli(q) {
                mask |= 1u64 << v;
            }
        }
        mask
    }
}

/// A semi-bandit feedback message `from -> to`: the sender's played
/// components carry the loss values, everything else is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackMessage {
    pub from: usize,
    pub to: usize,
    pub masked_loss: Vec<f64>,
}

/// A K-vector message `from -> to` (self-use is not a message).
#[derive(Debug, Clone, PartialEq)]
pub struct KMessage {
    pub from: usize,
    pub to: usize,
    pub k_vector: KVector,
}

/// Everything that happened in one simulated round (kept only when
/// `record_steps` is set; the long-horizon runs keep the trace columns only).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub active: Vec<usize>,
    pub predictions: Vec<(usize, Action)>,
    pub feedback: Vec<FeedbackMessage>,
    pub k_exchange: Vec<KMessage>,
    pub round_loss: f64,
}

/// Per-round trace columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRow {
    pub t: u64,
    pub cum_loss: f64,
    pub best_fixed_loss: f64,
    pub regret: f64,
    pub oracle_calls_total: u64,
}

/// How the independence number entering the tuning rule was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alpha1Source {
    Override,
    Exact,
    GreedyLowerBound,
}

/// Parameters the episode actually ran with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub eta: f64,
    pub beta: u32,
    pub alpha1: usize,
    pub alpha1_source: Alpha1Source,
    pub q_total: f64,
    pub bound_value: f64,
    pub beta_clamped: bool,
}

/// Full outcome of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub seed: u64,
    pub rounds: Vec<RoundRow>,
    /// Cumulative activation-weighted loss Σ_{s<=t} |S_s|·loss_s, per round.
    pub weighted_loss_rows: Vec<Vec<f64>>,
    pub best_action: Action,
    pub agent_oracle_calls: Vec<u64>,
    /// Largest number of oracle calls any agent spent in a single round.
    pub max_agent_round_oracle_calls: u64,
    /// Dense `n x n` counter of K-vector messages, indexed `from * n + to`.
    pub k_messages: Vec<u64>,
    /// Per agent: rounds in which at least one component was observed.
    pub rounds_with_observation: Vec<u64>,
    pub steps: Option<Vec<StepRecord>>,
    pub params: ResolvedParams,
}

impl RegretTrace {
    pub fn final_regret(&self) -> f64 {
        self.rounds.last().map(|r| r.regret).unwrap_or(0.0)
    }

    pub fn final_cum_loss(&self) -> f64 {
        self.rounds.last().map(|r| r.cum_loss).unwrap_or(0.0)
    }

    pub fn total_oracle_calls(&self) -> u64 {
        self.agent_oracle_calls.iter().sum()
    }

    /// K-vector messages exchanged between `a` and `b`, both directions.
    pub fn k_messages_between(&self, a: usize, b: usize) -> u64 {
        let n = self.rounds_with_observation.len();
        self.k_messages[a * n + b] + self.k_messages[b * n + a]
    }
}

/// A fully specified experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub graph: Graph,
    pub family: DecisionFamily,
    pub loss: LossModel,
    pub activation: ActivationModel,
    pub horizon: u64,
    /// Learning rate; 0 requests auto-tuning.
    pub eta: f64,
    /// Truncation parameter; 0 requests auto-tuning.
    pub beta: u32,
    pub mode: ResampleMode,
    /// When false, message exchange is disabled and every agent sees only
    /// its own feedback (the no-cooperation ablation).
    pub cooperation: bool,
    pub alpha1_override: Option<usize>,
    pub record_steps: bool,
}

impl SimConfig {
    pub fn new(
        graph: Graph,
        family: DecisionFamily,
        loss: LossModel,
        activation: ActivationModel,
        horizon: u64,
    ) -> SimConfig {
        SimConfig {
            graph,
            family,
            loss,
            activation,
            horizon,
            eta: 0.0,
            beta: 0,
            mode: ResampleMode::default(),
            cooperation: true,
            alpha1_override: None,
            record_steps: false,
        }
    }
}

/// The ablation arm: the same run with message exchange disabled.
pub fn no_cooperation_baseline(config: &SimConfig) -> SimConfig {
    let mut baseline = config.clone();
    baseline.cooperation = false;
    baseline
}

/// Resolve the independence number for tuning: explicit override, exact
/// solver below the cap, greedy lower bound above it.
pub fn resolve_alpha1(
    graph: &Graph,
    alpha1_override: Option<usize>,
) -> Result<(usize, Alpha1Source), SimError> {
    if let Some(a) = alpha1_override {
        if a == 0 || a > graph.n_agents() {
            return Err(SimError::ConfigValidation(format!(
                "alpha1 override {a} outside 1..={}",
                graph.n_agents()
            )));
        }
        return Ok((a, Alpha1Source::Override));
    }
    match graph.independence_number_exact() {
        Ok(a) => Ok((a, Alpha1Source::Exact)),
        Err(GraphError::ExactAlphaCapExceeded { .. }) => Ok((
            graph.greedy_independent_set().size(),
            Alpha1Source::GreedyLowerBound,
        )),
        Err(e) => Err(e.into()),
    }
}

/// Resolve tuning parameters for a config without running it.
pub fn resolve_parameters(config: &SimConfig) -> Result<ResolvedParams, SimError> {
    let k = config.family.dimension();
    let m = config.family.max_support();
    let (alpha1, alpha1_source) = resolve_alpha1(&config.graph, config.alpha1_override)?;
    let q_total = config.activation.q_total();

    if q_total == 0.0 {
        // Nobody ever acts; parameters are irrelevant but must be valid.
        return Ok(ResolvedParams {
            eta: if config.eta > 0.0 { config.eta } else { 1.0 },
            beta: if config.beta >= 1 { config.beta } else { 1 },
            alpha1,
            alpha1_source,
            q_total,
            bound_value: 0.0,
            beta_clamped: false,
        });
    }

    let bound = bound_value(k, m, config.horizon, alpha1, q_total);
    let (eta, beta, beta_clamped) = match (config.eta > 0.0, config.beta >= 1) {
        (true, true) => (config.eta, config.beta, false),
        (true, false) => {
            let raw = (1.0 / (k as f64 * config.eta)).floor();
            (config.eta, if raw < 1.0 { 1 } else { raw as u32 }, raw < 1.0)
        }
        (false, explicit_beta) => {
            let tuned = tune_parameters(k, m, config.horizon, alpha1, q_total)?;
            if explicit_beta {
                (tuned.eta, config.beta, false)
            } else {
                (tuned.eta, tuned.beta, tuned.beta_clamped)
            }
        }
    };
    Ok(ResolvedParams {
        eta,
        beta,
        alpha1,
        alpha1_source,
        q_total,
        bound_value: bound,
        beta_clamped,
    })
}

fn mask_to_ids(mut mask: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(mask.count_ones() as usize);
    while mask != 0 {
        out.push(mask.trailing_zeros() as usize);
        mask &= mask - 1;
    }
    out
}

/// Run one full episode. Deterministic given `(config, root_seed)`.
pub fn run_episode(config: &SimConfig, root_seed: u64) -> Result<RegretTrace, SimError> {
    let graph = &config.graph;
    let family = &config.family;
    let n = graph.n_agents();
    let k = family.dimension();

    config.activation.validate(n)?;
    if config.horizon == 0 {
        return Err(SimError::ConfigValidation("horizon must be at least 1".into()));
    }

    let params = resolve_parameters(config)?;
    let beta = params.beta;
    // Proposition-style per-round oracle budget for one agent.
    let budget_cap: u64 = match config.mode {
        ResampleMode::Independent => 1 + k as u64 * beta as u64,
        ResampleMode::Shared => beta as u64 + 2,
    };

    // The adversary commits to the whole sequence before any agent draw.
    let losses = config.loss.materialize(k, config.horizon, root_seed)?;

    let neighborhood_mask = |v: usize| -> u64 {
        if config.cooperation {
            graph.neighborhood_mask(v)
        } else {
            1u64 << v
        }
    };

    let mut agents: Vec<AgentState> = (0..n)
        .map(|v| AgentState::new(v, k, params.eta, beta, config.activation.q[v]))
        .collect();

    let mut rounds = Vec::with_capacity(config.horizon as usize);
    let mut weighted_loss_rows = Vec::with_capacity(config.horizon as usize);
    let mut weighted_loss = vec![0.0f64; k];
    let mut cum_loss = 0.0f64;
    let mut k_messages = vec![0u64; n * n];
    let mut rounds_with_observation = vec![0u64; n];
    let mut max_agent_round_oracle_calls = 0u64;
    let mut steps = config.record_steps.then(Vec::new);
    let mut best_action = Action::empty();

    for t in 1..=config.horizon {
        let loss_t = &losses[(t - 1) as usize];
        let calls_before: Vec<u64> = agents.iter().map(|a| a.oracle_calls).collect();

        // Phase 1: activations and predictions.
        let active_mask = config.activation.draw_active_mask(t, root_seed);
        let mut predictions: Vec<Option<Action>> = vec![None; n];
        for v in mask_to_ids(active_mask) {
            let mut stream = derive_stream(root_seed, v as u64, t, StreamPurpose::Prediction);
            predictions[v] = Some(agents[v].predict(family, &mut stream)?);
        }

        let round_loss: f64 = mask_to_ids(active_mask)
            .iter()
            .map(|&v| predictions[v].as_ref().expect("active agent predicted").dot(loss_t))
            .sum();
        cum_loss += round_loss;
        let active_count = active_mask.count_ones() as f64;
        for (w, l) in weighted_loss.iter_mut().zip(loss_t) {
            *w += active_count * l;
        }

        // Phase 2: feedback delivery. An agent participates iff its closed
        // neighborhood holds an active agent.
        let receiver_ids: Vec<usize> = (0..n)
            .filter(|&v| neighborhood_mask(v) & active_mask != 0)
            .collect();
        let mut receiver_mask = 0u64;
        for &v in &receiver_ids {
            receiver_mask |= 1u64 << v;
        }

        // Phase 3: K-vector production by every agent some receiver requests
        // from; one vector per producer, computed from the pre-update state.
        let producer_flags: Vec<bool> = (0..n)
            .map(|u| neighborhood_mask(u) & receiver_mask != 0)
            .collect();
        let k_slots: Vec<Option<KVector>> = agents
            .par_iter_mut()
            .enumerate()
            .map(|(u, agent)| -> Result<Option<KVector>, SimError> {
                if !producer_flags[u] {
                    return Ok(None);
                }
                let zs = derive_stream(root_seed, u as u64, t, StreamPurpose::ResampleZ);
                let bs = derive_stream(root_seed, u as u64, t, StreamPurpose::ResampleBernoulli);
                Ok(Some(agent.produce_k_vector(family, &zs, &bs, config.mode)?))
            })
            .collect::<Result<Vec<_>, _>>()?;

        // Phase 4: estimation and state updates for the receivers.
        for &v in &receiver_ids {
            let hood = mask_to_ids(neighborhood_mask(v));
            let mut flags = ObservationFlags::none(k);
            let mut observed: Vec<Option<f64>> = vec![None; k];
            for &w in &hood {
                if active_mask & (1u64 << w) == 0 {
                    continue;
                }
                let x = predictions[w].as_ref().expect("active agent predicted");
                for i in x.ones() {
                    flags.set(i);
                    observed[i] = Some(loss_t[i]);
                }
            }
            let k_refs: Vec<&KVector> = hood
                .iter()
                .map(|&w| {
                    k_slots[w]
                        .as_ref()
                        .expect("requested neighbor produced a K-vector")
                })
                .collect();
            let est = estimate_loss(&observed, &flags, &k_refs)?;
            if let Some(&bad) = est
                .values()
                .iter()
                .find(|&&x| x > beta as f64 * (1.0 + 1e-12))
            {
                return Err(SimError::ProtocolViolation {
                    t,
                    message: format!("estimate component {bad} exceeds truncation {beta}"),
                });
            }
            if flags.any() {
                rounds_with_observation[v] += 1;
            }
            for &w in &hood {
                if w != v {
                    k_messages[w * n + v] += 1;
                }
            }
            agents[v].update(&est)?;
        }

        // Oracle budget check, from the counters.
        for v in 0..n {
            let spent = agents[v].oracle_calls - calls_before[v];
            max_agent_round_oracle_calls = max_agent_round_oracle_calls.max(spent);
            if spent > budget_cap {
                return Err(SimError::ProtocolViolation {
                    t,
                    message: format!(
                        "agent {v} spent {spent} oracle calls, budget {budget_cap} ({} mode)",
                        config.mode.as_str()
                    ),
                });
            }
        }

        // Trace row: realized regret against the best fixed action so far.
        best_action = family.best_fixed_action(&weighted_loss)?;
        let best_fixed_loss = best_action.dot(&weighted_loss);
        rounds.push(RoundRow {
            t,
            cum_loss,
            best_fixed_loss,
            regret: cum_loss - best_fixed_loss,
            oracle_calls_total: agents.iter().map(|a| a.oracle_calls).sum(),
        });
        weighted_loss_rows.push(weighted_loss.clone());

        if let Some(steps) = steps.as_mut() {
            let active = mask_to_ids(active_mask);
            let preds: Vec<(usize, Action)> = active
                .iter()
                .map(|&v| (v, *predictions[v].as_ref().unwrap()))
                .collect();
            let mut feedback = Vec::new();
            for &w in &active {
                let x = predictions[w].as_ref().unwrap();
                let mut masked = vec![0.0; k];
                for i in x.ones() {
                    masked[i] = loss_t[i];
                }
                for to in mask_to_ids(neighborhood_mask(w)) {
                    feedback.push(FeedbackMessage {
                        from: w,
                        to,
                        masked_loss: masked.clone(),
                    });
                }
            }
            let mut k_exchange = Vec::new();
            for &v in &receiver_ids {
                for w in mask_to_ids(neighborhood_mask(v)) {
                    if w != v {
                        k_exchange.push(KMessage {
                            from: w,
                            to: v,
                            k_vector: k_slots[w].clone().unwrap(),
                        });
                    }
                }
            }
            steps.push(StepRecord {
                t,
                active,
                predictions: preds,
                feedback,
                k_exchange,
                round_loss,
            });
        }
    }

    Ok(RegretTrace {
        seed: root_seed,
        rounds,
        weighted_loss_rows,
        best_action,
        agent_oracle_calls: agents.iter().map(|a| a.oracle_calls).collect(),
        max_agent_round_oracle_calls,
        k_messages,
        rounds_with_observation,
        steps,
        params,
    })
}

/// Recompute the realized network-regret series from a trace: for each `t`,
/// cumulative loss minus the loss of the best fixed action against the
/// activation-weighted cumulative loss up to `t`.
pub fn compute_network_regret(
    trace: &RegretTrace,
    family: &DecisionFamily,
) -> Result<Vec<f64>, SimError> {
    let mut out = Vec::with_capacity(trace.rounds.len());
    for (row, weighted) in trace.rounds.iter().zip(&trace.weighted_loss_rows) {
        let best = family.best_fixed_action(weighted)?;
        out.push(row.cum_loss - best.dot(weighted));
    }
    Ok(out)
}

/// Build the hard-instance configuration: activations restricted to one
/// maximum independent set (probability `q_active` there, zero elsewhere)
/// and Bernoulli losses with one distinguished `m`-subset at mean `1/2 - gap`
/// against `1/2` everywhere else.
pub fn make_lower_bound_instance(
    graph: &Graph,
    q_active: f64,
    gap: f64,
    k: usize,
    m: usize,
    horizon: u64,
) -> Result<SimConfig, SimError> {
    if !(gap > 0.0 && gap < 0.5) {
        return Err(SimError::ConfigValidation(format!(
            "gap {gap} outside (0, 0.5)"
        )));
    }
    if !(q_active > 0.0 && q_active <= 1.0) {
        return Err(SimError::ConfigValidation(format!(
            "activation probability {q_active} outside (0, 1]"
        )));
    }
    let witness = graph.maximum_independent_set()?;
    let mut q = vec![0.0; graph.n_agents()];
    for &v in witness.members() {
        q[v] = q_active;
    }
    let mut means = vec![0.5; k];
    for mean in means.iter_mut().take(m) {
        *mean = 0.5 - gap;
    }
    let family = DecisionFamily::exactly(k, m)?;
    Ok(SimConfig::new(
        graph.clone(),
        family,
        LossModel::IidBernoulli { means },
        ActivationModel { q },
        horizon,
    ))
}
