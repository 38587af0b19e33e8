//! Cooperative geometric resampling and the semi-bandit loss estimator.
//!
//! An agent cannot compute the probability that some active neighbor played
//! component `i`, but it can *estimate its reciprocal*: re-draw hypothetical
//! predictions and activation coins until component `i` would have been
//! observed, and report the number of attempts, truncated at `β`. The
//! stopping index of agent `w` for component `i` is `K(i,w)`, a geometric
//! random variable with success probability `x̄(i,w)·q(w)` truncated at `β`.
//!
//! The loss estimate for an observing agent `v` is then
//!
//! ```text
//! est(i,v) = loss(i) · B(i,v) · min_{w ∈ N(v)} K(i,w)
//! ```
//!
//! where `B(i,v)` indicates that some active neighbor of `v` actually played
//! component `i` this round. The minimum of the neighbors' independent
//! geometric stopping times is itself geometric with the combined success
//! probability, which is exactly the reciprocal of the observation
//! probability of component `i` at `v` — that is what makes the estimator
//! almost unbiased (the truncation contributes a `(1 - combined)^β` bias,
//! see [`expected_estimate_closed_form`]).

use thiserror::Error;

use crate::action::{ActionError, DecisionFamily};
use crate::perturb::{sample_laplace_into, RngStream};

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("probability list is empty")]
    EmptyProbabilityList,
    #[error("probability {value} at index {index} outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
    #[error("no K-vectors supplied: a neighborhood always contains the agent itself")]
    NoKVectors,
    #[error("K-vector length {got} does not match dimension {expected}")]
    KVectorLength { expected: usize, got: usize },
    #[error("K value {value} at component {index} outside [1, {beta}]")]
    KValueOutOfRange { index: usize, value: u32, beta: u32 },
    #[error("component {index} is flagged observed but carries no loss value")]
    MissingObservedLoss { index: usize },
    #[error(transparent)]
    Oracle(#[from] ActionError),
}

/// How the per-component resampling loops share randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResampleMode {
    /// One fresh loop per component: stopping times are independent across
    /// components, at up to `k·β` oracle calls per agent and round.
    #[default]
    Independent,
    /// One loop whose draws serve every component: at most `β` oracle calls
    /// per agent and round, with correlated stopping times across components.
    Shared,
}

impl ResampleMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResampleMode::Independent => "independent",
            ResampleMode::Shared => "shared",
        }
    }
}

/// Truncated geometric stopping indices, one per component, each in `[1, β]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KVector {
    values: Vec<u32>,
}

impl KVector {
    /// Wrap raw values, validating the `[1, β]` range (used when accepting a
    /// K-vector off the wire).
    pub fn from_values(values: Vec<u32>, beta: u32) -> Result<KVector, EstimatorError> {
        for (index, &value) in values.iter().enumerate() {
            if value < 1 || value > beta {
                return Err(EstimatorError::KValueOutOfRange { index, value, beta });
            }
        }
        Ok(KVector { values })
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Which components were observed this round: `flag(i)` is set iff some
/// active neighbor played component `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationFlags {
    flags: Vec<bool>,
}

impl ObservationFlags {
    pub fn new(flags: Vec<bool>) -> ObservationFlags {
        ObservationFlags { flags }
    }

    pub fn none(k: usize) -> ObservationFlags {
        ObservationFlags {
            flags: vec![false; k],
        }
    }

    pub fn get(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn set(&mut self, i: usize) {
        self.flags[i] = true;
    }

    pub fn any(&self) -> bool {
        self.flags.iter().any(|&b| b)
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }
}

/// A per-round loss estimate; zero on unobserved components and at most
/// `loss(i)·β` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEstimate {
    values: Vec<f64>,
}

impl LossEstimate {
    pub fn zero(k: usize) -> LossEstimate {
        LossEstimate {
            values: vec![0.0; k],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Outcome of one resampling pass: the K-vector plus the number of oracle
/// invocations it consumed (the dominant cost, tracked for budget checks).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResampleOutcome {
    pub k_vector: KVector,
    pub oracle_calls: u64,
}

/// Run the cooperative geometric resampling loop for one agent.
///
/// Each step draws a fresh perturbation, asks the oracle for the leader
/// against `z − η·cum_loss_est`, and flips the agent's own activation coin;
/// a component's stopping index is the first step where both fire, truncated
/// at `beta`. `z_stream` and `bernoulli_stream` are lineage parents: the
/// per-component sequences are derived from them, so the outcome does not
/// depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn coop_gr(
    cum_loss_est: &[f64],
    family: &DecisionFamily,
    eta: f64,
    q_self: f64,
    beta: u32,
    z_stream: &RngStream,
    bernoulli_stream: &RngStream,
    mode: ResampleMode,
) -> Result<ResampleOutcome, EstimatorError> {
    assert!(beta >= 1, "beta must be at least 1");
    assert!((0.0..=1.0).contains(&q_self), "q must be a probability");
    let k = family.dimension();
    debug_assert_eq!(cum_loss_est.len(), k);
    let mut z = vec![0.0; k];
    let mut score = vec![0.0; k];
    let mut values = vec![0u32; k];
    let mut oracle_calls = 0u64;

    match mode {
        ResampleMode::Independent => {
            for (i, value) in values.iter_mut().enumerate() {
                let mut zs = z_stream.substream(i as u64);
                let mut bs = bernoulli_stream.substream(i as u64);
                let mut s = 1u32;
                loop {
                    sample_laplace_into(&mut zs, &mut z);
                    for j in 0..k {
                        score[j] = z[j] - eta * cum_loss_est[j];
                    }
                    let a = family.oracle_argmax(&score)?;
                    oracle_calls += 1;
                    let played = a.get(i);
                    let fired = bs.next_bernoulli(q_self);
                    if (played && fired) || s == beta {
                        *value = s;
                        break;
                    }
                    s += 1;
                }
            }
        }
        ResampleMode::Shared => {
            let mut zs = z_stream.clone();
            let mut coins: Vec<RngStream> =
                (0..k).map(|i| bernoulli_stream.substream(i as u64)).collect();
            let mut unresolved = k;
            for s in 1..=beta {
                sample_laplace_into(&mut zs, &mut z);
                for j in 0..k {
                    score[j] = z[j] - eta * cum_loss_est[j];
                }
                let a = family.oracle_argmax(&score)?;
                oracle_calls += 1;
                for (i, (value, coin)) in values.iter_mut().zip(coins.iter_mut()).enumerate() {
                    if *value != 0 {
                        continue;
                    }
                    let fired = coin.next_bernoulli(q_self);
                    if (a.get(i) && fired) || s == beta {
                        *value = s;
                        unresolved -= 1;
                    }
                }
                if unresolved == 0 {
                    break;
                }
            }
        }
    }

    Ok(ResampleOutcome {
        k_vector: KVector { values },
        oracle_calls,
    })
}

/// Success parameter of the minimum of independent geometrics:
/// `1 − Π_j (1 − p_j)`.
pub fn min_geometric_param(p_list: &[f64]) -> Result<f64, EstimatorError> {
    if p_list.is_empty() {
        return Err(EstimatorError::EmptyProbabilityList);
    }
    let mut fail = 1.0;
    for (index, &p) in p_list.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(EstimatorError::InvalidProbability { index, value: p });
        }
        fail *= 1.0 - p;
    }
    Ok(1.0 - fail)
}

/// `E[min{Geom(q), β}] = (1 − (1−q)^β) / q`; the `q = 0` limit is `β`.
pub fn truncated_geometric_mean(q: f64, beta: u32) -> f64 {
    assert!((0.0..=1.0).contains(&q));
    assert!(beta >= 1);
    if q == 0.0 {
        return beta as f64;
    }
    (1.0 - (1.0 - q).powi(beta as i32)) / q
}

/// Combine observed losses, observation flags, and the neighbors' K-vectors
/// into the per-round loss estimate.
///
/// `observed_loss[i]` must be present whenever `flags` marks component `i`;
/// a flagged component without a loss value is a protocol violation.
pub fn estimate_loss(
    observed_loss: &[Option<f64>],
    flags: &ObservationFlags,
    neighbor_k: &[&KVector],
) -> Result<LossEstimate, EstimatorError> {
    let k = flags.len();
    debug_assert_eq!(observed_loss.len(), k);
    if neighbor_k.is_empty() {
        return Err(EstimatorError::NoKVectors);
    }
    for kv in neighbor_k {
        if kv.len() != k {
            return Err(EstimatorError::KVectorLength {
                expected: k,
                got: kv.len(),
            });
        }
    }
    let mut values = vec![0.0; k];
    for i in 0..k {
        if !flags.get(i) {
            continue;
        }
        let loss = observed_loss[i].ok_or(EstimatorError::MissingObservedLoss { index: i })?;
        let min_k = neighbor_k
            .iter()
            .map(|kv| kv.values()[i])
            .min()
            .expect("nonempty");
        values[i] = loss * min_k as f64;
    }
    Ok(LossEstimate { values })
}

/// Conditional expectation of the loss estimate given the per-neighbor mean
/// actions and activation probabilities:
/// `loss · (1 − (Π_w (1 − x̄(i,w)·q(w)))^β)`. Never exceeds `loss`.
pub fn expected_estimate_closed_form(xbar_q: &[(f64, f64)], beta: u32, loss: f64) -> f64 {
    let mut fail = 1.0;
    for &(xbar, q) in xbar_q {
        debug_assert!((0.0..=1.0).contains(&xbar));
        debug_assert!((0.0..=1.0).contains(&q));
        fail *= 1.0 - xbar * q;
    }
    loss * (1.0 - fail.powi(beta as i32))
}

/// Monte Carlo estimate of the mean perturbed-leader action together with
/// its per-component standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanActionEstimate {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: u64,
}

/// Estimate the mean action `x̄ = E[argmax_a <a, Z − η·cum_loss_est>]` by
/// averaging `n_samples` fresh perturbed-leader draws.
pub fn estimate_mean_action(
    cum_loss_est: &[f64],
    family: &DecisionFamily,
    eta: f64,
    n_samples: u64,
    stream: &mut RngStream,
) -> Result<MeanActionEstimate, EstimatorError> {
    assert!(n_samples >= 1);
    let k = family.dimension();
    let mut z = vec![0.0; k];
    let mut score = vec![0.0; k];
    let mut counts = vec![0u64; k];
    for _ in 0..n_samples {
        sample_laplace_into(stream, &mut z);
        for j in 0..k {
            score[j] = z[j] - eta * cum_loss_est[j];
        }
        let a = family.oracle_argmax(&score)?;
        for i in a.ones() {
            counts[i] += 1;
        }
    }
    let n = n_samples as f64;
    let mean: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let stderr: Vec<f64> = mean
        .iter()
        .map(|&p| (p * (1.0 - p) / n).sqrt())
        .collect();
    Ok(MeanActionEstimate {
        mean,
        stderr,
        samples: n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::{derive_stream, StreamPurpose};

    fn streams(seed: u64, t: u64) -> (RngStream, RngStream) {
        (
            derive_stream(seed, 0, t, StreamPurpose::ResampleZ),
            derive_stream(seed, 0, t, StreamPurpose::ResampleBernoulli),
        )
    }

    #[test]
    fn min_geometric_param_examples() {
        assert!((min_geometric_param(&[0.5, 0.5]).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(min_geometric_param(&[1.0, 0.3]).unwrap(), 1.0);
        assert!((min_geometric_param(&[0.2, 0.3, 0.5]).unwrap() - 0.72).abs() < 1e-15);
        assert_eq!(
            min_geometric_param(&[]),
            Err(EstimatorError::EmptyProbabilityList)
        );
        assert!(matches!(
            min_geometric_param(&[0.5, 1.5]),
            Err(EstimatorError::InvalidProbability { index: 1, .. })
        ));
    }

    #[test]
    fn truncated_geometric_mean_examples() {
        assert_eq!(truncated_geometric_mean(1.0, 9), 1.0);
        assert!((truncated_geometric_mean(0.5, 2) - 1.5).abs() < 1e-15);
        assert_eq!(truncated_geometric_mean(0.0, 7), 7.0);

        // direct summation oracle: E[min{G, b}] = sum_n min(n,b) q (1-q)^(n-1)
        let (q, b) = (0.3f64, 7u32);
        let mut direct = 0.0;
        for n in 1..10_000u32 {
            direct += (n.min(b)) as f64 * q * (1.0 - q).powi(n as i32 - 1);
        }
        let closed = truncated_geometric_mean(q, b);
        assert!((closed - direct).abs() < 1e-9, "{closed} vs {direct}");
        assert!((closed - 3.058819).abs() < 1e-6);
    }

    #[test]
    fn coop_gr_never_fires_with_zero_activation() {
        let fam = DecisionFamily::exactly(3, 1).unwrap();
        let (zs, bs) = streams(1, 1);
        for mode in [ResampleMode::Independent, ResampleMode::Shared] {
            let out = coop_gr(&[0.0; 3], &fam, 1.0, 0.0, 6, &zs, &bs, mode).unwrap();
            assert_eq!(out.k_vector.values(), &[6, 6, 6]);
        }
    }

    #[test]
    fn coop_gr_beta_one_truncates_immediately() {
        let fam = DecisionFamily::exactly(4, 2).unwrap();
        let (zs, bs) = streams(2, 1);
        for mode in [ResampleMode::Independent, ResampleMode::Shared] {
            let out = coop_gr(&[0.0; 4], &fam, 1.0, 1.0, 1, &zs, &bs, mode).unwrap();
            assert_eq!(out.k_vector.values(), &[1, 1, 1, 1]);
        }
    }

    #[test]
    fn coop_gr_oracle_budgets() {
        let fam = DecisionFamily::exactly(3, 1).unwrap();
        let (zs, bs) = streams(3, 9);
        let beta = 5;
        let ind = coop_gr(&[0.0; 3], &fam, 1.0, 0.0, beta, &zs, &bs, ResampleMode::Independent)
            .unwrap();
        assert_eq!(ind.oracle_calls, 3 * beta as u64); // q=0 exhausts every loop
        let shared =
            coop_gr(&[0.0; 3], &fam, 1.0, 0.0, beta, &zs, &bs, ResampleMode::Shared).unwrap();
        assert_eq!(shared.oracle_calls, beta as u64);
    }

    #[test]
    fn coop_gr_symmetric_two_arm_mean_matches_closed_form() {
        // ExactlyM k=2, m=1, zero estimates: each component is played with
        // probability 1/2, so K has mean E[min{Geom(1/2), 5}] = 1.9375.
        let fam = DecisionFamily::exactly(2, 1).unwrap();
        let runs = 100_000u64;
        for mode in [ResampleMode::Independent, ResampleMode::Shared] {
            let mut total = 0u64;
            for t in 0..runs {
                let (zs, bs) = streams(77, t);
                let out = coop_gr(&[0.0; 2], &fam, 1.0, 1.0, 5, &zs, &bs, mode).unwrap();
                total += out.k_vector.values()[0] as u64;
            }
            let mean = total as f64 / runs as f64;
            let expect = truncated_geometric_mean(0.5, 5);
            assert!(
                (mean - expect).abs() < 0.02,
                "{mode:?}: mean {mean} vs {expect}"
            );
        }
    }

    #[test]
    fn estimate_loss_examples() {
        let k3 = KVector::from_values(vec![3], 8).unwrap();
        let k5 = KVector::from_values(vec![5], 8).unwrap();
        let mut flags = ObservationFlags::none(1);
        flags.set(0);
        let est = estimate_loss(&[Some(0.4)], &flags, &[&k3, &k5]).unwrap();
        assert!((est.values()[0] - 1.2).abs() < 1e-15);

        let est = estimate_loss(&[None], &ObservationFlags::none(1), &[&k3]).unwrap();
        assert!(est.is_zero());

        assert_eq!(
            estimate_loss(&[None], &flags, &[&k3]),
            Err(EstimatorError::MissingObservedLoss { index: 0 })
        );
        assert_eq!(
            estimate_loss(&[Some(0.4)], &flags, &[]),
            Err(EstimatorError::NoKVectors)
        );
    }

    #[test]
    fn k_vector_validation() {
        assert!(KVector::from_values(vec![1, 4, 4], 4).is_ok());
        assert!(matches!(
            KVector::from_values(vec![0, 1], 4),
            Err(EstimatorError::KValueOutOfRange { index: 0, value: 0, .. })
        ));
        assert!(matches!(
            KVector::from_values(vec![5], 4),
            Err(EstimatorError::KValueOutOfRange { index: 0, value: 5, .. })
        ));
    }

    #[test]
    fn closed_form_examples() {
        // large beta with any positive mass drives the estimate to the loss
        let v = expected_estimate_closed_form(&[(0.3, 0.5)], 400, 0.9);
        assert!((v - 0.9).abs() < 1e-12);
        // no mass anywhere: estimate is zero
        assert_eq!(expected_estimate_closed_form(&[(0.0, 0.7), (0.4, 0.0)], 5, 1.0), 0.0);
        // the symmetric two-agent case
        let v = expected_estimate_closed_form(&[(0.5, 1.0), (0.5, 1.0)], 4, 1.0);
        assert!((v - 0.99609375).abs() < 1e-15);
        // never exceeds the loss
        assert!(expected_estimate_closed_form(&[(0.9, 1.0)], 50, 0.37) <= 0.37);
    }

    #[test]
    fn mean_action_symmetric_family() {
        let fam = DecisionFamily::exactly(2, 1).unwrap();
        let mut stream = derive_stream(5, 0, 0, StreamPurpose::Prediction);
        let est = estimate_mean_action(&[0.0, 0.0], &fam, 1.0, 100_000, &mut stream).unwrap();
        for i in 0..2 {
            assert!(
                (est.mean[i] - 0.5).abs() <= 3.0 * est.stderr[i] + 1e-9,
                "component {i}: {est:?}"
            );
        }
    }

    #[test]
    fn mean_action_suppressed_by_large_estimates() {
        // huge positive cumulative estimates push AtMostM to the empty action
        let fam = DecisionFamily::at_most(4, 2).unwrap();
        let mut stream = derive_stream(6, 0, 0, StreamPurpose::Prediction);
        let est =
            estimate_mean_action(&[1e6; 4], &fam, 1.0, 20_000, &mut stream).unwrap();
        assert!(est.mean.iter().all(|&p| p < 1e-3), "{est:?}");

        // one dominated component in a one-hot family
        let fam = DecisionFamily::exactly(3, 1).unwrap();
        let mut stream = derive_stream(7, 0, 0, StreamPurpose::Prediction);
        let est =
            estimate_mean_action(&[0.0, 0.0, 10.0], &fam, 1.0, 100_000, &mut stream).unwrap();
        assert!(est.mean[2] < 0.01, "{est:?}");
    }
}
