//! Executable property suites for the distributional facts the estimator
//! rests on, exposed both to the `verify` CLI subcommand and to the
//! acceptance tests. Each suite is deterministic given its seed and returns
//! a pass/fail report with a one-line detail string.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::action::DecisionFamily;
use crate::agent::{tune_parameters, AgentState};
use crate::estimator::{
    coop_gr, estimate_loss, expected_estimate_closed_form, min_geometric_param,
    truncated_geometric_mean, ObservationFlags, ResampleMode,
};
use crate::graph::Graph;
use crate::perturb::{derive_stream, RngStream, StreamPurpose};

/// Outcome of one verification suite.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "{} {} — {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// Geometric draw on {1, 2, ...} with success probability `p` in (0, 1].
fn sample_geometric(stream: &mut RngStream, p: f64) -> u64 {
    debug_assert!(p > 0.0 && p <= 1.0);
    if p >= 1.0 {
        stream.next_f64(); // keep the draw count uniform
        return 1;
    }
    let u = 1.0 - stream.next_f64(); // in (0, 1]
    (u.ln() / (1.0 - p).ln()).floor() as u64 + 1
}

/// Chi-square statistic of observed geometric samples against
/// `Geometric(param)`, binning `1..` until the expected count drops below 8
/// and merging the remainder into a tail cell.
fn chi_square_vs_geometric(samples: &[u64], param: f64) -> (f64, f64, usize) {
    let n = samples.len() as f64;
    let mut cut = 1usize;
    while n * param * (1.0 - param).powi(cut as i32) >= 8.0 && cut < 4096 {
        cut += 1;
    }
    // cells: {1}, {2}, ..., {cut}, {> cut}
    let mut observed = vec![0u64; cut + 1];
    for &s in samples {
        let idx = (s as usize).min(cut + 1) - 1;
        observed[idx.min(cut)] += 1;
    }
    let mut stat = 0.0;
    for (i, &obs) in observed.iter().enumerate() {
        let expected = if i < cut {
            n * param * (1.0 - param).powi(i as i32)
        } else {
            n * (1.0 - param).powi(cut as i32)
        };
        stat += (obs as f64 - expected).powi(2) / expected;
    }
    let df = cut; // cells - 1
    let crit = ChiSquared::new(df as f64).unwrap().inverse_cdf(0.99);
    (stat, crit, df)
}

/// Minimum of independent geometrics is geometric with the combined
/// parameter: 20 random parameter lists, chi-square at 1%.
pub fn min_of_geometrics_distribution(seed: u64) -> CheckReport {
    let mut stream = derive_stream(seed, 0, 1, StreamPurpose::Adversary);
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    for trial in 0..20 {
        let len = 1 + (stream.next_u64() % 5) as usize;
        let ps: Vec<f64> = (0..len).map(|_| 0.05 + 0.90 * stream.next_f64()).collect();
        let combined = min_geometric_param(&ps).unwrap();
        let mut sampler = derive_stream(seed, trial, 2, StreamPurpose::Adversary);
        let samples: Vec<u64> = (0..100_000)
            .map(|_| ps.iter().map(|&p| sample_geometric(&mut sampler, p)).min().unwrap())
            .collect();
        let (stat, crit, _df) = chi_square_vs_geometric(&samples, combined);
        worst = worst.max(stat / crit);
        if stat >= crit {
            failures += 1;
        }
    }
    CheckReport {
        name: "min-of-geometrics distribution",
        passed: failures == 0,
        detail: format!("20 parameter lists, worst stat/crit = {worst:.3}, {failures} failures"),
    }
}

/// Mean of the truncated geometric matches `(1-(1-q)^β)/q` within 1% over a
/// 3x3 grid, one million samples per point.
pub fn truncated_mean_closed_form(seed: u64) -> CheckReport {
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for (gi, &q) in [0.1f64, 0.5, 0.9].iter().enumerate() {
        for (bi, &beta) in [1u32, 5, 50].iter().enumerate() {
            let mut stream =
                derive_stream(seed, (gi * 3 + bi) as u64, 3, StreamPurpose::Adversary);
            let n = 1_000_000u64;
            let mut total = 0u64;
            for _ in 0..n {
                total += sample_geometric(&mut stream, q).min(beta as u64);
            }
            let mean = total as f64 / n as f64;
            let expect = truncated_geometric_mean(q, beta);
            let rel = (mean - expect).abs() / expect;
            worst = worst.max(rel);
            if rel >= 0.01 {
                detail = format!("q={q} beta={beta}: mean {mean} vs {expect}");
            }
        }
    }
    CheckReport {
        name: "truncated geometric mean",
        passed: worst < 0.01,
        detail: if detail.is_empty() {
            format!("9-point grid, worst relative error {worst:.5}")
        } else {
            detail
        },
    }
}

/// In independent mode, stopping times for distinct (component, agent)
/// pairs are uncorrelated: max |pairwise correlation| < 0.02 over 1e5 runs.
pub fn stopping_time_independence(seed: u64) -> CheckReport {
    let family = DecisionFamily::exactly(3, 1).unwrap();
    let k = 3usize;
    let n_agents = 2usize;
    let beta = 6u32;
    let runs = 100_000usize;
    let dims = k * n_agents;
    let mut sums = vec![0.0f64; dims];
    let mut sums_sq = vec![0.0f64; dims];
    let mut cross = vec![0.0f64; dims * dims];
    for t in 0..runs {
        let mut values = vec![0.0f64; dims];
        for w in 0..n_agents {
            let zs = derive_stream(seed, w as u64, t as u64, StreamPurpose::ResampleZ);
            let bs = derive_stream(seed, w as u64, t as u64, StreamPurpose::ResampleBernoulli);
            let out = coop_gr(
                &[0.0; 3],
                &family,
                1.0,
                0.7,
                beta,
                &zs,
                &bs,
                ResampleMode::Independent,
            )
            .unwrap();
            for i in 0..k {
                values[w * k + i] = out.k_vector.values()[i] as f64;
            }
        }
        for a in 0..dims {
            sums[a] += values[a];
            sums_sq[a] += values[a] * values[a];
            for b in (a + 1)..dims {
                cross[a * dims + b] += values[a] * values[b];
            }
        }
    }
    let nf = runs as f64;
    let mut worst = 0.0f64;
    for a in 0..dims {
        for b in (a + 1)..dims {
            let mean_a = sums[a] / nf;
            let mean_b = sums[b] / nf;
            let var_a = sums_sq[a] / nf - mean_a * mean_a;
            let var_b = sums_sq[b] / nf - mean_b * mean_b;
            let cov = cross[a * dims + b] / nf - mean_a * mean_b;
            let corr = cov / (var_a * var_b).sqrt();
            worst = worst.max(corr.abs());
        }
    }
    CheckReport {
        name: "resampling stopping-time independence",
        passed: worst < 0.02,
        detail: format!("{dims} stopping times, max |corr| = {worst:.4} over {runs} runs"),
    }
}

struct FixedState {
    label: &'static str,
    graph: Graph,
    family: DecisionFamily,
    q: Vec<f64>,
    beta: u32,
    /// Observer whose estimate is measured.
    observer: usize,
    /// Exact symmetric mean action value shared by every agent/component.
    xbar: f64,
    loss: Vec<f64>,
}

fn fixed_estimator_states() -> Vec<FixedState> {
    vec![
        FixedState {
            label: "pair-clique k2 beta4",
            graph: Graph::complete(2),
            family: DecisionFamily::exactly(2, 1).unwrap(),
            q: vec![1.0, 1.0],
            beta: 4,
            observer: 0,
            xbar: 0.5,
            loss: vec![1.0, 0.7],
        },
        FixedState {
            label: "solo k3 beta3",
            graph: Graph::single(),
            family: DecisionFamily::exactly(3, 1).unwrap(),
            q: vec![1.0],
            beta: 3,
            observer: 0,
            xbar: 1.0 / 3.0,
            loss: vec![0.9, 0.6, 0.3],
        },
        FixedState {
            label: "pair-clique uneven-q beta4",
            graph: Graph::complete(2),
            family: DecisionFamily::exactly(2, 1).unwrap(),
            q: vec![0.5, 1.0],
            beta: 4,
            observer: 1,
            xbar: 0.5,
            loss: vec![1.0, 1.0],
        },
        FixedState {
            label: "path3 center beta2",
            graph: Graph::path(3),
            family: DecisionFamily::exactly(2, 1).unwrap(),
            q: vec![1.0, 1.0, 1.0],
            beta: 2,
            observer: 1,
            xbar: 0.5,
            loss: vec![0.8, 0.5],
        },
    ]
}

/// Monte Carlo mean of the loss estimate against the closed-form
/// expectation on fixed small network states, 1e5 rounds each, within 2%.
pub fn estimator_expectation(seed: u64) -> CheckReport {
    let rounds = 100_000u64;
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for (state_idx, state) in fixed_estimator_states().iter().enumerate() {
        let k = state.family.dimension();
        let n = state.graph.n_agents();
        let v = state.observer;
        let hood = state.graph.neighborhood(v);
        // All cumulative estimates stay at zero: the state is frozen, each
        // round is a fresh conditional draw.
        let zero = vec![0.0f64; k];
        let mut mc = vec![0.0f64; k];
        let mut mc_sq = vec![0.0f64; k];
        let base = seed.wrapping_add(1000 * state_idx as u64);
        for t in 1..=rounds {
            // activations
            let mut active = vec![false; n];
            for (w, active_w) in active.iter_mut().enumerate() {
                let mut s = derive_stream(base, w as u64, t, StreamPurpose::Activation);
                *active_w = s.next_bernoulli(state.q[w]);
            }
            // predictions of active agents
            let mut flags = ObservationFlags::none(k);
            let mut observed: Vec<Option<f64>> = vec![None; k];
            for &w in &hood {
                if !active[w] {
                    continue;
                }
                let mut agent = AgentState::new(w, k, 1.0, state.beta, state.q[w]);
                let mut s = derive_stream(base, w as u64, t, StreamPurpose::Prediction);
                let x = agent.predict(&state.family, &mut s).unwrap();
                for i in x.ones() {
                    flags.set(i);
                    observed[i] = Some(state.loss[i]);
                }
            }
            // K-vectors from every neighbor, active or not
            let k_vectors: Vec<_> = hood
                .iter()
                .map(|&w| {
                    let zs = derive_stream(base, w as u64, t, StreamPurpose::ResampleZ);
                    let bs =
                        derive_stream(base, w as u64, t, StreamPurpose::ResampleBernoulli);
                    coop_gr(
                        &zero,
                        &state.family,
                        1.0,
                        state.q[w],
                        state.beta,
                        &zs,
                        &bs,
                        ResampleMode::Independent,
                    )
                    .unwrap()
                    .k_vector
                })
                .collect();
            let k_refs: Vec<_> = k_vectors.iter().collect();
            let est = estimate_loss(&observed, &flags, &k_refs).unwrap();
            for i in 0..k {
                mc[i] += est.values()[i];
                mc_sq[i] += est.values()[i] * est.values()[i];
            }
        }
        for i in 0..k {
            let mean = mc[i] / rounds as f64;
            let xbar_q: Vec<(f64, f64)> =
                hood.iter().map(|&w| (state.xbar, state.q[w])).collect();
            let expect = expected_estimate_closed_form(&xbar_q, state.beta, state.loss[i]);
            let rel = (mean - expect).abs() / expect;
            worst = worst.max(rel);
            if rel >= 0.02 {
                lines.push(format!(
                    "{} component {i}: mc {mean:.5} vs closed form {expect:.5}",
                    state.label
                ));
            }
            // the estimator is negatively biased: its mean never exceeds the
            // true loss beyond sampling noise
            let var = mc_sq[i] / rounds as f64 - mean * mean;
            let stderr = (var / rounds as f64).sqrt();
            if mean > state.loss[i] + 3.0 * stderr {
                lines.push(format!(
                    "{} component {i}: mean {mean:.5} exceeds loss {} + 3se",
                    state.label, state.loss[i]
                ));
            }
        }
    }
    CheckReport {
        name: "estimator conditional expectation",
        passed: lines.is_empty(),
        detail: if lines.is_empty() {
            format!("4 fixed states, worst relative error {worst:.4}")
        } else {
            lines.join("; ")
        },
    }
}

/// Oracle output value equals brute-force enumeration on 500 random score
/// vectors per family kind.
pub fn oracle_exactness(seed: u64) -> CheckReport {
    let mut stream = derive_stream(seed, 0, 4, StreamPurpose::Adversary);
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    for kind in 0..2 {
        for _ in 0..500 {
            let k = 2 + (stream.next_u64() % 11) as usize; // 2..=12
            let m = 1 + (stream.next_u64() % 4.min(k as u64)) as usize; // 1..=4
            let family = if kind == 0 {
                DecisionFamily::exactly(k, m).unwrap()
            } else {
                DecisionFamily::at_most(k, m).unwrap()
            };
            let y: Vec<f64> = (0..k).map(|_| stream.next_laplace() * 3.0).collect();
            let a = family.oracle_argmax(&y).unwrap();
            let best = family
                .enumerate_actions()
                .unwrap()
                .iter()
                .map(|b| b.dot(&y))
                .fold(f64::NEG_INFINITY, f64::max);
            checked += 1;
            if (a.dot(&y) - best).abs() > 1e-12 || !family.contains(&a) {
                mismatches += 1;
            }
        }
    }
    CheckReport {
        name: "oracle exactness",
        passed: mismatches == 0,
        detail: format!("{checked} random score vectors, {mismatches} mismatches"),
    }
}

fn random_graph(n: usize, edge_prob: f64, stream: &mut RngStream) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if stream.next_bernoulli(edge_prob) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

/// Σ q(v)/Q(v) ≤ α₁ on 200 random (graph, weights) instances, α₁ exact.
pub fn independence_weight_bound(seed: u64) -> CheckReport {
    let mut stream = derive_stream(seed, 0, 5, StreamPurpose::Adversary);
    let mut violations = 0usize;
    let mut worst_slack = f64::INFINITY;
    for _ in 0..200 {
        let n = 2 + (stream.next_u64() % 15) as usize; // 2..=16
        let p = 0.05 + 0.85 * stream.next_f64();
        let g = random_graph(n, p, &mut stream);
        let alpha = g.maximum_independent_set_capped(16).unwrap().size() as f64;
        let q: Vec<f64> = (0..n).map(|_| stream.next_f64().max(1e-6)).collect();
        let sum = g.weight_ratio_sum(&q);
        worst_slack = worst_slack.min(alpha - sum);
        if sum > alpha + 1e-9 {
            violations += 1;
        }
    }
    CheckReport {
        name: "weight-ratio independence bound",
        passed: violations == 0,
        detail: format!("200 instances, {violations} violations, min slack {worst_slack:.4}"),
    }
}

/// Σ p(v)/q(v) ≤ (α₁ + Σ p(v))/(1−e⁻¹) with q(v) = 1 − Π_{w∈N(v)}(1−p(w)),
/// on 200 random instances, 0/0 terms dropped.
pub fn neighborhood_ratio_bound(seed: u64) -> CheckReport {
    let factor = 1.0 / (1.0 - (-1.0f64).exp());
    let mut stream = derive_stream(seed, 0, 6, StreamPurpose::Adversary);
    let mut violations = 0usize;
    let mut worst_slack = f64::INFINITY;
    for _ in 0..200 {
        let n = 2 + (stream.next_u64() % 15) as usize;
        let edge_p = 0.05 + 0.85 * stream.next_f64();
        let g = random_graph(n, edge_p, &mut stream);
        let alpha = g.maximum_independent_set_capped(16).unwrap().size() as f64;
        let p: Vec<f64> = (0..n)
            .map(|_| {
                if stream.next_bernoulli(0.25) {
                    0.0
                } else {
                    stream.next_f64()
                }
            })
            .collect();
        let mut lhs = 0.0;
        for v in 0..n {
            if p[v] <= 0.0 {
                continue;
            }
            let mut fail = 1.0;
            for w in g.neighborhood(v) {
                fail *= 1.0 - p[w];
            }
            lhs += p[v] / (1.0 - fail);
        }
        let rhs = factor * (alpha + p.iter().sum::<f64>());
        worst_slack = worst_slack.min(rhs - lhs);
        if lhs > rhs + 1e-9 {
            violations += 1;
        }
    }
    CheckReport {
        name: "neighborhood-ratio independence bound",
        passed: violations == 0,
        detail: format!("200 instances, {violations} violations, min slack {worst_slack:.4}"),
    }
}

/// The tuning rule against a frozen 60-digit reference, plus the
/// `β·k·η ≤ 1` window on a 100-point random grid.
pub fn tuning_values(seed: u64) -> CheckReport {
    // frozen high-precision evaluation at (k=10, m=2, T=1e4, alpha1=3, Q=2)
    #[allow(clippy::excessive_precision)]
    const ETA_REF: f64 = 1.274893792945088661781677e-3;
    let t = tune_parameters(10, 2, 10_000, 3, 2.0).unwrap();
    let rel = (t.eta - ETA_REF).abs() / ETA_REF;
    let mut passed = rel < 1e-6 && t.beta == 78;
    let mut grid_violations = 0usize;
    let mut stream = derive_stream(seed, 0, 7, StreamPurpose::Adversary);
    for _ in 0..100 {
        let k = 2 + (stream.next_u64() % 19) as usize;
        let m = 1 + (stream.next_u64() % k as u64) as usize;
        let horizon = 1_000 + stream.next_u64() % 1_000_000;
        let alpha1 = 1 + (stream.next_u64() % 10) as usize;
        let q = 0.01 + 9.99 * stream.next_f64();
        let tuned = tune_parameters(k, m, horizon, alpha1, q).unwrap();
        let product = tuned.beta as f64 * k as f64 * tuned.eta;
        if product > 1.0 + 1e-12 || tuned.beta < 1 {
            grid_violations += 1;
        }
    }
    if grid_violations > 0 {
        passed = false;
    }
    CheckReport {
        name: "tuning rule",
        passed,
        detail: format!(
            "eta rel err {rel:.2e}, beta {} (expect 78), grid violations {grid_violations}/100",
            t.beta
        ),
    }
}

/// Laplace sampler distribution checks: Kolmogorov-Smirnov at 1%, moments,
/// and the expected max-norm harmonic sum.
pub fn laplace_distribution(seed: u64) -> CheckReport {
    let mut stream = derive_stream(seed, 0, 8, StreamPurpose::Adversary);
    let n = 100_000usize;
    let mut draws: Vec<f64> = (0..n).map(|_| stream.next_laplace()).collect();
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cdf = |z: f64| {
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    };
    let mut d = 0.0f64;
    for (i, &z) in draws.iter().enumerate() {
        let f = cdf(z);
        d = d.max((f - i as f64 / n as f64).abs());
        d = d.max(((i + 1) as f64 / n as f64 - f).abs());
    }
    let crit = 1.6276 / (n as f64).sqrt();

    let big = 1_000_000usize;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..big {
        let z = stream.next_laplace();
        sum += z;
        sum_sq += z * z;
    }
    let mean = sum / big as f64;
    let var = sum_sq / big as f64 - mean * mean;

    let h10: f64 = (1..=10).map(|i| 1.0 / i as f64).sum();
    let mut max_norm_acc = 0.0;
    for _ in 0..big {
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            worst = worst.max(stream.next_laplace().abs());
        }
        max_norm_acc += worst;
    }
    let max_norm = max_norm_acc / big as f64;

    let passed = d < crit
        && mean.abs() < 0.005
        && (var - 2.0).abs() / 2.0 < 0.02
        && (max_norm - h10).abs() / h10 < 0.02;
    CheckReport {
        name: "laplace perturbation distribution",
        passed,
        detail: format!(
            "KS {d:.5} (crit {crit:.5}), mean {mean:.4}, var {var:.4}, E|max| {max_norm:.4} (H10 {h10:.4})"
        ),
    }
}

/// Run every suite with lineages derived from one seed.
pub fn all_checks(seed: u64) -> Vec<CheckReport> {
    vec![
        min_of_geometrics_distribution(seed),
        truncated_mean_closed_form(seed),
        stopping_time_independence(seed),
        estimator_expectation(seed),
        oracle_exactness(seed),
        independence_weight_bound(seed),
        neighborhood_ratio_bound(seed),
        tuning_values(seed),
        laplace_distribution(seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_sampler_matches_pmf() {
        let mut stream = derive_stream(1, 0, 0, StreamPurpose::Adversary);
        let p = 0.3;
        let n = 200_000;
        let mut count_one = 0u64;
        for _ in 0..n {
            if sample_geometric(&mut stream, p) == 1 {
                count_one += 1;
            }
        }
        let freq = count_one as f64 / n as f64;
        assert!((freq - p).abs() < 0.005, "{freq}");
    }

    #[test]
    fn chi_square_accepts_its_own_distribution() {
        let mut stream = derive_stream(2, 0, 0, StreamPurpose::Adversary);
        let p = 0.4;
        let samples: Vec<u64> = (0..100_000).map(|_| sample_geometric(&mut stream, p)).collect();
        let (stat, crit, df) = chi_square_vs_geometric(&samples, p);
        assert!(stat < crit, "stat {stat} crit {crit} df {df}");
    }

    #[test]
    fn chi_square_rejects_a_wrong_parameter() {
        let mut stream = derive_stream(3, 0, 0, StreamPurpose::Adversary);
        let samples: Vec<u64> = (0..100_000).map(|_| sample_geometric(&mut stream, 0.4)).collect();
        let (stat, crit, _) = chi_square_vs_geometric(&samples, 0.5);
        assert!(stat > crit, "stat {stat} should exceed crit {crit}");
    }
}
