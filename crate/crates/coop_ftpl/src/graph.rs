//! Communication network: closed neighborhoods and independence numbers.
//!
//! Agents are dense ids `0..n`. Adjacency is stored as one `u64` bitset row
//! per agent (no self-loop bits); neighborhood queries add the agent itself,
//! since every agent always hears its own feedback.

use std::fmt;

use thiserror::Error;

/// Hard limit imposed by the bitset representation.
pub const MAX_AGENTS: usize = 64;

/// Default cap for the exact branch-and-bound independence-number solver.
/// Above this, callers must supply the number or accept the greedy bound.
pub const DEFAULT_EXACT_ALPHA_CAP: usize = 24;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: expected `u v` pair, got {text:?}")]
    MalformedLine { line: usize, text: String },
    #[error("line {line}: agent id {id} out of range (graph has {n} agents)")]
    IdOutOfRange { line: usize, id: usize, n: usize },
    #[error("line {line}: self-loop edge on agent {id}")]
    SelfLoop { line: usize, id: usize },
    #[error("line {line}: duplicate `n` directive")]
    DuplicateNodeDirective { line: usize },
    #[error("cannot infer agent count: no `n` directive, no declared count, no edges")]
    UnknownNodeCount,
    #[error("declared agent count {declared} conflicts with `n {directive}` directive")]
    NodeCountConflict { declared: usize, directive: usize },
    #[error("graph has {n} agents, limit is {MAX_AGENTS}")]
    TooManyAgents { n: usize },
    #[error("graph must have at least one agent")]
    Empty,
    #[error("graph has {n} agents, above the exact cap {cap}: use the greedy bound or supply alpha1 explicitly")]
    ExactAlphaCapExceeded { n: usize, cap: usize },
}

/// Undirected communication network over agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<u64>,
}

/// A set of pairwise non-adjacent agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndependentSet {
    members: Vec<usize>,
}

impl IndependentSet {
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Checks the defining invariant against `g`.
    pub fn is_valid(&self, g: &Graph) -> bool {
        self.members.iter().all(|&v| v < g.n)
            && self
                .members
                .iter()
                .enumerate()
                .all(|(i, &v)| self.members[i + 1..].iter().all(|&w| !g.are_adjacent(v, w)))
    }
}

fn bit(v: usize) -> u64 {
    1u64 << v
}

impl Graph {
    /// Graph with no edges.
    pub fn edgeless(n: usize) -> Graph {
        assert!((1..=MAX_AGENTS).contains(&n));
        Graph { n, adj: vec![0; n] }
    }

    /// Single isolated agent.
    pub fn single() -> Graph {
        Graph::edgeless(1)
    }

    pub fn complete(n: usize) -> Graph {
        let mut g = Graph::edgeless(n);
        for u in 0..n {
            for v in (u + 1)..n {
                g.add_edge(u, v);
            }
        }
        g
    }

    pub fn path(n: usize) -> Graph {
        let mut g = Graph::edgeless(n);
        for u in 1..n {
            g.add_edge(u - 1, u);
        }
        g
    }

    pub fn cycle(n: usize) -> Graph {
        let mut g = Graph::path(n);
        if n >= 3 {
            g.add_edge(n - 1, 0);
        }
        g
    }

    /// Build from an explicit edge list; duplicates are deduplicated.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Graph, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if n > MAX_AGENTS {
            return Err(GraphError::TooManyAgents { n });
        }
        let mut g = Graph::edgeless(n);
        for (line, &(u, v)) in edges.iter().enumerate() {
            let line = line + 1;
            if u >= n {
                return Err(GraphError::IdOutOfRange { line, id: u, n });
            }
            if v >= n {
                return Err(GraphError::IdOutOfRange { line, id: v, n });
            }
            if u == v {
                return Err(GraphError::SelfLoop { line, id: u });
            }
            g.add_edge(u, v);
        }
        Ok(g)
    }

    /// Parse an edge-list text: one `u v` pair per line, `#` comments, and an
    /// optional `n <count>` directive. `declared_n`, when given, fixes the
    /// agent count (it must agree with any directive). Without either, the
    /// count is inferred as `max id + 1`.
    pub fn parse(text: &str, declared_n: Option<usize>) -> Result<Graph, GraphError> {
        let mut directive: Option<(usize, usize)> = None; // (line, n)
        let mut edges: Vec<(usize, usize, usize)> = Vec::new(); // (line, u, v)
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut parts = body.split_whitespace();
            let first = parts.next().unwrap();
            if first == "n" {
                let rest = parts.next();
                let value = rest
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|_| parts.next().is_none());
                match (value, &directive) {
                    (Some(v), None) => directive = Some((line, v)),
                    (Some(_), Some(_)) => {
                        return Err(GraphError::DuplicateNodeDirective { line })
                    }
                    (None, _) => {
                        return Err(GraphError::MalformedLine {
                            line,
                            text: body.to_string(),
                        })
                    }
                }
                continue;
            }
            let u = first.parse::<usize>().ok();
            let v = parts.next().and_then(|s| s.parse::<usize>().ok());
            match (u, v, parts.next()) {
                (Some(u), Some(v), None) => edges.push((line, u, v)),
                _ => {
                    return Err(GraphError::MalformedLine {
                        line,
                        text: body.to_string(),
                    })
                }
            }
        }

        let n = match (declared_n, directive) {
            (Some(d), Some((_, f))) if d != f => {
                return Err(GraphError::NodeCountConflict {
                    declared: d,
                    directive: f,
                })
            }
            (Some(d), _) => d,
            (None, Some((_, f))) => f,
            (None, None) => {
                let max_id = edges.iter().map(|&(_, u, v)| u.max(v)).max();
                match max_id {
                    Some(m) => m + 1,
                    None => return Err(GraphError::UnknownNodeCount),
                }
            }
        };
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if n > MAX_AGENTS {
            return Err(GraphError::TooManyAgents { n });
        }

        let mut g = Graph::edgeless(n);
        for (line, u, v) in edges {
            if u >= n {
                return Err(GraphError::IdOutOfRange { line, id: u, n });
            }
            if v >= n {
                return Err(GraphError::IdOutOfRange { line, id: v, n });
            }
            if u == v {
                return Err(GraphError::SelfLoop { line, id: u });
            }
            g.add_edge(u, v);
        }
        Ok(g)
    }

    fn add_edge(&mut self, u: usize, v: usize) {
        debug_assert!(u != v && u < self.n && v < self.n);
        self.adj[u] |= bit(v);
        self.adj[v] |= bit(u);
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|row| row.count_ones() as usize).sum::<usize>() / 2
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            let mut row = self.adj[u] >> (u + 1) << (u + 1); // keep v > u
            while row != 0 {
                let v = row.trailing_zeros() as usize;
                out.push((u, v));
                row &= row - 1;
            }
        }
        out
    }

    pub fn are_adjacent(&self, u: usize, v: usize) -> bool {
        u != v && self.adj[u] & bit(v) != 0
    }

    /// Closed neighborhood `N(v)` as a bitset: `v` together with its
    /// neighbors.
    pub fn neighborhood_mask(&self, v: usize) -> u64 {
        assert!(v < self.n, "agent id {v} out of range");
        self.adj[v] | bit(v)
    }

    /// Closed neighborhood as agent ids, ascending.
    pub fn neighborhood(&self, v: usize) -> Vec<usize> {
        let mut mask = self.neighborhood_mask(v);
        let mut out = Vec::with_capacity(mask.count_ones() as usize);
        while mask != 0 {
            out.push(mask.trailing_zeros() as usize);
            mask &= mask - 1;
        }
        out
    }

    fn all_mask(&self) -> u64 {
        if self.n == 64 {
            u64::MAX
        } else {
            bit(self.n) - 1
        }
    }

    /// Greedy independent set by repeatedly taking the agent with the
    /// smallest remaining closed neighborhood (the unit-weight peeling
    /// order). Always valid; never larger than the true maximum.
    pub fn greedy_independent_set(&self) -> IndependentSet {
        let mut remaining = self.all_mask();
        let mut members = Vec::new();
        while remaining != 0 {
            let mut best_v = usize::MAX;
            let mut best_deg = u32::MAX;
            let mut scan = remaining;
            while scan != 0 {
                let v = scan.trailing_zeros() as usize;
                scan &= scan - 1;
                let deg = (self.neighborhood_mask(v) & remaining).count_ones();
                if deg < best_deg {
                    best_deg = deg;
                    best_v = v;
                }
            }
            members.push(best_v);
            remaining &= !self.neighborhood_mask(best_v);
        }
        members.sort_unstable();
        IndependentSet { members }
    }

    /// Exact maximum independent set by branch and bound, seeded with the
    /// greedy solution and pruned by the candidate count.
    pub fn maximum_independent_set_capped(&self, cap: usize) -> Result<IndependentSet, GraphError> {
        if self.n > cap {
            return Err(GraphError::ExactAlphaCapExceeded { n: self.n, cap });
        }
        let greedy = self.greedy_independent_set();
        let mut best_mask: u64 = greedy.members.iter().fold(0, |m, &v| m | bit(v));
        let mut best_size = best_mask.count_ones();
        self.mis_recurse(self.all_mask(), 0, 0, &mut best_size, &mut best_mask);
        let mut members = Vec::with_capacity(best_size as usize);
        let mut mask = best_mask;
        while mask != 0 {
            members.push(mask.trailing_zeros() as usize);
            mask &= mask - 1;
        }
        Ok(IndependentSet { members })
    }

    pub fn maximum_independent_set(&self) -> Result<IndependentSet, GraphError> {
        self.maximum_independent_set_capped(DEFAULT_EXACT_ALPHA_CAP)
    }

    /// The independence number α₁ (exact, subject to the cap).
    pub fn independence_number_exact(&self) -> Result<usize, GraphError> {
        Ok(self.maximum_independent_set()?.size())
    }

    fn mis_recurse(
        &self,
        mut candidates: u64,
        mut chosen: u64,
        mut size: u32,
        best_size: &mut u32,
        best_mask: &mut u64,
    ) {
        loop {
            if candidates == 0 {
                if size > *best_size {
                    *best_size = size;
                    *best_mask = chosen;
                }
                return;
            }
            if size + candidates.count_ones() <= *best_size {
                return; // cannot beat the incumbent
            }
            // Pick the candidate with the largest degree inside the candidate
            // subgraph; take degree-0 candidates unconditionally.
            let mut pivot = usize::MAX;
            let mut pivot_deg = 0u32;
            let mut isolated = 0u64;
            let mut scan = candidates;
            while scan != 0 {
                let v = scan.trailing_zeros() as usize;
                scan &= scan - 1;
                let deg = (self.adj[v] & candidates).count_ones();
                if deg == 0 {
                    isolated |= bit(v);
                } else if pivot == usize::MAX || deg > pivot_deg {
                    pivot = v;
                    pivot_deg = deg;
                }
            }
            if isolated != 0 {
                chosen |= isolated;
                size += isolated.count_ones();
                candidates &= !isolated;
                continue;
            }
            let v = pivot;
            // include v
            self.mis_recurse(
                candidates & !self.neighborhood_mask(v),
                chosen | bit(v),
                size + 1,
                best_size,
                best_mask,
            );
            // exclude v
            candidates &= !bit(v);
        }
    }

    /// Σ_v q(v)/Q(v) with Q(v) = Σ_{w∈N(v)} q(w), skipping agents with
    /// q(v) = 0. Bounded by the independence number for any nonnegative q.
    pub fn weight_ratio_sum(&self, q: &[f64]) -> f64 {
        assert_eq!(q.len(), self.n, "weight vector length mismatch");
        let mut sum = 0.0;
        for v in 0..self.n {
            if q[v] <= 0.0 {
                continue;
            }
            let mut mask = self.neighborhood_mask(v);
            let mut q_closed = 0.0;
            while mask != 0 {
                q_closed += q[mask.trailing_zeros() as usize];
                mask &= mask - 1;
            }
            // self-inclusion makes Q(v) >= q(v) > 0 here
            assert!(q_closed > 0.0);
            sum += q[v] / q_closed;
        }
        sum
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "graph(n={}, edges={})", self.n, self.edge_count())
    }
}
