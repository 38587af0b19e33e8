//! Multi-seed sweeps, the cooperation ablation, and file emission.
//!
//! Runs inside a sweep are independent and execute in parallel; outputs are
//! written in deterministic sweep order afterwards, so two executions of the
//! same spec produce byte-identical files regardless of scheduling.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SweepDimension;
use crate::graph::Graph;
use crate::sim::{
    no_cooperation_baseline, run_episode, RegretTrace, SimConfig, SimError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("sweep point {point}, seed {seed}: {source}")]
    Run {
        point: String,
        seed: u64,
        source: SimError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error("{0}")]
    Invalid(String),
}

/// A multi-seed sweep over one varying dimension.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: SimConfig,
    pub dimension: SweepDimension,
    pub seeds: u32,
    pub base_seed: u64,
}

/// Aggregated outcome of one sweep point. `regret_over_bound` is reported,
/// never asserted: the envelope holds in expectation and small-sample noise
/// may cross it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub point: String,
    pub seeds: u32,
    pub mean_final_regret: f64,
    pub stderr_final_regret: f64,
    pub bound_value: f64,
    pub regret_over_bound: f64,
    pub mean_oracle_calls: f64,
}

/// One JSON line per run: the config echo plus resolved tuning values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunMetadata {
    pub point: String,
    pub seed: u64,
    pub graph_nodes: usize,
    pub graph_edges: Vec<(usize, usize)>,
    pub action_kind: String,
    pub k: usize,
    pub m: usize,
    pub loss_kind: String,
    pub activation_q: Vec<f64>,
    pub horizon: u64,
    pub eta: f64,
    pub beta: u32,
    pub mode: String,
    pub cooperation: bool,
    pub alpha1: usize,
    pub alpha1_source: String,
    pub q_total: f64,
    pub bound_value: f64,
    pub final_regret: f64,
    pub final_cum_loss: f64,
    pub total_oracle_calls: u64,
}

impl RunMetadata {
    fn new(point: &str, config: &SimConfig, trace: &RegretTrace) -> RunMetadata {
        RunMetadata {
            point: point.to_string(),
            seed: trace.seed,
            graph_nodes: config.graph.n_agents(),
            graph_edges: config.graph.edges(),
            action_kind: config.family.kind().as_str().to_string(),
            k: config.family.dimension(),
            m: config.family.max_support(),
            loss_kind: config.loss.kind_str().to_string(),
            activation_q: config.activation.q.clone(),
            horizon: config.horizon,
            eta: trace.params.eta,
            beta: trace.params.beta,
            mode: config.mode.as_str().to_string(),
            cooperation: config.cooperation,
            alpha1: trace.params.alpha1,
            alpha1_source: format!("{:?}", trace.params.alpha1_source),
            q_total: trace.params.q_total,
            bound_value: trace.params.bound_value,
            final_regret: trace.final_regret(),
            final_cum_loss: trace.final_cum_loss(),
            total_oracle_calls: trace.total_oracle_calls(),
        }
    }
}

/// Output of [`run_sweep`].
#[derive(Debug)]
pub struct SweepOutput {
    pub rows: Vec<AggregateRow>,
    pub run_files: Vec<PathBuf>,
    pub traces: Vec<Vec<RegretTrace>>,
}

/// Exact header of every per-run trace CSV.
pub const TRACE_CSV_HEADER: &str = "t,cum_loss,best_fixed_loss,regret,oracle_calls_total";

/// Write one trace as CSV.
pub fn write_trace_csv(trace: &RegretTrace, path: &Path) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    writeln!(w, "{TRACE_CSV_HEADER}").map_err(io_err)?;
    for row in &trace.rounds {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.t, row.cum_loss, row.best_fixed_loss, row.regret, row.oracle_calls_total
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn expand_points(spec: &SweepSpec) -> Result<Vec<(String, SimConfig)>, HarnessError> {
    match &spec.dimension {
        SweepDimension::Single => Ok(vec![("base".to_string(), spec.base.clone())]),
        SweepDimension::Horizons(list) => {
            if list.is_empty() {
                return Err(HarnessError::Invalid("sweep.horizons is empty".into()));
            }
            Ok(list
                .iter()
                .map(|&h| {
                    let mut c = spec.base.clone();
                    c.horizon = h;
                    (format!("T{h}"), c)
                })
                .collect())
        }
        SweepDimension::ActivationScalars(list) => {
            if list.is_empty() {
                return Err(HarnessError::Invalid("sweep.q is empty".into()));
            }
            Ok(list
                .iter()
                .map(|&q| {
                    let mut c = spec.base.clone();
                    c.activation =
                        crate::sim::ActivationModel::broadcast(q, c.graph.n_agents());
                    (format!("q{q}"), c)
                })
                .collect())
        }
        SweepDimension::GraphFiles(paths) => {
            if paths.is_empty() {
                return Err(HarnessError::Invalid("sweep.graphs is empty".into()));
            }
            let mut out = Vec::new();
            for path in paths {
                let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
                let graph = Graph::parse(&text, None)?;
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "graph".to_string());
                let mut c = spec.base.clone();
                if c.activation.q.len() != graph.n_agents() {
                    // scalar-broadcast activations follow the graph size
                    let q0 = c.activation.q.first().copied().unwrap_or(1.0);
                    c.activation = crate::sim::ActivationModel::broadcast(q0, graph.n_agents());
                }
                c.graph = graph;
                out.push((label, c));
            }
            Ok(out)
        }
    }
}

fn aggregate(point: &str, traces: &[RegretTrace]) -> AggregateRow {
    let n = traces.len() as f64;
    let finals: Vec<f64> = traces.iter().map(|t| t.final_regret()).collect();
    let mean = finals.iter().sum::<f64>() / n;
    let stderr = if traces.len() >= 2 {
        let var = finals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let bound = traces[0].params.bound_value;
    let mean_calls = traces
        .iter()
        .map(|t| t.total_oracle_calls() as f64)
        .sum::<f64>()
        / n;
    AggregateRow {
        point: point.to_string(),
        seeds: traces.len() as u32,
        mean_final_regret: mean,
        stderr_final_regret: stderr,
        bound_value: bound,
        regret_over_bound: if bound > 0.0 { mean / bound } else { 0.0 },
        mean_oracle_calls: mean_calls,
    }
}

fn run_point_seeds(
    point: &str,
    config: &SimConfig,
    seeds: u32,
    base_seed: u64,
) -> Result<Vec<RegretTrace>, HarnessError> {
    (0..seeds)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            run_episode(config, seed).map_err(|source| HarnessError::Run {
                point: point.to_string(),
                seed,
                source,
            })
        })
        .collect()
}

fn write_point_outputs(
    out_dir: &Path,
    arm: Option<&str>,
    point: &str,
    config: &SimConfig,
    traces: &[RegretTrace],
    run_files: &mut Vec<PathBuf>,
    metadata: &mut Vec<String>,
) -> Result<(), HarnessError> {
    for trace in traces {
        let name = match arm {
            Some(arm) => format!("run_{arm}_{point}_s{}.csv", trace.seed),
            None => format!("run_{point}_s{}.csv", trace.seed),
        };
        let path = out_dir.join(name);
        write_trace_csv(trace, &path)?;
        run_files.push(path);
        let mut meta = RunMetadata::new(point, config, trace);
        if let Some(arm) = arm {
            meta.point = format!("{arm}:{point}");
        }
        metadata.push(serde_json::to_string(&meta).expect("metadata serializes"));
    }
    Ok(())
}

fn write_lines(path: &Path, lines: &[String]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Exact header of the aggregate CSV.
pub const AGGREGATE_CSV_HEADER: &str =
    "point,seeds,mean_final_regret,stderr_final_regret,bound_value,regret_over_bound,mean_oracle_calls";

fn aggregate_csv_lines(rows: &[AggregateRow]) -> Vec<String> {
    let mut lines = vec![AGGREGATE_CSV_HEADER.to_string()];
    for r in rows {
        lines.push(format!(
            "{},{},{},{},{},{},{}",
            r.point,
            r.seeds,
            r.mean_final_regret,
            r.stderr_final_regret,
            r.bound_value,
            r.regret_over_bound,
            r.mean_oracle_calls
        ));
    }
    lines
}

/// Run every (point, seed) pair, emit per-run CSVs plus `aggregate.csv` and
/// `metadata.jsonl` under `out_dir`.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path) -> Result<SweepOutput, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let points = expand_points(spec)?;
    let mut rows = Vec::new();
    let mut run_files = Vec::new();
    let mut metadata = Vec::new();
    let mut all_traces = Vec::new();
    for (label, config) in &points {
        let traces = run_point_seeds(label, config, spec.seeds, spec.base_seed)?;
        rows.push(aggregate(label, &traces));
        write_point_outputs(
            out_dir,
            None,
            label,
            config,
            &traces,
            &mut run_files,
            &mut metadata,
        )?;
        all_traces.push(traces);
    }
    write_lines(&out_dir.join("aggregate.csv"), &aggregate_csv_lines(&rows))?;
    write_lines(&out_dir.join("metadata.jsonl"), &metadata)?;
    Ok(SweepOutput {
        rows,
        run_files,
        traces: all_traces,
    })
}

/// Paired difference (baseline minus cooperative) at one sweep point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedDiff {
    pub point: String,
    pub mean_diff: f64,
    pub stderr_diff: f64,
}

/// Output of [`compare_cooperation`].
#[derive(Debug)]
pub struct CompareOutput {
    pub cooperative: Vec<AggregateRow>,
    pub baseline: Vec<AggregateRow>,
    pub paired: Vec<PairedDiff>,
    pub coop_traces: Vec<Vec<RegretTrace>>,
    pub baseline_traces: Vec<Vec<RegretTrace>>,
}

/// Run the cooperation ablation with paired seeds: both arms share loss
/// sequences and activation draws, only message exchange differs.
pub fn compare_cooperation(
    spec: &SweepSpec,
    out_dir: &Path,
) -> Result<CompareOutput, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let points = expand_points(spec)?;
    let mut cooperative = Vec::new();
    let mut baseline = Vec::new();
    let mut paired = Vec::new();
    let mut run_files = Vec::new();
    let mut metadata = Vec::new();
    let mut coop_traces_all = Vec::new();
    let mut base_traces_all = Vec::new();
    for (label, config) in &points {
        let solo_config = no_cooperation_baseline(config);
        let coop_traces = run_point_seeds(label, config, spec.seeds, spec.base_seed)?;
        let solo_traces = run_point_seeds(label, &solo_config, spec.seeds, spec.base_seed)?;

        let diffs: Vec<f64> = solo_traces
            .iter()
            .zip(&coop_traces)
            .map(|(s, c)| s.final_regret() - c.final_regret())
            .collect();
        let n = diffs.len() as f64;
        let mean_diff = diffs.iter().sum::<f64>() / n;
        let stderr_diff = if diffs.len() >= 2 {
            let var = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        paired.push(PairedDiff {
            point: label.clone(),
            mean_diff,
            stderr_diff,
        });
        cooperative.push(aggregate(label, &coop_traces));
        baseline.push(aggregate(label, &solo_traces));
        write_point_outputs(
            out_dir,
            Some("coop"),
            label,
            config,
            &coop_traces,
            &mut run_files,
            &mut metadata,
        )?;
        write_point_outputs(
            out_dir,
            Some("solo"),
            label,
            &solo_config,
            &solo_traces,
            &mut run_files,
            &mut metadata,
        )?;
        coop_traces_all.push(coop_traces);
        base_traces_all.push(solo_traces);
    }
    write_lines(
        &out_dir.join("aggregate_coop.csv"),
        &aggregate_csv_lines(&cooperative),
    )?;
    write_lines(
        &out_dir.join("aggregate_solo.csv"),
        &aggregate_csv_lines(&baseline),
    )?;
    let mut paired_lines = vec!["point,mean_diff,stderr_diff".to_string()];
    for p in &paired {
        paired_lines.push(format!("{},{},{}", p.point, p.mean_diff, p.stderr_diff));
    }
    write_lines(&out_dir.join("paired_diff.csv"), &paired_lines)?;
    write_lines(&out_dir.join("metadata.jsonl"), &metadata)?;
    Ok(CompareOutput {
        cooperative,
        baseline,
        paired,
        coop_traces: coop_traces_all,
        baseline_traces: base_traces_all,
    })
}

/// Least-squares slope of `ln(y)` against `ln(x)`; `None` unless all points
/// are strictly positive.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return None;
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}
