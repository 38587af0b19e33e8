//! Experiment configuration: a flat `key = value` text format with dotted
//! keys. Unknown and duplicate keys are rejected so typos surface early.
//!
//! ```text
//! # single-agent bandit benchmark
//! graph.kind     = single
//! action.kind    = exactly_m
//! action.k       = 5
//! action.m       = 1
//! loss.kind      = iid_bernoulli
//! loss.means     = 0.3, 0.5, 0.5, 0.5, 0.5
//! activation.q   = 1.0
//! horizon        = 20000
//! seeds          = 20
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::action::DecisionFamily;
use crate::estimator::ResampleMode;
use crate::graph::Graph;
use crate::sim::{ActivationModel, LossModel, LossSegment, SimConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    MalformedLine { line: usize, text: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("key {key:?}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Action(#[from] crate::action::ActionError),
}

/// The dimension a sweep varies, if any.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepDimension {
    Single,
    Horizons(Vec<u64>),
    ActivationScalars(Vec<f64>),
    GraphFiles(Vec<PathBuf>),
}

/// A parsed experiment file: the base simulation config plus harness fields.
#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub sim: SimConfig,
    pub seeds: u32,
    pub sweep: SweepDimension,
}

const KNOWN_KEYS: &[&str] = &[
    "graph.kind",
    "graph.file",
    "graph.nodes",
    "action.kind",
    "action.k",
    "action.m",
    "action.file",
    "loss.kind",
    "loss.means",
    "loss.segments",
    "loss.file",
    "activation.q",
    "agent.eta",
    "agent.beta",
    "estimator.beta",
    "estimator.mode",
    "horizon",
    "seeds",
    "cooperation",
    "record_steps",
    "alpha1",
    "sweep.horizons",
    "sweep.q",
    "sweep.graphs",
];

struct Raw {
    entries: BTreeMap<String, String>,
}

impl Raw {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(text) => text.parse::<T>().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                reason: format!("cannot parse {text:?}"),
            }),
        }
    }
}

fn parse_raw(text: &str) -> Result<Raw, ConfigError> {
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::MalformedLine {
            line,
            text: body.to_string(),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line, key });
        }
        if entries.insert(key.clone(), value).is_some() {
            return Err(ConfigError::DuplicateKey { line, key });
        }
    }
    Ok(Raw { entries })
}

fn parse_list<T: std::str::FromStr>(key: &str, text: &str) -> Result<Vec<T>, ConfigError> {
    text.split(',')
        .map(|s| {
            s.trim().parse::<T>().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                reason: format!("cannot parse list element {:?}", s.trim()),
            })
        })
        .collect()
}

fn read_file(base_dir: &Path, rel: &str) -> Result<String, ConfigError> {
    let path = base_dir.join(rel);
    std::fs::read_to_string(&path).map_err(|source| ConfigError::Io { path, source })
}

fn parse_loss_csv(key: &str, text: &str) -> Result<Vec<Vec<f64>>, ConfigError> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let row = parse_list::<f64>(key, body).map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("row {}: cannot parse {body:?}", idx + 1),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn parse_segments(text: &str) -> Result<Vec<LossSegment>, ConfigError> {
    // format: "1000:0.1,0.5;1000:0.9,0.5"
    let mut segments = Vec::new();
    for part in text.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (len, means) = part.split_once(':').ok_or_else(|| ConfigError::BadValue {
            key: "loss.segments".into(),
            reason: format!("segment {part:?} is not `rounds:means`"),
        })?;
        let rounds = len.trim().parse::<u64>().map_err(|_| ConfigError::BadValue {
            key: "loss.segments".into(),
            reason: format!("bad segment length {:?}", len.trim()),
        })?;
        segments.push(LossSegment {
            rounds,
            means: parse_list("loss.segments", means)?,
        });
    }
    if segments.is_empty() {
        return Err(ConfigError::BadValue {
            key: "loss.segments".into(),
            reason: "no segments given".into(),
        });
    }
    Ok(segments)
}

/// Parse a config text. `base_dir` anchors relative file references.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ParsedConfig, ConfigError> {
    let mut raw = parse_raw(text)?;

    // graph
    let graph_kind = raw.take("graph.kind").unwrap_or_else(|| "file".to_string());
    let graph_nodes: Option<usize> = raw.parse("graph.nodes")?;
    let graph_file = raw.take("graph.file");
    let graph = match graph_kind.as_str() {
        "file" => {
            let rel = graph_file.ok_or_else(|| {
                ConfigError::Invalid("graph.kind = file requires graph.file".into())
            })?;
            Graph::parse(&read_file(base_dir, &rel)?, graph_nodes)?
        }
        "single" => Graph::single(),
        kind => {
            let n = graph_nodes.ok_or_else(|| {
                ConfigError::Invalid(format!("graph.kind = {kind} requires graph.nodes"))
            })?;
            if n == 0 || n > crate::graph::MAX_AGENTS {
                return Err(ConfigError::Invalid(format!(
                    "graph.nodes = {n} outside 1..={}",
                    crate::graph::MAX_AGENTS
                )));
            }
            match kind {
                "edgeless" => Graph::edgeless(n),
                "path" => Graph::path(n),
                "cycle" => Graph::cycle(n),
                "complete" => Graph::complete(n),
                other => {
                    return Err(ConfigError::BadValue {
                        key: "graph.kind".into(),
                        reason: format!("unknown kind {other:?}"),
                    })
                }
            }
        }
    };

    // action family
    let action_kind = raw
        .take("action.kind")
        .unwrap_or_else(|| "at_most_m".to_string());
    let family = match action_kind.as_str() {
        "explicit" => {
            let rel = raw.take("action.file").ok_or_else(|| {
                ConfigError::Invalid("action.kind = explicit requires action.file".into())
            })?;
            DecisionFamily::explicit_from_text(&read_file(base_dir, &rel)?)?
        }
        kind => {
            let k: usize = raw.parse("action.k")?.ok_or_else(|| {
                ConfigError::Invalid(format!("action.kind = {kind} requires action.k"))
            })?;
            let m: usize = raw.parse("action.m")?.ok_or_else(|| {
                ConfigError::Invalid(format!("action.kind = {kind} requires action.m"))
            })?;
            match kind {
                "at_most_m" => DecisionFamily::at_most(k, m)?,
                "exactly_m" => DecisionFamily::exactly(k, m)?,
                other => {
                    return Err(ConfigError::BadValue {
                        key: "action.kind".into(),
                        reason: format!("unknown kind {other:?}"),
                    })
                }
            }
        }
    };
    let k = family.dimension();

    // loss model
    let loss_kind = raw
        .take("loss.kind")
        .unwrap_or_else(|| "iid_bernoulli".to_string());
    let loss = match loss_kind.as_str() {
        "iid_bernoulli" => {
            let means_text = raw.take("loss.means").ok_or_else(|| {
                ConfigError::Invalid("loss.kind = iid_bernoulli requires loss.means".into())
            })?;
            LossModel::IidBernoulli {
                means: parse_list("loss.means", &means_text)?,
            }
        }
        "piecewise" => {
            let text = raw.take("loss.segments").ok_or_else(|| {
                ConfigError::Invalid("loss.kind = piecewise requires loss.segments".into())
            })?;
            LossModel::PiecewiseSwitching {
                segments: parse_segments(&text)?,
            }
        }
        "file" => {
            let rel = raw.take("loss.file").ok_or_else(|| {
                ConfigError::Invalid("loss.kind = file requires loss.file".into())
            })?;
            LossModel::FromFile {
                rows: parse_loss_csv("loss.file", &read_file(base_dir, &rel)?)?,
            }
        }
        other => {
            return Err(ConfigError::BadValue {
                key: "loss.kind".into(),
                reason: format!("unknown kind {other:?}"),
            })
        }
    };

    // activation
    let q_text = raw
        .take("activation.q")
        .ok_or_else(|| ConfigError::Invalid("activation.q is required".into()))?;
    let q_values = parse_list::<f64>("activation.q", &q_text)?;
    let activation = if q_values.len() == 1 {
        ActivationModel::broadcast(q_values[0], graph.n_agents())
    } else {
        ActivationModel { q: q_values }
    };

    // agent / estimator parameters
    let eta: f64 = raw.parse("agent.eta")?.unwrap_or(0.0);
    if eta < 0.0 {
        return Err(ConfigError::BadValue {
            key: "agent.eta".into(),
            reason: "must be nonnegative (0 = auto)".into(),
        });
    }
    let agent_beta: Option<u32> = raw.parse("agent.beta")?;
    let estimator_beta: Option<u32> = raw.parse("estimator.beta")?;
    let beta = match (agent_beta, estimator_beta) {
        (Some(a), Some(b)) if a != b => {
            return Err(ConfigError::Invalid(format!(
                "agent.beta = {a} conflicts with estimator.beta = {b}"
            )))
        }
        (a, b) => a.or(b).unwrap_or(0),
    };
    let mode = match raw.take("estimator.mode").as_deref() {
        None => ResampleMode::default(),
        Some("independent") => ResampleMode::Independent,
        Some("shared") => ResampleMode::Shared,
        Some(other) => {
            return Err(ConfigError::BadValue {
                key: "estimator.mode".into(),
                reason: format!("expected independent|shared, got {other:?}"),
            })
        }
    };

    let horizon: u64 = raw
        .parse("horizon")?
        .ok_or_else(|| ConfigError::Invalid("horizon is required".into()))?;
    let seeds: u32 = raw.parse("seeds")?.unwrap_or(1);
    if seeds == 0 {
        return Err(ConfigError::BadValue {
            key: "seeds".into(),
            reason: "must be at least 1".into(),
        });
    }

    let parse_switch = |raw: &mut Raw, key: &str, default: bool| -> Result<bool, ConfigError> {
        match raw.take(key).as_deref() {
            None => Ok(default),
            Some("on") | Some("true") => Ok(true),
            Some("off") | Some("false") => Ok(false),
            Some(other) => Err(ConfigError::BadValue {
                key: key.to_string(),
                reason: format!("expected on|off, got {other:?}"),
            }),
        }
    };
    let cooperation = parse_switch(&mut raw, "cooperation", true)?;
    let record_steps = parse_switch(&mut raw, "record_steps", false)?;
    let alpha1_override: Option<usize> = raw.parse("alpha1")?;

    // sweep dimension
    let sweep_keys = [
        raw.take("sweep.horizons"),
        raw.take("sweep.q"),
        raw.take("sweep.graphs"),
    ];
    let sweep = match sweep_keys {
        [None, None, None] => SweepDimension::Single,
        [Some(h), None, None] => SweepDimension::Horizons(parse_list("sweep.horizons", &h)?),
        [None, Some(q), None] => SweepDimension::ActivationScalars(parse_list("sweep.q", &q)?),
        [None, None, Some(g)] => SweepDimension::GraphFiles(
            g.split(',')
                .map(|s| base_dir.join(s.trim()))
                .collect::<Vec<_>>(),
        ),
        _ => {
            return Err(ConfigError::Invalid(
                "at most one of sweep.horizons, sweep.q, sweep.graphs may be set".into(),
            ))
        }
    };

    debug_assert!(raw.entries.is_empty(), "unconsumed keys: {:?}", raw.entries);

    let sim = SimConfig {
        graph,
        family,
        loss,
        activation,
        horizon,
        eta,
        beta,
        mode,
        cooperation,
        alpha1_override,
        record_steps,
    };
    // surface dimension mismatches now rather than at run time
    if let LossModel::IidBernoulli { means } = &sim.loss {
        if means.len() != k {
            return Err(ConfigError::Invalid(format!(
                "loss.means has {} entries, action dimension is {k}",
                means.len()
            )));
        }
    }
    if sim.activation.q.len() != sim.graph.n_agents() {
        return Err(ConfigError::Invalid(format!(
            "activation.q has {} entries, graph has {} agents",
            sim.activation.q.len(),
            sim.graph.n_agents()
        )));
    }

    Ok(ParsedConfig { sim, seeds, sweep })
}

/// Parse a config file from disk; relative paths resolve against its parent
/// directory.
pub fn load_config(path: &Path) -> Result<ParsedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, base_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ParsedConfig, ConfigError> {
        parse_config(text, Path::new("."))
    }

    const BASE: &str = "\
graph.kind = complete
graph.nodes = 4
action.kind = exactly_m
action.k = 3
action.m = 1
loss.kind = iid_bernoulli
loss.means = 0.2, 0.5, 0.8
activation.q = 0.5
horizon = 100
";

    #[test]
    fn parses_a_full_config() {
        let cfg = parse(BASE).unwrap();
        assert_eq!(cfg.sim.graph.n_agents(), 4);
        assert_eq!(cfg.sim.family.dimension(), 3);
        assert_eq!(cfg.sim.activation.q, vec![0.5; 4]);
        assert_eq!(cfg.sim.horizon, 100);
        assert_eq!(cfg.seeds, 1);
        assert_eq!(cfg.sweep, SweepDimension::Single);
        assert!(cfg.sim.cooperation);
        assert_eq!(cfg.sim.eta, 0.0);
        assert_eq!(cfg.sim.beta, 0);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let text = format!("{BASE}bogus.key = 1\n");
        assert!(matches!(
            parse(&text),
            Err(ConfigError::UnknownKey { line: 10, .. })
        ));
        let text = format!("{BASE}horizon = 5\n");
        assert!(matches!(
            parse(&text),
            Err(ConfigError::DuplicateKey { line: 10, .. })
        ));
    }

    #[test]
    fn rejects_malformed_lines_and_bad_values() {
        assert!(matches!(
            parse("graph.kind complete\n"),
            Err(ConfigError::MalformedLine { line: 1, .. })
        ));
        let text = BASE.replace("activation.q = 0.5", "activation.q = maybe");
        assert!(matches!(parse(&text), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn beta_synonyms_must_agree() {
        let ok = format!("{BASE}agent.beta = 7\n");
        assert_eq!(parse(&ok).unwrap().sim.beta, 7);
        let ok = format!("{BASE}estimator.beta = 9\n");
        assert_eq!(parse(&ok).unwrap().sim.beta, 9);
        let conflict = format!("{BASE}agent.beta = 7\nestimator.beta = 9\n");
        assert!(matches!(parse(&conflict), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn per_agent_activation_list() {
        let text = BASE.replace("activation.q = 0.5", "activation.q = 0.1, 0.2, 0.3, 0.4");
        let cfg = parse(&text).unwrap();
        assert_eq!(cfg.sim.activation.q, vec![0.1, 0.2, 0.3, 0.4]);

        let text = BASE.replace("activation.q = 0.5", "activation.q = 0.1, 0.2");
        assert!(matches!(parse(&text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn sweep_dimensions_are_exclusive() {
        let one = format!("{BASE}sweep.horizons = 100, 200\n");
        assert_eq!(
            parse(&one).unwrap().sweep,
            SweepDimension::Horizons(vec![100, 200])
        );
        let two = format!("{BASE}sweep.horizons = 100\nsweep.q = 0.5\n");
        assert!(matches!(parse(&two), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn piecewise_segments_parse() {
        let text = BASE
            .replace("loss.kind = iid_bernoulli", "loss.kind = piecewise")
            .replace(
                "loss.means = 0.2, 0.5, 0.8",
                "loss.segments = 50:0.1,0.2,0.3; 50:0.9,0.8,0.7",
            );
        let cfg = parse(&text).unwrap();
        match cfg.sim.loss {
            LossModel::PiecewiseSwitching { segments } => {
                assert_eq!(segments.len(), 2);
                assert_eq!(segments[0].rounds, 50);
                assert_eq!(segments[1].means, vec![0.9, 0.8, 0.7]);
            }
            other => panic!("unexpected loss model {other:?}"),
        }
    }

    #[test]
    fn graph_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("net.edges"), "n 3\n0 1\n1 2\n").unwrap();
        let text = BASE
            .replace("graph.kind = complete", "graph.kind = file\ngraph.file = net.edges")
            .replace("graph.nodes = 4\n", "")
            .replace("activation.q = 0.5", "activation.q = 1.0");
        let cfg = parse_config(&text, dir.path()).unwrap();
        assert_eq!(cfg.sim.graph.n_agents(), 3);
        assert_eq!(cfg.sim.graph.edge_count(), 2);
    }
}
