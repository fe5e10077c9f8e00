//! Experiment configuration files.
//!
//! ```toml
//! mode = "learning"        # learning | raps | audit
//! horizon = 1000
//! seed = 0
//!
//! [topology]
//! kind = "star"            # or: file = "graph.txt"
//! n = 4
//!
//! [params]
//! l_del = 3
//! l_u = 5
//! l_f = 5
//! p_w = 0.9
//! p_l = 0.2
//!
//! [model]
//! family = "truncated_normal"   # or "bernoulli"
//! floor = 1e-8
//! support = [-10.0, 20.0]
//! agents = [
//!   { truth = 1.0, hypotheses = [1.0, 1.8, 1.5] },
//! ]
//!
//! [raps]
//! x0 = [1.0, 2.0, 3.0, 4.0]
//!
//! [output]
//! dir = "out/star-hi"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::graph::{standard_topology, DirectedGraph, Topology};
use crate::schedule::{NetworkParams, ScheduleError};
use crate::stats::{Distribution, HypothesisModel, DEFAULT_FLOOR, DEFAULT_SUPPORT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Learning,
    Raps,
    /// Learning with full history and the recursion audit.
    Audit,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "learning" => Ok(Mode::Learning),
            "raps" => Ok(Mode::Raps),
            "audit" => Ok(Mode::Audit),
            other => Err(format!(
                "unknown mode `{other}` (expected learning, raps or audit)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Topology>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Normals of the given variance truncated to `support`; values are means.
    #[default]
    TruncatedNormal,
    /// Values are success probabilities.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub truth: f64,
    pub hypotheses: Vec<f64>,
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

fn default_support() -> [f64; 2] {
    [DEFAULT_SUPPORT.0, DEFAULT_SUPPORT.1]
}

fn default_variance() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub family: Family,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default = "default_support")]
    pub support: [f64; 2],
    #[serde(default = "default_variance")]
    pub variance: f64,
    pub agents: Vec<AgentConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RapsConfig {
    pub x0: Vec<f64>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub mode: Mode,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    pub topology: TopologyConfig,
    pub params: NetworkParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raps: Option<RapsConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn config_error(path: impl Into<String>, msg: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    /// Parses TOML; schema errors carry the dotted path of the offending key.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| config_error("", e.message().to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            config_error(path, e.inner().message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            config_error(
                path.display().to_string(),
                format!("cannot read config: {e}"),
            )
        })?;
        let mut config = Self::from_toml(&text)?;
        if let (Some(file), Some(dir)) = (config.topology.file.as_mut(), path.parent()) {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "experiment".into())
    }

    /// Checks every block and builds the runnable objects.
    pub fn validate(&self) -> Result<Experiment, CliError> {
        if self.horizon == 0 {
            return Err(config_error("horizon", "must be at least 1"));
        }
        let graph = self.build_graph()?;
        self.params.validate().map_err(|e| match e {
            ScheduleError::InvalidParams { field, msg } => {
                config_error(format!("params.{field}"), msg)
            }
            other => config_error("params", other.to_string()),
        })?;
        let n = graph.node_count();
        let model = match (&self.model, self.mode) {
            (Some(m), _) => Some(build_model(m, n)?),
            (None, Mode::Raps) => None,
            (None, _) => {
                return Err(config_error(
                    "model",
                    "required for learning and audit modes",
                ))
            }
        };
        let x0 = match (&self.raps, self.mode) {
            (Some(r), _) => {
                if r.x0.len() != n {
                    return Err(config_error(
                        "raps.x0",
                        format!("expected {n} values, got {}", r.x0.len()),
                    ));
                }
                if let Some(i) = r.x0.iter().position(|v| !v.is_finite()) {
                    return Err(config_error(format!("raps.x0[{i}]"), "must be finite"));
                }
                Some(r.x0.clone())
            }
            (None, Mode::Raps) => return Err(config_error("raps", "required for raps mode")),
            (None, _) => None,
        };
        Ok(Experiment {
            config: self.clone(),
            graph,
            model,
            x0,
        })
    }

    fn build_graph(&self) -> Result<DirectedGraph, CliError> {
        match (&self.topology.kind, &self.topology.file) {
            (Some(_), Some(_)) => Err(config_error(
                "topology",
                "give either `kind` or `file`, not both",
            )),
            (None, None) => Err(config_error(
                "topology",
                "one of `kind` or `file` is required",
            )),
            (Some(kind), None) => {
                let n = self
                    .topology
                    .n
                    .ok_or_else(|| config_error("topology.n", "required with `kind`"))?;
                standard_topology(*kind, n).map_err(|e| config_error("topology.n", e.to_string()))
            }
            (None, Some(file)) => {
                let text = std::fs::read_to_string(file).map_err(|e| {
                    config_error("topology.file", format!("{}: {e}", file.display()))
                })?;
                let g = DirectedGraph::parse(&text)
                    .map_err(|e| config_error("topology.file", e.to_string()))?;
                if let Some(n) = self.topology.n {
                    if n != g.node_count() {
                        return Err(config_error(
                            "topology.n",
                            format!("graph file has {} nodes, config says {n}", g.node_count()),
                        ));
                    }
                }
                Ok(g)
            }
        }
    }
}

fn build_model(m: &ModelConfig, n: usize) -> Result<HypothesisModel<f64>, CliError> {
    if m.agents.len() != n {
        return Err(config_error(
            "model.agents",
            format!("expected {n} agents, got {}", m.agents.len()),
        ));
    }
    let count = m.agents[0].hypotheses.len();
    if count == 0 {
        return Err(config_error(
            "model.agents[0].hypotheses",
            "must not be empty",
        ));
    }
    if let Some(i) = m.agents.iter().position(|a| a.hypotheses.len() != count) {
        return Err(config_error(
            format!("model.agents[{i}].hypotheses"),
            format!("expected {count} hypotheses like agent 0"),
        ));
    }
    if !(m.floor > 0.0 && m.floor.is_finite()) {
        return Err(config_error("model.floor", "must be positive"));
    }
    let dist = |path: String, v: f64| -> Result<Distribution<f64>, CliError> {
        match m.family {
            Family::TruncatedNormal => {
                Distribution::truncated_normal(v, m.variance, m.support[0], m.support[1])
            }
            Family::Bernoulli => Distribution::bernoulli(v),
        }
        .map_err(|e| config_error(path, e.to_string()))
    };
    if m.family == Family::TruncatedNormal {
        if !(m.support[0] < m.support[1]) {
            return Err(config_error(
                "model.support",
                "lower bound must be below upper bound",
            ));
        }
        if !(m.variance > 0.0) {
            return Err(config_error("model.variance", "must be positive"));
        }
    }
    let mut truths = Vec::with_capacity(n);
    let mut likelihoods = Vec::with_capacity(n);
    for (i, a) in m.agents.iter().enumerate() {
        truths.push(dist(format!("model.agents[{i}].truth"), a.truth)?);
        likelihoods.push(
            a.hypotheses
                .iter()
                .enumerate()
                .map(|(t, &v)| dist(format!("model.agents[{i}].hypotheses[{t}]"), v))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    HypothesisModel::new(truths, likelihoods, m.floor)
        .map_err(|e| config_error("model", e.to_string()))
}

/// A validated configuration with its graph and model built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub graph: DirectedGraph,
    pub model: Option<HypothesisModel<f64>>,
    pub x0: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
mode = "learning"
horizon = 10
[topology]
kind = "path"
n = 2
[params]
l_del = 1
l_u = 1
l_f = 1
p_w = 1.0
p_l = 0.0
[model]
family = "bernoulli"
agents = [{ truth = 0.5, hypotheses = [0.4, 0.6] }, { truth = 0.5, hypotheses = [0.4, 0.6] }]
"#;

    #[test]
    fn base_config_validates() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        let e = c.validate().unwrap();
        assert_eq!(e.graph.node_count(), 2);
        assert_eq!(c.output.dir, PathBuf::from("out"));
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn semantic_errors_name_the_key() {
        let c = ExperimentConfig::from_toml(&BASE.replace("p_w = 1.0", "p_w = 0.0")).unwrap();
        match c.validate() {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "params.p_w"),
            other => panic!("{other:?}"),
        }
        let c = ExperimentConfig::from_toml(
            &BASE.replace("hypotheses = [0.4, 0.6] }]", "hypotheses = [0.4] }]"),
        )
        .unwrap();
        match c.validate() {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "model.agents[1].hypotheses"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_key() {
        match ExperimentConfig::from_toml(&BASE.replace("l_f = 1", "l_f = \"one\"")) {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "params.l_f"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_toml(&BASE.replace("n = 2", "n = 2\nsize = 3")) {
            Err(CliError::Config { path, msg }) => {
                assert_eq!(path, "topology.size");
                assert!(msg.contains("size"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn raps_needs_values() {
        let c =
            ExperimentConfig::from_toml(&BASE.replace("mode = \"learning\"", "mode = \"raps\""))
                .unwrap();
        match c.validate() {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "raps"),
            other => panic!("{other:?}"),
        }
    }
}
