//! Scenario config files (JSON).
//!
//! Unknown keys are rejected everywhere. Parse errors carry the key path,
//! e.g. `reframe.T1: invalid type: string "x", expected f64`.

use std::path::Path;

use reframe_core::DVector;
use reframe_core::framesim::DiscreteSettings;
use reframe_core::graph::generate_topology;
use reframe_core::{
    ControllerKind, IntegratorSettings, Offsets, ReframeMode, ReframeSchedule, SystemParams, Topology,
    TopologyKind,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerEdge {
    Uniform(f64),
    Each(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OffsetSpec {
    /// Only `"feasible"` is accepted.
    Named(String),
    Each(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologySpec {
    /// Use the `edges` list.
    #[default]
    Explicit,
    Ring,
    BidirectionalRing,
    Complete,
    RandomStrong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    #[default]
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReframeModeName {
    Fixed,
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaggerConfig {
    pub max_delay: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReframeConfig {
    #[serde(default)]
    pub mode: ReframeModeName,
    #[serde(rename = "T1", default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    /// Experimental per-node reframe delays.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stagger: Option<StaggerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub topology: TopologySpec,
    /// Node count; implied by `omega_u` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// 1-based `[src, dst]` pairs for explicit topologies. Order defines
    /// edge numbering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_edge_fraction: Option<f64>,
    pub k: f64,
    pub omega_u: Vec<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: PerEdge,
    #[serde(default = "default_offsets")]
    pub beta_off: OffsetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub controller: ControllerKind,
    #[serde(default)]
    pub reframe: ReframeConfig,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,
    #[serde(default)]
    pub mode: SimMode,
    #[serde(default)]
    pub discrete: DiscreteSettings,
}

fn default_lambda() -> PerEdge {
    PerEdge::Uniform(10.0)
}

fn default_offsets() -> OffsetSpec {
    OffsetSpec::Named("feasible".into())
}

const DEFAULT_EXTRA_FRACTION: f64 = 0.3;

/// A config turned into core types.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub params: SystemParams,
    pub theta0: DVector<f64>,
    pub controller: ControllerKind,
    pub schedule: ReframeSchedule,
    pub integrator: IntegratorSettings,
    pub horizon: Option<f64>,
    pub sample_interval: Option<f64>,
    pub mode: SimMode,
    pub discrete: DiscreteSettings,
}

pub fn parse_config_str(text: &str) -> Result<ScenarioConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." || path.is_empty() {
            CliError::Config(inner.to_string())
        } else {
            CliError::Config(format!("{path}: {inner}"))
        }
    })?;
    cfg.resolve()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn emit_config(cfg: &ScenarioConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn exact_len(key: &str, v: &[f64], len: usize) -> Result<DVector<f64>, CliError> {
    if v.len() != len {
        return Err(config_err(key, format!("expected {len} entries, got {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

impl ScenarioConfig {
    /// Minimal config: a topology kind, gain, and frequencies.
    pub fn minimal(topology: TopologySpec, k: f64, omega_u: Vec<f64>) -> Self {
        ScenarioConfig {
            topology,
            n: Some(omega_u.len()),
            edges: None,
            topology_seed: None,
            extra_edge_fraction: None,
            k,
            omega_u,
            lambda: default_lambda(),
            beta_off: default_offsets(),
            q: None,
            theta0: None,
            controller: ControllerKind::default(),
            reframe: ReframeConfig::default(),
            integrator: IntegratorSettings::default(),
            horizon: None,
            sample_interval: None,
            mode: SimMode::default(),
            discrete: DiscreteSettings::default(),
        }
    }

    pub fn build_topology(&self) -> Result<Topology, CliError> {
        let n = self.n.unwrap_or(self.omega_u.len());
        let kind = match self.topology {
            TopologySpec::Explicit => {
                let edges = self
                    .edges
                    .as_ref()
                    .ok_or_else(|| config_err("edges", "required when topology is explicit"))?;
                let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
                let topo = Topology::from_one_based(n, &pairs).map_err(|e| config_err("edges", e))?;
                if let Some(node) = topo.unreachable_node() {
                    return Err(config_err(
                        "edges",
                        format!("graph not strongly connected: node {} is unreachable", node + 1),
                    ));
                }
                return Ok(topo);
            }
            TopologySpec::Ring => TopologyKind::Ring,
            TopologySpec::BidirectionalRing => TopologyKind::BidirectionalRing,
            TopologySpec::Complete => TopologyKind::Complete,
            TopologySpec::RandomStrong => TopologyKind::RandomStrong,
        };
        if self.edges.is_some() {
            return Err(config_err("edges", format!("not allowed with topology {kind}")));
        }
        generate_topology(
            kind,
            n,
            self.topology_seed.unwrap_or(0),
            self.extra_edge_fraction.unwrap_or(DEFAULT_EXTRA_FRACTION),
        )
        .map_err(|e| config_err("topology", e))
    }

    pub fn resolve(&self) -> Result<Scenario, CliError> {
        let topology = self.build_topology()?;
        let (n, m) = (topology.n(), topology.m());
        let omega_u = exact_len("omega_u", &self.omega_u, n)?;
        let lambda = match &self.lambda {
            PerEdge::Uniform(v) => DVector::from_element(m, *v),
            PerEdge::Each(v) => exact_len("lambda", v, m)?,
        };
        let beta_off = match &self.beta_off {
            OffsetSpec::Named(s) if s == "feasible" => Offsets::FeasibleAtStart,
            OffsetSpec::Named(s) => {
                return Err(config_err("beta_off", format!("expected \"feasible\" or a list, got {s:?}")))
            }
            OffsetSpec::Each(v) => Offsets::Explicit(exact_len("beta_off", v, m)?),
        };
        let q = match &self.q {
            Some(v) => exact_len("q", v, n)?,
            None => DVector::zeros(n),
        };
        let theta0 = match &self.theta0 {
            Some(v) => exact_len("theta0", v, n)?,
            None => DVector::zeros(n),
        };
        let params = SystemParams { k: self.k, omega_u, lambda, beta_off, q };
        // k = 0 is legal here since `run --discrete` can switch modes later
        params.validate_allowing_zero_gain(&topology).map_err(|e| CliError::Config(e.to_string()))?;

        let mode = match self.reframe.mode {
            ReframeModeName::Fixed => ReframeMode::Fixed {
                t1: self
                    .reframe
                    .t1
                    .ok_or_else(|| config_err("reframe.T1", "required when reframe.mode is fixed"))?,
            },
            ReframeModeName::Auto => {
                if self.reframe.t1.is_some() {
                    return Err(config_err("reframe.T1", "only valid with reframe.mode fixed"));
                }
                ReframeMode::Auto { epsilon: self.reframe.epsilon, window: self.reframe.window }
            }
        };
        let positive = |key: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(config_err(key, format!("must be positive, got {x}"))),
            _ => Ok(()),
        };
        positive("horizon", self.horizon)?;
        positive("sample_interval", self.sample_interval)?;
        positive("reframe.window", self.reframe.window)?;
        positive("reframe.epsilon", self.reframe.epsilon)?;
        if let ReframeMode::Fixed { t1 } = mode {
            if !(t1 >= 0.0 && t1.is_finite()) {
                return Err(config_err("reframe.T1", format!("must be a finite time >= 0, got {t1}")));
            }
        }
        let schedule = ReframeSchedule {
            mode,
            stagger: self.reframe.stagger.map(|s| reframe_core::controller::Stagger {
                max_delay: s.max_delay,
                seed: s.seed,
            }),
        };

        Ok(Scenario {
            topology,
            params,
            theta0,
            controller: self.controller,
            schedule,
            integrator: self.integrator,
            horizon: self.horizon,
            sample_interval: self.sample_interval,
            mode: self.mode,
            discrete: self.discrete,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str =
        r#"{"topology": "bidirectional-ring", "n": 2, "k": 0.1, "omega_u": [1.00, 1.02]}"#;

    #[test]
    fn minimal_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let s = cfg.resolve().unwrap();
        assert_eq!(s.topology.to_one_based(), vec![(1, 2), (2, 1)]);
        assert_eq!(s.params.lambda.as_slice(), &[10.0, 10.0]);
        assert_eq!(s.params.beta_off, Offsets::FeasibleAtStart);
        assert_eq!(s.integrator.method, reframe_core::Method::Exact);
        assert_eq!(s.controller, ControllerKind::Reframing);
        assert!(matches!(s.schedule.mode, ReframeMode::Auto { epsilon: None, window: None }));
        assert_eq!(s.mode, SimMode::Continuous);
    }

    #[test]
    fn round_trip() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let again = parse_config_str(&emit_config(&cfg)).unwrap();
        assert_eq!(cfg, again);

        let full = r#"{"edges": [[1,2],[2,3],[3,1],[1,3]], "k": 1, "omega_u": [1, 1.01, 0.99],
            "lambda": [8, 9, 10, 11], "beta_off": [1, 2, 3, 4], "theta0": [0, 0.5, 1],
            "reframe": {"mode": "fixed", "T1": 30}, "mode": "discrete",
            "discrete": {"capacity": 40}}"#;
        let cfg = parse_config_str(full).unwrap();
        assert_eq!(cfg, parse_config_str(&emit_config(&cfg)).unwrap());
    }

    #[test]
    fn unknown_key_names_path() {
        let err = parse_config_str(r#"{"k": 0.1, "omega_u": [1, 1], "edges": [[1,2],[2,1]], "reframe": {"t1": 3}}"#)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("reframe") && msg.contains("t1"), "{msg}");
    }

    #[test]
    fn missing_and_mistyped() {
        let msg = parse_config_str(r#"{"omega_u": [1, 1]}"#).unwrap_err().to_string();
        assert!(msg.contains("missing field `k`"), "{msg}");
        let msg = parse_config_str(r#"{"k": "big", "omega_u": [1, 1]}"#).unwrap_err().to_string();
        assert!(msg.contains("error: k: invalid type"), "{msg}");
    }

    #[test]
    fn dangling_node_is_named() {
        let err = parse_config_str(r#"{"n": 3, "edges": [[1,2],[2,1]], "k": 0.1, "omega_u": [1, 1, 1]}"#)
            .unwrap_err();
        assert!(err.to_string().contains("node 3 is unreachable"), "{err}");
    }

    #[test]
    fn bad_lengths_and_modes() {
        let e = parse_config_str(r#"{"topology": "ring", "k": 0.1, "omega_u": [1, 1], "lambda": [1]}"#).unwrap_err();
        assert!(e.to_string().contains("error: lambda:"), "{e}");
        let e = parse_config_str(r#"{"topology": "ring", "k": 0.1, "omega_u": [1, 1], "reframe": {"mode": "fixed"}}"#)
            .unwrap_err();
        assert!(e.to_string().contains("reframe.T1"), "{e}");
        let e = parse_config_str(r#"{"topology": "ring", "k": -0.1, "omega_u": [1, 1]}"#).unwrap_err();
        assert!(e.to_string().contains("k"), "{e}");
        parse_config_str(r#"{"topology": "ring", "k": 0, "omega_u": [1, 1], "mode": "discrete"}"#).unwrap();
    }

    #[test]
    fn random_strong_uses_seed() {
        let text = r#"{"topology": "random-strong", "n": 8, "topology_seed": 42, "k": 0.5, "omega_u": [1,1,1,1,1,1,1,1]}"#;
        let s = parse_config_str(text).unwrap().resolve().unwrap();
        assert_eq!(s.topology.m(), 22);
    }
}
