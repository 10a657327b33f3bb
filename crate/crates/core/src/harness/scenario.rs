use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mmapp::PlacementPolicy;
use crate::mobility::{DelayClass, DeviceClass, SelectionScheme};
use crate::selection::{PolicySpec, PolicyVector};
use crate::time::Micros;
use crate::topology::{build_topology, NetworkTopology, TopologySpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
}

fn v<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Validation(msg.into()))
}

/// Waypoints drawn uniformly inside a box from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomWaypoints {
    pub count: usize,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default = "default_device")]
    pub device: DeviceClass,
    #[serde(default)]
    pub speed_kmh: f64,
    pub position: [f64; 2],
    #[serde(default)]
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    pub random_waypoints: Option<RandomWaypoints>,
    #[serde(default)]
    pub selection: SelectionScheme,
    #[serde(default)]
    pub policy: Option<PolicySpec>,
    /// Initial attachments, primary first. Chosen by the selection scheme
    /// when empty.
    #[serde(default)]
    pub attach: Vec<String>,
}

fn default_device() -> DeviceClass {
    DeviceClass::Handset
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub id: String,
    pub mn: String,
    pub class: DelayClass,
    pub rate_mbps: f64,
    /// 0 means established before the run starts.
    #[serde(default)]
    pub birth_ms: f64,
    #[serde(default)]
    pub end_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoliciesSpec {
    /// Operator policy used by negotiated selection.
    #[serde(default)]
    pub network: Option<PolicySpec>,
}

/// Mode-independent run parameters; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default)]
    pub placement: PlacementPolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_horizon_ms")]
    pub horizon_ms: f64,
    #[serde(default = "d_tick_ms")]
    pub tick_ms: f64,
    #[serde(default = "d_sample_ms")]
    pub sample_ms: f64,
    #[serde(default = "d_hysteresis_db")]
    pub hysteresis_db: f64,
    #[serde(default = "d_theta")]
    pub theta: f64,
    #[serde(default = "d_high_speed_kmh")]
    pub high_speed_kmh: f64,
    #[serde(default = "d_opt_delay_ms")]
    pub opt_delay_ms: f64,
    #[serde(default = "d_linger_ms")]
    pub linger_ms: f64,
    #[serde(default = "d_ar_processing_ms")]
    pub ar_processing_ms: f64,
    #[serde(default = "d_controller_processing_ms")]
    pub controller_processing_ms: f64,
    #[serde(default = "d_app_processing_ms")]
    pub app_processing_ms: f64,
    #[serde(default = "d_local_handover_ms")]
    pub local_handover_ms: f64,
    #[serde(default = "d_compute_weight")]
    pub compute_weight: f64,
    #[serde(default = "d_shortlist")]
    pub shortlist: usize,
}

fn d_horizon_ms() -> f64 {
    60_000.0
}
fn d_tick_ms() -> f64 {
    10.0
}
fn d_sample_ms() -> f64 {
    crate::resources::DEFAULT_SAMPLE_PERIOD_MS as f64
}
fn d_hysteresis_db() -> f64 {
    crate::mobility::DEFAULT_HYSTERESIS
}
fn d_theta() -> f64 {
    0.8
}
fn d_high_speed_kmh() -> f64 {
    crate::mobility::DEFAULT_HIGH_SPEED_KMH
}
fn d_opt_delay_ms() -> f64 {
    crate::mmapp::DEFAULT_OPT_DELAY_MS as f64
}
fn d_linger_ms() -> f64 {
    crate::mmapp::DEFAULT_LINGER_MS as f64
}
fn d_ar_processing_ms() -> f64 {
    0.5
}
fn d_controller_processing_ms() -> f64 {
    1.0
}
fn d_app_processing_ms() -> f64 {
    2.0
}
fn d_local_handover_ms() -> f64 {
    2.0
}
fn d_compute_weight() -> f64 {
    1.0
}
fn d_shortlist() -> usize {
    crate::selection::DEFAULT_SHORTLIST
}

impl Default for Params {
    fn default() -> Self {
        toml::from_str("").expect("all params have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    name: Option<String>,
    topology: TopologySpec,
    #[serde(default)]
    nodes: Vec<NodeSpec>,
    #[serde(default)]
    flows: Vec<FlowSpec>,
    #[serde(default)]
    policies: PoliciesSpec,
    #[serde(default)]
    params: Params,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub topology_spec: TopologySpec,
    pub topology: Arc<NetworkTopology>,
    pub nodes: Vec<NodeSpec>,
    pub flows: Vec<FlowSpec>,
    pub network_policy: PolicyVector,
    pub params: Params,
    /// SHA-256 of the source text, hex.
    pub digest: String,
}

impl Scenario {
    pub fn horizon(&self) -> Micros {
        Micros::from_ms(self.params.horizon_ms).unwrap_or_default()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.params.seed = seed;
        self
    }

    pub fn with_horizon_ms(mut self, ms: f64) -> Result<Self, ScenarioError> {
        self.params.horizon_ms = ms;
        validate_params(&self.params)?;
        for f in &self.flows {
            check_flow_times(f, ms)?;
        }
        Ok(self)
    }
}

pub fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    let fallback = path.file_stem().map(|s| s.to_string_lossy().trim_end_matches(".scenario").to_owned());
    let mut s = parse_scenario_str(&text)?;
    if s.name.is_empty() {
        s.name = fallback.unwrap_or_default();
    }
    Ok(s)
}

fn positive(name: &str, x: f64) -> Result<(), ScenarioError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        v(format!("params.{name} must be positive, got {x}"))
    }
}

fn non_negative(name: &str, x: f64) -> Result<(), ScenarioError> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        v(format!("params.{name} must be non-negative, got {x}"))
    }
}

fn validate_params(p: &Params) -> Result<(), ScenarioError> {
    positive("horizon_ms", p.horizon_ms)?;
    positive("tick_ms", p.tick_ms)?;
    positive("sample_ms", p.sample_ms)?;
    positive("high_speed_kmh", p.high_speed_kmh)?;
    for (n, x) in [
        ("hysteresis_db", p.hysteresis_db),
        ("opt_delay_ms", p.opt_delay_ms),
        ("linger_ms", p.linger_ms),
        ("ar_processing_ms", p.ar_processing_ms),
        ("controller_processing_ms", p.controller_processing_ms),
        ("app_processing_ms", p.app_processing_ms),
        ("local_handover_ms", p.local_handover_ms),
        ("compute_weight", p.compute_weight),
    ] {
        non_negative(n, x)?;
    }
    if !(p.theta > 0.0 && p.theta <= 1.0) {
        return v(format!("params.theta must lie in (0, 1], got {}", p.theta));
    }
    if p.shortlist == 0 {
        return v("params.shortlist must be at least 1");
    }
    Ok(())
}

fn check_flow_times(f: &FlowSpec, horizon_ms: f64) -> Result<(), ScenarioError> {
    if !(f.birth_ms.is_finite() && f.birth_ms >= 0.0 && f.birth_ms <= horizon_ms) {
        return v(format!("flow `{}` birth_ms {} lies outside the horizon", f.id, f.birth_ms));
    }
    if let Some(end) = f.end_ms {
        if !(end.is_finite() && end > f.birth_ms) {
            return v(format!("flow `{}` ends at {end} ms, not after its birth", f.id));
        }
    }
    Ok(())
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let topology = build_topology(&file.topology).map_err(|e| ScenarioError::Validation(e.to_string()))?;
    validate_params(&file.params)?;

    let mut node_ids = BTreeSet::new();
    for n in &file.nodes {
        if !node_ids.insert(n.id.as_str()) {
            return v(format!("duplicate node id `{}`", n.id));
        }
        if topology.node_kind(&n.id).is_some() {
            return v(format!("node id `{}` collides with a network element", n.id));
        }
        if !(n.speed_kmh.is_finite() && n.speed_kmh >= 0.0) {
            return v(format!("node `{}` has invalid speed {}", n.id, n.speed_kmh));
        }
        let points = std::iter::once(&n.position).chain(&n.waypoints);
        if points.flatten().any(|c| !c.is_finite()) {
            return v(format!("node `{}` has a non-finite coordinate", n.id));
        }
        if let Some(r) = &n.random_waypoints {
            if (0..2).any(|i| !(r.min[i].is_finite() && r.max[i].is_finite() && r.min[i] <= r.max[i])) {
                return v(format!("node `{}` has an empty random waypoint box", n.id));
            }
        }
        for ap in &n.attach {
            if topology.ap(ap).is_err() {
                return v(format!("node `{}` attaches to unknown AP `{ap}`", n.id));
            }
        }
        if n.selection == (SelectionScheme::MmtDriven { k: 0 }) {
            return v(format!("node `{}` selects zero APs", n.id));
        }
        if let Some(p) = &n.policy {
            p.build().map_err(|e| ScenarioError::Validation(format!("node `{}` policy: {e}", n.id)))?;
        }
    }

    let mut flow_ids = BTreeSet::new();
    for f in &file.flows {
        if !flow_ids.insert(f.id.as_str()) {
            return v(format!("duplicate flow id `{}`", f.id));
        }
        if !node_ids.contains(f.mn.as_str()) {
            return v(format!("flow `{}` references unknown node `{}`", f.id, f.mn));
        }
        if !(f.rate_mbps.is_finite() && f.rate_mbps > 0.0) {
            return v(format!("flow `{}` needs a positive rate", f.id));
        }
        check_flow_times(f, file.params.horizon_ms)?;
    }

    let network_policy = match &file.policies.network {
        Some(p) => p.build().map_err(|e| ScenarioError::Validation(format!("network policy: {e}")))?,
        None => PolicyVector::default(),
    };

    Ok(Scenario {
        name: file.name.unwrap_or_default(),
        topology_spec: file.topology,
        topology: Arc::new(topology),
        nodes: file.nodes,
        flows: file.flows,
        network_policy,
        params: file.params,
        digest: digest(text),
    })
}
