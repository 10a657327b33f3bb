//! Static network model: access points, BBU domains, access routers, the
//! controller and MM application, the legacy anchor gateway, and the
//! latency-weighted links between them.
//!
//! An access point hangs off its parent access router through an implicit
//! zero-latency attachment edge; every other edge is a declared [`Link`].
//! Data-plane paths only traverse routers (ARs, core routers, the gateway);
//! control-plane latency may use any declared link.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ApId, NodeId};
use crate::time::Micros;

pub const DEFAULT_RSSI_AT_CENTER: f64 = 0.0;
pub const DEFAULT_PATH_LOSS_SLOPE: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("access point `{ap}` is listed in BBU domains `{first}` and `{second}`")]
    DuplicateMembership { ap: String, first: String, second: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown access point `{0}`")]
    UnknownAp(String),
    #[error("link `{0}` has non-positive latency")]
    NonPositiveLatency(String),
    #[error("access point `{0}` has non-positive radius")]
    NonPositiveRadius(String),
    #[error("`{0}` has non-positive capacity")]
    NonPositiveCapacity(String),
    #[error("macro cell `{macro_ap}` is not larger than small cell `{small_ap}`")]
    MacroNotLarger { macro_ap: String, small_ap: String },
    #[error("BBU domain `{0}` has no access points")]
    EmptyBbuDomain(String),
    #[error("access router `{0}` has no attached access point")]
    RouterWithoutAp(String),
    #[error("no link between controller and MM application")]
    MissingNbiLink,
    #[error("controller cannot reach `{0}`")]
    DisconnectedControlGraph(String),
    #[error("`{0}` is not a router and cannot be a core egress")]
    InvalidEgress(String),
    #[error("topology declares no core egress")]
    NoEgress,
    #[error("no path from `{from}` to `{to}`")]
    Unreachable { from: String, to: String },
    #[error("position is not finite")]
    NonFinitePosition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Macro,
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    AccessPoint,
    AccessRouter,
    Bbu,
    Controller,
    MmApp,
    Gateway,
    CoreRouter,
}

impl NodeKind {
    /// Whether data-plane paths may traverse a node of this kind.
    pub fn is_router(self) -> bool {
        matches!(self, NodeKind::AccessRouter | NodeKind::CoreRouter | NodeKind::Gateway)
    }
}

/// Planar position in metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Point {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Point {
        Point { x, y }
    }
}

// --- declarative input -----------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApSpec {
    pub id: String,
    pub kind: CellKind,
    #[serde(default = "default_rat")]
    pub rat: String,
    pub position: [f64; 2],
    pub radius: f64,
    pub capacity_mbps: f64,
    pub ar: String,
    #[serde(default)]
    pub preference: f64,
    #[serde(default)]
    pub cost: f64,
}

fn default_rat() -> String {
    "nr".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArSpec {
    pub id: String,
    #[serde(default)]
    pub capacity_mbps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BbuSpec {
    pub id: String,
    pub aps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreSpec {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub latency_ms: f64,
    #[serde(default)]
    pub id: Option<String>,
}

/// The `topology` section of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub controller: String,
    pub mm_app: String,
    #[serde(default)]
    pub anchor_gateway: Option<String>,
    /// Core egress routers. Defaults to the anchor gateway alone.
    #[serde(default)]
    pub egress: Vec<String>,
    #[serde(default = "default_rssi_at_center")]
    pub rssi_at_center: f64,
    #[serde(default = "default_path_loss_slope")]
    pub path_loss_slope: f64,
    #[serde(default, rename = "ap")]
    pub aps: Vec<ApSpec>,
    #[serde(default, rename = "ar")]
    pub ars: Vec<ArSpec>,
    #[serde(default, rename = "bbu")]
    pub bbus: Vec<BbuSpec>,
    #[serde(default, rename = "core")]
    pub cores: Vec<CoreSpec>,
    #[serde(default, rename = "link")]
    pub links: Vec<LinkSpec>,
}

fn default_rssi_at_center() -> f64 {
    DEFAULT_RSSI_AT_CENTER
}

fn default_path_loss_slope() -> f64 {
    DEFAULT_PATH_LOSS_SLOPE
}

// --- built model -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct AccessPoint {
    pub id: ApId,
    /// Position in declaration order.
    pub index: usize,
    pub kind: CellKind,
    pub rat: String,
    pub position: Point,
    pub radius: f64,
    pub capacity_mbps: f64,
    pub bbu_domain: Option<NodeId>,
    pub parent_ar: NodeId,
    pub preference: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BbuDomain {
    pub id: NodeId,
    pub ap_ids: BTreeSet<ApId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccessRouter {
    pub id: NodeId,
    pub capacity_mbps: Option<f64>,
    pub link_ids: Vec<String>,
    pub ap_ids: BTreeSet<ApId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub a: NodeId,
    pub b: NodeId,
    pub latency: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioModel {
    pub rssi_at_center: f64,
    pub path_loss_slope: f64,
}

impl RadioModel {
    pub fn rssi(&self, distance: f64, radius: f64) -> f64 {
        self.rssi_at_center - self.path_loss_slope * (distance / radius)
    }
}

/// One AP visible at a position.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub ap: ApId,
    pub rssi: f64,
}

#[derive(Debug, Clone)]
pub struct NetworkTopology {
    aps: Vec<AccessPoint>,
    ap_index: BTreeMap<ApId, usize>,
    bbu_domains: BTreeMap<NodeId, BbuDomain>,
    ars: BTreeMap<NodeId, AccessRouter>,
    links: Vec<Link>,
    nodes: BTreeMap<NodeId, NodeKind>,
    adjacency: BTreeMap<NodeId, Vec<(NodeId, Micros)>>,
    controller: NodeId,
    mm_app: NodeId,
    anchor_gateway: Option<NodeId>,
    egress: BTreeSet<NodeId>,
    radio: RadioModel,
}

/// Validates a topology spec and builds the immutable network model.
// `!(x > 0.0)` on purpose: NaN must fail the check as well.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn build_topology(spec: &TopologySpec) -> Result<NetworkTopology, TopologyError> {
    let mut nodes: BTreeMap<NodeId, NodeKind> = BTreeMap::new();
    let mut declare = |id: &str, kind: NodeKind| -> Result<NodeId, TopologyError> {
        let id = NodeId::from(id);
        if nodes.insert(id.clone(), kind).is_some() {
            return Err(TopologyError::DuplicateId(id.0));
        }
        Ok(id)
    };

    let controller = declare(&spec.controller, NodeKind::Controller)?;
    let mm_app = declare(&spec.mm_app, NodeKind::MmApp)?;
    let anchor_gateway = spec
        .anchor_gateway
        .as_deref()
        .map(|g| declare(g, NodeKind::Gateway))
        .transpose()?;

    let mut ars = BTreeMap::new();
    for ar in &spec.ars {
        let id = declare(&ar.id, NodeKind::AccessRouter)?;
        if let Some(c) = ar.capacity_mbps {
            if !(c > 0.0) {
                return Err(TopologyError::NonPositiveCapacity(ar.id.clone()));
            }
        }
        ars.insert(
            id.clone(),
            AccessRouter { id, capacity_mbps: ar.capacity_mbps, link_ids: Vec::new(), ap_ids: BTreeSet::new() },
        );
    }
    for core in &spec.cores {
        declare(&core.id, NodeKind::CoreRouter)?;
    }

    let mut domain_of: BTreeMap<String, String> = BTreeMap::new();
    let mut bbu_domains = BTreeMap::new();
    for bbu in &spec.bbus {
        let id = declare(&bbu.id, NodeKind::Bbu)?;
        if bbu.aps.is_empty() {
            return Err(TopologyError::EmptyBbuDomain(bbu.id.clone()));
        }
        for ap in &bbu.aps {
            if let Some(first) = domain_of.insert(ap.clone(), bbu.id.clone()) {
                return Err(TopologyError::DuplicateMembership {
                    ap: ap.clone(),
                    first,
                    second: bbu.id.clone(),
                });
            }
        }
        bbu_domains.insert(
            id.clone(),
            BbuDomain { id, ap_ids: bbu.aps.iter().map(|a| NodeId::from(a.as_str())).collect() },
        );
    }

    let mut aps = Vec::with_capacity(spec.aps.len());
    let mut ap_index = BTreeMap::new();
    for (index, ap) in spec.aps.iter().enumerate() {
        let id = declare(&ap.id, NodeKind::AccessPoint)?;
        if !(ap.radius > 0.0) {
            return Err(TopologyError::NonPositiveRadius(ap.id.clone()));
        }
        if !(ap.capacity_mbps > 0.0) {
            return Err(TopologyError::NonPositiveCapacity(ap.id.clone()));
        }
        let position = Point::from(ap.position);
        if !position.is_finite() {
            return Err(TopologyError::NonFinitePosition);
        }
        let parent = NodeId::from(ap.ar.as_str());
        let Some(router) = ars.get_mut(&parent) else {
            return Err(TopologyError::UnknownNode(ap.ar.clone()));
        };
        router.ap_ids.insert(id.clone());
        ap_index.insert(id.clone(), index);
        aps.push(AccessPoint {
            id,
            index,
            kind: ap.kind,
            rat: ap.rat.clone(),
            position,
            radius: ap.radius,
            capacity_mbps: ap.capacity_mbps,
            bbu_domain: domain_of.get(&ap.id).map(|d| NodeId::from(d.as_str())),
            parent_ar: parent,
            preference: ap.preference,
            cost: ap.cost,
        });
    }
    for ap in domain_of.keys() {
        if !ap_index.contains_key(ap.as_str()) {
            return Err(TopologyError::UnknownAp(ap.clone()));
        }
    }

    let max_small = aps.iter().filter(|a| a.kind == CellKind::Small).max_by(|a, b| a.radius.total_cmp(&b.radius));
    let min_macro = aps.iter().filter(|a| a.kind == CellKind::Macro).min_by(|a, b| a.radius.total_cmp(&b.radius));
    if let (Some(s), Some(m)) = (max_small, min_macro) {
        if m.radius <= s.radius {
            return Err(TopologyError::MacroNotLarger { macro_ap: m.id.0.clone(), small_ap: s.id.0.clone() });
        }
    }

    let mut links = Vec::with_capacity(spec.links.len());
    let mut link_ids = BTreeSet::new();
    let mut adjacency: BTreeMap<NodeId, Vec<(NodeId, Micros)>> = nodes.keys().map(|n| (n.clone(), Vec::new())).collect();
    for (i, l) in spec.links.iter().enumerate() {
        let id = l.id.clone().unwrap_or_else(|| format!("L{i}"));
        if !link_ids.insert(id.clone()) {
            return Err(TopologyError::DuplicateId(id));
        }
        let a = NodeId::from(l.a.as_str());
        let b = NodeId::from(l.b.as_str());
        for end in [&a, &b] {
            if !nodes.contains_key(end) {
                return Err(TopologyError::UnknownNode(end.0.clone()));
            }
        }
        let latency = match Micros::from_ms(l.latency_ms) {
            Some(m) if l.latency_ms > 0.0 && m > Micros::ZERO => m,
            _ => return Err(TopologyError::NonPositiveLatency(id)),
        };
        for end in [&a, &b] {
            if let Some(r) = ars.get_mut(end) {
                r.link_ids.push(id.clone());
            }
        }
        adjacency.get_mut(&a).unwrap().push((b.clone(), latency));
        adjacency.get_mut(&b).unwrap().push((a.clone(), latency));
        links.push(Link { id, a, b, latency });
    }
    for ap in &aps {
        adjacency.get_mut(&ap.id).unwrap().push((ap.parent_ar.clone(), Micros::ZERO));
        adjacency.get_mut(&ap.parent_ar).unwrap().push((ap.id.clone(), Micros::ZERO));
    }
    for adj in adjacency.values_mut() {
        adj.sort();
    }

    for r in ars.values() {
        if r.ap_ids.is_empty() {
            return Err(TopologyError::RouterWithoutAp(r.id.0.clone()));
        }
    }

    let nbi = links.iter().any(|l| (l.a == controller && l.b == mm_app) || (l.a == mm_app && l.b == controller));
    if !nbi {
        return Err(TopologyError::MissingNbiLink);
    }

    let mut egress = BTreeSet::new();
    for e in &spec.egress {
        match nodes.get(e.as_str()) {
            Some(NodeKind::CoreRouter | NodeKind::Gateway) => {
                egress.insert(NodeId::from(e.as_str()));
            }
            Some(_) => return Err(TopologyError::InvalidEgress(e.clone())),
            None => return Err(TopologyError::UnknownNode(e.clone())),
        }
    }
    if egress.is_empty() {
        match &anchor_gateway {
            Some(g) => {
                egress.insert(g.clone());
            }
            None => return Err(TopologyError::NoEgress),
        }
    }

    let topo = NetworkTopology {
        aps,
        ap_index,
        bbu_domains,
        ars,
        links,
        nodes,
        adjacency,
        controller,
        mm_app,
        anchor_gateway,
        egress,
        radio: RadioModel { rssi_at_center: spec.rssi_at_center, path_loss_slope: spec.path_loss_slope },
    };

    let reach = topo.distances_from(&topo.controller);
    for id in topo.ars.keys().chain(topo.bbu_domains.keys()) {
        if !reach.contains_key(id) {
            return Err(TopologyError::DisconnectedControlGraph(id.0.clone()));
        }
    }
    Ok(topo)
}

impl NetworkTopology {
    pub fn aps(&self) -> &[AccessPoint] {
        &self.aps
    }

    pub fn ap(&self, id: &str) -> Result<&AccessPoint, TopologyError> {
        self.ap_index.get(id).map(|&i| &self.aps[i]).ok_or_else(|| TopologyError::UnknownAp(id.to_owned()))
    }

    pub fn bbu_domains(&self) -> impl Iterator<Item = &BbuDomain> {
        self.bbu_domains.values()
    }

    pub fn ars(&self) -> impl Iterator<Item = &AccessRouter> {
        self.ars.values()
    }

    pub fn ar(&self, id: &str) -> Option<&AccessRouter> {
        self.ars.get(id)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node_kind(&self, id: &str) -> Option<NodeKind> {
        self.nodes.get(id).copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn controller(&self) -> &NodeId {
        &self.controller
    }

    pub fn mm_app(&self) -> &NodeId {
        &self.mm_app
    }

    pub fn anchor_gateway(&self) -> Option<&NodeId> {
        self.anchor_gateway.as_ref()
    }

    pub fn egress(&self) -> &BTreeSet<NodeId> {
        &self.egress
    }

    pub fn radio(&self) -> RadioModel {
        self.radio
    }

    /// The access-network endpoint the controller talks to for an AP: its BBU
    /// pool, or the AP itself for legacy RAN deployments.
    pub fn access_endpoint(&self, ap: &str) -> Result<NodeId, TopologyError> {
        let ap = self.ap(ap)?;
        Ok(ap.bbu_domain.clone().unwrap_or_else(|| ap.id.clone()))
    }

    /// APs whose coverage disk contains `position`, with their signal score,
    /// ordered by AP id.
    pub fn coverage_at(&self, position: Point) -> Vec<Coverage> {
        let mut out: Vec<Coverage> = self
            .aps
            .iter()
            .filter_map(|ap| {
                let d = ap.position.distance(position);
                (d <= ap.radius).then(|| Coverage { ap: ap.id.clone(), rssi: self.radio.rssi(d, ap.radius) })
            })
            .collect();
        out.sort_by(|a, b| a.ap.cmp(&b.ap));
        out
    }

    /// True unless both APs belong to the same BBU domain.
    pub fn is_inter_domain(&self, from: &str, to: &str) -> Result<bool, TopologyError> {
        let a = self.ap(from)?;
        let b = self.ap(to)?;
        Ok(match (&a.bbu_domain, &b.bbu_domain) {
            (Some(x), Some(y)) => x != y,
            _ => true,
        })
    }

    /// Minimum-latency distance over every declared link.
    pub fn control_path_latency(&self, a: &str, b: &str) -> Result<Micros, TopologyError> {
        for n in [a, b] {
            if !self.nodes.contains_key(n) {
                return Err(TopologyError::UnknownNode(n.to_owned()));
            }
        }
        self.distances_from(&NodeId::from(a))
            .get(b)
            .copied()
            .ok_or_else(|| TopologyError::Unreachable { from: a.to_owned(), to: b.to_owned() })
    }

    fn distances_from(&self, src: &NodeId) -> BTreeMap<NodeId, Micros> {
        let mut dist = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((Micros::ZERO, src.clone())));
        while let Some(Reverse((d, n))) = heap.pop() {
            if dist.contains_key(&n) {
                continue;
            }
            dist.insert(n.clone(), d);
            for (m, w) in &self.adjacency[&n] {
                if !dist.contains_key(m) {
                    heap.push(Reverse((d + *w, m.clone())));
                }
            }
        }
        dist
    }

    /// Minimum-latency data-plane path from router `from` to any of `targets`,
    /// never entering a node in `avoid`. Equal-latency paths resolve to the
    /// lexicographically smallest node sequence.
    pub fn shortest_data_path(
        &self,
        from: &NodeId,
        targets: &BTreeSet<NodeId>,
        avoid: &BTreeSet<NodeId>,
    ) -> Option<(Micros, Vec<NodeId>)> {
        if !self.node_kind(from.as_str()).is_some_and(NodeKind::is_router) || avoid.contains(from) {
            return None;
        }
        let mut settled: BTreeSet<NodeId> = BTreeSet::new();
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((Micros::ZERO, vec![from.clone()])));
        while let Some(Reverse((cost, path))) = heap.pop() {
            let node = path.last().unwrap().clone();
            if !settled.insert(node.clone()) {
                continue;
            }
            if targets.contains(&node) {
                return Some((cost, path));
            }
            for (next, w) in &self.adjacency[&node] {
                if settled.contains(next) || avoid.contains(next) {
                    continue;
                }
                if !self.nodes[next].is_router() {
                    continue;
                }
                let mut p = path.clone();
                p.push(next.clone());
                heap.push(Reverse((cost + *w, p)));
            }
        }
        None
    }

    /// Latency of a data-plane node sequence; `None` if two consecutive nodes
    /// are not linked. A leading AP contributes nothing.
    pub fn path_latency(&self, path: &[NodeId]) -> Option<Micros> {
        let mut total = Micros::ZERO;
        for w in path.windows(2) {
            let lat = self.adjacency.get(&w[0])?.iter().filter(|(n, _)| *n == w[1]).map(|(_, l)| *l).min()?;
            total += lat;
        }
        Some(total)
    }
}
