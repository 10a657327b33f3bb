use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{ApId, FlowId, MnId, NodeId};
use crate::topology::{NetworkTopology, NodeKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    /// Tunnel from the old anchor to the new router; `path` is the detour.
    InstallForwarding { from_ar: NodeId, to_ar: NodeId, flow_id: FlowId, path: Vec<NodeId> },
    SwitchPath { flow_id: FlowId, new_path: Vec<NodeId> },
    OptimizeRoute { flow_id: FlowId, new_path: Vec<NodeId> },
    PlacePlanes { mn_id: MnId, cp_ap: ApId, dp_ap: ApId },
    TransferFlow { flow_id: FlowId, target_ap: ApId, new_path: Vec<NodeId> },
    AdmitFlow { flow_id: FlowId, anchor_ar: NodeId, path: Vec<NodeId> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmRule {
    pub kind: RuleKind,
    /// Requires a resource-allocation message to the access network.
    pub radio_affecting: bool,
}

impl MmRule {
    pub fn new(kind: RuleKind, radio_affecting: bool) -> Self {
        MmRule { kind, radio_affecting }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            RuleKind::InstallForwarding { .. } => "InstallForwarding",
            RuleKind::SwitchPath { .. } => "SwitchPath",
            RuleKind::OptimizeRoute { .. } => "OptimizeRoute",
            RuleKind::PlacePlanes { .. } => "PlacePlanes",
            RuleKind::TransferFlow { .. } => "TransferFlow",
            RuleKind::AdmitFlow { .. } => "AdmitFlow",
        }
    }

    pub fn flow_id(&self) -> Option<&FlowId> {
        match &self.kind {
            RuleKind::InstallForwarding { flow_id, .. }
            | RuleKind::SwitchPath { flow_id, .. }
            | RuleKind::OptimizeRoute { flow_id, .. }
            | RuleKind::TransferFlow { flow_id, .. }
            | RuleKind::AdmitFlow { flow_id, .. } => Some(flow_id),
            RuleKind::PlacePlanes { .. } => None,
        }
    }

    /// The flow path this rule installs, if it re-paths a flow.
    pub fn new_path(&self) -> Option<&[NodeId]> {
        match &self.kind {
            RuleKind::InstallForwarding { path, .. } | RuleKind::AdmitFlow { path, .. } => Some(path),
            RuleKind::SwitchPath { new_path, .. }
            | RuleKind::OptimizeRoute { new_path, .. }
            | RuleKind::TransferFlow { new_path, .. } => Some(new_path),
            RuleKind::PlacePlanes { .. } => None,
        }
    }

    pub fn subject(&self) -> String {
        match &self.kind {
            RuleKind::PlacePlanes { mn_id, .. } => mn_id.0.clone(),
            _ => self.flow_id().map(|f| f.0.clone()).unwrap_or_default(),
        }
    }

    /// `key=value` pairs joined by `;`, paths joined by `>`.
    pub fn detail(&self) -> String {
        let p = |path: &[NodeId]| path.iter().map(|n| n.as_str()).collect::<Vec<_>>().join(">");
        let mut s = match &self.kind {
            RuleKind::InstallForwarding { from_ar, to_ar, path, .. } => {
                format!("from={from_ar};to={to_ar};path={}", p(path))
            }
            RuleKind::SwitchPath { new_path, .. } | RuleKind::OptimizeRoute { new_path, .. } => {
                format!("path={}", p(new_path))
            }
            RuleKind::PlacePlanes { cp_ap, dp_ap, .. } => format!("cp={cp_ap};dp={dp_ap}"),
            RuleKind::TransferFlow { target_ap, new_path, .. } => format!("target={target_ap};path={}", p(new_path)),
            RuleKind::AdmitFlow { anchor_ar, path, .. } => format!("anchor={anchor_ar};path={}", p(path)),
        };
        if self.radio_affecting {
            s.push_str(";radio=1");
        }
        s
    }
}

type HopEntry = (Option<NodeId>, Option<NodeId>);

fn router_entries(topology: &NetworkTopology, path: &[NodeId]) -> BTreeMap<NodeId, BTreeSet<HopEntry>> {
    let mut out: BTreeMap<NodeId, BTreeSet<HopEntry>> = BTreeMap::new();
    for (i, n) in path.iter().enumerate() {
        if topology.node_kind(n.as_str()) != Some(NodeKind::AccessRouter) {
            continue;
        }
        let prev = i.checked_sub(1).map(|j| path[j].clone());
        let next = path.get(i + 1).cloned();
        out.entry(n.clone()).or_default().insert((prev, next));
    }
    out
}

/// Access routers whose forwarding entry for a flow differs between the old
/// and new path: new, removed, or with a changed neighbour.
pub fn affected_ars(topology: &NetworkTopology, old: Option<&[NodeId]>, new: &[NodeId]) -> BTreeSet<NodeId> {
    let before = old.map(|p| router_entries(topology, p)).unwrap_or_default();
    let after = router_entries(topology, new);
    before
        .keys()
        .chain(after.keys())
        .filter(|ar| before.get(*ar) != after.get(*ar))
        .cloned()
        .collect()
}
