//! The mobility-management application: per-MN instances, context snapshots
//! and the decision logic that turns a trigger into forwarding rules.

mod instances;
mod rules;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use instances::{InstanceTable, MobilityInstance, DEFAULT_LINGER_MS};
pub use rules::{affected_ars, MmRule, RuleKind};

use crate::ids::{ApId, FlowId, MnId, NodeId};
use crate::mobility::{DelayClass, FlowState, MobilityProfile, Trigger};
use crate::resources::EntityLoad;
use crate::time::Micros;
use crate::topology::{CellKind, NetworkTopology, NodeKind, TopologyError};

pub const DEFAULT_OPT_DELAY_MS: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Mmaas,
    LegacyCentralized,
}

impl RunMode {
    pub fn label(self) -> &'static str {
        match self {
            RunMode::Mmaas => "mmaas",
            RunMode::LegacyCentralized => "legacy",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MmAppError {
    #[error("static node `{0}` gets no on-demand instance")]
    InstanceRefusedStatic(String),
    #[error("flow `{0}` is not active")]
    FlowNotActive(String),
    #[error("node `{0}` has no attachment")]
    NoAttachment(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// How control and data planes are assigned to cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementPolicy {
    /// By mobility profile: fast nodes on macro cells, pedestrians split.
    #[default]
    Profile,
    /// Always the strongest small cell.
    SmallCells,
    /// Always the strongest cell of any kind.
    Strongest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Planes {
    pub cp: ApId,
    pub dp: ApId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateView {
    pub ap: ApId,
    pub rssi: f64,
    pub kind: CellKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnContext {
    pub id: MnId,
    pub profile: MobilityProfile,
    pub attachments: BTreeSet<ApId>,
    /// AP the transaction moves the node to (or its primary attachment).
    pub serving_ap: Option<ApId>,
    pub planes: Option<Planes>,
    /// Sorted by AP id.
    pub coverage: Vec<CandidateView>,
    /// ARs the node was anchored at before; a new flow avoids them.
    pub prior_ars: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowContext {
    pub id: FlowId,
    pub mn_id: MnId,
    pub delay_class: DelayClass,
    pub rate_kbps: u64,
    pub state: FlowState,
    pub path: Vec<NodeId>,
    /// The owner's attachments at snapshot time.
    pub owner_attachments: BTreeSet<ApId>,
}

/// Everything the application sees when it decides; built by the controller
/// when the parameter report arrives.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSnapshot {
    pub trigger: Trigger,
    pub taken_at: Micros,
    pub mn: Option<MnContext>,
    /// Sorted by flow id.
    pub flows: Vec<FlowContext>,
    pub loads: BTreeMap<NodeId, EntityLoad>,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Decision {
    pub rules: Vec<MmRule>,
    /// Installed `opt_delay` after `rules` take effect.
    pub deferred: Vec<MmRule>,
    /// Nodes asked to hand over because no transfer target was available.
    pub handover_requests: Vec<MnId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTreatment {
    pub immediate: MmRule,
    pub follow_up: Option<MmRule>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rebalance {
    pub transfers: Vec<MmRule>,
    pub handover_requests: Vec<MnId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmAppConfig {
    pub placement: PlacementPolicy,
    pub opt_delay: Micros,
    pub processing: Micros,
}

impl Default for MmAppConfig {
    fn default() -> Self {
        MmAppConfig {
            placement: PlacementPolicy::Profile,
            opt_delay: Micros::from_ms_int(DEFAULT_OPT_DELAY_MS),
            processing: Micros::from_ms_int(2),
        }
    }
}

fn best_of(coverage: &[CandidateView], kind: Option<CellKind>) -> Option<&CandidateView> {
    coverage
        .iter()
        .filter(|c| kind.is_none_or(|k| c.kind == k))
        .max_by(|a, b| a.rssi.total_cmp(&b.rssi).then_with(|| b.ap.cmp(&a.ap)))
}

/// Plane assignment for a profile. Static nodes get none.
pub fn plan_planes(policy: PlacementPolicy, profile: MobilityProfile, coverage: &[CandidateView]) -> Option<Planes> {
    let any = best_of(coverage, None)?;
    let one = |c: &CandidateView| Some(Planes { cp: c.ap.clone(), dp: c.ap.clone() });
    match policy {
        PlacementPolicy::Strongest => one(any),
        PlacementPolicy::SmallCells => one(best_of(coverage, Some(CellKind::Small)).unwrap_or(any)),
        PlacementPolicy::Profile => match profile {
            MobilityProfile::Static => None,
            MobilityProfile::HighSpeed | MobilityProfile::Vehicular => {
                one(best_of(coverage, Some(CellKind::Macro)).unwrap_or(any))
            }
            MobilityProfile::Pedestrian => {
                match (best_of(coverage, Some(CellKind::Macro)), best_of(coverage, Some(CellKind::Small))) {
                    (Some(m), Some(s)) => Some(Planes { cp: m.ap.clone(), dp: s.ap.clone() }),
                    _ => one(any),
                }
            }
        },
    }
}

/// Profile-driven plane placement as a rule.
pub fn place_planes(mn_id: &MnId, profile: MobilityProfile, coverage: &[CandidateView]) -> Option<MmRule> {
    plan_planes(PlacementPolicy::Profile, profile, coverage).map(|p| planes_rule(mn_id, p))
}

fn planes_rule(mn_id: &MnId, p: Planes) -> MmRule {
    MmRule::new(RuleKind::PlacePlanes { mn_id: mn_id.clone(), cp_ap: p.cp, dp_ap: p.dp }, true)
}

/// Drops cycles so a node appears at most once, keeping the first visit.
fn cut_loops(path: Vec<NodeId>) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = Vec::with_capacity(path.len());
    for n in path {
        if let Some(i) = out.iter().position(|x| *x == n) {
            out.truncate(i);
        }
        out.push(n);
    }
    out
}

pub struct MmApp {
    topology: Arc<NetworkTopology>,
    mode: RunMode,
    config: MmAppConfig,
}

impl MmApp {
    pub fn new(topology: Arc<NetworkTopology>, mode: RunMode, config: MmAppConfig) -> Self {
        MmApp { topology, mode, config }
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    pub fn config(&self) -> &MmAppConfig {
        &self.config
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    fn radio_rule(&self, ap: &str) -> bool {
        self.topology.ap(ap).is_ok_and(|a| a.bbu_domain.is_none())
    }

    fn route_from(&self, serving_ap: &ApId, targets: &BTreeSet<NodeId>, avoid: &BTreeSet<NodeId>) -> Result<Vec<NodeId>, MmAppError> {
        let ar = self.topology.ap(serving_ap.as_str())?.parent_ar.clone();
        let (_, tail) = self
            .topology
            .shortest_data_path(&ar, targets, avoid)
            .ok_or_else(|| TopologyError::Unreachable { from: ar.0.clone(), to: "egress".into() })?;
        let mut path = vec![serving_ap.clone()];
        path.extend(tail);
        Ok(path)
    }

    /// Shortest path from the serving AP's router to the nearest egress.
    pub fn optimize_route(&self, flow: &FlowContext, serving_ap: &ApId) -> Result<Vec<NodeId>, MmAppError> {
        if !matches!(flow.state, FlowState::Active | FlowState::Transferring) {
            return Err(MmAppError::FlowNotActive(flow.id.0.clone()));
        }
        self.route_from(serving_ap, self.topology.egress(), &BTreeSet::new())
    }

    /// Route a flow gets when it starts at `serving_ap`: the nearest egress in
    /// on-demand mode, the anchor gateway in legacy mode.
    pub fn home_route(&self, serving_ap: &ApId) -> Result<Vec<NodeId>, MmAppError> {
        match self.mode {
            RunMode::Mmaas => self.route_from(serving_ap, self.topology.egress(), &BTreeSet::new()),
            RunMode::LegacyCentralized => self.anchored_route(serving_ap),
        }
    }

    /// Path through the anchor gateway, as the legacy core routes everything.
    pub fn anchored_route(&self, serving_ap: &ApId) -> Result<Vec<NodeId>, MmAppError> {
        let targets: BTreeSet<NodeId> = match self.topology.anchor_gateway() {
            Some(gw) => [gw.clone()].into(),
            None => self.topology.egress().clone(),
        };
        self.route_from(serving_ap, &targets, &BTreeSet::new())
    }

    /// Delay-sensitive flows keep their anchor behind a forwarding tunnel and
    /// get a route optimisation later; tolerant flows switch path at once.
    pub fn flow_treatment(
        &self,
        flow: &FlowContext,
        old_ar: &NodeId,
        new_ar: &NodeId,
        new_ap: &ApId,
    ) -> Result<FlowTreatment, MmAppError> {
        if flow.state != FlowState::Active {
            return Err(MmAppError::FlowNotActive(flow.id.0.clone()));
        }
        let radio = self.radio_rule(new_ap.as_str());
        match flow.delay_class {
            DelayClass::DelayTolerant => {
                let new_path = self.optimize_route(flow, new_ap)?;
                Ok(FlowTreatment {
                    immediate: MmRule::new(RuleKind::SwitchPath { flow_id: flow.id.clone(), new_path }, radio),
                    follow_up: None,
                })
            }
            DelayClass::DelaySensitive => {
                let (_, tunnel) = self
                    .topology
                    .shortest_data_path(new_ar, &[old_ar.clone()].into(), &BTreeSet::new())
                    .ok_or_else(|| TopologyError::Unreachable { from: new_ar.0.clone(), to: old_ar.0.clone() })?;
                let anchor_at = flow.path.iter().position(|n| n == old_ar).unwrap_or(flow.path.len());
                let mut path = vec![new_ap.clone()];
                path.extend(tunnel);
                path.extend(flow.path.iter().skip(anchor_at + 1).cloned());
                let path = cut_loops(path);
                let optimised = self.optimize_route(flow, new_ap)?;
                Ok(FlowTreatment {
                    immediate: MmRule::new(
                        RuleKind::InstallForwarding {
                            from_ar: old_ar.clone(),
                            to_ar: new_ar.clone(),
                            flow_id: flow.id.clone(),
                            path,
                        },
                        radio,
                    ),
                    follow_up: Some(MmRule::new(
                        RuleKind::OptimizeRoute { flow_id: flow.id.clone(), new_path: optimised },
                        false,
                    )),
                })
            }
        }
    }

    /// Anchors a new flow at the serving AP's router, routing around the
    /// node's previous routers where possible.
    pub fn admit_new_flow(
        &self,
        flow: &FlowContext,
        serving_ap: Option<&ApId>,
        prior_ars: &BTreeSet<NodeId>,
    ) -> Result<MmRule, MmAppError> {
        let ap = serving_ap.ok_or_else(|| MmAppError::NoAttachment(flow.mn_id.0.clone()))?;
        let anchor_ar = self.topology.ap(ap.as_str())?.parent_ar.clone();
        let path = match self.mode {
            RunMode::LegacyCentralized => self.anchored_route(ap)?,
            RunMode::Mmaas => {
                let avoid: BTreeSet<NodeId> = prior_ars.iter().filter(|a| **a != anchor_ar).cloned().collect();
                self.route_from(ap, self.topology.egress(), &avoid)
                    .or_else(|_| self.route_from(ap, self.topology.egress(), &BTreeSet::new()))?
            }
        };
        let radio = self.mode == RunMode::LegacyCentralized || self.radio_rule(ap.as_str());
        Ok(MmRule::new(RuleKind::AdmitFlow { flow_id: flow.id.clone(), anchor_ar, path }, radio))
    }

    fn carriers(&self, path: &[NodeId]) -> BTreeSet<NodeId> {
        let mut out: BTreeSet<NodeId> = path
            .iter()
            .skip(1)
            .filter(|n| self.topology.node_kind(n.as_str()) == Some(NodeKind::AccessRouter))
            .cloned()
            .collect();
        out.extend(path.first().cloned());
        out
    }

    /// Moves flows off every entity above `theta` until it is back at or
    /// below it: tolerant flows first, then sensitive, each smallest first,
    /// every move to the least-loaded other attachment of the owner.
    pub fn rebalance(&self, snapshot: &ContextSnapshot, theta: f64) -> Rebalance {
        self.rebalance_excluding(snapshot, theta, &BTreeSet::new())
    }

    fn rebalance_excluding(&self, snapshot: &ContextSnapshot, theta: f64, skip: &BTreeSet<FlowId>) -> Rebalance {
        let mut loads = snapshot.loads.clone();
        let frac = |loads: &BTreeMap<NodeId, EntityLoad>, id: &NodeId| {
            loads.get(id).and_then(|e| e.fraction()).unwrap_or(0.0)
        };
        let mut out = Rebalance::default();
        let mut moved: BTreeSet<FlowId> = skip.clone();
        let overloaded: Vec<NodeId> = snapshot.loads.keys().filter(|id| frac(&loads, id) > theta).cloned().collect();
        for entity in overloaded {
            let is_ap = self.topology.node_kind(entity.as_str()) == Some(NodeKind::AccessPoint);
            let mut movable: Vec<&FlowContext> = snapshot
                .flows
                .iter()
                .filter(|f| f.state == FlowState::Active && !moved.contains(&f.id))
                .filter(|f| self.carriers(&f.path).contains(&entity))
                .collect();
            movable.sort_by(|a, b| {
                let class = |f: &FlowContext| u8::from(f.delay_class == DelayClass::DelaySensitive);
                class(a).cmp(&class(b)).then(a.rate_kbps.cmp(&b.rate_kbps)).then_with(|| a.id.cmp(&b.id))
            });
            for f in movable {
                if frac(&loads, &entity) <= theta {
                    break;
                }
                let current = &f.path[0];
                let target = f
                    .owner_attachments
                    .iter()
                    .filter(|ap| *ap != current)
                    .filter(|ap| is_ap || self.topology.ap(ap.as_str()).is_ok_and(|a| a.parent_ar != entity))
                    .min_by(|a, b| frac(&loads, a).total_cmp(&frac(&loads, b)).then_with(|| a.cmp(b)))
                    .cloned();
                let Some(target) = target else {
                    if !out.handover_requests.contains(&f.mn_id) {
                        out.handover_requests.push(f.mn_id.clone());
                    }
                    continue;
                };
                let same_ar = self.topology.ap(target.as_str()).ok().map(|a| &a.parent_ar) == f.path.get(1);
                let new_path = if same_ar {
                    std::iter::once(target.clone()).chain(f.path[1..].iter().cloned()).collect()
                } else {
                    match self.optimize_route(f, &target) {
                        Ok(p) => p,
                        Err(e) => {
                            warn!("no route for transfer of {}: {e}", f.id);
                            continue;
                        }
                    }
                };
                for n in self.carriers(&f.path) {
                    if let Some(e) = loads.get_mut(&n) {
                        e.carried_kbps -= f.rate_kbps;
                    }
                }
                for n in self.carriers(&new_path) {
                    if let Some(e) = loads.get_mut(&n) {
                        e.carried_kbps += f.rate_kbps;
                    }
                }
                moved.insert(f.id.clone());
                out.transfers.push(MmRule::new(
                    RuleKind::TransferFlow { flow_id: f.id.clone(), target_ap: target, new_path },
                    true,
                ));
            }
        }
        out
    }

    pub fn decide(&self, snapshot: &ContextSnapshot) -> Decision {
        match self.mode {
            RunMode::Mmaas => self.decide_mmaas(snapshot),
            RunMode::LegacyCentralized => self.decide_legacy(snapshot),
        }
    }

    /// Flows of the snapshot's MN whose first hop is no longer attached.
    fn displaced<'a>(&self, snapshot: &'a ContextSnapshot, mn: &MnContext) -> Vec<&'a FlowContext> {
        snapshot
            .flows
            .iter()
            .filter(|f| f.mn_id == mn.id && f.state == FlowState::Active)
            .filter(|f| f.path.first().is_some_and(|ap| !mn.attachments.contains(ap)))
            .collect()
    }

    fn decide_mmaas(&self, snapshot: &ContextSnapshot) -> Decision {
        let mut d = Decision::default();
        let mut handled: BTreeSet<FlowId> = BTreeSet::new();
        if let Some(mn) = &snapshot.mn {
            if matches!(snapshot.trigger, Trigger::Radio(_) | Trigger::NewFlow { .. }) {
                if let Some(p) = plan_planes(self.config.placement, mn.profile, &mn.coverage) {
                    if mn.planes.as_ref() != Some(&p) {
                        d.rules.push(planes_rule(&mn.id, p));
                    }
                }
            }
            if let Trigger::NewFlow { flow_id, .. } = &snapshot.trigger {
                if let Some(f) = snapshot.flows.iter().find(|f| &f.id == flow_id && f.state == FlowState::Pending) {
                    match self.admit_new_flow(f, mn.serving_ap.as_ref(), &mn.prior_ars) {
                        Ok(r) => d.rules.push(r),
                        Err(e) => warn!("admission of {flow_id} failed: {e}"),
                    }
                    handled.insert(flow_id.clone());
                }
            }
            if let Some(new_ap) = &mn.serving_ap {
                let new_ar = self.topology.ap(new_ap.as_str()).map(|a| a.parent_ar.clone());
                for f in self.displaced(snapshot, mn) {
                    let (Ok(new_ar), Some(old_ar)) = (&new_ar, f.path.get(1)) else { continue };
                    if old_ar == new_ar {
                        continue;
                    }
                    match self.flow_treatment(f, old_ar, new_ar, new_ap) {
                        Ok(t) => {
                            d.rules.push(t.immediate);
                            d.deferred.extend(t.follow_up);
                            handled.insert(f.id.clone());
                        }
                        Err(e) => warn!("no treatment for {}: {e}", f.id),
                    }
                }
            }
        }
        let r = self.rebalance_excluding(snapshot, snapshot.theta, &handled);
        d.rules.extend(r.transfers);
        d.handover_requests = r.handover_requests;
        d
    }

    fn decide_legacy(&self, snapshot: &ContextSnapshot) -> Decision {
        let mut d = Decision::default();
        let Some(mn) = &snapshot.mn else { return d };
        if let Trigger::NewFlow { flow_id, .. } = &snapshot.trigger {
            if let Some(f) = snapshot.flows.iter().find(|f| &f.id == flow_id && f.state == FlowState::Pending) {
                match self.admit_new_flow(f, mn.serving_ap.as_ref(), &mn.prior_ars) {
                    Ok(r) => d.rules.push(r),
                    Err(e) => warn!("admission of {flow_id} failed: {e}"),
                }
            }
            return d;
        }
        let Some(new_ap) = &mn.serving_ap else { return d };
        let Ok(new_ar) = self.topology.ap(new_ap.as_str()).map(|a| a.parent_ar.clone()) else { return d };
        for f in self.displaced(snapshot, mn) {
            if f.path.get(1) == Some(&new_ar) {
                continue;
            }
            match self.anchored_route(new_ap) {
                Ok(new_path) => d.rules.push(MmRule::new(RuleKind::SwitchPath { flow_id: f.id.clone(), new_path }, true)),
                Err(e) => warn!("no anchored route for {}: {e}", f.id),
            }
        }
        d
    }
}

#[cfg(test)]
mod tests;
