use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::harness::logs::*;
use crate::harness::report::{LatencyStats, MetricsReport};
use crate::harness::scenario::Scenario;
use crate::ids::{ApId, FlowId, MnId, NodeId};
use crate::mmapp::{
    plan_planes, CandidateView, ContextSnapshot, Decision, FlowContext, InstanceTable, MmApp, MmAppConfig,
    MmAppError, MmRule, MnContext, Planes, PlacementPolicy, RuleKind, RunMode,
};
use crate::mobility::{
    advance, classify_profile_with, detect_trigger_with, DelayClass, Eligibility, Flow, FlowState, HandoverTrigger,
    MobileNode, MobilityProfile, SelectionScheme, Trigger, TriggerReason,
};
use crate::protocol::{
    handle_intra_domain, ControlPlane, Delivery, Engine, MmTransaction, ProtocolConfig, ProtocolError,
    StartOutcome, TransactionHooks, TxId,
};
use crate::resources::{instance_compute_hours, overload_trigger, rate_kbps, LoadTable};
use crate::selection::{negotiate_or_fallback, score, CandidateRecord, PolicyVector};
use crate::time::Micros;
use crate::topology::{CellKind, Coverage, NetworkTopology, NodeKind, Point};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("setup: {0}")]
    Setup(String),
}

/// Wall-clock cost of MM decisions. Not part of the report, which must stay
/// identical across runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecisionProfile {
    pub decisions: u64,
    pub total: Duration,
    pub max: Duration,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub logs: RunLogs,
    pub profile: DecisionProfile,
}

#[derive(Debug, Clone)]
enum Ev {
    Tick,
    Sample,
    Deliver(Delivery),
    FlowBirth(FlowId),
    FlowEnd(FlowId),
}

struct NodeRt {
    mn: MobileNode,
    planes: Option<Planes>,
    prior_ars: BTreeSet<NodeId>,
    detached_from: Option<ApId>,
    eligibility: Eligibility,
    instance_opened: bool,
}

struct FlowRt {
    flow: Flow,
    kbps: u64,
    down_since: Option<Micros>,
    disruption: Micros,
}

#[derive(Default)]
struct Counters {
    handovers_intra: u64,
    handovers_inter: u64,
    local: u64,
    handover_requests: u64,
    fallback: u64,
    refused: u64,
    conservation_violations: u64,
    residual_overload: Micros,
}

struct State {
    topo: Arc<NetworkTopology>,
    mode: RunMode,
    app: MmApp,
    hysteresis: f64,
    theta: f64,
    shortlist: usize,
    tick: Micros,
    sample: Micros,
    local_latency: Micros,
    network_policy: PolicyVector,
    nodes: BTreeMap<MnId, NodeRt>,
    flows: BTreeMap<FlowId, FlowRt>,
    loads: LoadTable,
    instances: InstanceTable,
    logs: RunLogs,
    counters: Counters,
    profile: DecisionProfile,
    egress_latency: BTreeMap<ApId, f64>,
}

fn path_str(p: &[NodeId]) -> String {
    p.iter().map(|n| n.as_str()).collect::<Vec<_>>().join(">")
}

fn ms(t: Micros) -> String {
    t.to_string()
}

fn reason_label(r: TriggerReason) -> &'static str {
    match r {
        TriggerReason::RadioDriven => "radio",
        TriggerReason::LoadDriven => "load",
        TriggerReason::NewFlowPlacement => "new_flow",
    }
}

fn setup<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Setup(e.to_string())
}

fn eligibility_for(mode: RunMode, placement: PlacementPolicy, profile: MobilityProfile) -> Eligibility {
    match (mode, placement) {
        (RunMode::LegacyCentralized, _) | (RunMode::Mmaas, PlacementPolicy::Strongest) => Eligibility::Any,
        (RunMode::Mmaas, PlacementPolicy::SmallCells) => Eligibility::Prefer(CellKind::Small),
        (RunMode::Mmaas, PlacementPolicy::Profile) => match profile {
            MobilityProfile::HighSpeed | MobilityProfile::Vehicular => Eligibility::Prefer(CellKind::Macro),
            MobilityProfile::Pedestrian => Eligibility::Prefer(CellKind::Small),
            MobilityProfile::Static => Eligibility::Any,
        },
    }
}

impl State {
    fn new(sc: &Scenario, mode: RunMode) -> Result<Self, RunError> {
        let p = &sc.params;
        let t = |x: f64| Micros::from_ms(x).ok_or_else(|| RunError::Setup(format!("bad duration {x}")));
        let topo = sc.topology.clone();
        let app = MmApp::new(
            topo.clone(),
            mode,
            MmAppConfig { placement: p.placement, opt_delay: t(p.opt_delay_ms)?, processing: t(p.app_processing_ms)? },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let mut nodes = BTreeMap::new();
        for n in &sc.nodes {
            let profile = classify_profile_with(n.device, n.speed_kmh, p.high_speed_kmh).map_err(setup)?;
            let policy = match &n.policy {
                Some(spec) => spec.build().map_err(setup)?,
                None => PolicyVector::default(),
            };
            let mut waypoints: Vec<Point> = n.waypoints.iter().map(|w| Point::from(*w)).collect();
            if let Some(r) = &n.random_waypoints {
                for _ in 0..r.count {
                    let x = rng.gen_range(r.min[0]..=r.max[0]);
                    let y = rng.gen_range(r.min[1]..=r.max[1]);
                    waypoints.push(Point::new(x, y));
                }
            }
            let mn = MobileNode {
                id: MnId::from(n.id.as_str()),
                device_class: n.device,
                position: Point::from(n.position),
                speed_kmh: n.speed_kmh,
                waypoints,
                policy,
                selection: n.selection,
                attachments: BTreeSet::new(),
                flows: sc.flows.iter().filter(|f| f.mn == n.id).map(|f| FlowId::from(f.id.as_str())).collect(),
                profile,
            };
            nodes.insert(
                mn.id.clone(),
                NodeRt {
                    mn,
                    planes: None,
                    prior_ars: BTreeSet::new(),
                    detached_from: None,
                    eligibility: eligibility_for(mode, p.placement, profile),
                    instance_opened: false,
                },
            );
        }
        let mut flows = BTreeMap::new();
        for f in &sc.flows {
            let flow = Flow {
                id: FlowId::from(f.id.as_str()),
                mn_id: MnId::from(f.mn.as_str()),
                delay_class: f.class,
                rate_mbps: f.rate_mbps,
                birth_ar: None,
                current_path: Vec::new(),
                state: FlowState::Pending,
            };
            flows.insert(flow.id.clone(), FlowRt { flow, kbps: rate_kbps(f.rate_mbps), down_since: None, disruption: Micros::ZERO });
        }
        let egress_latency = topo
            .aps()
            .iter()
            .map(|a| {
                let l = topo
                    .shortest_data_path(&a.parent_ar, topo.egress(), &BTreeSet::new())
                    .map_or(f64::INFINITY, |(l, _)| l.as_ms());
                (a.id.clone(), l)
            })
            .collect();
        Ok(State {
            loads: LoadTable::new(&topo),
            instances: InstanceTable::new(mode, t(p.linger_ms)?, p.compute_weight),
            topo,
            mode,
            app,
            hysteresis: p.hysteresis_db,
            theta: p.theta,
            shortlist: p.shortlist,
            tick: t(p.tick_ms)?,
            sample: t(p.sample_ms)?,
            local_latency: t(p.local_handover_ms)?,
            network_policy: sc.network_policy.clone(),
            nodes,
            flows,
            logs: RunLogs::default(),
            counters: Counters::default(),
            profile: DecisionProfile::default(),
            egress_latency,
        })
    }

    fn event(&mut self, now: Micros, kind: &str, subject: &str, detail: String) {
        debug!("{now} ms {kind} {subject} {detail}");
        self.logs.events.push(EventRow { time_ms: ms(now), kind: kind.into(), subject: subject.into(), detail });
    }

    fn path_row(&mut self, now: Micros, flow: &FlowId, tx: TxId, cause: &str) {
        let path = path_str(&self.flows[flow].flow.current_path);
        self.logs.paths.push(PathRow { time_ms: ms(now), flow_id: flow.0.clone(), tx_id: tx, cause: cause.into(), path });
    }

    fn coverage(&self, pos: Point) -> Vec<Coverage> {
        self.topo.coverage_at(pos)
    }

    fn views(&self, pos: Point) -> Vec<CandidateView> {
        self.coverage(pos)
            .into_iter()
            .map(|c| CandidateView { kind: self.topo.ap(c.ap.as_str()).map(|a| a.kind).unwrap_or(CellKind::Small), ap: c.ap, rssi: c.rssi })
            .collect()
    }

    fn records(&self, cov: &[Coverage]) -> Vec<CandidateRecord> {
        cov.iter()
            .filter_map(|c| {
                let ap = self.topo.ap(c.ap.as_str()).ok()?;
                let load = self.loads.get(c.ap.as_str()).and_then(|e| e.fraction()).unwrap_or(0.0);
                Some(CandidateRecord {
                    ap_id: c.ap.clone(),
                    values: [c.rssi, load, self.egress_latency[&c.ap], ap.preference, ap.cost],
                    rat: ap.rat.clone(),
                })
            })
            .collect()
    }

    /// Ranked choice among eligible APs, excluding `exclude`; up to `k`.
    fn choose(&mut self, id: &MnId, exclude: &BTreeSet<ApId>, k: usize, now: Micros) -> Vec<ApId> {
        let node = &self.nodes[id];
        let cov: Vec<Coverage> = node
            .eligibility
            .filter(&self.topo, self.coverage(node.mn.position))
            .into_iter()
            .filter(|c| !exclude.contains(&c.ap))
            .collect();
        if cov.is_empty() {
            return Vec::new();
        }
        match node.mn.selection {
            SelectionScheme::Strongest => {
                let mut c = cov;
                c.sort_by(|a, b| b.rssi.total_cmp(&a.rssi).then_with(|| a.ap.cmp(&b.ap)));
                c.into_iter().take(k).map(|c| c.ap).collect()
            }
            SelectionScheme::MmtDriven { k: want } => {
                let take = if k == usize::MAX { want } else { k };
                match score(&node.mn.policy, &self.records(&cov)) {
                    Ok(r) => r.into_iter().take(take).map(|(ap, _)| ap).collect(),
                    Err(e) => {
                        warn!("{id}: selection failed: {e}");
                        Vec::new()
                    }
                }
            }
            SelectionScheme::Negotiated => {
                match negotiate_or_fallback(&node.mn.policy, &self.network_policy, &self.records(&cov), self.shortlist) {
                    Ok(n) => {
                        if n.fell_back {
                            self.counters.fallback += 1;
                            self.event(now, "selection_fallback", id.as_str(), n.ap.0.clone());
                        }
                        vec![n.ap]
                    }
                    Err(e) => {
                        warn!("{id}: negotiation failed: {e}");
                        Vec::new()
                    }
                }
            }
        }
    }

    fn primary(&self, id: &MnId) -> Option<ApId> {
        let node = &self.nodes[id];
        if let Some(p) = &node.planes {
            if node.mn.attachments.contains(&p.dp) {
                return Some(p.dp.clone());
            }
        }
        let cov = self.coverage(node.mn.position);
        node.mn
            .attachments
            .iter()
            .max_by(|a, b| {
                let r = |ap: &ApId| cov.iter().find(|c| &c.ap == ap).map_or(f64::NEG_INFINITY, |c| c.rssi);
                r(a).total_cmp(&r(b)).then_with(|| b.cmp(a))
            })
            .cloned()
    }

    fn open_instance(&mut self, id: &MnId, now: Micros) {
        let profile = self.nodes[id].mn.profile;
        match self.instances.open_instance(id, profile, now) {
            Ok(_) => self.nodes.get_mut(id).unwrap().instance_opened = true,
            Err(MmAppError::InstanceRefusedStatic(_)) => {
                self.counters.refused += 1;
                self.event(now, "instance_refused", id.as_str(), String::new());
            }
            Err(e) => warn!("{id}: {e}"),
        }
    }

    fn attach(&mut self, id: &MnId, aps: Vec<ApId>, now: Micros) {
        let pos = self.nodes[id].mn.position;
        let views = self.views(pos);
        let placement = self.app.config().placement;
        let node = self.nodes.get_mut(id).unwrap();
        node.mn.attachments = aps.iter().cloned().collect();
        node.detached_from = None;
        if self.mode == RunMode::Mmaas {
            node.planes = plan_planes(placement, node.mn.profile, &views).filter(|p| node.mn.attachments.contains(&p.dp));
            if node.planes.is_none() && node.mn.profile != MobilityProfile::Static {
                node.planes = aps.first().map(|a| Planes { cp: a.clone(), dp: a.clone() });
            }
        }
        let first_attach = !node.instance_opened;
        let detail = aps.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(";");
        self.event(now, "attach", id.as_str(), detail);
        if self.mode == RunMode::LegacyCentralized && first_attach {
            self.open_instance(id, now);
        }
    }

    fn initial_attach(&mut self, spec_attach: &BTreeMap<MnId, Vec<ApId>>) {
        let ids: Vec<MnId> = self.nodes.keys().cloned().collect();
        for id in ids {
            let aps = match spec_attach.get(&id) {
                Some(list) if !list.is_empty() => list.clone(),
                _ => self.choose(&id, &BTreeSet::new(), match self.nodes[&id].mn.selection {
                    SelectionScheme::MmtDriven { k } => k,
                    _ => 1,
                }, Micros::ZERO),
            };
            if aps.is_empty() {
                let pos = self.nodes[&id].mn.position;
                self.event(Micros::ZERO, "no_coverage", id.as_str(), format!("{},{}", pos.x, pos.y));
                continue;
            }
            let primary_first = aps[0].clone();
            self.attach(&id, aps, Micros::ZERO);
            // primary is the first listed AP unless planes say otherwise
            let node = self.nodes.get_mut(&id).unwrap();
            let stale = node.planes.as_ref().is_none_or(|p| !node.mn.attachments.contains(&p.dp));
            if stale && self.mode == RunMode::Mmaas && node.mn.profile != MobilityProfile::Static {
                node.planes = Some(Planes { cp: primary_first.clone(), dp: primary_first });
            }
        }
    }

    fn establish(&mut self, f: &FlowId, now: Micros) -> bool {
        let mn = self.flows[f].flow.mn_id.clone();
        let Some(ap) = self.primary(&mn) else { return false };
        match self.app.home_route(&ap) {
            Ok(path) => {
                self.loads.add_path(&self.topo, &path, self.flows[f].kbps);
                let rt = self.flows.get_mut(f).unwrap();
                rt.flow.birth_ar = path.get(1).cloned();
                rt.flow.current_path = path;
                rt.flow.state = FlowState::Active;
                self.path_row(now, f, 0, "initial");
                true
            }
            Err(e) => {
                warn!("{f}: {e}");
                false
            }
        }
    }

    fn end_down(&mut self, f: &FlowId, now: Micros) {
        let rt = self.flows.get_mut(f).unwrap();
        if let Some(t) = rt.down_since.take() {
            rt.disruption += now - t;
            let d = now - t;
            self.event(now, "restore", f.as_str(), ms(d));
        }
    }

    fn mark_down(&mut self, f: &FlowId, now: Micros) {
        let rt = self.flows.get_mut(f).unwrap();
        if rt.down_since.is_none() {
            rt.down_since = Some(now);
            self.event(now, "teardown", f.as_str(), String::new());
        }
    }

    fn set_path(&mut self, f: &FlowId, path: Vec<NodeId>) {
        let rt = self.flows.get_mut(f).unwrap();
        if rt.flow.current_path.is_empty() {
            self.loads.add_path(&self.topo, &path, rt.kbps);
        } else {
            self.loads.reroute(&self.topo, &rt.flow.current_path, &path, rt.kbps);
        }
        rt.flow.current_path = path;
    }

    /// Moves the radio from `h.ap_from` to `h.ap_to` at once; flows that stay
    /// under the same router follow immediately, the others wait for rules.
    fn radio_switch(&mut self, h: &HandoverTrigger, now: Micros) -> bool {
        let inter = self.topo.is_inter_domain(h.ap_from.as_str(), h.ap_to.as_str()).unwrap_or(true);
        let old_ar = self.topo.ap(h.ap_from.as_str()).map(|a| a.parent_ar.clone()).ok();
        let new_ar = self.topo.ap(h.ap_to.as_str()).map(|a| a.parent_ar.clone()).ok();
        let pos = self.nodes[&h.mn_id].mn.position;
        let cp_covers = |cp: &ApId| self.coverage(pos).iter().any(|c| &c.ap == cp);
        let node = &self.nodes[&h.mn_id];
        let keep_cp = node.planes.as_ref().filter(|p| p.cp != p.dp && p.cp != h.ap_from && cp_covers(&p.cp)).map(|p| p.cp.clone());
        let node = self.nodes.get_mut(&h.mn_id).unwrap();
        node.mn.attachments.remove(&h.ap_from);
        node.mn.attachments.insert(h.ap_to.clone());
        node.detached_from = None;
        if self.mode == RunMode::Mmaas && node.planes.is_some() {
            node.planes = Some(Planes { cp: keep_cp.unwrap_or_else(|| h.ap_to.clone()), dp: h.ap_to.clone() });
        }
        if let (Some(o), Some(n)) = (&old_ar, &new_ar) {
            if o != n {
                node.prior_ars.insert(o.clone());
            }
        }
        let flows: Vec<FlowId> = node.mn.flows.iter().cloned().collect();
        for f in flows {
            let rt = &self.flows[&f];
            if !matches!(rt.flow.state, FlowState::Active | FlowState::Transferring) {
                continue;
            }
            if rt.flow.current_path.first() != Some(&h.ap_from) {
                continue;
            }
            if rt.flow.current_path.get(1) == new_ar.as_ref() {
                let mut p = rt.flow.current_path.clone();
                p[0] = h.ap_to.clone();
                self.set_path(&f, p);
                self.end_down(&f, now);
                self.path_row(now, &f, 0, "radio");
            } else if self.mode == RunMode::LegacyCentralized || rt.flow.delay_class == DelayClass::DelayTolerant {
                self.mark_down(&f, now);
            }
        }
        if inter {
            self.counters.handovers_inter += 1;
        } else {
            self.counters.handovers_intra += 1;
        }
        let scope = if inter { "inter" } else { "intra" };
        self.event(now, "handover", h.mn_id.as_str(), format!("{}>{};{scope};{}", h.ap_from, h.ap_to, reason_label(h.reason)));
        inter
    }

    /// Loses radio entirely; every flow of the node goes down.
    fn detach(&mut self, id: &MnId, lost: &ApId, now: Micros) {
        let node = self.nodes.get_mut(id).unwrap();
        node.mn.attachments.remove(lost);
        if node.mn.attachments.is_empty() {
            node.detached_from = Some(lost.clone());
        }
        let flows: Vec<FlowId> = node.mn.flows.iter().cloned().collect();
        for f in flows {
            if self.flows[&f].flow.current_path.first() == Some(lost) && self.flows[&f].flow.state != FlowState::Closed {
                self.mark_down(&f, now);
            }
        }
        self.event(now, "detach", id.as_str(), lost.0.clone());
    }

    /// Radio triggers produced by one mobility step of every node.
    fn tick(&mut self, now: Micros) -> Vec<HandoverTrigger> {
        let mut out = Vec::new();
        let ids: Vec<MnId> = self.nodes.keys().cloned().collect();
        for id in ids {
            let node = &self.nodes[&id];
            if node.mn.waypoints.is_empty() || node.mn.speed_kmh == 0.0 {
                continue;
            }
            let (next, _events) = advance(&node.mn, self.tick, &self.topo);
            self.nodes.get_mut(&id).unwrap().mn = next;
            let node = &self.nodes[&id];
            let covering: BTreeSet<ApId> = self.coverage(node.mn.position).into_iter().map(|c| c.ap).collect();
            let lost: Vec<ApId> = node.mn.attachments.iter().filter(|a| !covering.contains(*a)).cloned().collect();
            if let Some(lost_ap) = lost.first() {
                let attached = self.nodes[&id].mn.attachments.clone();
                let target = self.choose(&id, &attached, 1, now).into_iter().next().or_else(|| {
                    attached.iter().find(|a| *a != lost_ap && covering.contains(*a)).cloned()
                });
                match target {
                    Some(ap_to) => out.push(HandoverTrigger {
                        mn_id: id.clone(),
                        ap_from: lost_ap.clone(),
                        ap_to,
                        reason: TriggerReason::RadioDriven,
                    }),
                    None => self.detach(&id, lost_ap, now),
                }
                continue;
            }
            if node.mn.attachments.is_empty() {
                if let Some(from) = node.detached_from.clone() {
                    if let Some(ap_to) = self.choose(&id, &BTreeSet::new(), 1, now).into_iter().next() {
                        out.push(HandoverTrigger { mn_id: id.clone(), ap_from: from, ap_to, reason: TriggerReason::RadioDriven });
                    }
                }
                continue;
            }
            if let Some(h) = detect_trigger_with(&node.mn, &self.topo, self.hysteresis, node.eligibility) {
                let target = match node.mn.selection {
                    SelectionScheme::Strongest => Some(h.ap_to.clone()),
                    _ => {
                        let attached = node.mn.attachments.clone();
                        self.choose(&id, &attached, 1, now).into_iter().next()
                    }
                };
                if let Some(ap_to) = target {
                    out.push(HandoverTrigger { ap_to, ..h });
                }
            }
        }
        out
    }

    fn sample(&mut self, now: Micros) {
        let rows: Vec<LoadRow> = self
            .loads
            .entities()
            .filter_map(|(id, e)| e.fraction().map(|f| LoadRow { time_ms: ms(now), entity_id: id.0.clone(), load_fraction: f }))
            .collect();
        let over = rows.iter().filter(|r| r.load_fraction > self.theta).count() as u64;
        self.counters.residual_overload += Micros(self.sample.0 * over);
        self.logs.load.extend(rows);
        let expected: u64 = self
            .flows
            .values()
            .filter(|f| matches!(f.flow.state, FlowState::Active | FlowState::Transferring) && !f.flow.current_path.is_empty())
            .map(|f| f.kbps)
            .sum();
        if self.loads.total_ap_kbps(&self.topo) != expected {
            self.counters.conservation_violations += 1;
            warn!("{now} ms: carried load does not match active flow rates");
        }
    }

    fn flow_context(&self, f: &FlowRt) -> FlowContext {
        FlowContext {
            id: f.flow.id.clone(),
            mn_id: f.flow.mn_id.clone(),
            delay_class: f.flow.delay_class,
            rate_kbps: f.kbps,
            state: f.flow.state,
            path: f.flow.current_path.clone(),
            owner_attachments: self.nodes[&f.flow.mn_id].mn.attachments.clone(),
        }
    }

    fn carries(&self, entity: &NodeId, path: &[NodeId]) -> bool {
        match self.topo.node_kind(entity.as_str()) {
            Some(NodeKind::AccessPoint) => path.first() == Some(entity),
            _ => path.iter().skip(1).any(|n| n == entity),
        }
    }

    fn target_for(&self, trigger: &Trigger) -> Option<NodeId> {
        match trigger {
            Trigger::Radio(h) => self.topo.ap(h.ap_to.as_str()).ok().map(|a| a.parent_ar.clone()),
            Trigger::Load { entity } => match self.topo.node_kind(entity.as_str()) {
                Some(NodeKind::AccessPoint) => self.topo.ap(entity.as_str()).ok().map(|a| a.parent_ar.clone()),
                _ => Some(entity.clone()),
            },
            Trigger::NewFlow { mn_id, .. } => {
                self.primary(mn_id).and_then(|ap| self.topo.ap(ap.as_str()).ok().map(|a| a.parent_ar.clone()))
            }
        }
    }

    fn finish_downtime(&mut self, horizon: Micros) {
        let ids: Vec<FlowId> = self.flows.keys().cloned().collect();
        for f in ids {
            let rt = self.flows.get_mut(&f).unwrap();
            if let Some(t) = rt.down_since.take() {
                rt.disruption += horizon - t;
            }
        }
    }
}

impl TransactionHooks for State {
    fn snapshot(&mut self, tx: &MmTransaction, busy: &BTreeSet<MnId>, now: Micros) -> ContextSnapshot {
        let (mn, flows) = match &tx.trigger {
            Trigger::Radio(_) | Trigger::NewFlow { .. } => {
                let id = tx.trigger.mn().unwrap().clone();
                let node = &self.nodes[&id];
                let serving = match &tx.trigger {
                    Trigger::Radio(h) if node.mn.attachments.contains(&h.ap_to) => Some(h.ap_to.clone()),
                    _ => self.primary(&id),
                };
                let ctx = MnContext {
                    id: id.clone(),
                    profile: node.mn.profile,
                    attachments: node.mn.attachments.clone(),
                    serving_ap: serving,
                    planes: node.planes.clone(),
                    coverage: self.views(node.mn.position),
                    prior_ars: node.prior_ars.clone(),
                };
                let flows = node
                    .mn
                    .flows
                    .iter()
                    .map(|f| &self.flows[f])
                    .filter(|f| f.flow.state != FlowState::Closed)
                    .map(|f| self.flow_context(f))
                    .collect();
                (Some(ctx), flows)
            }
            Trigger::Load { entity } => {
                let flows = self
                    .flows
                    .values()
                    .filter(|f| f.flow.state == FlowState::Active && !busy.contains(&f.flow.mn_id))
                    .filter(|f| self.carries(entity, &f.flow.current_path))
                    .map(|f| self.flow_context(f))
                    .collect();
                (None, flows)
            }
        };
        ContextSnapshot {
            trigger: tx.trigger.clone(),
            taken_at: now,
            mn,
            flows,
            loads: self.loads.entities().map(|(k, v)| (k.clone(), *v)).collect(),
            theta: self.theta,
        }
    }

    fn decide(&mut self, snapshot: &ContextSnapshot) -> Decision {
        let started = Instant::now();
        let d = self.app.decide(snapshot);
        let spent = started.elapsed();
        self.profile.decisions += 1;
        self.profile.total += spent;
        self.profile.max = self.profile.max.max(spent);
        for r in &d.rules {
            if let Some(f) = r.flow_id() {
                if let Some(rt) = self.flows.get_mut(f) {
                    if rt.flow.state == FlowState::Active {
                        rt.flow.state = FlowState::Transferring;
                    }
                }
            }
        }
        d
    }

    fn current_path(&self, flow: &FlowId) -> Option<Vec<NodeId>> {
        self.flows.get(flow).map(|f| f.flow.current_path.clone()).filter(|p| !p.is_empty())
    }

    fn apply(&mut self, tx: TxId, rule: &MmRule, now: Micros) {
        self.logs.rules.push(RuleRow {
            time_ms: ms(now),
            tx_id: tx,
            rule_kind: rule.kind_name().into(),
            subject_id: rule.subject(),
            detail: rule.detail(),
        });
        if let RuleKind::PlacePlanes { mn_id, cp_ap, dp_ap } = &rule.kind {
            if let Some(n) = self.nodes.get_mut(mn_id) {
                n.planes = Some(Planes { cp: cp_ap.clone(), dp: dp_ap.clone() });
            }
            return;
        }
        let (Some(f), Some(path)) = (rule.flow_id().cloned(), rule.new_path().map(<[NodeId]>::to_vec)) else { return };
        let Some(rt) = self.flows.get(&f) else { return };
        if rt.flow.state == FlowState::Closed {
            return;
        }
        if let RuleKind::TransferFlow { target_ap, .. } = &rule.kind {
            if !self.nodes[&rt.flow.mn_id].mn.attachments.contains(target_ap) {
                self.flows.get_mut(&f).unwrap().flow.state = FlowState::Active;
                self.event(now, "stale_rule", f.as_str(), target_ap.0.clone());
                return;
            }
        }
        if let RuleKind::AdmitFlow { anchor_ar, .. } = &rule.kind {
            self.flows.get_mut(&f).unwrap().flow.birth_ar = Some(anchor_ar.clone());
        }
        self.set_path(&f, path);
        self.flows.get_mut(&f).unwrap().flow.state = FlowState::Active;
        self.end_down(&f, now);
        self.path_row(now, &f, tx, rule.kind_name());
    }
}

struct Sim {
    st: State,
    cp: ControlPlane,
    horizon: Micros,
}

impl Sim {
    fn schedule_all(eng: &mut Engine<Ev>, ds: Vec<Delivery>) -> Result<(), ProtocolError> {
        for d in ds {
            eng.schedule(d.at, Ev::Deliver(d))?;
        }
        Ok(())
    }

    fn launch(&mut self, eng: &mut Engine<Ev>, trigger: Trigger, now: Micros) -> Result<(), ProtocolError> {
        let Some(target) = self.st.target_for(&trigger) else {
            self.st.event(now, "trigger_dropped", &trigger.subject(), "no target router".into());
            return Ok(());
        };
        let mn = trigger.mn().cloned();
        let subject = trigger.subject();
        let reason = reason_label(trigger.reason());
        match self.cp.start_transaction(trigger, target, now)? {
            StartOutcome::Opened { tx, deliveries } => {
                info!("{now} ms: transaction {tx} ({reason}) for {subject}");
                if let (Some(mn), RunMode::Mmaas) = (mn, self.st.mode) {
                    self.st.open_instance(&mn, now);
                }
                Self::schedule_all(eng, deliveries)
            }
            StartOutcome::Queued => {
                self.st.event(now, "trigger_queued", &subject, reason.into());
                Ok(())
            }
        }
    }

    fn handover(&mut self, eng: &mut Engine<Ev>, h: HandoverTrigger, now: Micros) -> Result<(), ProtocolError> {
        let inter = self.st.radio_switch(&h, now);
        if self.st.mode == RunMode::Mmaas && !inter {
            let rec = handle_intra_domain(&self.st.topo, &h, self.st.local_latency, now)?;
            self.st.counters.local += 1;
            self.st.event(now, "local_handover", h.mn_id.as_str(), format!("{};{}", rec.bbu, ms(rec.latency)));
            return Ok(());
        }
        self.launch(eng, Trigger::Radio(h), now)
    }

    fn on_event(&mut self, eng: &mut Engine<Ev>, ev: Ev, now: Micros) -> Result<(), ProtocolError> {
        match ev {
            Ev::Tick => {
                for h in self.st.tick(now) {
                    self.handover(eng, h, now)?;
                }
                if now + self.st.tick <= self.horizon {
                    eng.schedule(now + self.st.tick, Ev::Tick)?;
                }
            }
            Ev::Sample => {
                self.st.sample(now);
                if self.st.mode == RunMode::Mmaas {
                    for t in overload_trigger(&self.st.loads, self.st.theta, &self.cp.open_load_entities()) {
                        self.launch(eng, t, now)?;
                    }
                }
            }
            Ev::FlowBirth(f) => {
                let mn = self.st.flows[&f].flow.mn_id.clone();
                self.st.event(now, "flow_birth", f.as_str(), mn.0.clone());
                if self.st.nodes[&mn].mn.attachments.is_empty() {
                    self.st.event(now, "trigger_dropped", f.as_str(), "node detached".into());
                } else {
                    self.launch(eng, Trigger::NewFlow { mn_id: mn, flow_id: f }, now)?;
                }
            }
            Ev::FlowEnd(f) => {
                self.st.end_down(&f, now);
                let rt = self.st.flows.get_mut(&f).unwrap();
                if !rt.flow.current_path.is_empty() && rt.flow.state != FlowState::Closed {
                    self.st.loads.remove_path(&self.st.topo, &rt.flow.current_path, rt.kbps);
                }
                rt.flow.state = FlowState::Closed;
                rt.flow.current_path.clear();
                self.st.event(now, "flow_end", f.as_str(), String::new());
                self.st.path_row(now, &f, 0, "closed");
            }
            Ev::Deliver(d) => {
                let m = &self.cp.transaction(d.tx).ok_or(ProtocolError::UnknownTransaction(d.tx))?.messages[d.msg];
                self.st.logs.messages.push(MessageRow {
                    time_ms: ms(d.at),
                    tx_id: d.tx,
                    kind: m.kind.as_str().into(),
                    src: m.src.0.clone(),
                    dst: m.dst.0.clone(),
                });
                let p = self.cp.drive_transaction(d, &mut self.st)?;
                Self::schedule_all(eng, p.deliveries)?;
                if self.st.mode == RunMode::Mmaas {
                    for mn in &p.locked {
                        self.st.open_instance(mn, now);
                    }
                }
                for mn in p.handover_requests {
                    self.st.counters.handover_requests += 1;
                    self.st.event(now, "handover_request", mn.as_str(), String::new());
                    let attached = self.st.nodes[&mn].mn.attachments.clone();
                    let to = self.st.choose(&mn, &attached, 1, now).into_iter().next();
                    if let (Some(from), Some(ap_to)) = (self.st.primary(&mn), to) {
                        let h = HandoverTrigger { mn_id: mn, ap_from: from, ap_to, reason: TriggerReason::RadioDriven };
                        self.handover(eng, h, now)?;
                    }
                }
                if let Some(c) = p.completed {
                    for mn in &c.released {
                        self.st.instances.release(mn, now);
                    }
                    for t in c.requeued {
                        self.launch(eng, t, now)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Runs a scenario to its horizon in one mode.
pub fn run(scenario: &Scenario, mode: RunMode) -> Result<RunOutput, RunError> {
    let p = &scenario.params;
    let t = |x: f64| Micros::from_ms(x).ok_or_else(|| RunError::Setup(format!("bad duration {x}")));
    let mut st = State::new(scenario, mode)?;
    let config = ProtocolConfig {
        ar_processing: t(p.ar_processing_ms)?,
        controller_processing: t(p.controller_processing_ms)?,
        app_processing: t(p.app_processing_ms)?,
        opt_delay: t(p.opt_delay_ms)?,
        local_handover: t(p.local_handover_ms)?,
    };
    let cp = ControlPlane::new(scenario.topology.clone(), mode, config)?;
    let horizon = scenario.horizon();

    let spec_attach: BTreeMap<MnId, Vec<ApId>> = scenario
        .nodes
        .iter()
        .map(|n| (MnId::from(n.id.as_str()), n.attach.iter().map(|a| ApId::from(a.as_str())).collect()))
        .collect();
    st.initial_attach(&spec_attach);

    let mut eng: Engine<Ev> = Engine::new();
    // Samples go in first so that, at a shared instant, a sample sees the
    // state left by earlier instants only.
    let mut at = Micros::ZERO;
    while at <= horizon {
        eng.schedule(at, Ev::Sample)?;
        at += st.sample;
    }
    for f in &scenario.flows {
        let id = FlowId::from(f.id.as_str());
        if f.birth_ms == 0.0 {
            if !st.establish(&id, Micros::ZERO) {
                st.event(Micros::ZERO, "trigger_dropped", id.as_str(), "node detached".into());
            }
        } else {
            eng.schedule(t(f.birth_ms)?, Ev::FlowBirth(id.clone()))?;
        }
        if let Some(end) = f.end_ms {
            if end <= p.horizon_ms {
                eng.schedule(t(end)?, Ev::FlowEnd(id))?;
            }
        }
    }
    if st.nodes.values().any(|n| n.mn.speed_kmh > 0.0 && !n.mn.waypoints.is_empty()) && st.tick <= horizon {
        eng.schedule(st.tick, Ev::Tick)?;
    }

    let mut sim = Sim { st, cp, horizon };
    eng.run_until(horizon, |eng, ev| {
        let now = ev.time;
        sim.on_event(eng, ev.payload, now)
    })?;

    let Sim { mut st, cp, .. } = sim;
    st.finish_downtime(horizon);
    Ok(finalize(scenario, mode, st, cp.into_transactions(), horizon))
}

fn finalize(scenario: &Scenario, mode: RunMode, mut st: State, txs: Vec<MmTransaction>, horizon: Micros) -> RunOutput {
    let ledger = std::mem::replace(&mut st.instances, InstanceTable::new(mode, Micros::ZERO, 1.0)).finish(horizon);
    for (mn, i) in ledger.intervals() {
        st.logs.instances.push(InstanceRow { mn_id: mn.0.clone(), open_ms: ms(i.open), close_ms: ms(i.close), weight: i.weight });
    }
    let itime = instance_compute_hours(&ledger);

    let mut delivered: BTreeMap<TxId, usize> = BTreeMap::new();
    for m in &st.logs.messages {
        *delivered.entry(m.tx_id).or_default() += 1;
    }
    let mut by_reason: BTreeMap<String, u64> = BTreeMap::new();
    let mut latencies = Vec::new();
    for tx in &txs {
        *by_reason.entry(reason_label(tx.trigger.reason()).into()).or_default() += 1;
        if let Some(d) = tx.duration() {
            latencies.push(d.as_ms());
        }
        st.logs.transactions.push(TransactionRow {
            tx_id: tx.id,
            reason: reason_label(tx.trigger.reason()).into(),
            subject: tx.trigger.subject(),
            started_ms: ms(tx.started),
            completed_ms: tx.completed.map(ms).unwrap_or_default(),
            messages: delivered.get(&tx.id).copied().unwrap_or(0),
            rules: tx.rules_out.len() + tx.deferred.len(),
        });
    }
    let mut messages_by_kind: BTreeMap<String, u64> = BTreeMap::new();
    for m in &st.logs.messages {
        *messages_by_kind.entry(m.kind.clone()).or_default() += 1;
    }
    let mut rules_by_kind: BTreeMap<String, u64> = BTreeMap::new();
    for r in &st.logs.rules {
        *rules_by_kind.entry(r.rule_kind.clone()).or_default() += 1;
    }
    let report = MetricsReport {
        scenario: scenario.name.clone(),
        scenario_hash: scenario.digest.clone(),
        mode,
        seed: scenario.params.seed,
        horizon_ms: horizon.as_ms(),
        theta: st.theta,
        sample_ms: st.sample.as_ms(),
        controller_messages: st.logs.messages.len() as u64,
        messages_by_kind,
        transactions: txs.len() as u64,
        transactions_completed: txs.iter().filter(|t| t.completed.is_some()).count() as u64,
        transactions_by_reason: by_reason,
        cp_latency: LatencyStats::from_samples(latencies),
        rules_by_kind,
        flow_disruption_ms: st.flows.iter().map(|(k, f)| (k.0.clone(), f.disruption.as_ms())).collect(),
        handovers_intra: st.counters.handovers_intra,
        handovers_inter: st.counters.handovers_inter,
        local_handovers: st.counters.local,
        handover_requests: st.counters.handover_requests,
        instance_time_ms: itime.total,
        instance_time_by_mn: itime.per_mn.iter().map(|(k, v)| (k.0.clone(), *v)).collect(),
        instances_refused: st.counters.refused,
        residual_overload_ms: st.counters.residual_overload.as_ms(),
        fallback_selections: st.counters.fallback,
        conservation_violations: st.counters.conservation_violations,
        final_paths: st.flows.iter().map(|(k, f)| (k.0.clone(), path_str(&f.flow.current_path))).collect(),
    };
    RunOutput { report, logs: st.logs, profile: st.profile }
}
