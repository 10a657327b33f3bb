//! Mobile nodes: profile classification, waypoint movement, coverage change
//! detection and the hysteresis handover trigger.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ApId, FlowId, MnId, NodeId};
use crate::selection::PolicyVector;
use crate::time::Micros;
use crate::topology::{CellKind, Coverage, NetworkTopology, Point};

/// Vehicular/high-speed boundary in km/h.
pub const DEFAULT_HIGH_SPEED_KMH: f64 = 120.0;
pub const PEDESTRIAN_LIMIT_KMH: f64 = 3.0;
pub const DEFAULT_HYSTERESIS: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MobilityError {
    #[error("negative speed {0} km/h")]
    NegativeSpeed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityProfile {
    Static,
    Pedestrian,
    Vehicular,
    HighSpeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceClass {
    Sensor,
    Handset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayClass {
    DelaySensitive,
    DelayTolerant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowState {
    /// Declared but not yet admitted by the control plane.
    Pending,
    Active,
    Transferring,
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub id: FlowId,
    pub mn_id: MnId,
    pub delay_class: DelayClass,
    pub rate_mbps: f64,
    pub birth_ar: Option<NodeId>,
    /// Serving AP first, core egress last.
    pub current_path: Vec<NodeId>,
    pub state: FlowState,
}

impl Flow {
    pub fn serving_ap(&self) -> Option<&NodeId> {
        self.current_path.first()
    }

    pub fn current_ar(&self) -> Option<&NodeId> {
        self.current_path.get(1)
    }
}

/// How an MN picks the AP(s) it attaches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum SelectionScheme {
    /// Strongest eligible signal.
    #[default]
    Strongest,
    /// The MN ranks candidates by its own policy and attaches to the top `k`.
    MmtDriven { k: usize },
    /// MN shortlist pruned by the network policy.
    Negotiated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobileNode {
    pub id: MnId,
    pub device_class: DeviceClass,
    pub position: Point,
    pub speed_kmh: f64,
    /// Remaining waypoints, visited in order.
    pub waypoints: Vec<Point>,
    pub policy: PolicyVector,
    pub selection: SelectionScheme,
    pub attachments: BTreeSet<ApId>,
    pub flows: BTreeSet<FlowId>,
    pub profile: MobilityProfile,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum RadioEvent {
    CoverageEntered { mn: MnId, ap: ApId },
    CoverageLost { mn: MnId, ap: ApId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerReason {
    RadioDriven,
    LoadDriven,
    NewFlowPlacement,
}

/// A radio-driven handover request for one MN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoverTrigger {
    pub mn_id: MnId,
    pub ap_from: ApId,
    pub ap_to: ApId,
    pub reason: TriggerReason,
}

/// Anything that opens an MM transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trigger {
    Radio(HandoverTrigger),
    /// An AP or AR sampled above the load threshold.
    Load { entity: NodeId },
    /// A flow born after the run started needs an anchor.
    NewFlow { mn_id: MnId, flow_id: FlowId },
}

impl Trigger {
    pub fn reason(&self) -> TriggerReason {
        match self {
            Trigger::Radio(h) => h.reason,
            Trigger::Load { .. } => TriggerReason::LoadDriven,
            Trigger::NewFlow { .. } => TriggerReason::NewFlowPlacement,
        }
    }

    /// The MN the transaction is serialised on, if any.
    pub fn mn(&self) -> Option<&MnId> {
        match self {
            Trigger::Radio(h) => Some(&h.mn_id),
            Trigger::Load { .. } => None,
            Trigger::NewFlow { mn_id, .. } => Some(mn_id),
        }
    }

    /// Short label for logs: the MN, or the overloaded entity.
    pub fn subject(&self) -> String {
        match self {
            Trigger::Radio(h) => h.mn_id.0.clone(),
            Trigger::Load { entity } => entity.0.clone(),
            Trigger::NewFlow { mn_id, .. } => mn_id.0.clone(),
        }
    }
}

pub fn classify_profile(device: DeviceClass, speed_kmh: f64) -> Result<MobilityProfile, MobilityError> {
    classify_profile_with(device, speed_kmh, DEFAULT_HIGH_SPEED_KMH)
}

/// Sensors at rest are static; handsets split at 3 km/h and at `high_speed_kmh`.
pub fn classify_profile_with(
    device: DeviceClass,
    speed_kmh: f64,
    high_speed_kmh: f64,
) -> Result<MobilityProfile, MobilityError> {
    if speed_kmh < 0.0 || speed_kmh.is_nan() {
        return Err(MobilityError::NegativeSpeed(speed_kmh));
    }
    Ok(match device {
        DeviceClass::Sensor if speed_kmh == 0.0 => MobilityProfile::Static,
        _ if speed_kmh < PEDESTRIAN_LIMIT_KMH => MobilityProfile::Pedestrian,
        _ if speed_kmh < high_speed_kmh => MobilityProfile::Vehicular,
        _ => MobilityProfile::HighSpeed,
    })
}

fn metres_per_us(speed_kmh: f64) -> f64 {
    speed_kmh / 3.6 / 1_000_000.0
}

fn covered(topology: &NetworkTopology, position: Point) -> BTreeSet<ApId> {
    topology.coverage_at(position).into_iter().map(|c| c.ap).collect()
}

/// Moves the node along its waypoints for `dt` and reports APs whose coverage
/// predicate differs between the start and the end of the step.
///
/// Consumed waypoints are removed; a node with no waypoints left stays put.
pub fn advance(mn: &MobileNode, dt: Micros, topology: &NetworkTopology) -> (MobileNode, Vec<RadioEvent>) {
    let mut next = mn.clone();
    let mut budget = metres_per_us(mn.speed_kmh) * dt.0 as f64;
    while budget > 0.0 && !next.waypoints.is_empty() {
        let target = next.waypoints[0];
        let d = next.position.distance(target);
        if d <= budget {
            next.position = target;
            next.waypoints.remove(0);
            budget -= d;
        } else {
            let f = budget / d;
            next.position = Point::new(
                next.position.x + (target.x - next.position.x) * f,
                next.position.y + (target.y - next.position.y) * f,
            );
            budget = 0.0;
        }
    }
    if next.position == mn.position {
        return (next, Vec::new());
    }
    let before = covered(topology, mn.position);
    let after = covered(topology, next.position);
    let mut events: Vec<RadioEvent> = after
        .difference(&before)
        .map(|ap| RadioEvent::CoverageEntered { mn: mn.id.clone(), ap: ap.clone() })
        .collect();
    events.extend(before.difference(&after).map(|ap| RadioEvent::CoverageLost { mn: mn.id.clone(), ap: ap.clone() }));
    (next, events)
}

/// Candidate filter applied before trigger evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Eligibility {
    #[default]
    Any,
    /// Only cells of this kind, when at least one of them covers the node.
    Prefer(CellKind),
}

impl Eligibility {
    pub fn filter(self, topology: &NetworkTopology, coverage: Vec<Coverage>) -> Vec<Coverage> {
        match self {
            Eligibility::Any => coverage,
            Eligibility::Prefer(kind) => {
                let of_kind: Vec<Coverage> = coverage
                    .iter()
                    .filter(|c| topology.ap(c.ap.as_str()).is_ok_and(|a| a.kind == kind))
                    .cloned()
                    .collect();
                if of_kind.is_empty() {
                    coverage
                } else {
                    of_kind
                }
            }
        }
    }
}

pub fn detect_trigger(mn: &MobileNode, topology: &NetworkTopology) -> Option<HandoverTrigger> {
    detect_trigger_with(mn, topology, DEFAULT_HYSTERESIS, Eligibility::Any)
}

/// Fires when the best non-attached eligible AP beats the weakest attached AP
/// by more than `hysteresis`. Equal candidates resolve to the lowest AP id.
pub fn detect_trigger_with(
    mn: &MobileNode,
    topology: &NetworkTopology,
    hysteresis: f64,
    eligibility: Eligibility,
) -> Option<HandoverTrigger> {
    if mn.attachments.is_empty() {
        return None;
    }
    let coverage = topology.coverage_at(mn.position);
    let weakest = coverage
        .iter()
        .filter(|c| mn.attachments.contains(&c.ap))
        .min_by(|a, b| a.rssi.total_cmp(&b.rssi).then_with(|| a.ap.cmp(&b.ap)))?
        .clone();
    let best = eligibility
        .filter(topology, coverage)
        .into_iter()
        .filter(|c| !mn.attachments.contains(&c.ap))
        .max_by(|a, b| a.rssi.total_cmp(&b.rssi).then_with(|| b.ap.cmp(&a.ap)))?;
    (best.rssi > weakest.rssi + hysteresis).then(|| HandoverTrigger {
        mn_id: mn.id.clone(),
        ap_from: weakest.ap,
        ap_to: best.ap,
        reason: TriggerReason::RadioDriven,
    })
}
