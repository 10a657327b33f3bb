//! Compute accounting for mobility instances and per-entity load bookkeeping.
//!
//! Rates are tracked in integer kbit/s so that transfers conserve load exactly.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ids::{MnId, NodeId};
use crate::mobility::Trigger;
use crate::time::Micros;
use crate::topology::{NetworkTopology, NodeKind};

pub const DEFAULT_SAMPLE_PERIOD_MS: u64 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResourceError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("instance interval for `{mn}` overlaps an earlier one")]
    OverlappingInterval { mn: String },
}

/// Flow rate in kbit/s.
pub fn rate_kbps(rate_mbps: f64) -> u64 {
    (rate_mbps * 1000.0).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceInterval {
    pub open: Micros,
    pub close: Micros,
    pub weight: f64,
}

/// Lifetime intervals of every mobility instance in a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComputeLedger {
    intervals: BTreeMap<MnId, Vec<InstanceInterval>>,
}

impl ComputeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, mn: &MnId, interval: InstanceInterval) -> Result<(), ResourceError> {
        let list = self.intervals.entry(mn.clone()).or_default();
        if list.last().is_some_and(|last| last.close > interval.open) {
            return Err(ResourceError::OverlappingInterval { mn: mn.0.clone() });
        }
        list.push(interval);
        Ok(())
    }

    pub fn intervals(&self) -> impl Iterator<Item = (&MnId, &InstanceInterval)> {
        self.intervals.iter().flat_map(|(mn, v)| v.iter().map(move |i| (mn, i)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTime {
    /// instance·ms × weight, per MN.
    pub per_mn: BTreeMap<MnId, f64>,
    pub total: f64,
}

pub fn instance_compute_hours(ledger: &ComputeLedger) -> InstanceTime {
    let mut per_mn = BTreeMap::new();
    let mut total = 0.0;
    for (mn, list) in &ledger.intervals {
        let t: f64 = list.iter().map(|i| (i.close - i.open).as_ms() * i.weight).sum();
        per_mn.insert(mn.clone(), t);
        total += t;
    }
    InstanceTime { per_mn, total }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntityLoad {
    pub carried_kbps: u64,
    pub capacity_kbps: Option<u64>,
}

impl EntityLoad {
    pub fn fraction(&self) -> Option<f64> {
        self.capacity_kbps.map(|c| self.carried_kbps as f64 / c as f64)
    }
}

/// Carried rate per AP and per AR. An AP carries a flow when it is the first
/// hop of the flow's path; an AR when it appears anywhere on the path.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadTable {
    entities: BTreeMap<NodeId, EntityLoad>,
}

impl LoadTable {
    pub fn new(topology: &NetworkTopology) -> Self {
        let mut entities = BTreeMap::new();
        for ap in topology.aps() {
            entities.insert(ap.id.clone(), EntityLoad { carried_kbps: 0, capacity_kbps: Some(rate_kbps(ap.capacity_mbps)) });
        }
        for ar in topology.ars() {
            entities.insert(ar.id.clone(), EntityLoad { carried_kbps: 0, capacity_kbps: ar.capacity_mbps.map(rate_kbps) });
        }
        LoadTable { entities }
    }

    fn carriers<'a>(topology: &'a NetworkTopology, path: &'a [NodeId]) -> impl Iterator<Item = &'a NodeId> + 'a {
        let ars: BTreeSet<&NodeId> =
            path.iter().skip(1).filter(|n| topology.node_kind(n.as_str()) == Some(NodeKind::AccessRouter)).collect();
        path.first().into_iter().chain(ars)
    }

    pub fn add_path(&mut self, topology: &NetworkTopology, path: &[NodeId], kbps: u64) {
        for n in Self::carriers(topology, path) {
            if let Some(e) = self.entities.get_mut(n) {
                e.carried_kbps += kbps;
            }
        }
    }

    pub fn remove_path(&mut self, topology: &NetworkTopology, path: &[NodeId], kbps: u64) {
        for n in Self::carriers(topology, path) {
            if let Some(e) = self.entities.get_mut(n) {
                e.carried_kbps = e.carried_kbps.checked_sub(kbps).expect("load table underflow");
            }
        }
    }

    /// Moves a flow's contribution from one path to another in one step.
    pub fn reroute(&mut self, topology: &NetworkTopology, old: &[NodeId], new: &[NodeId], kbps: u64) {
        self.remove_path(topology, old, kbps);
        self.add_path(topology, new, kbps);
    }

    pub fn get(&self, id: &str) -> Option<&EntityLoad> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = (&NodeId, &EntityLoad)> {
        self.entities.iter()
    }

    /// Total rate carried by access points.
    pub fn total_ap_kbps(&self, topology: &NetworkTopology) -> u64 {
        topology.aps().iter().map(|ap| self.entities[&ap.id].carried_kbps).sum()
    }
}

/// Load fraction of one entity; 0 for an AR with no declared capacity.
pub fn sample_load(table: &LoadTable, entity: &str) -> Result<f64, ResourceError> {
    let e = table.get(entity).ok_or_else(|| ResourceError::UnknownEntity(entity.to_owned()))?;
    Ok(e.fraction().unwrap_or(0.0))
}

/// One load trigger per entity strictly above `theta` that has no load
/// transaction open yet, in entity-id order.
pub fn overload_trigger(table: &LoadTable, theta: f64, open: &BTreeSet<NodeId>) -> Vec<Trigger> {
    table
        .entities
        .iter()
        .filter(|(id, e)| !open.contains(*id) && e.fraction().is_some_and(|f| f > theta))
        .map(|(id, _)| Trigger::Load { entity: id.clone() })
        .collect()
}
