//! Control-plane signaling: the event engine, the MM transaction state
//! machine driven by message deliveries, and the BBU-local handover path.

mod control;
mod engine;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use control::{ControlPlane, Delivery, Progress, StartOutcome, TransactionHooks};
pub use engine::{Engine, Event};

use crate::ids::{ApId, MnId, NodeId};
use crate::mmapp::{ContextSnapshot, MmRule};
use crate::mobility::{HandoverTrigger, Trigger};
use crate::time::Micros;
use crate::topology::{NetworkTopology, TopologyError};

pub type TxId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("event at {at} ms scheduled after the clock reached {now} ms")]
    SchedulingInPast { at: Micros, now: Micros },
    #[error("transaction {tx}: {kind:?} delivered in phase {phase:?}")]
    ProtocolOrderViolation { tx: TxId, kind: MessageKind, phase: Phase },
    #[error("unknown transaction {0}")]
    UnknownTransaction(TxId),
    #[error("radio trigger {from} -> {to} stays inside one BBU domain")]
    IntraDomainTrigger { from: String, to: String },
    #[error("{from} -> {to} crosses BBU domains")]
    NotIntraDomain { from: String, to: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    ParamEnquiry,
    ParamReport,
    ContextRequest,
    MmSolution,
    RuleInstall,
    ResourceAllocRules,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::ParamEnquiry,
        MessageKind::ParamReport,
        MessageKind::ContextRequest,
        MessageKind::MmSolution,
        MessageKind::RuleInstall,
        MessageKind::ResourceAllocRules,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::ParamEnquiry => "ParamEnquiry",
            MessageKind::ParamReport => "ParamReport",
            MessageKind::ContextRequest => "ContextRequest",
            MessageKind::MmSolution => "MMSolution",
            MessageKind::RuleInstall => "RuleInstall",
            MessageKind::ResourceAllocRules => "ResourceAllocRules",
        }
    }

    pub fn parse(s: &str) -> Option<MessageKind> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Travels between controller and MM application.
    pub fn is_northbound(self) -> bool {
        matches!(self, MessageKind::ContextRequest | MessageKind::MmSolution)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeClass {
    Control,
    /// Carries measurement or context data.
    Bulk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalingMessage {
    pub kind: MessageKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub tx_id: TxId,
    pub size: SizeClass,
    pub sent_at: Micros,
    pub deliver_at: Micros,
    /// 0 for the immediate rule batch, 1 for the deferred one.
    pub batch: u8,
    /// Indices of the batch rules this message installs.
    pub serves: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Enquiry,
    AwaitReport,
    Processing,
    Installing,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmTransaction {
    pub id: TxId,
    pub trigger: Trigger,
    pub phase: Phase,
    /// Router the parameter enquiry goes to.
    pub target: NodeId,
    pub messages: Vec<SignalingMessage>,
    pub rules_out: Vec<MmRule>,
    pub deferred: Vec<MmRule>,
    pub snapshot: Option<ContextSnapshot>,
    pub started: Micros,
    pub completed: Option<Micros>,
    /// MNs serialised on this transaction.
    pub locked: Vec<MnId>,
    batch: u8,
    outstanding: usize,
    remaining: Vec<usize>,
}

impl MmTransaction {
    pub fn duration(&self) -> Option<Micros> {
        self.completed.map(|c| c - self.started)
    }

    pub fn message_count(&self) -> usize {
        self.messages.len()
    }

    pub fn count_of(&self, kind: MessageKind) -> usize {
        self.messages.iter().filter(|m| m.kind == kind).count()
    }
}

/// Per-hop processing delays and protocol timers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub ar_processing: Micros,
    pub controller_processing: Micros,
    pub app_processing: Micros,
    pub opt_delay: Micros,
    pub local_handover: Micros,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            ar_processing: Micros(500),
            controller_processing: Micros::from_ms_int(1),
            app_processing: Micros::from_ms_int(2),
            opt_delay: Micros::from_ms_int(crate::mmapp::DEFAULT_OPT_DELAY_MS),
            local_handover: Micros::from_ms_int(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalHandoverRecord {
    pub mn_id: MnId,
    pub ap_from: ApId,
    pub ap_to: ApId,
    pub bbu: NodeId,
    pub at: Micros,
    pub latency: Micros,
}

/// Handover between two APs of one BBU domain, resolved without the
/// controller.
pub fn handle_intra_domain(
    topology: &NetworkTopology,
    trigger: &HandoverTrigger,
    latency: Micros,
    now: Micros,
) -> Result<LocalHandoverRecord, ProtocolError> {
    let from = topology.ap(trigger.ap_from.as_str())?;
    let to = topology.ap(trigger.ap_to.as_str())?;
    match (&from.bbu_domain, &to.bbu_domain) {
        (Some(a), Some(b)) if a == b => Ok(LocalHandoverRecord {
            mn_id: trigger.mn_id.clone(),
            ap_from: from.id.clone(),
            ap_to: to.id.clone(),
            bbu: a.clone(),
            at: now,
            latency,
        }),
        _ => Err(ProtocolError::NotIntraDomain { from: from.id.0.clone(), to: to.id.0.clone() }),
    }
}

#[cfg(test)]
mod tests;
