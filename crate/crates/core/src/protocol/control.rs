use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use crate::ids::{FlowId, MnId, NodeId};
use crate::mmapp::{affected_ars, ContextSnapshot, Decision, MmRule, RuleKind, RunMode};
use crate::mobility::Trigger;
use crate::protocol::{MessageKind, MmTransaction, Phase, ProtocolConfig, ProtocolError, SignalingMessage, SizeClass, TxId};
use crate::time::Micros;
use crate::topology::NetworkTopology;

/// A message that has to be delivered at `at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub tx: TxId,
    pub msg: usize,
    pub at: Micros,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartOutcome {
    Opened { tx: TxId, deliveries: Vec<Delivery> },
    /// The MN already has a transaction open; the trigger waits for it.
    Queued,
}

/// What one delivery caused.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Progress {
    pub deliveries: Vec<Delivery>,
    /// MNs newly serialised on the transaction.
    pub locked: Vec<MnId>,
    pub handover_requests: Vec<MnId>,
    /// Set when the transaction finished with this delivery.
    pub completed: Option<Completion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub tx: TxId,
    pub released: Vec<MnId>,
    /// Triggers that were waiting on the released MNs, in arrival order.
    pub requeued: Vec<Trigger>,
}

/// World-side callbacks used while a transaction advances.
pub trait TransactionHooks {
    /// Builds the context when the parameter report reaches the controller.
    /// `busy` lists MNs held by other transactions; their flows must be left
    /// out.
    fn snapshot(&mut self, tx: &MmTransaction, busy: &BTreeSet<MnId>, now: Micros) -> ContextSnapshot;
    fn decide(&mut self, snapshot: &ContextSnapshot) -> Decision;
    fn current_path(&self, flow: &FlowId) -> Option<Vec<NodeId>>;
    /// Called once per rule when all of its messages have been delivered.
    fn apply(&mut self, tx: TxId, rule: &MmRule, now: Micros);
}

/// The controller's view of all MM transactions.
pub struct ControlPlane {
    topology: Arc<NetworkTopology>,
    config: ProtocolConfig,
    mm_node: NodeId,
    nbi_latency: Micros,
    latency_cache: BTreeMap<NodeId, Micros>,
    next_id: TxId,
    txs: BTreeMap<TxId, MmTransaction>,
    busy: BTreeMap<MnId, TxId>,
    waiting: BTreeMap<MnId, VecDeque<Trigger>>,
    mode: RunMode,
}

impl ControlPlane {
    pub fn new(topology: Arc<NetworkTopology>, mode: RunMode, config: ProtocolConfig) -> Result<Self, ProtocolError> {
        let ctrl = topology.controller().clone();
        let (mm_node, nbi_latency) = match mode {
            RunMode::Mmaas => {
                let mm = topology.mm_app().clone();
                let l = topology.control_path_latency(ctrl.as_str(), mm.as_str())?;
                (mm, l)
            }
            // the mobility entity sits next to the controller
            RunMode::LegacyCentralized => (NodeId::new(format!("{ctrl}.mme")), Micros::ZERO),
        };
        Ok(ControlPlane {
            topology,
            config,
            mm_node,
            nbi_latency,
            latency_cache: BTreeMap::new(),
            next_id: 1,
            txs: BTreeMap::new(),
            busy: BTreeMap::new(),
            waiting: BTreeMap::new(),
            mode,
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn mm_node(&self) -> &NodeId {
        &self.mm_node
    }

    pub fn is_busy(&self, mn: &MnId) -> bool {
        self.busy.contains_key(mn)
    }

    pub fn transaction(&self, id: TxId) -> Option<&MmTransaction> {
        self.txs.get(&id)
    }

    pub fn transactions(&self) -> impl Iterator<Item = &MmTransaction> {
        self.txs.values()
    }

    pub fn into_transactions(self) -> Vec<MmTransaction> {
        self.txs.into_values().collect()
    }

    /// Open load transactions by overloaded entity.
    pub fn open_load_entities(&self) -> BTreeSet<NodeId> {
        self.txs
            .values()
            .filter(|t| t.phase != Phase::Done)
            .filter_map(|t| match &t.trigger {
                Trigger::Load { entity } => Some(entity.clone()),
                _ => None,
            })
            .collect()
    }

    fn sbi_latency(&mut self, node: &NodeId) -> Result<Micros, ProtocolError> {
        if let Some(l) = self.latency_cache.get(node) {
            return Ok(*l);
        }
        let l = self.topology.control_path_latency(self.topology.controller().as_str(), node.as_str())?;
        self.latency_cache.insert(node.clone(), l);
        Ok(l)
    }

    fn latency(&mut self, a: &NodeId, b: &NodeId) -> Result<Micros, ProtocolError> {
        if *a == self.mm_node || *b == self.mm_node {
            return Ok(self.nbi_latency);
        }
        let ctrl = self.topology.controller();
        let other = if a == ctrl { b } else { a };
        self.sbi_latency(&other.clone())
    }

    fn send(
        &mut self,
        tx: TxId,
        kind: MessageKind,
        src: NodeId,
        dst: NodeId,
        sent_at: Micros,
        batch: u8,
        serves: Vec<usize>,
    ) -> Result<Delivery, ProtocolError> {
        let deliver_at = sent_at + self.latency(&src, &dst)?;
        let size = if matches!(kind, MessageKind::ParamReport | MessageKind::ContextRequest) {
            SizeClass::Bulk
        } else {
            SizeClass::Control
        };
        let t = self.txs.get_mut(&tx).ok_or(ProtocolError::UnknownTransaction(tx))?;
        t.messages.push(SignalingMessage { kind, src, dst, tx_id: tx, size, sent_at, deliver_at, batch, serves });
        Ok(Delivery { tx, msg: t.messages.len() - 1, at: deliver_at })
    }

    /// Opens a transaction and sends the parameter enquiry to `target`.
    ///
    /// Radio triggers inside one BBU domain are rejected in on-demand mode;
    /// they never reach the controller.
    pub fn start_transaction(&mut self, trigger: Trigger, target: NodeId, now: Micros) -> Result<StartOutcome, ProtocolError> {
        if let (RunMode::Mmaas, Trigger::Radio(h)) = (self.mode, &trigger) {
            if !self.topology.is_inter_domain(h.ap_from.as_str(), h.ap_to.as_str())? {
                return Err(ProtocolError::IntraDomainTrigger { from: h.ap_from.0.clone(), to: h.ap_to.0.clone() });
            }
        }
        if let Some(mn) = trigger.mn() {
            if self.busy.contains_key(mn) {
                self.waiting.entry(mn.clone()).or_default().push_back(trigger);
                return Ok(StartOutcome::Queued);
            }
        }
        let id = self.next_id;
        self.next_id += 1;
        let locked: Vec<MnId> = trigger.mn().cloned().into_iter().collect();
        for mn in &locked {
            self.busy.insert(mn.clone(), id);
        }
        self.txs.insert(
            id,
            MmTransaction {
                id,
                trigger,
                phase: Phase::Enquiry,
                target: target.clone(),
                messages: Vec::new(),
                rules_out: Vec::new(),
                deferred: Vec::new(),
                snapshot: None,
                started: now,
                completed: None,
                locked,
                batch: 0,
                outstanding: 0,
                remaining: Vec::new(),
            },
        );
        let ctrl = self.topology.controller().clone();
        let d = self.send(id, MessageKind::ParamEnquiry, ctrl, target, now, 0, vec![])?;
        self.txs.get_mut(&id).unwrap().phase = Phase::AwaitReport;
        Ok(StartOutcome::Opened { tx: id, deliveries: vec![d] })
    }

    fn access_ap(rule: &MmRule) -> Option<&NodeId> {
        match &rule.kind {
            RuleKind::PlacePlanes { dp_ap, .. } => Some(dp_ap),
            RuleKind::TransferFlow { target_ap, .. } => Some(target_ap),
            _ => rule.new_path().and_then(|p| p.first()),
        }
    }

    /// Sends one install per affected router plus, if any rule touches radio
    /// resources, one resource-allocation message to the access network.
    /// Rules that need no message take effect at once.
    fn send_batch<H: TransactionHooks>(
        &mut self,
        tx: TxId,
        batch: u8,
        sent_at: Micros,
        now: Micros,
        hooks: &mut H,
    ) -> Result<Vec<Delivery>, ProtocolError> {
        let rules = {
            let t = &self.txs[&tx];
            if batch == 0 { t.rules_out.clone() } else { t.deferred.clone() }
        };
        let mut per_ar: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        let mut radio: Vec<usize> = Vec::new();
        let mut endpoint: Option<NodeId> = None;
        let mut remaining = vec![0usize; rules.len()];
        for (i, rule) in rules.iter().enumerate() {
            if let Some(new) = rule.new_path() {
                let old = rule.flow_id().and_then(|f| hooks.current_path(f));
                for ar in affected_ars(&self.topology, old.as_deref(), new) {
                    per_ar.entry(ar).or_default().push(i);
                    remaining[i] += 1;
                }
            }
            if rule.radio_affecting {
                if endpoint.is_none() {
                    endpoint = Self::access_ap(rule).and_then(|ap| self.topology.access_endpoint(ap.as_str()).ok());
                }
                radio.push(i);
                remaining[i] += 1;
            }
        }
        let ctrl = self.topology.controller().clone();
        let mut out = Vec::new();
        for (ar, serves) in per_ar {
            out.push(self.send(tx, MessageKind::RuleInstall, ctrl.clone(), ar, sent_at, batch, serves)?);
        }
        if let (Some(ep), false) = (endpoint, radio.is_empty()) {
            out.push(self.send(tx, MessageKind::ResourceAllocRules, ctrl.clone(), ep, sent_at, batch, radio)?);
        }
        for (i, rule) in rules.iter().enumerate() {
            if remaining[i] == 0 {
                hooks.apply(tx, rule, now);
            }
        }
        let t = self.txs.get_mut(&tx).unwrap();
        t.batch = batch;
        t.outstanding = out.len();
        t.remaining = remaining;
        Ok(out)
    }

    fn finish(&mut self, tx: TxId, now: Micros) -> Completion {
        let t = self.txs.get_mut(&tx).unwrap();
        t.phase = Phase::Done;
        t.completed = Some(now);
        let released = t.locked.clone();
        let mut requeued = Vec::new();
        for mn in &released {
            self.busy.remove(mn);
            if let Some(q) = self.waiting.remove(mn) {
                requeued.extend(q);
            }
        }
        Completion { tx, released, requeued }
    }

    /// After a batch has fully arrived: schedule the deferred batch or finish.
    fn batch_done<H: TransactionHooks>(&mut self, tx: TxId, now: Micros, hooks: &mut H, p: &mut Progress) -> Result<(), ProtocolError> {
        let t = &self.txs[&tx];
        if t.batch == 0 && !t.deferred.is_empty() {
            let at = now + self.config.opt_delay;
            p.deliveries = self.send_batch(tx, 1, at, at, hooks)?;
            if !p.deliveries.is_empty() {
                return Ok(());
            }
        }
        p.completed = Some(self.finish(tx, now));
        Ok(())
    }

    /// Advances a transaction by one delivered message.
    pub fn drive_transaction<H: TransactionHooks>(
        &mut self,
        d: Delivery,
        hooks: &mut H,
    ) -> Result<Progress, ProtocolError> {
        let t = self.txs.get(&d.tx).ok_or(ProtocolError::UnknownTransaction(d.tx))?;
        let msg = t.messages.get(d.msg).ok_or(ProtocolError::UnknownTransaction(d.tx))?.clone();
        let now = d.at;
        let ctrl = self.topology.controller().clone();
        let mut p = Progress::default();
        let violation = ProtocolError::ProtocolOrderViolation { tx: d.tx, kind: msg.kind, phase: t.phase };
        match (msg.kind, t.phase) {
            (MessageKind::ParamEnquiry, Phase::AwaitReport) => {
                let target = t.target.clone();
                let at = now + self.config.ar_processing;
                p.deliveries.push(self.send(d.tx, MessageKind::ParamReport, target, ctrl, at, 0, vec![])?);
            }
            (MessageKind::ParamReport, Phase::AwaitReport) => {
                let busy: BTreeSet<MnId> =
                    self.busy.iter().filter(|(_, owner)| **owner != d.tx).map(|(mn, _)| mn.clone()).collect();
                let snapshot = hooks.snapshot(t, &busy, now);
                let owners: BTreeSet<MnId> = snapshot.flows.iter().map(|f| f.mn_id.clone()).collect();
                for mn in owners {
                    if !self.busy.contains_key(&mn) {
                        self.busy.insert(mn.clone(), d.tx);
                        p.locked.push(mn);
                    }
                }
                let t = self.txs.get_mut(&d.tx).unwrap();
                t.locked.extend(p.locked.iter().cloned());
                t.snapshot = Some(snapshot);
                t.phase = Phase::Processing;
                let at = now + self.config.controller_processing;
                let mm = self.mm_node.clone();
                p.deliveries.push(self.send(d.tx, MessageKind::ContextRequest, ctrl, mm, at, 0, vec![])?);
            }
            (MessageKind::ContextRequest, Phase::Processing) => {
                let decision = hooks.decide(t.snapshot.as_ref().expect("snapshot taken before context request"));
                p.handover_requests = decision.handover_requests;
                let t = self.txs.get_mut(&d.tx).unwrap();
                t.rules_out = decision.rules;
                t.deferred = decision.deferred;
                let at = now + self.config.app_processing;
                let mm = self.mm_node.clone();
                p.deliveries.push(self.send(d.tx, MessageKind::MmSolution, mm, ctrl, at, 0, vec![])?);
            }
            (MessageKind::MmSolution, Phase::Processing) => {
                let nothing = t.rules_out.is_empty() && t.deferred.is_empty();
                self.txs.get_mut(&d.tx).unwrap().phase = Phase::Installing;
                let at = now + self.config.controller_processing;
                let sends = if nothing {
                    Vec::new()
                } else {
                    self.send_batch(d.tx, 0, at, now, hooks)?
                };
                if sends.is_empty() {
                    self.batch_done(d.tx, now, hooks, &mut p)?;
                } else {
                    p.deliveries = sends;
                }
            }
            (MessageKind::RuleInstall | MessageKind::ResourceAllocRules, Phase::Installing) if msg.batch == t.batch => {
                let t = self.txs.get_mut(&d.tx).unwrap();
                let rules = if t.batch == 0 { t.rules_out.clone() } else { t.deferred.clone() };
                for &i in &msg.serves {
                    t.remaining[i] -= 1;
                    if t.remaining[i] == 0 {
                        hooks.apply(d.tx, &rules[i], now);
                    }
                }
                let t = self.txs.get_mut(&d.tx).unwrap();
                t.outstanding -= 1;
                if t.outstanding == 0 {
                    self.batch_done(d.tx, now, hooks, &mut p)?;
                }
            }
            _ => return Err(violation),
        }
        Ok(p)
    }
}
