use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::*;
use crate::ids::FlowId;
use crate::mmapp::{Decision, MnContext, RuleKind, RunMode};
use crate::mobility::{MobilityProfile, TriggerReason};
use crate::testkit::{self, ap};
use crate::topology::{build_topology, CellKind};

/// Records applications; decides from a fixed script.
struct Script {
    decision: Decision,
    paths: BTreeMap<FlowId, Vec<NodeId>>,
    applied: Vec<(TxId, String, Micros)>,
}

impl Script {
    fn new(decision: Decision) -> Self {
        let mut paths = BTreeMap::new();
        for f in ["f-ds", "f-dt"] {
            paths.insert(FlowId::from(f), vec!["AP1".into(), "AR1".into(), "core".into()]);
        }
        Script { decision, paths, applied: Vec::new() }
    }
}

impl TransactionHooks for Script {
    fn snapshot(&mut self, tx: &MmTransaction, _busy: &BTreeSet<MnId>, now: Micros) -> ContextSnapshot {
        ContextSnapshot {
            trigger: tx.trigger.clone(),
            taken_at: now,
            mn: Some(MnContext {
                id: "mn".into(),
                profile: MobilityProfile::Pedestrian,
                attachments: BTreeSet::new(),
                serving_ap: None,
                planes: None,
                coverage: vec![],
                prior_ars: BTreeSet::new(),
            }),
            flows: vec![],
            loads: BTreeMap::new(),
            theta: 0.8,
        }
    }
    fn decide(&mut self, _s: &ContextSnapshot) -> Decision {
        self.decision.clone()
    }
    fn current_path(&self, flow: &FlowId) -> Option<Vec<NodeId>> {
        self.paths.get(flow).cloned()
    }
    fn apply(&mut self, tx: TxId, rule: &MmRule, now: Micros) {
        if let (Some(f), Some(p)) = (rule.flow_id(), rule.new_path()) {
            self.paths.insert(f.clone(), p.to_vec());
        }
        self.applied.push((tx, rule.kind_name().to_owned(), now));
    }
}

fn trigger() -> Trigger {
    Trigger::Radio(HandoverTrigger {
        mn_id: "mn".into(),
        ap_from: "AP1".into(),
        ap_to: "AP2".into(),
        reason: TriggerReason::RadioDriven,
    })
}

fn path(ids: &[&str]) -> Vec<NodeId> {
    ids.iter().map(|i| NodeId::from(*i)).collect()
}

fn fig3_rules(radio: bool) -> Decision {
    Decision {
        rules: vec![
            MmRule::new(
                RuleKind::InstallForwarding {
                    from_ar: "AR1".into(),
                    to_ar: "AR2".into(),
                    flow_id: "f-ds".into(),
                    path: path(&["AP2", "AR2", "AR1", "core"]),
                },
                radio,
            ),
            MmRule::new(RuleKind::SwitchPath { flow_id: "f-dt".into(), new_path: path(&["AP2", "AR2", "core"]) }, radio),
        ],
        deferred: vec![],
        handover_requests: vec![],
    }
}

/// Runs every delivery to completion and returns the transaction.
fn run(cp: &mut ControlPlane, hooks: &mut Script, start: Micros) -> MmTransaction {
    let mut engine: Engine<Delivery> = Engine::new();
    let StartOutcome::Opened { tx, deliveries } = cp.start_transaction(trigger(), "AR2".into(), start).unwrap() else {
        panic!("queued")
    };
    for d in deliveries {
        engine.schedule(d.at, d).unwrap();
    }
    engine
        .run_until(Micros::from_ms_int(10_000), |eng, ev| {
            let p = cp.drive_transaction(ev.payload, hooks)?;
            for d in p.deliveries {
                eng.schedule(d.at, d)?;
            }
            Ok::<(), ProtocolError>(())
        })
        .unwrap();
    cp.transaction(tx).unwrap().clone()
}

fn plane(mode: RunMode) -> ControlPlane {
    ControlPlane::new(Arc::new(testkit::fig3()), mode, ProtocolConfig::default()).unwrap()
}

#[test]
fn enquiry_is_delivered_after_the_control_path_latency() {
    let mut cp = plane(RunMode::Mmaas);
    let t0 = Micros::from_ms_int(1000);
    let StartOutcome::Opened { deliveries, .. } = cp.start_transaction(trigger(), "AR2".into(), t0).unwrap() else {
        panic!()
    };
    assert_eq!(deliveries, vec![Delivery { tx: 1, msg: 0, at: t0 + Micros::from_ms_int(3) }]);
}

#[test]
fn radio_affecting_handover_uses_seven_messages() {
    let mut cp = plane(RunMode::Mmaas);
    let mut hooks = Script::new(fig3_rules(true));
    let tx = run(&mut cp, &mut hooks, Micros::ZERO);
    assert_eq!(tx.phase, Phase::Done);
    let kinds: Vec<_> = tx.messages.iter().map(|m| m.kind).collect();
    use MessageKind::*;
    assert_eq!(
        kinds,
        [ParamEnquiry, ParamReport, ContextRequest, MmSolution, RuleInstall, RuleInstall, ResourceAllocRules]
    );
    let rar = tx.messages.last().unwrap();
    assert_eq!(rar.dst.as_str(), "BBU2");
}

#[test]
fn transaction_latency_matches_link_arithmetic() {
    let mut cp = plane(RunMode::Mmaas);
    let mut hooks = Script::new(fig3_rules(false));
    let tx = run(&mut cp, &mut hooks, Micros::from_ms_int(500));
    assert_eq!(tx.message_count(), 6);
    // enquiry 3 + AR 0.5 + report 3 + ctrl 1 + nbi 1 + app 2 + nbi 1 + ctrl 1 + slowest install 3
    assert_eq!(tx.duration(), Some(Micros(15_500)));
    assert!(hooks.applied.iter().all(|(_, _, t)| *t == Micros(515_500)));
}

#[test]
fn empty_decision_takes_four_messages() {
    let mut cp = plane(RunMode::Mmaas);
    let mut hooks = Script::new(Decision::default());
    let tx = run(&mut cp, &mut hooks, Micros::ZERO);
    assert_eq!(tx.message_count(), 4);
    assert_eq!(tx.phase, Phase::Done);
    assert_eq!(tx.completed, Some(tx.messages[3].deliver_at));
}

#[test]
fn deferred_batch_follows_after_the_optimisation_delay() {
    let mut cp = plane(RunMode::Mmaas);
    let mut d = fig3_rules(false);
    d.rules.truncate(1);
    d.deferred.push(MmRule::new(
        RuleKind::OptimizeRoute { flow_id: "f-ds".into(), new_path: path(&["AP2", "AR2", "core"]) },
        false,
    ));
    let mut hooks = Script::new(d);
    let tx = run(&mut cp, &mut hooks, Micros::ZERO);
    let first = hooks.applied[0].2;
    let second = hooks.applied[1].2;
    assert_eq!(first, Micros(15_500));
    // 50 ms wait, then the slower of the AR1 (2 ms) and AR2 (3 ms) installs
    assert_eq!(second, first + Micros::from_ms_int(53));
    assert_eq!(tx.completed, Some(second));
    assert_eq!(tx.count_of(MessageKind::RuleInstall), 4);
}

#[test]
fn legacy_context_exchange_stays_at_the_controller() {
    let mut cp = plane(RunMode::LegacyCentralized);
    let mut hooks = Script::new(fig3_rules(false));
    let tx = run(&mut cp, &mut hooks, Micros::ZERO);
    let nbi: Vec<_> = tx.messages.iter().filter(|m| m.kind.is_northbound()).collect();
    assert!(nbi.iter().all(|m| m.deliver_at == m.sent_at));
    assert_eq!(nbi[0].dst.as_str(), "ctrl.mme");
}

#[test]
fn busy_node_queues_its_next_trigger() {
    let mut cp = plane(RunMode::Mmaas);
    cp.start_transaction(trigger(), "AR2".into(), Micros::ZERO).unwrap();
    let before: usize = cp.transactions().map(|t| t.message_count()).sum();
    assert_eq!(cp.start_transaction(trigger(), "AR2".into(), Micros(10)).unwrap(), StartOutcome::Queued);
    let after: usize = cp.transactions().map(|t| t.message_count()).sum();
    assert_eq!(before, after);
}

#[test]
fn queued_trigger_is_released_on_completion() {
    let mut cp = plane(RunMode::Mmaas);
    let mut engine: Engine<Delivery> = Engine::new();
    let mut hooks = Script::new(Decision::default());
    let StartOutcome::Opened { deliveries, .. } = cp.start_transaction(trigger(), "AR2".into(), Micros::ZERO).unwrap()
    else {
        panic!()
    };
    cp.start_transaction(trigger(), "AR2".into(), Micros(1)).unwrap();
    for d in deliveries {
        engine.schedule(d.at, d).unwrap();
    }
    let mut released = Vec::new();
    engine
        .run_until(Micros::from_ms_int(100), |eng, ev| {
            let p = cp.drive_transaction(ev.payload, &mut hooks)?;
            for d in p.deliveries {
                eng.schedule(d.at, d)?;
            }
            if let Some(c) = p.completed {
                released.extend(c.requeued);
            }
            Ok::<(), ProtocolError>(())
        })
        .unwrap();
    assert_eq!(released, vec![trigger()]);
    assert!(!cp.is_busy(&"mn".into()));
}

#[test]
fn out_of_order_delivery_is_an_assertion() {
    let mut cp = plane(RunMode::Mmaas);
    let mut hooks = Script::new(Decision::default());
    let StartOutcome::Opened { deliveries, .. } = cp.start_transaction(trigger(), "AR2".into(), Micros::ZERO).unwrap()
    else {
        panic!()
    };
    let p = cp.drive_transaction(deliveries[0], &mut hooks).unwrap();
    cp.drive_transaction(p.deliveries[0], &mut hooks).unwrap();
    let again = cp.drive_transaction(deliveries[0], &mut hooks);
    assert!(matches!(
        again,
        Err(ProtocolError::ProtocolOrderViolation { kind: MessageKind::ParamEnquiry, phase: Phase::Processing, .. })
    ));
}

fn shared_domain() -> NetworkTopology {
    let mut spec = testkit::fig3_spec();
    spec.aps.push(ap("AP3", CellKind::Small, [20.0, 0.0], 30.0, "AR1"));
    spec.bbus[0].aps.push("AP3".into());
    build_topology(&spec).unwrap()
}

fn handover(from: &str, to: &str) -> HandoverTrigger {
    HandoverTrigger { mn_id: "mn".into(), ap_from: from.into(), ap_to: to.into(), reason: TriggerReason::RadioDriven }
}

#[test]
fn same_domain_handover_is_local() {
    let t = shared_domain();
    let r = handle_intra_domain(&t, &handover("AP1", "AP3"), Micros::from_ms_int(2), Micros::ZERO).unwrap();
    assert_eq!(r.bbu.as_str(), "BBU1");
    assert_eq!(r.latency, Micros::from_ms_int(2));
    assert!(matches!(
        handle_intra_domain(&t, &handover("AP1", "AP2"), Micros::from_ms_int(2), Micros::ZERO),
        Err(ProtocolError::NotIntraDomain { .. })
    ));
}

#[test]
fn controller_refuses_local_handovers() {
    let mut cp = ControlPlane::new(Arc::new(shared_domain()), RunMode::Mmaas, ProtocolConfig::default()).unwrap();
    let t = Trigger::Radio(handover("AP1", "AP3"));
    assert!(matches!(
        cp.start_transaction(t, "AR1".into(), Micros::ZERO),
        Err(ProtocolError::IntraDomainTrigger { .. })
    ));
}
