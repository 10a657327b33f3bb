use super::*;
use crate::mobility::HandoverTrigger;
use crate::mobility::TriggerReason;
use crate::resources::LoadTable;
use crate::testkit::{self, ap, link};
use crate::topology::{build_topology, ArSpec, TopologySpec};

fn p(ids: &[&str]) -> Vec<NodeId> {
    ids.iter().map(|i| NodeId::from(*i)).collect()
}

fn app(t: NetworkTopology, mode: RunMode) -> MmApp {
    MmApp::new(Arc::new(t), mode, MmAppConfig::default())
}

fn flow(id: &str, class: DelayClass, kbps: u64, path: &[&str], attachments: &[&str]) -> FlowContext {
    FlowContext {
        id: id.into(),
        mn_id: "mn".into(),
        delay_class: class,
        rate_kbps: kbps,
        state: FlowState::Active,
        path: p(path),
        owner_attachments: attachments.iter().map(|a| NodeId::from(*a)).collect(),
    }
}

fn view(ap: &str, rssi: f64, kind: CellKind) -> CandidateView {
    CandidateView { ap: ap.into(), rssi, kind }
}

fn loads_of(t: &NetworkTopology, flows: &[FlowContext]) -> BTreeMap<NodeId, EntityLoad> {
    let mut table = LoadTable::new(t);
    for f in flows {
        table.add_path(t, &f.path, f.rate_kbps);
    }
    table.entities().map(|(k, v)| (k.clone(), *v)).collect()
}

/// The MN has just moved from AP1 (under AR1) to AP2 (under AR2).
fn fig3_snapshot(t: &NetworkTopology) -> ContextSnapshot {
    let flows = vec![
        flow("f-ds", DelayClass::DelaySensitive, 2000, &["AP1", "AR1", "core"], &["AP2"]),
        flow("f-dt", DelayClass::DelayTolerant, 5000, &["AP1", "AR1", "core"], &["AP2"]),
    ];
    ContextSnapshot {
        trigger: Trigger::Radio(HandoverTrigger {
            mn_id: "mn".into(),
            ap_from: "AP1".into(),
            ap_to: "AP2".into(),
            reason: TriggerReason::RadioDriven,
        }),
        taken_at: Micros::from_ms_int(1000),
        mn: Some(MnContext {
            id: "mn".into(),
            profile: MobilityProfile::Pedestrian,
            attachments: ["AP2".into()].into(),
            serving_ap: Some("AP2".into()),
            planes: Some(Planes { cp: "AP2".into(), dp: "AP2".into() }),
            coverage: vec![view("AP2", -10.0, CellKind::Small)],
            prior_ars: ["AR1".into()].into(),
        }),
        loads: loads_of(t, &flows),
        flows,
        theta: 0.8,
    }
}

#[test]
fn fig3_snapshot_forwards_sensitive_and_switches_tolerant() {
    let t = testkit::fig3();
    let snap = fig3_snapshot(&t);
    let d = app(t, RunMode::Mmaas).decide(&snap);
    assert_eq!(
        d.rules,
        vec![
            MmRule::new(
                RuleKind::InstallForwarding {
                    from_ar: "AR1".into(),
                    to_ar: "AR2".into(),
                    flow_id: "f-ds".into(),
                    path: p(&["AP2", "AR2", "AR1", "core"]),
                },
                false
            ),
            MmRule::new(RuleKind::SwitchPath { flow_id: "f-dt".into(), new_path: p(&["AP2", "AR2", "core"]) }, false),
        ]
    );
    assert_eq!(
        d.deferred,
        vec![MmRule::new(RuleKind::OptimizeRoute { flow_id: "f-ds".into(), new_path: p(&["AP2", "AR2", "core"]) }, false)]
    );
    assert!(d.handover_requests.is_empty());
}

#[test]
fn optimised_route_drops_the_old_anchor() {
    let t = testkit::fig3();
    let snap = fig3_snapshot(&t);
    let a = app(t, RunMode::Mmaas);
    let tr = a.flow_treatment(&snap.flows[0], &"AR1".into(), &"AR2".into(), &"AP2".into()).unwrap();
    let opt = tr.follow_up.unwrap();
    assert!(!opt.new_path().unwrap().contains(&"AR1".into()));
    let detour = tr.immediate.new_path().unwrap().to_vec();
    let topo = a.topology();
    assert!(topo.path_latency(opt.new_path().unwrap()).unwrap() <= topo.path_latency(&detour).unwrap());
}

#[test]
fn tolerant_flow_gets_one_switch() {
    let t = testkit::fig3();
    let snap = fig3_snapshot(&t);
    let tr = app(t, RunMode::Mmaas).flow_treatment(&snap.flows[1], &"AR1".into(), &"AR2".into(), &"AP2".into()).unwrap();
    assert_eq!(tr.immediate.kind_name(), "SwitchPath");
    assert!(tr.follow_up.is_none());
}

#[test]
fn inactive_flow_is_rejected() {
    let t = testkit::fig3();
    let mut snap = fig3_snapshot(&t);
    snap.flows[0].state = FlowState::Pending;
    let r = app(t, RunMode::Mmaas).flow_treatment(&snap.flows[0], &"AR1".into(), &"AR2".into(), &"AP2".into());
    assert_eq!(r, Err(MmAppError::FlowNotActive("f-ds".into())));
}

#[test]
fn same_router_move_emits_nothing() {
    let mut spec = testkit::fig3_spec();
    spec.aps[1].ar = "AR1".into();
    spec.aps.push(ap("AP3", CellKind::Small, [90.0, 0.0], 30.0, "AR2"));
    let t = build_topology(&spec).unwrap();
    let snap = fig3_snapshot(&t);
    assert!(app(t, RunMode::Mmaas).decide(&snap).rules.is_empty());
}

#[test]
fn decide_is_pure() {
    let t = testkit::fig3();
    let snap = fig3_snapshot(&t);
    let a = app(t, RunMode::Mmaas);
    assert_eq!(a.decide(&snap), a.decide(&snap.clone()));
}

#[test]
fn changed_planes_come_first() {
    let t = testkit::fig3();
    let mut snap = fig3_snapshot(&t);
    snap.mn.as_mut().unwrap().planes = Some(Planes { cp: "AP1".into(), dp: "AP1".into() });
    let d = app(t, RunMode::Mmaas).decide(&snap);
    assert_eq!(d.rules[0].kind_name(), "PlacePlanes");
    assert_eq!(d.rules.len(), 3);
}

#[test]
fn legacy_switches_every_flow_through_the_gateway() {
    let t = testkit::fig3();
    let snap = fig3_snapshot(&t);
    let d = app(t, RunMode::LegacyCentralized).decide(&snap);
    assert_eq!(d.rules.len(), 2);
    for r in &d.rules {
        assert_eq!(r.kind_name(), "SwitchPath");
        assert!(r.radio_affecting);
        assert_eq!(r.new_path().unwrap(), p(&["AP2", "AR2", "gw"]).as_slice());
    }
    assert!(d.deferred.is_empty());
}

#[test]
fn new_flow_after_move_is_anchored_at_the_new_router() {
    let t = testkit::fig3();
    let a = app(t, RunMode::Mmaas);
    let mut f = flow("f-new", DelayClass::DelaySensitive, 1000, &[], &["AP2"]);
    f.state = FlowState::Pending;
    let r = a.admit_new_flow(&f, Some(&"AP2".into()), &["AR1".into()].into()).unwrap();
    let RuleKind::AdmitFlow { anchor_ar, path, .. } = &r.kind else { panic!("{r:?}") };
    assert_eq!(anchor_ar.as_str(), "AR2");
    assert!(!path.contains(&"AR1".into()));
    assert_eq!(path, &p(&["AP2", "AR2", "core"]));
}

#[test]
fn first_flow_is_anchored_where_the_node_is() {
    let a = app(testkit::fig3(), RunMode::Mmaas);
    let f = flow("f", DelayClass::DelayTolerant, 1000, &[], &["AP1"]);
    let r = a.admit_new_flow(&f, Some(&"AP1".into()), &BTreeSet::new()).unwrap();
    assert!(matches!(&r.kind, RuleKind::AdmitFlow { anchor_ar, .. } if anchor_ar.as_str() == "AR1"));
    assert_eq!(a.admit_new_flow(&f, None, &BTreeSet::new()), Err(MmAppError::NoAttachment("mn".into())));
}

#[test]
fn legacy_admission_goes_through_the_anchor() {
    let a = app(testkit::fig3(), RunMode::LegacyCentralized);
    let f = flow("f", DelayClass::DelayTolerant, 1000, &[], &["AP2"]);
    let r = a.admit_new_flow(&f, Some(&"AP2".into()), &BTreeSet::new()).unwrap();
    assert_eq!(r.new_path().unwrap().last().unwrap().as_str(), "gw");
}

#[test]
fn high_speed_uses_macro_for_both_planes() {
    let cov = [view("m", -20.0, CellKind::Macro), view("s", -5.0, CellKind::Small)];
    let r = place_planes(&"mn".into(), MobilityProfile::HighSpeed, &cov).unwrap();
    assert_eq!(r.kind, RuleKind::PlacePlanes { mn_id: "mn".into(), cp_ap: "m".into(), dp_ap: "m".into() });
}

#[test]
fn pedestrian_splits_planes() {
    let cov = [view("m", -20.0, CellKind::Macro), view("s", -5.0, CellKind::Small), view("s2", -9.0, CellKind::Small)];
    let r = place_planes(&"mn".into(), MobilityProfile::Pedestrian, &cov).unwrap();
    assert_eq!(r.kind, RuleKind::PlacePlanes { mn_id: "mn".into(), cp_ap: "m".into(), dp_ap: "s".into() });
    let only_small = [view("s", -5.0, CellKind::Small)];
    let r = place_planes(&"mn".into(), MobilityProfile::Pedestrian, &only_small).unwrap();
    assert_eq!(r.kind, RuleKind::PlacePlanes { mn_id: "mn".into(), cp_ap: "s".into(), dp_ap: "s".into() });
}

#[test]
fn vehicular_falls_back_to_best_available() {
    let cov = [view("s1", -8.0, CellKind::Small), view("s2", -5.0, CellKind::Small)];
    let planes = plan_planes(PlacementPolicy::Profile, MobilityProfile::Vehicular, &cov).unwrap();
    assert_eq!(planes, Planes { cp: "s2".into(), dp: "s2".into() });
}

#[test]
fn static_gets_no_planes() {
    let cov = [view("m", -20.0, CellKind::Macro)];
    assert!(place_planes(&"mn".into(), MobilityProfile::Static, &cov).is_none());
    assert!(place_planes(&"mn".into(), MobilityProfile::Pedestrian, &[]).is_none());
}

#[test]
fn forced_small_cells_override_profile() {
    let cov = [view("m", -2.0, CellKind::Macro), view("s", -5.0, CellKind::Small)];
    let planes = plan_planes(PlacementPolicy::SmallCells, MobilityProfile::HighSpeed, &cov).unwrap();
    assert_eq!(planes.dp.as_str(), "s");
}

fn triangle() -> NetworkTopology {
    build_topology(&TopologySpec {
        controller: "ctrl".into(),
        mm_app: "mm".into(),
        anchor_gateway: Some("gw".into()),
        egress: vec![],
        rssi_at_center: 0.0,
        path_loss_slope: 30.0,
        aps: vec![ap("AP1", CellKind::Small, [0.0, 0.0], 50.0, "AR1"), ap("AP2", CellKind::Small, [80.0, 0.0], 50.0, "AR2")],
        ars: vec![ArSpec { id: "AR1".into(), capacity_mbps: None }, ArSpec { id: "AR2".into(), capacity_mbps: None }],
        bbus: vec![],
        cores: vec![],
        links: vec![
            link("ctrl", "mm", 1.0),
            link("ctrl", "AR1", 1.0),
            link("ctrl", "AR2", 1.0),
            link("AR1", "AR2", 5.0),
            link("AR1", "gw", 4.0),
            link("AR2", "gw", 4.0),
        ],
    })
    .unwrap()
}

#[test]
fn direct_route_beats_the_detour() {
    let a = app(triangle(), RunMode::Mmaas);
    let f = flow("f", DelayClass::DelaySensitive, 1000, &["AP1", "AR1", "gw"], &["AP2"]);
    let route = a.optimize_route(&f, &"AP2".into()).unwrap();
    assert_eq!(route, p(&["AP2", "AR2", "gw"]));
    assert_eq!(a.topology().path_latency(&route), Some(Micros::from_ms_int(4)));
    assert_eq!(a.topology().path_latency(&p(&["AP2", "AR2", "AR1", "gw"])), Some(Micros::from_ms_int(9)));
}

#[test]
fn one_hop_route() {
    let a = app(triangle(), RunMode::Mmaas);
    let f = flow("f", DelayClass::DelaySensitive, 1000, &["AP1", "AR1", "gw"], &["AP1"]);
    assert_eq!(a.optimize_route(&f, &"AP1".into()).unwrap(), p(&["AP1", "AR1", "gw"]));
}

/// Two APs with 10 Mbit/s each under one router.
fn two_ap() -> NetworkTopology {
    let mut a = ap("A", CellKind::Small, [0.0, 0.0], 50.0, "AR1");
    let mut b = ap("B", CellKind::Small, [30.0, 0.0], 50.0, "AR1");
    a.capacity_mbps = 10.0;
    b.capacity_mbps = 10.0;
    build_topology(&TopologySpec {
        controller: "ctrl".into(),
        mm_app: "mm".into(),
        anchor_gateway: Some("gw".into()),
        egress: vec![],
        rssi_at_center: 0.0,
        path_loss_slope: 30.0,
        aps: vec![a, b],
        ars: vec![ArSpec { id: "AR1".into(), capacity_mbps: None }],
        bbus: vec![],
        cores: vec![],
        links: vec![link("ctrl", "mm", 1.0), link("ctrl", "AR1", 1.0), link("AR1", "gw", 1.0)],
    })
    .unwrap()
}

fn load_snapshot(t: &NetworkTopology, flows: Vec<FlowContext>, theta: f64) -> ContextSnapshot {
    ContextSnapshot {
        trigger: Trigger::Load { entity: "A".into() },
        taken_at: Micros::ZERO,
        mn: None,
        loads: loads_of(t, &flows),
        flows,
        theta,
    }
}

#[test]
fn light_load_needs_no_transfer() {
    let t = two_ap();
    let snap = load_snapshot(&t, vec![flow("f", DelayClass::DelayTolerant, 5000, &["A", "AR1", "gw"], &["A", "B"])], 0.8);
    assert!(app(t, RunMode::Mmaas).rebalance(&snap, 0.8).transfers.is_empty());
}

#[test]
fn tolerant_flow_moves_first_then_smallest_sensitive() {
    let t = two_ap();
    let both = ["A", "B"];
    let flows = vec![
        flow("fa", DelayClass::DelaySensitive, 4000, &["A", "AR1", "gw"], &both),
        flow("fb", DelayClass::DelayTolerant, 3000, &["A", "AR1", "gw"], &both),
        flow("fc", DelayClass::DelaySensitive, 2000, &["A", "AR1", "gw"], &both),
    ];
    let snap = load_snapshot(&t, flows, 0.5);
    let r = app(t, RunMode::Mmaas).rebalance(&snap, 0.5);
    let moved: Vec<_> = r.transfers.iter().map(|x| x.subject()).collect();
    assert_eq!(moved, ["fb", "fc"]);
    for rule in &r.transfers {
        let RuleKind::TransferFlow { target_ap, new_path, .. } = &rule.kind else { panic!() };
        assert_eq!(target_ap.as_str(), "B");
        assert_eq!(new_path, &p(&["B", "AR1", "gw"]));
        assert!(rule.radio_affecting);
    }
}

#[test]
fn single_attached_node_is_asked_to_hand_over() {
    let t = two_ap();
    let flows = vec![
        flow("f1", DelayClass::DelaySensitive, 5000, &["A", "AR1", "gw"], &["A"]),
        flow("f2", DelayClass::DelaySensitive, 5000, &["A", "AR1", "gw"], &["A"]),
    ];
    let snap = load_snapshot(&t, flows, 0.5);
    let r = app(t, RunMode::Mmaas).rebalance(&snap, 0.5);
    assert!(r.transfers.is_empty());
    assert_eq!(r.handover_requests, vec![MnId::from("mn")]);
}

#[test]
fn overloaded_snapshot_decides_transfers() {
    let t = two_ap();
    let flows = vec![flow("f", DelayClass::DelayTolerant, 9000, &["A", "AR1", "gw"], &["A", "B"])];
    let snap = load_snapshot(&t, flows, 0.8);
    let d = app(t, RunMode::Mmaas).decide(&snap);
    assert_eq!(d.rules.len(), 1);
    assert_eq!(d.rules[0].kind_name(), "TransferFlow");
}

#[test]
fn affected_routers_of_each_rule_shape() {
    let t = testkit::fig3();
    let old = p(&["AP1", "AR1", "core"]);
    let detour = p(&["AP2", "AR2", "AR1", "core"]);
    let direct = p(&["AP2", "AR2", "core"]);
    let both: BTreeSet<NodeId> = ["AR1".into(), "AR2".into()].into();
    assert_eq!(affected_ars(&t, Some(&old), &detour), both);
    assert_eq!(affected_ars(&t, Some(&old), &direct), both);
    assert_eq!(affected_ars(&t, Some(&detour), &direct), both);
    assert_eq!(affected_ars(&t, None, &direct), ["AR2".into()].into());
    assert!(affected_ars(&t, Some(&direct), &direct).is_empty());
}

#[test]
fn rule_log_fields() {
    let r = MmRule::new(RuleKind::SwitchPath { flow_id: "f".into(), new_path: p(&["AP2", "AR2", "core"]) }, true);
    assert_eq!(r.subject(), "f");
    assert_eq!(r.detail(), "path=AP2>AR2>core;radio=1");
}
