//! Shared test topologies.

use crate::topology::*;

pub fn link(a: &str, b: &str, ms: f64) -> LinkSpec {
    LinkSpec { a: a.into(), b: b.into(), latency_ms: ms, id: None }
}

pub fn ap(id: &str, kind: CellKind, pos: [f64; 2], radius: f64, ar: &str) -> ApSpec {
    ApSpec {
        id: id.into(),
        kind,
        rat: "nr".into(),
        position: pos,
        radius,
        capacity_mbps: 100.0,
        ar: ar.into(),
        preference: 0.0,
        cost: 0.0,
    }
}

/// Two small cells under two routers, each behind its own BBU.
pub fn fig3_spec() -> TopologySpec {
    TopologySpec {
        controller: "ctrl".into(),
        mm_app: "mm".into(),
        anchor_gateway: Some("gw".into()),
        egress: vec!["core".into(), "gw".into()],
        rssi_at_center: DEFAULT_RSSI_AT_CENTER,
        path_loss_slope: DEFAULT_PATH_LOSS_SLOPE,
        aps: vec![
            ap("AP1", CellKind::Small, [0.0, 0.0], 30.0, "AR1"),
            ap("AP2", CellKind::Small, [40.0, 0.0], 30.0, "AR2"),
        ],
        ars: vec![ArSpec { id: "AR1".into(), capacity_mbps: None }, ArSpec { id: "AR2".into(), capacity_mbps: None }],
        bbus: vec![
            BbuSpec { id: "BBU1".into(), aps: vec!["AP1".into()] },
            BbuSpec { id: "BBU2".into(), aps: vec!["AP2".into()] },
        ],
        cores: vec![CoreSpec { id: "core".into() }],
        links: vec![
            link("ctrl", "mm", 1.0),
            link("ctrl", "AR1", 2.0),
            link("ctrl", "AR2", 3.0),
            link("AR1", "AR2", 1.5),
            link("AR1", "core", 2.0),
            link("AR2", "core", 2.0),
            link("AR1", "gw", 5.0),
            link("AR2", "gw", 5.0),
            link("BBU1", "AR1", 0.5),
            link("BBU2", "AR2", 0.5),
        ],
    }
}

pub fn fig3() -> NetworkTopology {
    build_topology(&fig3_spec()).unwrap()
}
