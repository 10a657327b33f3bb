//! Independent oracles. Nothing here calls into the simulator's routing,
//! scoring or aggregation code; they work from scenario text and raw logs.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mmaas::harness::{RunLogs, Scenario};
use mmaas::resources::rate_kbps;
use mmaas::topology::TopologySpec;

/// Undirected link table, keeping the cheapest of parallel links.
pub fn link_table(spec: &TopologySpec) -> BTreeMap<(String, String), f64> {
    let mut m: BTreeMap<(String, String), f64> = BTreeMap::new();
    for l in &spec.links {
        for key in [(l.a.clone(), l.b.clone()), (l.b.clone(), l.a.clone())] {
            let e = m.entry(key).or_insert(f64::INFINITY);
            *e = e.min(l.latency_ms);
        }
    }
    m
}

/// All-pairs latency over every link (Floyd-Warshall).
pub fn all_pairs(spec: &TopologySpec) -> BTreeMap<(String, String), f64> {
    let links = link_table(spec);
    let nodes: BTreeSet<String> = links.keys().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
    let nodes: Vec<String> = nodes.into_iter().collect();
    let mut d: BTreeMap<(String, String), f64> = BTreeMap::new();
    for a in &nodes {
        for b in &nodes {
            let v = if a == b { 0.0 } else { links.get(&(a.clone(), b.clone())).copied().unwrap_or(f64::INFINITY) };
            d.insert((a.clone(), b.clone()), v);
        }
    }
    for k in &nodes {
        for i in &nodes {
            for j in &nodes {
                let via = d[&(i.clone(), k.clone())] + d[&(k.clone(), j.clone())];
                if via < d[&(i.clone(), j.clone())] {
                    d.insert((i.clone(), j.clone()), via);
                }
            }
        }
    }
    d
}

pub fn routers(spec: &TopologySpec) -> BTreeSet<String> {
    let mut r: BTreeSet<String> = spec.ars.iter().map(|a| a.id.clone()).collect();
    r.extend(spec.cores.iter().map(|c| c.id.clone()));
    r.extend(spec.anchor_gateway.clone());
    r
}

pub fn egress(spec: &TopologySpec) -> BTreeSet<String> {
    if spec.egress.is_empty() {
        spec.anchor_gateway.iter().cloned().collect()
    } else {
        spec.egress.iter().cloned().collect()
    }
}

/// Minimum latency over every simple router path from `from` to a target,
/// by exhaustive enumeration.
pub fn brute_force_min(spec: &TopologySpec, from: &str, targets: &BTreeSet<String>) -> Option<f64> {
    let links = link_table(spec);
    let routers = routers(spec);
    let mut best: Option<f64> = None;
    let mut stack = vec![(vec![from.to_owned()], 0.0)];
    while let Some((path, cost)) = stack.pop() {
        let here = path.last().unwrap();
        if targets.contains(here) {
            best = Some(best.map_or(cost, |b: f64| b.min(cost)));
            continue;
        }
        for ((a, b), l) in &links {
            if a == here && routers.contains(b) && !path.contains(b) {
                let mut p = path.clone();
                p.push(b.clone());
                stack.push((p, cost + l));
            }
        }
    }
    best
}

/// Latency of a data path written as node ids; a leading AP is free.
pub fn walk_latency(spec: &TopologySpec, path: &[String]) -> Option<f64> {
    let links = link_table(spec);
    let aps: BTreeSet<&str> = spec.aps.iter().map(|a| a.id.as_str()).collect();
    let skip = usize::from(path.first().is_some_and(|p| aps.contains(p.as_str())));
    let mut total = 0.0;
    for w in path[skip..].windows(2) {
        total += links.get(&(w[0].clone(), w[1].clone()))?;
    }
    Some(total)
}

pub fn split(path: &str) -> Vec<String> {
    if path.is_empty() {
        Vec::new()
    } else {
        path.split('>').map(str::to_owned).collect()
    }
}

/// (previous hop, next hop) entries each router holds for one path.
fn entries(path: &[String], ars: &BTreeSet<String>) -> BTreeMap<String, BTreeSet<(String, Option<String>)>> {
    let mut m: BTreeMap<String, BTreeSet<(String, Option<String>)>> = BTreeMap::new();
    for (i, n) in path.iter().enumerate() {
        if ars.contains(n) && i > 0 {
            m.entry(n.clone()).or_default().insert((path[i - 1].clone(), path.get(i + 1).cloned()));
        }
    }
    m
}

/// Routers whose forwarding entries differ between two paths.
pub fn changed_routers(old: &[String], new: &[String], ars: &BTreeSet<String>) -> BTreeSet<String> {
    let (a, b) = (entries(old, ars), entries(new, ars));
    ars.iter().filter(|r| a.get(*r) != b.get(*r)).cloned().collect()
}

/// Expected message count of each single-batch transaction, rebuilt from the
/// rule and path logs: four exchange messages, one install per router whose
/// entries change, one radio message if any rule reaches a cell outside a
/// BBU pool or moves planes or flows between cells.
pub fn expected_messages(spec: &TopologySpec, logs: &RunLogs) -> BTreeMap<u64, usize> {
    let ars: BTreeSet<String> = spec.ars.iter().map(|a| a.id.clone()).collect();
    let pooled: BTreeSet<&str> = spec.bbus.iter().flat_map(|b| b.aps.iter().map(String::as_str)).collect();
    let mut last_path: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut routers: BTreeMap<u64, BTreeSet<String>> = BTreeMap::new();
    let mut radio: BTreeMap<u64, bool> = BTreeMap::new();
    for t in &logs.transactions {
        routers.insert(t.tx_id, BTreeSet::new());
        radio.insert(t.tx_id, false);
    }
    for row in &logs.paths {
        let new = split(&row.path);
        if row.tx_id != 0 {
            let old = last_path.get(&row.flow_id).cloned();
            let changed = match &old {
                Some(o) => changed_routers(o, &new, &ars),
                None => changed_routers(&[], &new, &ars),
            };
            routers.get_mut(&row.tx_id).unwrap().extend(changed);
            let moves_cell = matches!(row.cause.as_str(), "TransferFlow");
            let outside_pool = new.first().is_some_and(|ap| !pooled.contains(ap.as_str()));
            if moves_cell || outside_pool {
                radio.insert(row.tx_id, true);
            }
        }
        last_path.insert(row.flow_id.clone(), new);
    }
    for r in &logs.rules {
        if r.rule_kind == "PlacePlanes" {
            radio.insert(r.tx_id, true);
        }
    }
    routers.into_iter().map(|(tx, set)| (tx, 4 + set.len() + usize::from(radio[&tx]))).collect()
}

/// Delivered messages per transaction, counted from the message log.
pub fn delivered(logs: &RunLogs) -> BTreeMap<u64, usize> {
    let mut m = BTreeMap::new();
    for row in &logs.messages {
        *m.entry(row.tx_id).or_insert(0) += 1;
    }
    m
}

/// Instants at which the per-cell load in the load log disagrees with the
/// flow paths in the path log. A sample at `t` sees path changes made
/// strictly before `t`, plus the paths set up before the run starts.
pub fn conservation_breaks(scenario: &Scenario, logs: &RunLogs) -> Vec<String> {
    let rate: BTreeMap<String, u64> = scenario.flows.iter().map(|f| (f.id.clone(), rate_kbps(f.rate_mbps))).collect();
    let cap: BTreeMap<String, u64> =
        scenario.topology_spec.aps.iter().map(|a| (a.id.clone(), rate_kbps(a.capacity_mbps))).collect();
    let ms = |s: &str| s.parse::<f64>().unwrap();
    let mut by_time: BTreeMap<String, Vec<(&String, f64)>> = BTreeMap::new();
    for row in &logs.load {
        if cap.contains_key(&row.entity_id) {
            by_time.entry(row.time_ms.clone()).or_default().push((&row.entity_id, row.load_fraction));
        }
    }
    let mut breaks = Vec::new();
    for (t, rows) in by_time {
        let now = ms(&t);
        let mut current: BTreeMap<&str, &str> = BTreeMap::new();
        for p in logs.paths.iter().filter(|p| ms(&p.time_ms) < now || (p.tx_id == 0 && p.cause == "initial")) {
            current.insert(&p.flow_id, &p.path);
        }
        let mut served: BTreeMap<String, u64> = BTreeMap::new();
        let mut total_active = 0;
        for (flow, path) in &current {
            if let Some(ap) = split(path).first() {
                *served.entry(ap.clone()).or_default() += rate[*flow];
                total_active += rate[*flow];
            }
        }
        let mut total_served = 0;
        for (ap, frac) in rows {
            let expect = served.get(ap).copied().unwrap_or(0) as f64 / cap[ap] as f64;
            total_served += (frac * cap[ap] as f64).round() as u64;
            if frac != expect {
                breaks.push(format!("{t} ms: {ap} logged {frac}, paths give {expect}"));
            }
        }
        if total_served != total_active {
            breaks.push(format!("{t} ms: cells serve {total_served} kbps, active flows sum to {total_active}"));
        }
    }
    breaks
}

/// Whether every non-empty path in the path log passes through `node`.
pub fn all_paths_contain(logs: &RunLogs, node: &str) -> bool {
    logs.paths.iter().filter(|p| p.cause != "closed" && !p.path.is_empty()).all(|p| split(&p.path).iter().any(|n| n == node))
}
