//! Scenario texts shared by the examples, the CLI tests and the acceptance
//! suite. Each generator returns TOML that `parse_scenario_str` accepts.

use std::fmt::Write as _;

use crate::harness::scenario::{parse_scenario_str, Scenario};

/// The bundled two-router walk.
pub const FIG3: &str = include_str!("../../scenarios/fig3.scenario");

pub fn fig3() -> Scenario {
    let mut s = parse_scenario_str(FIG3).expect("bundled scenario is valid");
    s.name = "fig3".into();
    s
}

pub fn parse(text: &str) -> Scenario {
    parse_scenario_str(text).expect("fixture is valid")
}

struct Net {
    out: String,
    links: Vec<(String, String, f64)>,
}

impl Net {
    /// Controller, MM app, gateway and one core node; routers are linked to
    /// all of them.
    fn new(name: &str, ars: &[&str]) -> Self {
        let mut out = format!("name = \"{name}\"\n\n[topology]\ncontroller = \"ctrl\"\nmm_app = \"mm\"\n");
        out.push_str("anchor_gateway = \"gw\"\negress = [\"core\", \"gw\"]\ncore = [{ id = \"core\" }]\n");
        let ar_list: Vec<String> = ars.iter().map(|a| format!("{{ id = \"{a}\" }}")).collect();
        writeln!(out, "ar = [{}]", ar_list.join(", ")).unwrap();
        let mut links = vec![("ctrl".to_owned(), "mm".to_owned(), 1.0)];
        for (i, a) in ars.iter().enumerate() {
            links.push(("ctrl".into(), a.to_string(), 2.0 + i as f64));
            links.push((a.to_string(), "core".into(), 2.0));
            links.push((a.to_string(), "gw".into(), 5.0));
        }
        for w in ars.windows(2) {
            links.push((w[0].to_string(), w[1].to_string(), 1.5));
        }
        out.push_str("ap = [\n");
        Net { out, links }
    }

    fn ap(&mut self, id: &str, kind: &str, x: f64, y: f64, radius: f64, capacity: f64, ar: &str) {
        writeln!(
            self.out,
            "  {{ id = \"{id}\", kind = \"{kind}\", position = [{x:?}, {y:?}], radius = {radius:?}, capacity_mbps = {capacity:?}, ar = \"{ar}\" }},"
        )
        .unwrap();
    }

    /// Closes the AP list; each pool is `(id, router, aps)`.
    fn bbus(mut self, bbus: &[(&str, &str, Vec<String>)]) -> String {
        self.out.push_str("]\n");
        if !bbus.is_empty() {
            self.out.push_str("bbu = [\n");
            for (id, ar, aps) in bbus {
                let list: Vec<String> = aps.iter().map(|a| format!("\"{a}\"")).collect();
                writeln!(self.out, "  {{ id = \"{id}\", aps = [{}] }},", list.join(", ")).unwrap();
                self.links.push((id.to_string(), ar.to_string(), 0.5));
            }
            self.out.push_str("]\n");
        }
        self.out.push_str("link = [\n");
        for (a, b, l) in &self.links {
            writeln!(self.out, "  {{ a = \"{a}\", b = \"{b}\", latency_ms = {l:?} }},").unwrap();
        }
        self.out.push_str("]\n");
        self.out.push('\n');
        self.out
    }
}

fn flow(out: &mut String, id: &str, mn: &str, class: &str, rate: f64) {
    writeln!(out, "[[flows]]\nid = \"{id}\"\nmn = \"{mn}\"\nclass = \"{class}\"\nrate_mbps = {rate:?}\n").unwrap();
}

/// A vehicle oscillating between two macro cells, making `handovers` radio
/// handovers. With `cross_domain` the cells sit behind different routers
/// and BBU pools; otherwise they share one pool.
pub fn oscillation(handovers: usize, cross_domain: bool) -> String {
    let ars: &[&str] = if cross_domain { &["AR1", "AR2"] } else { &["AR1"] };
    let mut net = Net::new(if cross_domain { "oscillation-cross" } else { "oscillation-intra" }, ars);
    let second_ar = if cross_domain { "AR2" } else { "AR1" };
    net.ap("C1", "macro", 0.0, 0.0, 80.0, 1000.0, "AR1");
    net.ap("C2", "macro", 100.0, 0.0, 80.0, 1000.0, second_ar);
    let bbus = if cross_domain {
        vec![("BBU1", "AR1", vec!["C1".to_owned()]), ("BBU2", "AR2", vec!["C2".to_owned()])]
    } else {
        vec![("BBU1", "AR1", vec!["C1".to_owned(), "C2".to_owned()])]
    };
    let mut out = net.bbus(&bbus);
    let wps: Vec<&str> = (0..handovers).map(|i| if i % 2 == 0 { "[90.0, 0.0]" } else { "[10.0, 0.0]" }).collect();
    writeln!(out, "[[nodes]]\nid = \"car\"\nspeed_kmh = 100.0\nposition = [10.0, 0.0]\nwaypoints = [{}]\n", wps.join(", "))
        .unwrap();
    flow(&mut out, "bulk", "car", "delay_tolerant", 4.0);
    flow(&mut out, "sync", "car", "delay_tolerant", 1.0);
    // each 80 m leg takes 2.88 s at 100 km/h
    let horizon = (handovers as f64 * 2880.0 + 2000.0).ceil();
    writeln!(out, "[params]\nhorizon_ms = {horizon:?}").unwrap();
    out
}

/// Static sensors around one cell plus pedestrians that each cross one
/// router boundary.
pub fn sensors(sensors: usize, pedestrians: usize) -> String {
    let mut net = Net::new("sensors", &["AR1", "AR2"]);
    net.ap("S1", "small", 0.0, 0.0, 30.0, 1000.0, "AR1");
    net.ap("S2", "small", 40.0, 0.0, 30.0, 1000.0, "AR2");
    let mut out = net.bbus(&[("BBU1", "AR1", vec!["S1".to_owned()]), ("BBU2", "AR2", vec!["S2".to_owned()])]);
    for i in 0..sensors {
        let x = -20.0 + 0.8 * (i % 50) as f64;
        let y = 10.0 - 0.5 * (i / 50) as f64;
        writeln!(out, "[[nodes]]\nid = \"sensor{i:02}\"\ndevice = \"sensor\"\nposition = [{x:?}, {y:?}]\n").unwrap();
        flow(&mut out, &format!("telemetry{i:02}"), &format!("sensor{i:02}"), "delay_tolerant", 0.01);
    }
    for i in 0..pedestrians {
        let y = -2.0 * i as f64;
        writeln!(
            out,
            "[[nodes]]\nid = \"walker{i}\"\nspeed_kmh = 2.9\nposition = [10.0, {y:?}]\nwaypoints = [[40.0, {y:?}]]\n"
        )
        .unwrap();
        flow(&mut out, &format!("browse{i}"), &format!("walker{i}"), "delay_tolerant", 1.0);
    }
    out.push_str("[params]\nhorizon_ms = 60000.0\n");
    out
}

/// A 10 km straight line covered by macro cells of 2 km diameter over small
/// cells of 200 m diameter, every cell on its own legacy RAN site. A train
/// runs end to end at 300 km/h.
pub fn corridor(placement: &str) -> String {
    let mut net = Net::new(&format!("corridor-{placement}"), &["AR1"]);
    for i in 0..=5 {
        net.ap(&format!("M{i}"), "macro", 2000.0 * i as f64, 0.0, 1000.0, 1000.0, "AR1");
    }
    for i in 0..=50 {
        net.ap(&format!("s{i:02}"), "small", 200.0 * i as f64, 0.0, 100.0, 1000.0, "AR1");
    }
    let mut out = net.bbus(&[]);
    out.push_str("[[nodes]]\nid = \"train\"\nspeed_kmh = 300.0\nposition = [0.0, 0.0]\nwaypoints = [[10000.0, 0.0]]\n\n");
    flow(&mut out, "video", "train", "delay_tolerant", 2.0);
    writeln!(out, "[params]\nplacement = \"{placement}\"\nhorizon_ms = 121000.0").unwrap();
    out
}

/// Two 10 Mbps cells under one router and a multi-connected node whose
/// three flows all start on the first cell.
pub fn load_pair() -> String {
    let mut net = Net::new("load-pair", &["AR1"]);
    net.ap("A", "small", 0.0, 0.0, 50.0, 10.0, "AR1");
    net.ap("B", "small", 10.0, 0.0, 50.0, 10.0, "AR1");
    let mut out = net.bbus(&[("BBU1", "AR1", vec!["A".to_owned(), "B".to_owned()])]);
    out.push_str(
        "[[nodes]]\nid = \"mn\"\nposition = [2.0, 0.0]\nattach = [\"A\", \"B\"]\nselection = { scheme = \"mmt_driven\", k = 2 }\n\n",
    );
    flow(&mut out, "fa", "mn", "delay_sensitive", 4.0);
    flow(&mut out, "fb", "mn", "delay_tolerant", 3.0);
    flow(&mut out, "fc", "mn", "delay_sensitive", 2.0);
    out.push_str("[params]\ntheta = 0.5\nhorizon_ms = 2000.0\n");
    out
}

/// Network elements only.
pub fn empty() -> String {
    let mut net = Net::new("empty", &["AR1"]);
    net.ap("A", "macro", 0.0, 0.0, 500.0, 100.0, "AR1");
    let mut out = net.bbus(&[]);
    out.push_str("[params]\nhorizon_ms = 5000.0\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_fixtures_parse() {
        assert_eq!(fig3().nodes.len(), 1);
        for t in [oscillation(4, true), oscillation(4, false), sensors(3, 2), corridor("profile"), load_pair(), empty()] {
            parse(&t);
        }
    }

    #[test]
    fn fig3_shape() {
        let s = fig3();
        assert_eq!(s.topology.ars().count(), 2);
        assert_eq!(s.topology.aps().len(), 2);
        assert_eq!(s.flows.iter().filter(|f| f.birth_ms == 0.0).count(), 2);
        assert_eq!(s.flows.iter().filter(|f| f.birth_ms > 0.0).count(), 1);
    }
}
