//! Static sensors never need mobility management; a few pedestrians do, but
//! only briefly. Compares the instance time the two modes pay for.

use mmaas::harness::{fixtures, run_both};

fn main() {
    let sc = fixtures::parse(&fixtures::sensors(40, 3));
    let (m, l) = run_both(&sc).expect("fixture runs");
    for out in [&m, &l] {
        let r = &out.report;
        let busy: Vec<_> = r.instance_time_by_mn.iter().filter(|(_, t)| **t > 0.0).collect();
        println!(
            "{:<7} instance time {:>12.1} ms over {} nodes, refused {}",
            r.mode.label(),
            r.instance_time_ms,
            busy.len(),
            r.instances_refused
        );
    }
    for i in &m.logs.instances {
        println!("  {} open {} ms to {} ms", i.mn_id, i.open_ms, i.close_ms);
    }
}
