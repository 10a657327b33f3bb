//! A node attached to two cells starts all three flows on the first one,
//! pushing it past the threshold. The application moves flows to the other
//! cell until both sit at or below it.

use mmaas::harness::{fixtures, run};
use mmaas::mmapp::RunMode;

fn main() {
    let sc = fixtures::parse(&fixtures::load_pair());
    let out = run(&sc, RunMode::Mmaas).expect("fixture runs");
    for r in &out.logs.rules {
        println!("{:>7} ms  tx {}  {} {} {}", r.time_ms, r.tx_id, r.rule_kind, r.subject_id, r.detail);
    }
    let mut last = "";
    for l in out.logs.load.iter().filter(|l| l.entity_id == "A" || l.entity_id == "B") {
        if l.time_ms != last {
            print!("\n{:>7} ms", l.time_ms);
            last = &l.time_ms;
        }
        print!("  {} {:.2}", l.entity_id, l.load_fraction);
    }
    println!("\nresidual overload: {} ms (theta {})", out.report.residual_overload_ms, out.report.theta);
}
