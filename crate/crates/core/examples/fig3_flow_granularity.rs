//! A walker crosses from one router's cell to the other's while carrying a
//! delay-sensitive and a delay-tolerant flow. Each flow gets its own
//! treatment: the sensitive one is tunnelled and then re-routed, the tolerant
//! one is torn down and re-established.

use mmaas::harness::{fixtures, run};
use mmaas::mmapp::RunMode;

fn main() {
    let out = run(&fixtures::fig3(), RunMode::Mmaas).expect("bundled scenario runs");
    for p in &out.logs.paths {
        println!("{:>9} ms  {:6} {:<14} {}", p.time_ms, p.flow_id, p.cause, p.path);
    }
    println!();
    for (flow, ms) in &out.report.flow_disruption_ms {
        println!("{flow}: down for {ms} ms");
    }
    for t in &out.logs.transactions {
        println!("tx {} ({}): {} messages, {} rules", t.tx_id, t.reason, t.messages, t.rules);
    }
}
