//! A car bouncing between two macro cells. When both cells share a BBU pool
//! the handovers never reach the controller; when each has its own pool and
//! router, every handover becomes a control-plane transaction.

use mmaas::harness::{fixtures, run_both};

fn main() {
    for cross in [false, true] {
        let sc = fixtures::parse(&fixtures::oscillation(20, cross));
        let (m, l) = run_both(&sc).expect("fixture runs");
        println!("{}", sc.name);
        for out in [&m, &l] {
            let r = &out.report;
            println!(
                "  {:<7} handovers {:>2} intra / {:>2} inter, local {:>2}, controller messages {:>3}",
                r.mode.label(),
                r.handovers_intra,
                r.handovers_inter,
                r.local_handovers,
                r.controller_messages
            );
        }
    }
}
