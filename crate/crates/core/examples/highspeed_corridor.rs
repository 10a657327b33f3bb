//! A 300 km/h train along a line of macro cells laid over small cells.
//! Counts handovers under each user-plane placement policy.

use mmaas::harness::{fixtures, run};
use mmaas::mmapp::RunMode;

fn main() {
    for placement in ["profile", "small_cells", "strongest"] {
        let sc = fixtures::parse(&fixtures::corridor(placement));
        for mode in [RunMode::Mmaas, RunMode::LegacyCentralized] {
            let r = run(&sc, mode).expect("fixture runs").report;
            println!(
                "{placement:<12} {:<7} handovers {:>3}, messages {:>4}, video down {} ms",
                mode.label(),
                r.handovers_intra + r.handovers_inter,
                r.controller_messages,
                r.flow_disruption_ms["video"]
            );
        }
    }
}
