//! After the walker's handover the delay-sensitive flow first rides a tunnel
//! back to its old router, then moves to the shortest route from the new one.
//! Prints each path the flow had with its data-plane latency.

use mmaas::harness::{fixtures, run};
use mmaas::mmapp::RunMode;
use mmaas::NodeId;

fn main() {
    let sc = fixtures::fig3();
    for mode in [RunMode::Mmaas, RunMode::LegacyCentralized] {
        let out = run(&sc, mode).expect("bundled scenario runs");
        println!("{}", mode.label());
        for p in out.logs.paths.iter().filter(|p| p.flow_id == "f-ds" && !p.path.is_empty()) {
            let nodes: Vec<NodeId> = p.path.split('>').map(NodeId::from).collect();
            let lat = sc.topology.path_latency(&nodes).map_or("unlinked".to_owned(), |l| format!("{l} ms"));
            println!("  {:>9} ms  {:<14} {:<26} {lat}", p.time_ms, p.cause, p.path);
        }
    }
}
