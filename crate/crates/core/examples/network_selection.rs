//! Scores three candidate cells under a node's policy, then negotiates with a
//! network policy that forbids some radio technologies.

use mmaas::selection::{negotiate_or_fallback, score, select_mmt_driven, Axis, CandidateRecord, Direction, PolicyVector};

fn cand(ap: &str, rat: &str, values: [f64; 5]) -> CandidateRecord {
    CandidateRecord { ap_id: ap.into(), values, rat: rat.into() }
}

fn main() {
    // rssi, load, latency, operator preference, cost
    let cands = vec![
        cand("wifi-1", "wifi", [-55.0, 0.2, 4.0, 0.3, 0.0]),
        cand("nr-1", "nr", [-70.0, 0.6, 2.0, 0.9, 1.0]),
        cand("lte-1", "lte", [-80.0, 0.1, 8.0, 0.6, 0.5]),
    ];
    let mn = PolicyVector::with_weights([0.5, 0.2, 0.1, 0.0, 0.2]);
    for (ap, s) in score(&mn, &cands).expect("candidates pass") {
        println!("{ap:<7} {s:.3}");
    }
    let top: Vec<String> = select_mmt_driven(&mn, &cands, 2).unwrap().iter().map(ToString::to_string).collect();
    println!("top two for the node: {}", top.join(", "));

    let mut net = PolicyVector::with_weights([0.0, 0.5, 0.0, 0.5, 0.0]);
    net.forbid_rat.insert("wifi".into());
    net.axis_mut(Axis::Load).direction = Direction::Minimize;
    let pick = negotiate_or_fallback(&mn, &net, &cands, 2).unwrap();
    println!("negotiated: {} (fallback: {})", pick.ap, pick.fell_back);

    // the whole shortlist is now forbidden, so the node's own choice stands
    net.forbid_rat.insert("lte".into());
    let pick = negotiate_or_fallback(&mn, &net, &cands, 2).unwrap();
    println!("with lte forbidden too: {} (fallback: {})", pick.ap, pick.fell_back);
}
