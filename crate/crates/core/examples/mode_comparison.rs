//! Runs the bundled walk under both modes and prints every metric side by side.

use mmaas::harness::{compare, fixtures, run_both};

fn main() {
    let (m, l) = run_both(&fixtures::fig3()).expect("bundled scenario runs");
    let summary = compare(&m.report, &l.report).expect("same scenario");
    print!("{}", summary.to_text());
}
