mod common;

use campusflow::netgraph::LinkId;

use common::fixtures;
use common::oracle::max_discrepancy;

#[test]
fn grid_aligned_fixtures_match_within_one_step() {
    for f in fixtures::oracle_fixtures().into_iter().filter(|f| f.name != "detuned") {
        let kernel = f.run();
        for dt in [0.1, 0.01] {
            let d = max_discrepancy(&kernel, &f.run_oracle(dt));
            assert!(d <= dt, "{}: discrepancy {d} at dt {dt}", f.name);
        }
    }
}

#[test]
fn off_grid_discrepancy_shrinks_with_the_step() {
    let f = fixtures::detuned();
    let kernel = f.run();
    let coarse = max_discrepancy(&kernel, &f.run_oracle(0.01));
    let fine = max_discrepancy(&kernel, &f.run_oracle(0.001));
    assert!(coarse.is_finite() && coarse > 0.0);
    assert!(fine <= coarse / 10.0 * 1.05, "{coarse} -> {fine}");
}

#[test]
fn spillback_times_match_hand_derivation() {
    let res = fixtures::spillback().run();
    let b = res.link(LinkId(2)).unwrap();
    let entries: Vec<f64> = b.visits.iter().map(|v| v.entry_s).collect();
    let exits: Vec<f64> = b.visits.iter().filter_map(|v| v.exit_s).collect();
    assert_eq!(entries, vec![10.0, 12.0, 110.0, 112.0, 125.0]);
    assert_eq!(&exits[..3], &[100.0, 102.0, 115.0]);
}
