mod common;

use common::{random_timings, rng, sort_events, Oracle};
use vlbal::pipesim::run_timings;

#[test]
fn timelines_match_recursive_oracle() {
    let mut r = rng(5);
    for case in 0..200 {
        let n = 1 + case % 3;
        let m = 1 + (case / 3) % 4;
        let t = random_timings(&mut r, n, m);
        for overlap in [false, true] {
            let mut got = run_timings(&t, overlap).unwrap().timeline;
            sort_events(&mut got);
            let want = Oracle::new(&t, overlap).events();
            assert_eq!(got, want, "case {case} n={n} m={m} overlap={overlap}");
        }
    }
}

#[test]
fn blocking_sends_never_help() {
    let mut r = rng(6);
    for _ in 0..100 {
        let t = random_timings(&mut r, 3, 4);
        let serial = run_timings(&t, false).unwrap().iteration_time;
        let overlap = run_timings(&t, true).unwrap().iteration_time;
        assert!(overlap <= serial);
    }
}
