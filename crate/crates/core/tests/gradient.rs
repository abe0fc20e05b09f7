mod common;

#[test]
fn backward_matches_central_differences() {
    for seed in 0..6 {
        let r = common::gradient_check(seed);
        assert!(r.checked > 50, "seed {seed}: only {} coordinates checked", r.checked);
        assert!(r.skipped * 20 < r.checked, "seed {seed}: {r:?}");
        assert!(r.max_rel_err < 1e-4, "seed {seed}: {r:?}");
    }
}
