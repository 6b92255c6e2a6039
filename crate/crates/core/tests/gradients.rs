use medpipe_core::gradcheck::kernel_suite;

#[test]
fn every_kernel_matches_finite_differences() {
    let results = kernel_suite(2024).unwrap();
    assert!(results.len() >= 25);
    let bad: Vec<_> = results.iter().filter(|(_, e)| e.is_nan() || *e >= 1e-4).collect();
    assert!(bad.is_empty(), "gradient mismatches: {bad:?}");
}

#[test]
fn suite_is_seed_independent() {
    for seed in [1, 99] {
        for (name, err) in kernel_suite(seed).unwrap() {
            assert!(err < 1e-4, "{name}: {err}");
        }
    }
}
