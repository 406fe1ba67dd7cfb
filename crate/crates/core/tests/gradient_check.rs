mod common;

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..40u64 {
        let sup = common::supervisions()[(seed % 2) as usize];
        let err = common::max_relative_error(seed, sup, seed % 5 != 4);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}
