//! Property tests of the algorithmic invariants against independent oracles.

mod common;

use proptest::prelude::*;

fn check(result: common::Check) -> Result<(), TestCaseError> {
    result.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lloyd_is_monotone(seed in any::<u64>()) {
        check(common::lloyd_instance(seed))?;
    }

    #[test]
    fn assignment_matches_linear_scan(seed in any::<u64>()) {
        check(common::assign_instance(seed, 100))?;
    }

    #[test]
    fn weighted_f1_matches_oracle(seed in any::<u64>()) {
        check(common::f1_instance(seed))?;
    }

    #[test]
    fn logistic_gradient_matches_finite_differences(seed in any::<u64>()) {
        let err = common::logistic_gradient_error(seed);
        prop_assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn recurrent_gradient_matches_finite_differences(seed in any::<u64>()) {
        let err = common::recurrent_gradient_error(seed);
        prop_assert!(err <= 1e-3, "relative error {err}");
    }

    #[test]
    fn straight_through_jacobian_is_identity(seed in any::<u64>()) {
        let err = common::straight_through_error(seed);
        prop_assert!(err <= 1e-4, "relative error {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn svc_vectors_are_exact_midpoints(seed in any::<u64>()) {
        check(common::svc_midpoint_instance(seed))?;
    }

    #[test]
    fn residual_never_reconstructs_worse_than_mean_pooled(seed in any::<u64>()) {
        check(common::residual_error_instance(seed))?;
    }
}
