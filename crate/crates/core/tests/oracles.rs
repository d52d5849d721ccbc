mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extraction_matches_string_simulation(seed in any::<u64>()) {
        let case = random_extraction_case(seed);
        prop_assert!(extraction_agrees(&case), "tokens {:?}", case.tokens);
    }

    #[test]
    fn negative_filter_matches_pairwise_oracle(seed in any::<u64>()) {
        prop_assert!(filter_agrees(&random_filter_case(seed)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn analytic_gradients_match_central_differences(seed in any::<u64>()) {
        let errors = gradient_errors(&random_gradient_case(seed));
        prop_assert!(errors.iter().all(|e| *e < 1e-4), "{errors:?}");
    }
}

#[test]
fn string_simulation_reference_cases() {
    let toks = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    let t = |s: &str, p: f64| (s.to_string(), p);
    assert_eq!(
        brute_force_extract(&toks("a b c d . a d"), &[t("b c", 0.9), t("c d", 0.8), t("a d", 0.7), t("d", 0.6)]),
        vec![(1, 3), (3, 4), (5, 7)]
    );
    assert_eq!(brute_force_extract(&toks("a a a"), &[t("a a", 0.9), t("a", 0.8)]), vec![(0, 2), (2, 3)]);
}
