mod support;

use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_unpruned_expression_has_a_representative((env, examples) in support::pruning::case()) {
        support::pruning::check_representatives(&env, &examples)?;
    }
}
