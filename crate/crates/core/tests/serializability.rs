mod common;

use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn concurrent_runs_match_serial_replay(seed in any::<u64>()) {
        let run = common::serializability_run(seed).map_err(TestCaseError::fail)?;
        prop_assert!(run.commits > 0);
    }
}
