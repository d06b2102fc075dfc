//! Flow and resource bookkeeping under random actions and random cells.

mod common;

use common::{check_episode, random_action};
use nbiot_core::env::Scenario;
use nbiot_core::types::{rach_resource_cost, SimParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn single_group_bookkeeping(seed in any::<u64>()) {
        check_episode(Scenario::SingleGroup, seed, 60).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn multi_group_bookkeeping(seed in any::<u64>()) {
        check_episode(Scenario::MultiGroup, seed, 60).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn random_actions_fit_the_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = SimParams::default();
    for _ in 0..200 {
        let a = random_action(3, &params, &mut rng);
        assert!(rach_resource_cost(&a, params.b_rach) <= params.r_uplink);
    }
}
