//! Property tests for the chain physics: conservation, nonnegativity, and
//! the inventory-position balance under randomized trajectories.

use proptest::prelude::*;

use echelon_core::chain::{
    advance, audit_ip_recursion, audit_outstanding, ChainState, TierParams,
};

fn tier_params_strategy() -> impl Strategy<Value = TierParams> {
    (0u32..=2, 1u32..=3, 0.05f64..=1.0, 0.5f64..=5.0).prop_map(
        |(order_delay, ship_delay, smoothing, target_multiplier)| TierParams {
            order_delay,
            ship_delay,
            smoothing,
            target_multiplier,
            holding_rate: 0.5,
            backlog_rate: 1.0,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn randomized_trajectories_respect_all_invariants(
        params in proptest::collection::vec(tier_params_strategy(), 1..=5),
        seed in 0u64..1_000_000,
        steps in 50usize..200,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = params.len();
        let mut chain = ChainState::new(params, 10.0, 4.0).unwrap();
        for _ in 0..steps {
            let demand: f64 = rng.gen_range(0.0..10.0);
            let orders: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..12.0)).collect();
            let before = chain.clone();
            let (after, out) = advance(&chain, demand, &orders).unwrap();

            // balances stay nonnegative
            for tier in &after.tiers {
                prop_assert!(tier.on_hand >= 0.0);
                prop_assert!(tier.backlog >= 0.0);
                prop_assert!(tier.outstanding >= 0.0);
            }
            // shipment caps: stock on one side, effective demand on the other
            for k in 0..n {
                let avail = before.tiers[k].on_hand + out.receipts[k];
                let downstream = if k == 0 { demand } else { orders[k - 1] };
                let effective = downstream + before.tiers[k].backlog;
                prop_assert!(out.shipments[k] <= avail + 1e-9);
                prop_assert!(out.shipments[k] <= effective + 1e-9);
            }
            // position balance and outstanding ledger
            prop_assert!(audit_ip_recursion(&before, &after, &out));
            prop_assert!(audit_outstanding(&after));
            // cost aggregation is exact
            prop_assert!((out.system_cost - out.costs.iter().sum::<f64>()).abs() < 1e-12);
            chain = after;
        }
    }

    #[test]
    fn unit_conservation_over_any_horizon(
        seed in 0u64..1_000_000,
        steps in 20usize..120,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 3;
        let mut chain = ChainState::new(vec![TierParams::classic(); n], 8.0, 0.0).unwrap();
        let mut shipped = vec![0.0; n];
        let mut ordered_from = vec![0.0; n]; // cumulative downstream orders seen by tier k
        for _ in 0..steps {
            let demand: f64 = rng.gen_range(0.0..8.0);
            let orders: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..8.0)).collect();
            let (after, out) = advance(&chain, demand, &orders).unwrap();
            for k in 0..n {
                shipped[k] += out.shipments[k];
                ordered_from[k] += if k == 0 { demand } else { orders[k - 1] };
            }
            chain = after;
        }
        // shipped downstream = cumulative downstream orders - ending backlog
        for k in 0..n {
            let expected = ordered_from[k] - chain.tiers[k].backlog;
            prop_assert!((shipped[k] - expected).abs() < 1e-6,
                "tier {} shipped {} expected {}", k + 1, shipped[k], expected);
        }
    }

    #[test]
    fn advance_is_a_pure_function(
        seed in 0u64..1_000_000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let chain = ChainState::classic_four_tier();
        let demand: f64 = rng.gen_range(0.0..10.0);
        let orders: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..12.0)).collect();
        let (a_state, a_out) = advance(&chain, demand, &orders).unwrap();
        let (b_state, b_out) = advance(&chain, demand, &orders).unwrap();
        prop_assert_eq!(a_state, b_state);
        prop_assert_eq!(a_out, b_out);
    }
}
