//! Cross-layer consistency: while no order clamps and no tier stocks out,
//! the physical simulator's order deviations from the operating point must
//! reproduce the benchmark recursion exactly. This pins the timing
//! conventions (forecast update, position bookkeeping, event order) shared
//! by the chain physics and the filter analytics.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use echelon_core::chain::{ChainState, TierParams};
use echelon_core::ensemble::run_trajectory;
use echelon_core::linear::{simulate_linear, GainProfile, TierGainParams};
use echelon_core::policy::{order_up_to, AgentPolicy, Decision, Observation, PolicyError};

/// Order-up-to agent whose decision shock follows a prescribed sequence.
struct ScriptedShocks {
    theta: f64,
    shocks: Vec<f64>,
    cursor: AtomicUsize,
}

impl AgentPolicy for ScriptedShocks {
    fn decide(
        &self,
        obs: &Observation,
        _rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Decision, PolicyError> {
        let idx = self.cursor.fetch_add(1, Ordering::Relaxed);
        let eps = self.shocks[idx % self.shocks.len()];
        Ok(Decision::deterministic(order_up_to(
            obs.forecast,
            self.theta,
            eps,
            obs.inventory_position,
        )))
    }
}

#[test]
fn unclamped_chain_reproduces_the_benchmark_recursion() {
    use rand::{Rng, SeedableRng};
    let theta = 5.0;
    let lambda = 0.3;
    let rate = 20.0;
    let horizon = 25usize;
    let tiers = 2usize;
    // interior operating point: with theta one above lead time plus one,
    // the steady order equals the rate while on-hand sits at the rate,
    // leaving slack before any clamp or stockout binds
    let params = TierParams {
        order_delay: 1,
        ship_delay: 2,
        smoothing: lambda,
        target_multiplier: theta,
        ..TierParams::classic()
    };
    let initial = ChainState::new(vec![params; tiers], rate, rate).unwrap();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let shocks: Vec<Vec<f64>> = (0..tiers)
        .map(|_| (0..horizon).map(|_| rng.gen_range(-0.5..0.5)).collect())
        .collect();

    let policies: Vec<Arc<dyn AgentPolicy>> = shocks
        .iter()
        .map(|s| {
            Arc::new(ScriptedShocks {
                theta,
                shocks: s.clone(),
                cursor: AtomicUsize::new(0),
            }) as Arc<dyn AgentPolicy>
        })
        .collect();

    let demand = vec![rate; horizon];
    let trajectory = run_trajectory(&initial, &policies, &demand, 0).unwrap();

    // in-regime: every tier always shipped its full effective demand and
    // every order stayed strictly positive
    for out in &trajectory.outcomes {
        for k in 0..tiers {
            assert!(out.orders[k] > 0.0, "order clamped");
        }
    }
    for balances in &trajectory.balances {
        for (on_hand, backlog, _) in balances {
            assert!(*backlog == 0.0, "stockout broke linearity");
            assert!(*on_hand > 0.0);
        }
    }

    // deviations from the operating point follow the benchmark recursion
    let gains = GainProfile::new(vec![TierGainParams { theta, lambda }; tiers]).unwrap();
    let zero_demand = vec![0.0; horizon];
    let linear = simulate_linear(&gains, &zero_demand, &shocks, horizon);
    for k in 0..tiers {
        for t in 0..horizon {
            let physical_deviation = trajectory.orders[k + 1][t] - rate;
            assert!(
                (physical_deviation - linear[k][t]).abs() < 1e-9,
                "tier {} period {t}: physical {physical_deviation} vs linear {}",
                k + 1,
                linear[k][t]
            );
        }
    }
}
