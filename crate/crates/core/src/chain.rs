//! Discrete-time physics of a serial multi-echelon inventory chain.
//!
//! Tiers are indexed `k = 1..=n` from the retailer (tier 1) upstream to the
//! factory (tier n); tier 0 is external customer demand. Each period every
//! tier receives in-transit stock, observes the order placed by its
//! downstream neighbor, ships what it can, and updates on-hand, backlog, and
//! outstanding balances. The most upstream tier replenishes from an outside
//! supplier with unlimited capacity.
//!
//! Replenishment lead time at tier k is `order_delay + ship_delay` periods.
//! A dispatched parcel spends the first `order_delay` periods in the
//! receiving tier's order pipeline (order processing) and the remaining
//! `ship_delay` periods in its shipment pipeline, so every shipped unit
//! arrives exactly `lead_time` periods after dispatch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by chain construction and stepping.
#[derive(Debug, Error)]
pub enum ChainError {
    #[error("{field}: {reason}")]
    InvalidParam { field: String, reason: String },
    #[error("negative input: {0}")]
    NegativeInput(String),
    #[error("pipeline entry for tier {tier} has arrival period {arrival} not after current period {period}")]
    StalePipeline { tier: usize, arrival: u32, period: u32 },
}

/// Per-tier structural parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierParams {
    /// Periods an order spends in processing before it is handed to shipping.
    pub order_delay: u32,
    /// Periods a dispatched parcel spends in transit after processing.
    pub ship_delay: u32,
    /// Exponential-smoothing weight for the demand forecast, in (0, 1].
    pub smoothing: f64,
    /// Order-up-to target multiplier applied to the forecast, > 0.
    pub target_multiplier: f64,
    /// Holding cost per unit of end-of-period on-hand inventory.
    pub holding_rate: f64,
    /// Backlog cost per unit of end-of-period backlog.
    pub backlog_rate: f64,
}

impl TierParams {
    /// Classic setting: one week order processing, two weeks shipping,
    /// holding 0.50 and backlog 1.00 per case per week, target multiplier
    /// equal to lead time plus one.
    pub fn classic() -> Self {
        TierParams {
            order_delay: 1,
            ship_delay: 2,
            smoothing: 0.5,
            target_multiplier: 4.0,
            holding_rate: 0.5,
            backlog_rate: 1.0,
        }
    }

    /// Total replenishment lead time.
    pub fn lead_time(&self) -> u32 {
        self.order_delay + self.ship_delay
    }

    pub fn validate(&self, tier: usize) -> Result<(), ChainError> {
        let field = |name: &str| format!("tier {tier} {name}");
        if self.lead_time() == 0 {
            // within a period receipts settle before dispatches, so a
            // same-period round trip cannot be represented
            return Err(ChainError::InvalidParam {
                field: field("lead_time"),
                reason: "order_delay + ship_delay must be at least 1".into(),
            });
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(ChainError::InvalidParam {
                field: field("smoothing"),
                reason: format!("must lie in (0, 1], got {}", self.smoothing),
            });
        }
        if !(self.target_multiplier > 0.0) {
            return Err(ChainError::InvalidParam {
                field: field("target_multiplier"),
                reason: format!("must be > 0, got {}", self.target_multiplier),
            });
        }
        if self.holding_rate < 0.0 || self.backlog_rate < 0.0 {
            return Err(ChainError::InvalidParam {
                field: field("cost rates"),
                reason: "must be nonnegative".into(),
            });
        }
        Ok(())
    }
}

/// A parcel inside a pipeline stage: `qty` units that leave the stage at
/// period `arrival`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parcel {
    pub arrival: u32,
    pub qty: f64,
}

/// Physical state of one tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierState {
    /// On-hand inventory at the beginning of the period.
    pub on_hand: f64,
    /// Backlog owed to the downstream neighbor.
    pub backlog: f64,
    /// Units ordered but not yet received.
    pub outstanding: f64,
    /// Exponentially smoothed forecast of downstream orders, current as of
    /// the state's period.
    pub forecast: f64,
    /// Parcels in the order-processing stage, keyed by the period they move
    /// to the shipment stage.
    pub order_pipeline: Vec<Parcel>,
    /// Parcels in transit, keyed by arrival period.
    pub ship_pipeline: Vec<Parcel>,
}

impl TierState {
    /// Beginning-of-period inventory position: on-hand plus outstanding
    /// minus backlog.
    pub fn inventory_position(&self) -> f64 {
        self.on_hand + self.outstanding - self.backlog
    }

    /// Units currently inside either pipeline stage.
    pub fn pipeline_sum(&self) -> f64 {
        self.order_pipeline.iter().map(|p| p.qty).sum::<f64>()
            + self.ship_pipeline.iter().map(|p| p.qty).sum::<f64>()
    }
}

/// Effective demand at a tier: the current downstream order plus the
/// backlog already owed.
pub fn effective_demand(tier: &TierState, downstream_order: f64) -> Result<f64, ChainError> {
    if downstream_order < 0.0 {
        return Err(ChainError::NegativeInput(format!(
            "downstream order {downstream_order}"
        )));
    }
    Ok(downstream_order + tier.backlog)
}

/// Shipment this period: effective demand capped by available stock.
pub fn ship(tier: &TierState, receipt: f64, demand: f64) -> f64 {
    (tier.on_hand + receipt).min(demand).max(0.0)
}

/// Full chain state at one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub period: u32,
    /// Tier states; index 0 holds tier 1 (retailer).
    pub tiers: Vec<TierState>,
    pub params: Vec<TierParams>,
    /// Orders placed in the previous period; index 0 holds tier 1.
    pub last_orders: Vec<f64>,
    pub demand_history: Vec<f64>,
}

/// Flows and costs produced by one `advance` step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Orders placed this period, per tier.
    pub orders: Vec<f64>,
    /// Units shipped downstream this period, per tier (tier 1 ships to the
    /// customer).
    pub shipments: Vec<f64>,
    /// Units received this period, per tier.
    pub receipts: Vec<f64>,
    /// End-of-period holding plus backlog cost, per tier.
    pub costs: Vec<f64>,
    /// Sum of per-tier costs.
    pub system_cost: f64,
}

impl ChainState {
    /// Chain with every tier initialized at `on_hand` units, zero backlog,
    /// and both pipeline stages pre-filled at `steady_rate` units per period,
    /// so that constant demand and constant orders at that rate form a fixed
    /// point of the dynamics.
    pub fn new(
        params: Vec<TierParams>,
        on_hand: f64,
        steady_rate: f64,
    ) -> Result<Self, ChainError> {
        if params.is_empty() {
            return Err(ChainError::InvalidParam {
                field: "tiers".into(),
                reason: "chain needs at least one tier".into(),
            });
        }
        if on_hand < 0.0 || steady_rate < 0.0 {
            return Err(ChainError::NegativeInput("initial conditions".into()));
        }
        for (i, p) in params.iter().enumerate() {
            p.validate(i + 1)?;
        }
        let tiers = params
            .iter()
            .map(|p| {
                let order_pipeline: Vec<Parcel> = (1..=p.order_delay)
                    .filter(|_| steady_rate > 0.0)
                    .map(|d| Parcel { arrival: d, qty: steady_rate })
                    .collect();
                let ship_pipeline: Vec<Parcel> = (1..=p.ship_delay)
                    .filter(|_| steady_rate > 0.0)
                    .map(|d| Parcel { arrival: d, qty: steady_rate })
                    .collect();
                let outstanding = steady_rate * p.lead_time() as f64;
                TierState {
                    on_hand,
                    backlog: 0.0,
                    outstanding,
                    forecast: steady_rate,
                    order_pipeline,
                    ship_pipeline,
                }
            })
            .collect();
        let n = params.len();
        Ok(ChainState {
            period: 0,
            tiers,
            params,
            last_orders: vec![steady_rate; n],
            demand_history: Vec::new(),
        })
    }

    /// Classic four-tier chain: retailer, wholesaler, distributor, factory,
    /// twelve cases on hand and pipelines primed at four cases per week.
    pub fn classic_four_tier() -> Self {
        ChainState::new(vec![TierParams::classic(); 4], 12.0, 4.0)
            .expect("classic parameters are valid")
    }

    pub fn tier_count(&self) -> usize {
        self.tiers.len()
    }

    /// Downstream order most recently observed by tier `k` (1-based), i.e.
    /// the order placed in the previous period by tier `k-1`, with tier 0
    /// being external demand.
    pub fn observed_downstream_order(&self, k: usize) -> f64 {
        if k == 1 {
            self.demand_history
                .last()
                .copied()
                .unwrap_or(self.last_orders[0])
        } else {
            self.last_orders[k - 2]
        }
    }

    fn check_pipelines(&self) -> Result<(), ChainError> {
        for (i, tier) in self.tiers.iter().enumerate() {
            for p in tier.order_pipeline.iter().chain(tier.ship_pipeline.iter()) {
                if p.arrival <= self.period {
                    return Err(ChainError::StalePipeline {
                        tier: i + 1,
                        arrival: p.arrival,
                        period: self.period,
                    });
                }
            }
        }
        Ok(())
    }
}

/// One period of chain dynamics.
///
/// Event order inside the period: parcels finish order processing and enter
/// shipping; shipments arrive; each tier observes the current downstream
/// order, ships against effective demand, and updates on-hand, backlog, and
/// outstanding balances; this period's dispatches enter the pipelines;
/// forecasts absorb the observed orders. Costs accrue on end-of-period
/// on-hand and backlog. The function is pure: identical inputs give
/// identical outputs.
pub fn advance(
    chain: &ChainState,
    demand: f64,
    orders: &[f64],
) -> Result<(ChainState, StepOutcome), ChainError> {
    let n = chain.tier_count();
    if orders.len() != n {
        return Err(ChainError::InvalidParam {
            field: "orders".into(),
            reason: format!("expected {n} orders, got {}", orders.len()),
        });
    }
    if demand < 0.0 {
        return Err(ChainError::NegativeInput(format!("demand {demand}")));
    }
    if let Some(q) = orders.iter().find(|q| **q < 0.0) {
        return Err(ChainError::NegativeInput(format!("order {q}")));
    }
    chain.check_pipelines()?;

    let t = chain.period + 1; // arrivals scheduled for the period being played
    let mut next = chain.clone();
    next.period = t;

    // Stage transfer: matured order-processing parcels enter shipping.
    let ship_delays: Vec<u32> = next.params.iter().map(|p| p.ship_delay).collect();
    for (tier, ship_delay) in next.tiers.iter_mut().zip(ship_delays) {
        let mut moved = Vec::new();
        tier.order_pipeline.retain(|p| {
            if p.arrival <= t {
                moved.push(Parcel { arrival: p.arrival + ship_delay, qty: p.qty });
                false
            } else {
                true
            }
        });
        tier.ship_pipeline.extend(moved);
    }

    // Receipts: shipment-stage parcels arriving this period.
    let mut receipts = vec![0.0; n];
    for (k, tier) in next.tiers.iter_mut().enumerate() {
        let mut arrived = 0.0;
        tier.ship_pipeline.retain(|p| {
            if p.arrival <= t {
                arrived += p.qty;
                false
            } else {
                true
            }
        });
        receipts[k] = arrived;
    }

    // Ship and settle balances.
    let mut shipments = vec![0.0; n];
    let mut costs = vec![0.0; n];
    for k in 0..n {
        let downstream_order = if k == 0 { demand } else { orders[k - 1] };
        let tier = &next.tiers[k];
        let eff = effective_demand(tier, downstream_order)?;
        let s = ship(tier, receipts[k], eff);
        shipments[k] = s;

        let tier = &mut next.tiers[k];
        tier.on_hand = (tier.on_hand + receipts[k] - s).max(0.0);
        tier.backlog = (tier.backlog + downstream_order - s).max(0.0);
        tier.outstanding = (tier.outstanding + orders[k] - receipts[k]).max(0.0);

        costs[k] = next.params[k].holding_rate * tier.on_hand
            + next.params[k].backlog_rate * tier.backlog;
    }

    // Dispatch: tier k+1's shipment starts tier k's replenishment journey;
    // the factory's own order is dispatched in full by the outside supplier.
    for k in 0..n {
        let inbound = if k + 1 < n { shipments[k + 1] } else { orders[n - 1] };
        if inbound > 0.0 {
            let p = &next.params[k];
            if p.order_delay > 0 {
                next.tiers[k]
                    .order_pipeline
                    .push(Parcel { arrival: t + p.order_delay, qty: inbound });
            } else {
                next.tiers[k]
                    .ship_pipeline
                    .push(Parcel { arrival: t + p.ship_delay, qty: inbound });
            }
        }
    }

    // Forecasts absorb the orders observed this period.
    for k in 0..n {
        let observed = if k == 0 { demand } else { orders[k - 1] };
        let lambda = next.params[k].smoothing;
        let f = &mut next.tiers[k].forecast;
        *f = lambda * observed + (1.0 - lambda) * *f;
    }

    next.last_orders.copy_from_slice(orders);
    next.demand_history.push(demand);

    let system_cost = costs.iter().sum();
    let outcome = StepOutcome {
        orders: orders.to_vec(),
        shipments,
        receipts,
        costs,
        system_cost,
    };
    Ok((next, outcome))
}

/// Checks the inventory-position balance across one step: for every tier,
/// the position must change by exactly the tier's own order minus the
/// downstream order it absorbed.
pub fn audit_ip_recursion(before: &ChainState, after: &ChainState, outcome: &StepOutcome) -> bool {
    let demand = match after.demand_history.last() {
        Some(d) => *d,
        None => return false,
    };
    const TOL: f64 = 1e-9;
    before
        .tiers
        .iter()
        .zip(&after.tiers)
        .enumerate()
        .all(|(k, (b, a))| {
            let downstream = if k == 0 { demand } else { outcome.orders[k - 1] };
            let expected = b.inventory_position() + outcome.orders[k] - downstream;
            (a.inventory_position() - expected).abs() <= TOL
        })
}

/// Checks the outstanding-balance ledger: each tier's outstanding units must
/// equal what sits in its two pipeline stages plus the unshipped backlog its
/// supplier owes it (the factory's outside supplier never backlogs).
pub fn audit_outstanding(chain: &ChainState) -> bool {
    const TOL: f64 = 1e-6;
    let n = chain.tier_count();
    chain.tiers.iter().enumerate().all(|(k, tier)| {
        let owed_upstream = if k + 1 < n { chain.tiers[k + 1].backlog } else { 0.0 };
        (tier.outstanding - tier.pipeline_sum() - owed_upstream).abs() <= TOL
    })
}
