//! Repeated-run ensembles and the run-to-run variability metric suite.
//!
//! An ensemble executes R trajectories of one scenario. In fixed-demand mode
//! every run shares the same demand path, so dispersion across runs isolates
//! decision noise; in stochastic-demand mode each run draws its own path.
//! The nested decomposition samples M demand paths with R shock-randomized
//! runs each and splits total order variance into a demand-driven part
//! (variance of the conditional means) and a decision-driven part (mean of
//! the conditional variances).
//!
//! Runs are independent and execute in parallel; every run owns an RNG
//! derived from the master seed and the run index, so the whole lab is a
//! pure function of (config, master seed).

use rayon::prelude::*;
use thiserror::Error;

use crate::chain::{advance, ChainState, StepOutcome};
use crate::linear::simulate_linear;
use crate::policy::{AgentPolicy, Observation};
use crate::scenario::{streams, stream_rng, ScenarioConfig, ScenarioError};
use crate::stats;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("need at least {needed} {what}, got {got}")]
    InsufficientSamples { what: &'static str, needed: usize, got: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("all {0} runs failed")]
    AllRunsFailed(usize),
}

/// One simulated trajectory: order paths (row 0 is customer demand), costs,
/// flows, and end-of-period balances per tier.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `[tier 0..=n][t]`; row 0 holds the demand path.
    pub orders: Vec<Vec<f64>>,
    /// `[tier 1..=n as index k-1][t]`.
    pub costs: Vec<Vec<f64>>,
    pub outcomes: Vec<StepOutcome>,
    /// `[t][tier k-1] = (on_hand, backlog, outstanding)` after the period.
    pub balances: Vec<Vec<(f64, f64, f64)>>,
}

impl Trajectory {
    pub fn total_cost(&self) -> f64 {
        self.outcomes.iter().map(|o| o.system_cost).sum()
    }
}

/// Runs one physical trajectory: each period every tier's agent decides from
/// its local view, then the chain advances one step.
pub fn run_trajectory(
    initial: &ChainState,
    policies: &[std::sync::Arc<dyn AgentPolicy>],
    demand: &[f64],
    policy_seed: u64,
) -> Result<Trajectory, String> {
    let n = initial.tier_count();
    assert_eq!(policies.len(), n, "one policy per tier");
    let mut rngs: Vec<_> = (0..n)
        .map(|k| stream_rng(policy_seed, &[streams::POLICY, k as u64]))
        .collect();
    let mut chain = initial.clone();
    let mut prev: Option<StepOutcome> = None;
    let horizon = demand.len();
    let mut orders = vec![vec![0.0; horizon]; n + 1];
    let mut costs = vec![vec![0.0; horizon]; n];
    let mut outcomes = Vec::with_capacity(horizon);
    let mut balances = Vec::with_capacity(horizon);

    for t in 0..horizon {
        let mut decided = Vec::with_capacity(n);
        for k in 1..=n {
            let obs = Observation::from_chain(&chain, prev.as_ref(), k);
            let d = policies[k - 1]
                .decide(&obs, &mut rngs[k - 1])
                .map_err(|e| format!("tier {k} period {t}: {e}"))?;
            if d.order < 0.0 || !d.order.is_finite() {
                return Err(format!("tier {k} period {t}: invalid order {}", d.order));
            }
            decided.push(d.order);
        }
        let (next, out) = advance(&chain, demand[t], &decided).map_err(|e| e.to_string())?;
        orders[0][t] = demand[t];
        for k in 0..n {
            orders[k + 1][t] = decided[k];
            costs[k][t] = out.costs[k];
        }
        balances.push(
            next.tiers
                .iter()
                .map(|tier| (tier.on_hand, tier.backlog, tier.outstanding))
                .collect(),
        );
        outcomes.push(out.clone());
        prev = Some(out);
        chain = next;
    }
    Ok(Trajectory { orders, costs, outcomes, balances })
}

/// One trajectory of the scenario (run index 0 of the ensemble seed
/// layout). Linear-benchmark scenarios carry orders only; flows and
/// balances stay empty.
pub fn run_single(scenario: &ScenarioConfig, master_seed: u64) -> Result<Trajectory, EnsembleError> {
    let horizon = scenario.run.horizon;
    let demand = scenario
        .demand
        .sample_path(horizon, &mut stream_rng(master_seed, &[streams::DEMAND]));
    let seed = crate::scenario::derive_seed(master_seed, &[0]);
    if scenario.is_linear()? {
        let gains = scenario.gain_profile()?;
        let shocks = scenario.shock_specs()?;
        let shock_paths: Vec<Vec<f64>> = shocks
            .iter()
            .enumerate()
            .map(|(k, spec)| {
                let mut rng = stream_rng(master_seed, &[0, streams::POLICY, k as u64]);
                (0..horizon).map(|_| spec.sample(&mut rng)).collect()
            })
            .collect();
        let tier_orders = simulate_linear(&gains, &demand, &shock_paths, horizon);
        let mut orders = vec![demand];
        orders.extend(tier_orders);
        Ok(Trajectory {
            orders,
            costs: vec![vec![0.0; horizon]; scenario.chain.tiers],
            outcomes: Vec::new(),
            balances: Vec::new(),
        })
    } else {
        let policies = scenario.build_policies()?;
        let initial = scenario.build_chain()?;
        run_trajectory(&initial, &policies, &demand, seed).map_err(|reason| {
            EnsembleError::Scenario(ScenarioError::Invalid { field: "run".into(), reason })
        })
    }
}

/// A run that was abandoned, with the reason.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExcludedRun {
    pub run: usize,
    pub reason: String,
}

/// Orders and costs for R repeated runs of one scenario.
#[derive(Debug, Clone)]
pub struct EnsembleRecord {
    pub tier_count: usize,
    pub horizon: usize,
    /// `[run][tier 0..=n][t]`; tier 0 is the demand path of that run.
    pub orders: Vec<Vec<Vec<f64>>>,
    /// `[run][tier k-1][t]`; zero for linear benchmark runs.
    pub costs: Vec<Vec<Vec<f64>>>,
    pub total_costs: Vec<f64>,
    pub master_seed: u64,
    pub fixed_demand: bool,
    pub excluded: Vec<ExcludedRun>,
}

impl EnsembleRecord {
    pub fn run_count(&self) -> usize {
        self.orders.len()
    }
}

/// Executes R runs of the scenario. In fixed-demand mode all runs share one
/// path; shock and policy randomness always differ per run.
pub fn run_ensemble(
    scenario: &ScenarioConfig,
    runs: usize,
    master_seed: u64,
) -> Result<EnsembleRecord, EnsembleError> {
    if runs < 2 {
        return Err(EnsembleError::InsufficientSamples { what: "runs", needed: 2, got: runs });
    }
    if scenario.is_linear()? {
        linear_ensemble(scenario, runs, master_seed)
    } else {
        let policies = scenario.build_policies()?;
        let initial = scenario.build_chain()?;
        let horizon = scenario.run.horizon;
        let fixed = !scenario.demand.is_stochastic();
        let shared_path = fixed.then(|| {
            scenario
                .demand
                .sample_path(horizon, &mut stream_rng(master_seed, &[streams::DEMAND]))
        });
        let results: Vec<Result<Trajectory, String>> = (0..runs)
            .into_par_iter()
            .map(|r| {
                let demand = match &shared_path {
                    Some(p) => p.clone(),
                    None => scenario.demand.sample_path(
                        horizon,
                        &mut stream_rng(master_seed, &[r as u64, streams::DEMAND]),
                    ),
                };
                let seed = crate::scenario::derive_seed(master_seed, &[r as u64]);
                run_trajectory(&initial, &policies, &demand, seed)
            })
            .collect();
        assemble_record(results, scenario.chain.tiers, horizon, master_seed, fixed, runs)
    }
}

/// Executes R runs with caller-supplied agents (used by the trainer's
/// evaluation protocol).
pub fn run_ensemble_with_policies(
    initial: &ChainState,
    policies: &[std::sync::Arc<dyn AgentPolicy>],
    demand_path: &[f64],
    runs: usize,
    master_seed: u64,
) -> Result<EnsembleRecord, EnsembleError> {
    if runs < 2 {
        return Err(EnsembleError::InsufficientSamples { what: "runs", needed: 2, got: runs });
    }
    let results: Vec<Result<Trajectory, String>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let seed = crate::scenario::derive_seed(master_seed, &[r as u64]);
            run_trajectory(initial, policies, demand_path, seed)
        })
        .collect();
    assemble_record(
        results,
        initial.tier_count(),
        demand_path.len(),
        master_seed,
        true,
        runs,
    )
}

fn assemble_record(
    results: Vec<Result<Trajectory, String>>,
    tier_count: usize,
    horizon: usize,
    master_seed: u64,
    fixed_demand: bool,
    runs: usize,
) -> Result<EnsembleRecord, EnsembleError> {
    let mut record = EnsembleRecord {
        tier_count,
        horizon,
        orders: Vec::new(),
        costs: Vec::new(),
        total_costs: Vec::new(),
        master_seed,
        fixed_demand,
        excluded: Vec::new(),
    };
    for (r, result) in results.into_iter().enumerate() {
        match result {
            Ok(t) => {
                record.total_costs.push(t.total_cost());
                record.orders.push(t.orders);
                record.costs.push(t.costs);
            }
            Err(reason) => record.excluded.push(ExcludedRun { run: r, reason }),
        }
    }
    if record.orders.is_empty() {
        return Err(EnsembleError::AllRunsFailed(runs));
    }
    Ok(record)
}

fn linear_ensemble(
    scenario: &ScenarioConfig,
    runs: usize,
    master_seed: u64,
) -> Result<EnsembleRecord, EnsembleError> {
    let gains = scenario.gain_profile()?;
    let shocks = scenario.shock_specs()?;
    let horizon = scenario.run.horizon;
    let n = scenario.chain.tiers;
    let fixed = !scenario.demand.is_stochastic();
    let shared_path = fixed.then(|| {
        scenario
            .demand
            .sample_path(horizon, &mut stream_rng(master_seed, &[streams::DEMAND]))
    });
    let results: Vec<Result<Trajectory, String>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let demand = match &shared_path {
                Some(p) => p.clone(),
                None => scenario.demand.sample_path(
                    horizon,
                    &mut stream_rng(master_seed, &[r as u64, streams::DEMAND]),
                ),
            };
            let shock_paths: Vec<Vec<f64>> = shocks
                .iter()
                .enumerate()
                .map(|(k, spec)| {
                    let mut rng =
                        stream_rng(master_seed, &[r as u64, streams::POLICY, k as u64]);
                    (0..horizon).map(|_| spec.sample(&mut rng)).collect()
                })
                .collect();
            let tier_orders = simulate_linear(&gains, &demand, &shock_paths, horizon);
            let mut orders = vec![demand];
            orders.extend(tier_orders);
            Ok(Trajectory {
                orders,
                costs: vec![vec![0.0; horizon]; n],
                outcomes: Vec::new(),
                balances: Vec::new(),
            })
        })
        .collect();
    assemble_record(results, n, horizon, master_seed, fixed, runs)
}

// ---------------------------------------------------------------------------
// Run-to-run variance and bullwhip metrics
// ---------------------------------------------------------------------------

/// Run-to-run order variance per (tier, period); row 0 is the demand tier.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaTable {
    pub tier_count: usize,
    pub horizon: usize,
    /// `[tier 0..=n][t]`.
    pub values: Vec<Vec<f64>>,
}

/// Bessel-corrected variance across runs for every (tier, period).
pub fn run_to_run_variance(record: &EnsembleRecord) -> Result<SigmaTable, EnsembleError> {
    let r = record.run_count();
    if r < 2 {
        return Err(EnsembleError::InsufficientSamples { what: "runs", needed: 2, got: r });
    }
    let mut values = vec![vec![0.0; record.horizon]; record.tier_count + 1];
    let mut cell = Vec::with_capacity(r);
    for k in 0..=record.tier_count {
        for t in 0..record.horizon {
            cell.clear();
            cell.extend(record.orders.iter().map(|run| run[k][t]));
            values[k][t] = stats::sample_variance(&cell);
        }
    }
    Ok(SigmaTable { tier_count: record.tier_count, horizon: record.horizon, values })
}

/// Amplification ratios of run-to-run variance. Cells whose denominator
/// falls below the floor are carried as undefined rather than divided out.
#[derive(Debug, Clone)]
pub struct BullwhipMetrics {
    pub tau: f64,
    /// Adjacent-tier ratio at fixed period: `[k-1][t]` holds tier k over
    /// tier k-1.
    pub psi: Vec<Vec<Option<f64>>>,
    /// Within-tier ratio across periods: `[k-1][t]` holds period t+1 over
    /// period t.
    pub phi: Vec<Vec<Option<f64>>>,
    /// Cumulative adjacent-tier product up to tier j: `[j-1][t]`.
    pub cumulative: Vec<Vec<Option<f64>>>,
    /// Classical per-run ratio of time variances between adjacent tiers:
    /// `[run][k-1]`.
    pub classical: Vec<Vec<Option<f64>>>,
}

/// Adjacent-tier, within-tier, and cumulative variance amplification from a
/// run-to-run variance table, with denominator floor `tau`.
pub fn bullwhip_metrics(sigma: &SigmaTable, tau: f64) -> BullwhipMetrics {
    assert!(tau > 0.0, "denominator floor must be positive");
    let n = sigma.tier_count;
    let horizon = sigma.horizon;
    let mut psi = vec![vec![None; horizon]; n];
    let mut phi = vec![vec![None; horizon.saturating_sub(1)]; n];
    let mut cumulative = vec![vec![None; horizon]; n];
    for k in 1..=n {
        for t in 0..horizon {
            let denom = sigma.values[k - 1][t];
            if denom >= tau {
                psi[k - 1][t] = Some(sigma.values[k][t] / denom);
            }
        }
        for t in 0..horizon.saturating_sub(1) {
            let denom = sigma.values[k][t];
            if denom >= tau {
                phi[k - 1][t] = Some(sigma.values[k][t + 1] / denom);
            }
        }
    }
    for j in 1..=n {
        for t in 0..horizon {
            let factors: Vec<Option<f64>> = (1..=j).map(|k| psi[k - 1][t]).collect();
            if factors.iter().all(|f| f.is_some()) {
                cumulative[j - 1][t] = Some(factors.into_iter().map(|f| f.unwrap()).product());
            }
        }
    }
    BullwhipMetrics { tau, psi, phi, cumulative, classical: Vec::new() }
}

/// Classical bullwhip per run: the ratio of order variance over the
/// post-burn-in window between adjacent tiers.
pub fn classical_bullwhip(
    record: &EnsembleRecord,
    burn_in: usize,
    tau: f64,
) -> Vec<Vec<Option<f64>>> {
    record
        .orders
        .iter()
        .map(|run| {
            (1..=record.tier_count)
                .map(|k| {
                    let window = |row: &[f64]| row[burn_in.min(row.len())..].to_vec();
                    let upper = stats::sample_variance(&window(&run[k]));
                    let lower = stats::sample_variance(&window(&run[k - 1]));
                    (lower >= tau).then(|| upper / lower)
                })
                .collect()
        })
        .collect()
}

/// Full metric suite for a record.
pub fn assemble_metrics(
    record: &EnsembleRecord,
    tau: f64,
    burn_in: usize,
) -> Result<(SigmaTable, BullwhipMetrics), EnsembleError> {
    let sigma = run_to_run_variance(record)?;
    let mut metrics = bullwhip_metrics(&sigma, tau);
    metrics.classical = classical_bullwhip(record, burn_in, tau);
    Ok((sigma, metrics))
}

/// Default denominator floor, in squared order units.
pub const DEFAULT_TAU: f64 = 1e-9;

/// Stationary per-tier order variance by batch means: the time variance
/// inside each run's post-burn-in window, averaged over runs, with the
/// spread across runs giving the standard error. Index 0 is the demand tier.
pub fn stationary_variance_by_tier(record: &EnsembleRecord, burn_in: usize) -> Vec<(f64, f64)> {
    (0..=record.tier_count)
        .map(|k| {
            let per_run: Vec<f64> = record
                .orders
                .iter()
                .map(|run| stats::sample_variance(&run[k][burn_in.min(run[k].len())..]))
                .collect();
            (stats::mean(&per_run), stats::standard_error_of_mean(&per_run))
        })
        .collect()
}

/// Median over the post-burn-in window of the run-to-run variance, per tier.
pub fn median_sigma_by_tier(sigma: &SigmaTable, burn_in: usize) -> Vec<f64> {
    (0..=sigma.tier_count)
        .map(|k| stats::median(&sigma.values[k][burn_in.min(sigma.horizon)..]))
        .collect()
}

// ---------------------------------------------------------------------------
// Law-of-total-variance decomposition
// ---------------------------------------------------------------------------

/// Nested Monte Carlo decomposition of order variance per (tier, period).
#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub tier_count: usize,
    pub horizon: usize,
    pub outer: usize,
    pub inner: usize,
    /// Total variance from one independent draw per demand path.
    pub total: Vec<Vec<f64>>,
    pub se_total: Vec<Vec<f64>>,
    /// Demand-driven component; absent when only one demand path was used.
    pub v_demand: Option<Vec<Vec<f64>>>,
    pub se_demand: Option<Vec<Vec<f64>>>,
    /// Decision-driven component.
    pub v_decision: Vec<Vec<f64>>,
    pub se_decision: Vec<Vec<f64>>,
}

impl DecompositionResult {
    /// Per-tier summary at one period.
    pub fn at(&self, k: usize, t: usize) -> (f64, Option<f64>, f64) {
        (
            self.total[k][t],
            self.v_demand.as_ref().map(|v| v[k][t]),
            self.v_decision[k][t],
        )
    }
}

/// Samples `outer` demand paths and, for each, `inner` shock-randomized
/// runs conditioned on that path. The decision component is the average
/// within-path variance; the demand component is the variance of the
/// within-path means, debiased by the inner noise; the total is estimated
/// from one independent run per path.
pub fn decompose_variance(
    scenario: &ScenarioConfig,
    outer: usize,
    inner: usize,
    master_seed: u64,
) -> Result<DecompositionResult, EnsembleError> {
    if outer < 1 {
        return Err(EnsembleError::InsufficientSamples { what: "demand paths", needed: 1, got: outer });
    }
    if inner < 2 {
        return Err(EnsembleError::InsufficientSamples { what: "inner runs", needed: 2, got: inner });
    }
    if outer > 1 && !scenario.demand.is_stochastic() {
        return Err(EnsembleError::Scenario(ScenarioError::Invalid {
            field: "demand.regime".into(),
            reason: "multiple demand paths need a stochastic regime".into(),
        }));
    }
    let linear = scenario.is_linear()?;
    let horizon = scenario.run.horizon;
    let n = scenario.chain.tiers;

    // orders[m][r][k][t]
    let per_path: Vec<Result<Vec<Vec<Vec<f64>>>, String>> = (0..outer)
        .into_par_iter()
        .map(|m| {
            let demand = scenario.demand.sample_path(
                horizon,
                &mut stream_rng(master_seed, &[m as u64, streams::DEMAND]),
            );
            let mut runs = Vec::with_capacity(inner);
            for r in 0..inner {
                let seed = crate::scenario::derive_seed(master_seed, &[m as u64, r as u64]);
                let orders = if linear {
                    let gains = scenario.gain_profile().map_err(|e| e.to_string())?;
                    let shocks = scenario.shock_specs().map_err(|e| e.to_string())?;
                    let shock_paths: Vec<Vec<f64>> = shocks
                        .iter()
                        .enumerate()
                        .map(|(k, spec)| {
                            let mut rng = stream_rng(seed, &[streams::POLICY, k as u64]);
                            (0..horizon).map(|_| spec.sample(&mut rng)).collect()
                        })
                        .collect();
                    let mut orders = vec![demand.clone()];
                    orders.extend(simulate_linear(&gains, &demand, &shock_paths, horizon));
                    orders
                } else {
                    let policies = scenario.build_policies().map_err(|e| e.to_string())?;
                    let initial = scenario.build_chain().map_err(|e| e.to_string())?;
                    run_trajectory(&initial, &policies, &demand, seed)?.orders
                };
                runs.push(orders);
            }
            Ok(runs)
        })
        .collect();

    let mut paths = Vec::with_capacity(outer);
    for p in per_path {
        paths.push(p.map_err(|reason| {
            EnsembleError::Scenario(ScenarioError::Invalid { field: "run".into(), reason })
        })?);
    }

    let mut total = vec![vec![0.0; horizon]; n + 1];
    let mut se_total = vec![vec![0.0; horizon]; n + 1];
    let mut v_decision = vec![vec![0.0; horizon]; n + 1];
    let mut se_decision = vec![vec![0.0; horizon]; n + 1];
    let mut v_demand = vec![vec![0.0; horizon]; n + 1];
    let mut se_demand = vec![vec![0.0; horizon]; n + 1];

    for k in 0..=n {
        for t in 0..horizon {
            let inner_vars: Vec<f64> = paths
                .iter()
                .map(|runs| {
                    let xs: Vec<f64> = runs.iter().map(|o| o[k][t]).collect();
                    stats::sample_variance(&xs)
                })
                .collect();
            let inner_means: Vec<f64> = paths
                .iter()
                .map(|runs| stats::mean(&runs.iter().map(|o| o[k][t]).collect::<Vec<_>>()))
                .collect();
            let firsts: Vec<f64> = paths.iter().map(|runs| runs[0][k][t]).collect();

            v_decision[k][t] = stats::mean(&inner_vars);
            se_decision[k][t] = if outer >= 2 {
                stats::standard_error_of_mean(&inner_vars)
            } else {
                let xs: Vec<f64> = paths[0].iter().map(|o| o[k][t]).collect();
                stats::variance_standard_error(&xs)
            };

            if outer >= 2 {
                let raw = stats::sample_variance(&inner_means);
                v_demand[k][t] = raw - v_decision[k][t] / inner as f64;
                let se_means = stats::variance_standard_error(&inner_means);
                let se_corr = se_decision[k][t] / inner as f64;
                se_demand[k][t] = (se_means * se_means + se_corr * se_corr).sqrt();
                total[k][t] = stats::sample_variance(&firsts);
                se_total[k][t] = stats::variance_standard_error(&firsts);
            } else {
                total[k][t] = v_decision[k][t];
                se_total[k][t] = se_decision[k][t];
            }
        }
    }

    let has_demand = outer >= 2;
    Ok(DecompositionResult {
        tier_count: n,
        horizon,
        outer,
        inner,
        total,
        se_total,
        v_demand: has_demand.then_some(v_demand),
        se_demand: has_demand.then_some(se_demand),
        v_decision,
        se_decision,
    })
}

// ---------------------------------------------------------------------------
// Bound checks
// ---------------------------------------------------------------------------

/// Monte Carlo estimate with standard error for one tier.
#[derive(Debug, Clone, PartialEq)]
pub struct TierEstimate {
    pub tier: usize,
    /// (estimate, standard error) of the demand-driven variance.
    pub v_demand: Option<(f64, f64)>,
    /// (estimate, standard error) of the decision-driven variance.
    pub v_decision: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheckRow {
    pub tier: usize,
    pub component: &'static str,
    pub estimate: f64,
    pub se: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub rows: Vec<BoundCheckRow>,
    pub all_pass: bool,
    pub nonstationary: bool,
}

/// Compares Monte Carlo variance estimates against the analytic floors:
/// a tier passes when the estimate is at least the bound minus three
/// standard errors.
pub fn check_bounds(
    estimates: &[TierEstimate],
    bounds: &[crate::linear::BoundReport],
    nonstationary: bool,
) -> CheckReport {
    let mut rows = Vec::new();
    for est in estimates {
        let bound = bounds.iter().find(|b| b.tier == est.tier);
        let Some(bound) = bound else { continue };
        if let Some((value, se)) = est.v_demand {
            rows.push(BoundCheckRow {
                tier: est.tier,
                component: "demand",
                estimate: value,
                se,
                bound: bound.demand_bound,
                pass: value >= bound.demand_bound - 3.0 * se,
            });
        }
        if let Some((value, se)) = est.v_decision {
            rows.push(BoundCheckRow {
                tier: est.tier,
                component: "decision",
                estimate: value,
                se,
                bound: bound.decision_bound,
                pass: value >= bound.decision_bound - 3.0 * se,
            });
        }
    }
    let all_pass = rows.iter().all(|r| r.pass);
    CheckReport { rows, all_pass, nonstationary }
}

/// Flags a residual transient: the run-to-run variance trend over the
/// post-burn-in window, per tier, fitted by least squares; a relative drift
/// beyond fifty percent of the window mean trips the flag.
pub fn variance_trend_flag(sigma: &SigmaTable, burn_in: usize) -> bool {
    let start = burn_in.min(sigma.horizon.saturating_sub(2));
    (1..=sigma.tier_count).any(|k| {
        let ys = &sigma.values[k][start..];
        let len = ys.len();
        if len < 8 {
            return false;
        }
        let mean_y = stats::mean(ys);
        if mean_y <= 0.0 {
            return false;
        }
        let mean_x = (len - 1) as f64 / 2.0;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (i, y) in ys.iter().enumerate() {
            let dx = i as f64 - mean_x;
            sxx += dx * dx;
            sxy += dx * (y - mean_y);
        }
        let slope = sxy / sxx;
        (slope * len as f64 / mean_y).abs() > 0.5
    })
}

/// Per-(tier, period) boxplot summary of orders across runs.
#[derive(Debug, Clone)]
pub struct BoxRow {
    pub tier: usize,
    pub period: usize,
    pub summary: stats::BoxSummary,
}

pub fn box_summaries(record: &EnsembleRecord) -> Vec<BoxRow> {
    let mut rows = Vec::new();
    for k in 0..=record.tier_count {
        for t in 0..record.horizon {
            let xs: Vec<f64> = record.orders.iter().map(|run| run[k][t]).collect();
            rows.push(BoxRow { tier: k, period: t, summary: stats::box_summary(&xs) });
        }
    }
    rows
}
