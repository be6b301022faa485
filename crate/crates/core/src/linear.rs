//! Exact analysis of the linear replenishment benchmark.
//!
//! With unclamped orders, each tier's order process is a rational lag filter
//! applied to the downstream order stream plus a first-difference filter
//! applied to its own decision shocks:
//!
//! ```text
//! q_k = H_k(L) q_{k-1} + G(L) eps_k
//!
//! H_k(L) = ((1 + theta*lambda) L - (theta*lambda + 1 - lambda) L^2)
//!          / (1 - (1 - lambda) L)
//! G(L)   = 1 - L
//! ```
//!
//! Everything here is a pure function on immutable values: impulse
//! responses, squared frequency gains, the closed-form average gain
//! `Gamma = 1 + 2*theta*lambda + 2*theta^2*lambda^2 / (2 - lambda)`, the
//! variance lower bounds it implies tier by tier, the finite-horizon
//! variance accumulation, and a direct simulator of the scalar recursion
//! that double-checks the filter algebra.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinearError {
    #[error("parameter {field}: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

fn check_lambda(lambda: f64) -> Result<(), LinearError> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(LinearError::InvalidParam {
            field: "lambda",
            reason: format!("must lie in (0, 1], got {lambda}"),
        })
    }
}

fn check_theta(theta: f64) -> Result<(), LinearError> {
    if theta >= 0.0 {
        Ok(())
    } else {
        Err(LinearError::InvalidParam {
            field: "theta",
            reason: format!("must be >= 0, got {theta}"),
        })
    }
}

/// A rational filter in the lag operator: numerator and denominator
/// coefficients by ascending lag power, denominator constant term fixed
/// at one.
#[derive(Debug, Clone, PartialEq)]
pub struct LagFilter {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl LagFilter {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Self {
        assert!(!den.is_empty() && (den[0] - 1.0).abs() < 1e-12, "denominator constant term must be 1");
        LagFilter { num, den }
    }

    pub fn numerator(&self) -> &[f64] {
        &self.num
    }

    pub fn denominator(&self) -> &[f64] {
        &self.den
    }

    /// First `depth` impulse-response coefficients by long division.
    pub fn impulse_response(&self, depth: usize) -> Vec<f64> {
        let mut h = vec![0.0; depth];
        for m in 0..depth {
            let mut v = self.num.get(m).copied().unwrap_or(0.0);
            for i in 1..self.den.len().min(m + 1) {
                v -= self.den[i] * h[m - i];
            }
            h[m] = v;
        }
        h
    }

    /// Squared modulus of the frequency response at angular frequency
    /// `omega` in [-pi, pi].
    pub fn frequency_gain(&self, omega: f64) -> f64 {
        let z = Complex64::from_polar(1.0, -omega);
        let eval = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &coeff| acc * z + coeff)
        };
        let num = eval(&self.num);
        let den = eval(&self.den);
        (num / den).norm_sqr()
    }

    /// Mean of the squared gain over [-pi, pi] by composite trapezoid.
    /// The integrand is smooth and periodic, so the rule converges
    /// geometrically in the node count.
    pub fn mean_gain_quadrature(&self, nodes: usize) -> f64 {
        mean_over_frequencies(nodes, |omega| self.frequency_gain(omega))
    }

    /// Product filter: numerators and denominators multiply.
    pub fn cascade(filters: &[LagFilter]) -> LagFilter {
        assert!(!filters.is_empty(), "cascade of zero filters");
        let mut num = vec![1.0];
        let mut den = vec![1.0];
        for f in filters {
            num = poly_mul(&num, &f.num);
            den = poly_mul(&den, &f.den);
        }
        LagFilter::new(num, den)
    }

    /// Partial sum of squared impulse coefficients.
    pub fn sum_squared_impulse(&self, depth: usize) -> f64 {
        self.impulse_response(depth).iter().map(|h| h * h).sum()
    }
}

/// Trapezoid mean of `f` over [-pi, pi].
pub fn mean_over_frequencies(nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = nodes.max(2);
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let omega = -std::f64::consts::PI + i as f64 * h;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        acc += w * f(omega);
    }
    acc * h / (2.0 * std::f64::consts::PI)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Replenishment filter of one tier.
pub fn tier_filter(theta: f64, lambda: f64) -> Result<LagFilter, LinearError> {
    check_theta(theta)?;
    check_lambda(lambda)?;
    let tl = theta * lambda;
    Ok(LagFilter::new(
        vec![0.0, 1.0 + tl, -(tl + 1.0 - lambda)],
        vec![1.0, -(1.0 - lambda)],
    ))
}

/// Decision-shock filter: a first difference.
pub fn shock_filter() -> LagFilter {
    LagFilter::new(vec![1.0, -1.0], vec![1.0])
}

/// Closed-form squared gain of the tier filter.
pub fn tier_gain(theta: f64, lambda: f64, omega: f64) -> f64 {
    let c = 1.0 - omega.cos();
    1.0 + 2.0 * theta * lambda * (2.0 - lambda + theta * lambda) * c
        / (lambda * lambda + 2.0 * (1.0 - lambda) * c)
}

/// Closed-form average gain over frequencies:
/// `1 + 2*theta*lambda + 2*theta^2*lambda^2 / (2 - lambda)`.
pub fn average_gain(theta: f64, lambda: f64) -> f64 {
    1.0 + 2.0 * theta * lambda + 2.0 * theta * theta * lambda * lambda / (2.0 - lambda)
}

/// Impulse depth at which the discarded tail of the tier filter's squared
/// impulse response stays below `tol`. The coefficients beyond the second
/// decay geometrically at rate `1 - lambda`.
pub fn impulse_depth_for_tail(theta: f64, lambda: f64, tol: f64) -> usize {
    if lambda >= 1.0 || theta == 0.0 {
        return 3;
    }
    let rho = (1.0 - lambda) * (1.0 - lambda);
    let lead = theta * theta * lambda.powi(4);
    // tail after depth N (coefficients h_N, h_{N+1}, ...):
    // lead * rho^(N-2) / (1 - rho)
    let needed = (tol * (1.0 - rho) / lead).ln() / rho.ln();
    (needed.ceil().max(1.0) as usize) + 3
}

/// Per-tier order-up-to parameters for the benchmark chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierGainParams {
    pub theta: f64,
    pub lambda: f64,
}

/// Gain profile of a benchmark chain: one (theta, lambda) pair per tier,
/// downstream first.
#[derive(Debug, Clone, PartialEq)]
pub struct GainProfile {
    tiers: Vec<TierGainParams>,
}

impl GainProfile {
    pub fn new(tiers: Vec<TierGainParams>) -> Result<Self, LinearError> {
        if tiers.is_empty() {
            return Err(LinearError::InvalidParam {
                field: "tiers",
                reason: "profile needs at least one tier".into(),
            });
        }
        for t in &tiers {
            check_theta(t.theta)?;
            check_lambda(t.lambda)?;
        }
        Ok(GainProfile { tiers })
    }

    pub fn uniform(theta: f64, lambda: f64, tiers: usize) -> Result<Self, LinearError> {
        GainProfile::new(vec![TierGainParams { theta, lambda }; tiers])
    }

    pub fn tier_count(&self) -> usize {
        self.tiers.len()
    }

    pub fn params(&self, k: usize) -> TierGainParams {
        self.tiers[k - 1]
    }

    /// Average gain of tier `k` (1-based).
    pub fn gamma(&self, k: usize) -> f64 {
        let p = self.tiers[k - 1];
        average_gain(p.theta, p.lambda)
    }

    /// Uniform floor: the average gain at the smallest multiplier and
    /// smoothing across tiers (the gain is increasing in both).
    pub fn gamma_floor(&self) -> f64 {
        let theta = self.tiers.iter().map(|t| t.theta).fold(f64::INFINITY, f64::min);
        let lambda = self.tiers.iter().map(|t| t.lambda).fold(f64::INFINITY, f64::min);
        average_gain(theta, lambda)
    }

    pub fn filter(&self, k: usize) -> LagFilter {
        let p = self.tiers[k - 1];
        tier_filter(p.theta, p.lambda).expect("profile already validated")
    }

    /// Product of tier gains over `r = from..=to` (empty when from > to).
    fn gamma_product(&self, from: usize, to: usize) -> f64 {
        (from..=to).map(|r| self.gamma(r)).product()
    }
}

/// Lower bound on the demand-driven order variance at tier `k`: the demand
/// variance amplified by every tier gain below and including `k`. Tier 0 is
/// raw demand.
pub fn demand_bound(k: usize, sigma_d_sq: f64, gains: &GainProfile) -> f64 {
    sigma_d_sq * gains.gamma_product(1, k)
}

/// Lower bound on the decision-driven order variance at tier `k`: each
/// tier's shock variance enters through the difference filter (mean gain 2)
/// and is amplified by every gain strictly above it.
pub fn decision_bound(k: usize, shock_variances: &[f64], gains: &GainProfile) -> f64 {
    assert!(
        shock_variances.len() >= k,
        "need a shock variance for every tier up to k"
    );
    2.0 * (1..=k)
        .map(|j| shock_variances[j - 1] * gains.gamma_product(j + 1, k))
        .sum::<f64>()
}

/// Demand and decision variance floors for one tier, in both the exact
/// heterogeneous-product form and the uniform-floor form.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub tier: usize,
    pub gamma: f64,
    pub demand_bound: f64,
    pub decision_bound: f64,
    pub uniform_demand_bound: f64,
    pub uniform_decision_bound: f64,
}

/// Bound table for tiers `1..=k_max`.
pub fn bound_table(
    k_max: usize,
    sigma_d_sq: f64,
    shock_variances: &[f64],
    gains: &GainProfile,
) -> Vec<BoundReport> {
    let floor = gains.gamma_floor();
    (1..=k_max)
        .map(|k| BoundReport {
            tier: k,
            gamma: gains.gamma(k),
            demand_bound: demand_bound(k, sigma_d_sq, gains),
            decision_bound: decision_bound(k, shock_variances, gains),
            uniform_demand_bound: sigma_d_sq * floor.powi(k as i32),
            uniform_decision_bound: 2.0
                * (1..=k)
                    .map(|j| shock_variances[j - 1] * floor.powi((k - j) as i32))
                    .sum::<f64>(),
        })
        .collect()
}

/// Shock-to-order filter from tier `j`'s shock into tier `k`'s order: the
/// difference filter pushed through every tier filter strictly above `j`.
pub fn shock_path_filter(j: usize, k: usize, gains: &GainProfile) -> LagFilter {
    let mut filters: Vec<LagFilter> = ((j + 1)..=k).map(|r| gains.filter(r)).collect();
    filters.push(shock_filter());
    LagFilter::cascade(&filters)
}

/// Finite-horizon run-to-run variance of tier `k`'s order under a fixed
/// demand path, periods `1..=horizon`: partial sums of squared impulse
/// coefficients of each shock path, weighted by the shock variances. The
/// sequence is nondecreasing by construction.
pub fn intertemporal_variance(
    k: usize,
    horizon: usize,
    shock_variances: &[f64],
    gains: &GainProfile,
) -> Vec<f64> {
    assert!(horizon >= 1);
    assert!(shock_variances.len() >= k);
    let mut w = vec![0.0; horizon];
    for j in 1..=k {
        let sigma_sq = shock_variances[j - 1];
        if sigma_sq == 0.0 {
            continue;
        }
        let b = shock_path_filter(j, k, gains).impulse_response(horizon);
        let mut acc = 0.0;
        for t in 0..horizon {
            acc += b[t] * b[t];
            w[t] += sigma_sq * acc;
        }
    }
    w
}

/// Direct iteration of the benchmark recursion with zero pre-history:
/// per tier, forecast, inventory position, and the unclamped order rule.
/// `shocks[k-1][t]` is tier k's decision shock at period t. Returns order
/// paths per tier over `0..horizon`.
pub fn simulate_linear(
    gains: &GainProfile,
    demand: &[f64],
    shocks: &[Vec<f64>],
    horizon: usize,
) -> Vec<Vec<f64>> {
    let n = gains.tier_count();
    assert!(demand.len() >= horizon, "demand path shorter than horizon");
    assert!(shocks.len() >= n, "need a shock path per tier");
    let mut orders: Vec<Vec<f64>> = vec![vec![0.0; horizon]; n];
    let mut forecast = vec![0.0; n];
    let mut position = vec![0.0; n];
    for t in 0..horizon {
        for k in 0..n {
            let p = gains.params(k + 1);
            let down_prev = if t == 0 {
                0.0
            } else if k == 0 {
                demand[t - 1]
            } else {
                orders[k - 1][t - 1]
            };
            forecast[k] = p.lambda * down_prev + (1.0 - p.lambda) * forecast[k];
            let eps = shocks[k].get(t).copied().unwrap_or(0.0);
            let q = crate::policy::linear_order(forecast[k], p.theta, eps, position[k]);
            orders[k][t] = q;
            let down_now = if k == 0 { demand[t] } else { orders[k - 1][t] };
            position[k] += q - down_now;
        }
    }
    orders
}

/// Filter-algebra evaluation of the same order paths: convolve the demand
/// path with the cascaded tier filters and each shock path with its
/// shock-to-order filter. Exact on the horizon because convolution at
/// period t only reads coefficients up to t.
pub fn linear_orders_via_filters(
    gains: &GainProfile,
    demand: &[f64],
    shocks: &[Vec<f64>],
    horizon: usize,
) -> Vec<Vec<f64>> {
    let n = gains.tier_count();
    let mut orders: Vec<Vec<f64>> = vec![vec![0.0; horizon]; n];
    for k in 1..=n {
        let demand_filters: Vec<LagFilter> = (1..=k).map(|r| gains.filter(r)).collect();
        let a = LagFilter::cascade(&demand_filters).impulse_response(horizon);
        let mut path = convolve(&a, demand, horizon);
        for j in 1..=k {
            let b = shock_path_filter(j, k, gains).impulse_response(horizon);
            let contribution = convolve(&b, &shocks[j - 1], horizon);
            for t in 0..horizon {
                path[t] += contribution[t];
            }
        }
        orders[k - 1] = path;
    }
    orders
}

fn convolve(kernel: &[f64], signal: &[f64], horizon: usize) -> Vec<f64> {
    let mut out = vec![0.0; horizon];
    for t in 0..horizon {
        let mut acc = 0.0;
        for m in 0..=t.min(kernel.len() - 1) {
            if t - m < signal.len() {
                acc += kernel[m] * signal[t - m];
            }
        }
        out[t] = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_filter_impulse_matches_closed_form() {
        let h = tier_filter(1.0, 1.0).unwrap().impulse_response(6);
        assert_eq!(h, vec![0.0, 2.0, -1.0, 0.0, 0.0, 0.0]);

        let h = tier_filter(2.0, 0.5).unwrap().impulse_response(5);
        assert!((h[1] - 2.0).abs() < 1e-12);
        assert!((h[2] - -0.5).abs() < 1e-12);
        assert!((h[3] - -0.25).abs() < 1e-12);
        assert!((h[4] - -0.125).abs() < 1e-12);

        let g = shock_filter().impulse_response(4);
        assert_eq!(g, vec![1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn closed_form_impulse_coefficients_hold_on_a_grid() {
        for &theta in &[0.25, 1.0, 2.5, 4.0] {
            for &lambda in &[0.05, 0.3, 0.7, 1.0] {
                let h = tier_filter(theta, lambda).unwrap().impulse_response(40);
                assert_eq!(h[0], 0.0);
                assert!((h[1] - (1.0 + theta * lambda)).abs() < 1e-12);
                for j in 2..40 {
                    let expected = -theta * lambda * lambda * (1.0 - lambda).powi(j as i32 - 2);
                    assert!(
                        (h[j] - expected).abs() < 1e-12,
                        "theta {theta} lambda {lambda} j {j}"
                    );
                }
            }
        }
    }

    #[test]
    fn frequency_gain_examples() {
        assert!((tier_filter(0.7, 0.4).unwrap().frequency_gain(0.0) - 1.0).abs() < 1e-12);
        assert!((tier_filter(1.0, 1.0).unwrap().frequency_gain(std::f64::consts::PI) - 9.0).abs() < 1e-12);
        assert!((shock_filter().frequency_gain(std::f64::consts::PI) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn filter_gain_equals_closed_form_gain() {
        for &theta in &[0.25, 1.0, 3.0] {
            for &lambda in &[0.1, 0.5, 1.0] {
                let f = tier_filter(theta, lambda).unwrap();
                for i in 0..64 {
                    let omega = -std::f64::consts::PI + i as f64 * 0.0982;
                    let direct = f.frequency_gain(omega);
                    let closed = tier_gain(theta, lambda, omega);
                    assert!(
                        (direct - closed).abs() < 1e-9 * direct.max(1.0),
                        "theta {theta} lambda {lambda} omega {omega}: {direct} vs {closed}"
                    );
                }
            }
        }
    }

    #[test]
    fn average_gain_examples() {
        assert_eq!(average_gain(0.0, 0.5), 1.0);
        assert!((average_gain(1.0, 1.0) - 5.0).abs() < 1e-12);
        assert!((average_gain(3.0, 0.5) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn average_gain_matches_impulse_sum() {
        for &theta in &[0.25, 1.0, 4.0] {
            for &lambda in &[0.05, 0.5, 1.0] {
                let depth = impulse_depth_for_tail(theta, lambda, 1e-12);
                let sum = tier_filter(theta, lambda).unwrap().sum_squared_impulse(depth);
                assert!(
                    (sum - average_gain(theta, lambda)).abs() < 1e-9,
                    "theta {theta} lambda {lambda}"
                );
            }
        }
    }

    #[test]
    fn demand_bound_examples() {
        let gains = GainProfile::uniform(1.0, 1.0, 3).unwrap();
        assert!((demand_bound(1, 1.0, &gains) - 5.0).abs() < 1e-12);
        assert!((demand_bound(2, 1.0, &gains) - 25.0).abs() < 1e-12);
        assert_eq!(demand_bound(0, 1.5, &gains), 1.5);
    }

    #[test]
    fn decision_bound_examples() {
        let gains = GainProfile::uniform(1.0, 1.0, 3).unwrap();
        assert!((decision_bound(1, &[1.0, 0.0, 0.0], &gains) - 2.0).abs() < 1e-12);
        assert!((decision_bound(2, &[1.0, 0.0, 0.0], &gains) - 10.0).abs() < 1e-12);
        assert_eq!(decision_bound(3, &[0.0, 0.0, 0.0], &gains), 0.0);
        // geometric accumulation with unit shock variances everywhere
        assert!((decision_bound(3, &[1.0, 1.0, 1.0], &gains) - 62.0).abs() < 1e-12);
    }

    #[test]
    fn cascade_examples() {
        let g = shock_filter();
        assert_eq!(LagFilter::cascade(&[g.clone()]).impulse_response(3), vec![1.0, -1.0, 0.0]);
        assert_eq!(
            LagFilter::cascade(&[g.clone(), g.clone()]).impulse_response(4),
            vec![1.0, -2.0, 1.0, 0.0]
        );
        let h = tier_filter(1.0, 1.0).unwrap();
        assert_eq!(
            LagFilter::cascade(&[h, g]).impulse_response(5),
            vec![0.0, 2.0, -3.0, 1.0, 0.0]
        );
    }

    #[test]
    fn cascade_impulse_is_convolution() {
        let a = tier_filter(2.0, 0.3).unwrap();
        let b = tier_filter(0.8, 0.9).unwrap();
        let depth = 50;
        let direct = LagFilter::cascade(&[a.clone(), b.clone()]).impulse_response(depth);
        let ha = a.impulse_response(depth);
        let hb = b.impulse_response(depth);
        for m in 0..depth {
            let conv: f64 = (0..=m).map(|i| ha[i] * hb[m - i]).sum();
            assert!((direct[m] - conv).abs() < 1e-10, "m {m}");
        }
    }

    #[test]
    fn intertemporal_variance_examples() {
        let g1 = GainProfile::uniform(1.0, 1.0, 1).unwrap();
        assert_eq!(intertemporal_variance(1, 3, &[1.0], &g1), vec![1.0, 2.0, 2.0]);

        let g2 = GainProfile::uniform(1.0, 1.0, 2).unwrap();
        let w = intertemporal_variance(2, 4, &[1.0, 0.0], &g2);
        assert_eq!(w, vec![0.0, 4.0, 13.0, 14.0]);

        let zeros = intertemporal_variance(2, 5, &[0.0, 0.0], &g2);
        assert!(zeros.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn intertemporal_variance_is_nondecreasing() {
        let gains = GainProfile::new(vec![
            TierGainParams { theta: 2.0, lambda: 0.4 },
            TierGainParams { theta: 1.0, lambda: 0.8 },
            TierGainParams { theta: 3.0, lambda: 0.2 },
        ])
        .unwrap();
        let w = intertemporal_variance(3, 30, &[0.5, 1.0, 2.0], &gains);
        for t in 1..w.len() {
            assert!(w[t] >= w[t - 1] - 1e-12);
        }
    }

    #[test]
    fn simulate_linear_reproduces_impulse_responses() {
        let gains = GainProfile::uniform(1.0, 1.0, 1).unwrap();
        let mut demand = vec![0.0; 8];
        demand[0] = 1.0;
        let orders = simulate_linear(&gains, &demand, &[vec![0.0; 8]], 8);
        let h = tier_filter(1.0, 1.0).unwrap().impulse_response(8);
        for t in 0..8 {
            assert!((orders[0][t] - h[t]).abs() < 1e-12, "t {t}");
        }

        let mut shock = vec![0.0; 8];
        shock[0] = 1.0;
        let orders = simulate_linear(&gains, &vec![0.0; 8], &[shock], 8);
        assert!((orders[0][0] - 1.0).abs() < 1e-12);
        assert!((orders[0][1] + 1.0).abs() < 1e-12);
        for t in 2..8 {
            assert!(orders[0][t].abs() < 1e-12);
        }
    }

    #[test]
    fn simulate_linear_zero_inputs_stay_zero() {
        let gains = GainProfile::uniform(2.0, 0.5, 3).unwrap();
        let orders = simulate_linear(&gains, &vec![0.0; 20], &vec![vec![0.0; 20]; 3], 20);
        assert!(orders.iter().flatten().all(|q| *q == 0.0));
    }

    #[test]
    fn recursion_and_filter_paths_agree() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let gains = GainProfile::new(vec![
            TierGainParams { theta: 1.5, lambda: 0.6 },
            TierGainParams { theta: 0.9, lambda: 0.3 },
            TierGainParams { theta: 2.2, lambda: 0.95 },
        ])
        .unwrap();
        let horizon = 60;
        let demand: Vec<f64> = (0..horizon).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let shocks: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..horizon).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let direct = simulate_linear(&gains, &demand, &shocks, horizon);
        let filtered = linear_orders_via_filters(&gains, &demand, &shocks, horizon);
        for k in 0..3 {
            for t in 0..horizon {
                assert!(
                    (direct[k][t] - filtered[k][t]).abs() < 1e-9,
                    "tier {k} t {t}: {} vs {}",
                    direct[k][t],
                    filtered[k][t]
                );
            }
        }
    }

    #[test]
    fn mean_gain_of_difference_filter_is_two() {
        let mean = shock_filter().mean_gain_quadrature(1 << 14);
        assert!((mean - 2.0).abs() < 1e-9, "{mean}");
    }

    #[test]
    fn lambda_out_of_range_is_rejected() {
        assert!(tier_filter(1.0, 0.0).is_err());
        assert!(tier_filter(1.0, 1.5).is_err());
        assert!(tier_filter(-1.0, 0.5).is_err());
    }
}
