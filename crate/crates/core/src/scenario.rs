//! Scenario configuration: chain layout, demand regime, per-tier policies,
//! horizon, and seeds, with a stable content hash for output manifests.
//!
//! A scenario is a single TOML document. Flags on the command line may
//! override scalar fields (runs, seed, horizon) but never chain structure.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::Digest;
use thiserror::Error;

use crate::chain::{ChainState, TierParams};
use crate::grpo::CategoricalPolicy;
use crate::linear::{GainProfile, TierGainParams};
use crate::policy::{
    AgentPolicy, DecisionShock, MajorityVote, PolicyError, RemoteAgentConfig, RemoteAgentPolicy,
    HttpTransport,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config field {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("failed to parse config: {0}")]
    Parse(String),
    #[error(transparent)]
    Chain(#[from] crate::chain::ChainError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
}

// ---------------------------------------------------------------------------
// Seed streams
// ---------------------------------------------------------------------------

/// Stream tags for deriving independent substreams from one master seed.
pub mod streams {
    pub const DEMAND: u64 = 1;
    pub const POLICY: u64 = 2;
    pub const CURRICULUM: u64 = 3;
    pub const EVAL: u64 = 4;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically derives a child seed from a master seed and a tag path
/// (for example `[run_index, streams::POLICY, tier]`).
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ 0xA076_1D64_78BD_642F);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag));
    }
    state
}

/// RNG on a derived stream.
pub fn stream_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

// ---------------------------------------------------------------------------
// Demand regimes
// ---------------------------------------------------------------------------

/// Customer demand process for one scenario or episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum DemandRegime {
    /// Constant demand every period.
    Fixed { rate: f64 },
    /// Explicit path; the final value extends past the listed periods.
    Pattern { values: Vec<f64> },
    /// The classic step: `low` for the first `switch_period` periods, then
    /// `high` forever.
    ClassicStep {
        #[serde(default = "default_step_low")]
        low: f64,
        #[serde(default = "default_step_high")]
        high: f64,
        #[serde(default = "default_switch")]
        switch_period: usize,
    },
    /// Independent draws from a normal law; may go negative, so only the
    /// linear benchmark accepts it.
    IidNormal { mean: f64, std: f64 },
    /// Independent Poisson draws.
    Poisson { lambda: f64 },
    /// Independent truncated-normal draws on [lo, hi].
    TruncNormal {
        mu: f64,
        sigma: f64,
        #[serde(default)]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
    },
}

fn default_step_low() -> f64 {
    4.0
}
fn default_step_high() -> f64 {
    8.0
}
fn default_switch() -> usize {
    4
}
fn default_hi() -> f64 {
    50.0
}

impl DemandRegime {
    /// The classic evaluation pattern: four periods at 4, then 8 forever.
    pub fn classic_step() -> Self {
        DemandRegime::ClassicStep { low: 4.0, high: 8.0, switch_period: 4 }
    }

    /// Whether repeated draws differ (demand contributes run-to-run
    /// variance) or every run sees the same path.
    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            DemandRegime::IidNormal { .. }
                | DemandRegime::Poisson { .. }
                | DemandRegime::TruncNormal { .. }
        )
    }

    /// Whether every possible draw is nonnegative (required by the
    /// physical simulator).
    pub fn is_nonnegative(&self) -> bool {
        match self {
            DemandRegime::Fixed { rate } => *rate >= 0.0,
            DemandRegime::Pattern { values } => values.iter().all(|v| *v >= 0.0),
            DemandRegime::ClassicStep { low, high, .. } => *low >= 0.0 && *high >= 0.0,
            DemandRegime::IidNormal { .. } => false,
            DemandRegime::Poisson { .. } => true,
            DemandRegime::TruncNormal { lo, .. } => *lo >= 0.0,
        }
    }

    /// Rate used to prime pipelines and forecasts at initialization.
    pub fn nominal_rate(&self) -> f64 {
        match self {
            DemandRegime::Fixed { rate } => *rate,
            DemandRegime::Pattern { values } => values.first().copied().unwrap_or(0.0),
            DemandRegime::ClassicStep { low, .. } => *low,
            DemandRegime::IidNormal { mean, .. } => mean.max(0.0),
            DemandRegime::Poisson { lambda } => *lambda,
            DemandRegime::TruncNormal { mu, lo, hi, .. } => mu.clamp(*lo, *hi),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |field: &str, reason: String| -> Result<(), ScenarioError> {
            Err(ScenarioError::Invalid { field: format!("demand.{field}"), reason })
        };
        match self {
            DemandRegime::Fixed { rate } if *rate < 0.0 => {
                bad("rate", format!("must be >= 0, got {rate}"))
            }
            DemandRegime::Pattern { values } if values.is_empty() => {
                bad("values", "must be nonempty".into())
            }
            DemandRegime::IidNormal { std, .. } if *std < 0.0 => {
                bad("std", format!("must be >= 0, got {std}"))
            }
            DemandRegime::Poisson { lambda } if !(*lambda > 0.0) => {
                bad("lambda", format!("must be > 0, got {lambda}"))
            }
            DemandRegime::TruncNormal { sigma, lo, hi, .. } if *sigma < 0.0 || lo >= hi => {
                bad("sigma/lo/hi", "need sigma >= 0 and lo < hi".into())
            }
            _ => Ok(()),
        }
    }

    /// Draws a demand path of `horizon` periods.
    pub fn sample_path(&self, horizon: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            DemandRegime::Fixed { rate } => vec![*rate; horizon],
            DemandRegime::Pattern { values } => (0..horizon)
                .map(|t| values.get(t).copied().unwrap_or(*values.last().unwrap()))
                .collect(),
            DemandRegime::ClassicStep { low, high, switch_period } => (0..horizon)
                .map(|t| if t < *switch_period { *low } else { *high })
                .collect(),
            DemandRegime::IidNormal { mean, std } => {
                let normal = Normal::new(*mean, (*std).max(f64::MIN_POSITIVE)).expect("validated");
                (0..horizon).map(|_| normal.sample(rng)).collect()
            }
            DemandRegime::Poisson { lambda } => {
                let pois = Poisson::new(*lambda).expect("validated");
                (0..horizon).map(|_| pois.sample(rng)).collect()
            }
            DemandRegime::TruncNormal { mu, sigma, lo, hi } => {
                let normal = Normal::new(*mu, (*sigma).max(f64::MIN_POSITIVE)).expect("validated");
                (0..horizon)
                    .map(|_| {
                        for _ in 0..256 {
                            let d = normal.sample(rng);
                            if d >= *lo && d <= *hi {
                                return d;
                            }
                        }
                        mu.clamp(*lo, *hi)
                    })
                    .collect()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Policy specs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// Clamped order-up-to rule with an optional decision shock.
    OrderUpTo {
        theta: Option<f64>,
        #[serde(default)]
        shock: DecisionShock,
    },
    /// Unclamped benchmark rule; the scenario runs on the linear recursion
    /// instead of the physical simulator.
    Linear {
        theta: Option<f64>,
        #[serde(default)]
        shock: DecisionShock,
    },
    /// Categorical policy over an integer order grid, optionally loaded
    /// from a training checkpoint.
    Categorical {
        max_order: Option<u32>,
        checkpoint: Option<String>,
    },
    /// Remote order service speaking the prompt protocol.
    Remote {
        #[serde(flatten)]
        remote: RemoteAgentConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    #[serde(flatten)]
    pub kind: PolicyKind,
    /// Wrap the policy in majority voting over this many samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote: Option<usize>,
}

impl PolicySpec {
    pub fn order_up_to(shock: DecisionShock) -> Self {
        PolicySpec { kind: PolicyKind::OrderUpTo { theta: None, shock }, vote: None }
    }

    pub fn linear(shock: DecisionShock) -> Self {
        PolicySpec { kind: PolicyKind::Linear { theta: None, shock }, vote: None }
    }
}

// ---------------------------------------------------------------------------
// Scenario config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSection {
    pub tiers: usize,
    #[serde(default = "default_on_hand")]
    pub on_hand: f64,
    /// Pipeline priming rate; defaults to the demand regime's nominal rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_rate: Option<f64>,
    #[serde(default = "TierParams::classic")]
    pub defaults: TierParams,
    /// Optional per-tier overrides, downstream first; length must equal
    /// `tiers` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<Vec<TierParams>>,
}

fn default_on_hand() -> f64 {
    12.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub horizon: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Periods dropped before stationary variance estimation; defaults to
    /// five times the longest lead time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub chain: ChainSection,
    pub demand: DemandRegime,
    /// Policy applied at every tier unless `policies` lists one per tier.
    pub policy: PolicySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policies: Option<Vec<PolicySpec>>,
    pub run: RunSection,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Hex SHA-256 of the canonical serialized form.
    pub fn content_hash(&self) -> String {
        let mut hasher = sha2::Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        hex_string(&hasher.finalize())
    }

    pub fn tier_params(&self) -> Result<Vec<TierParams>, ScenarioError> {
        match &self.chain.tier {
            Some(list) => {
                if list.len() != self.chain.tiers {
                    return Err(ScenarioError::Invalid {
                        field: "chain.tier".into(),
                        reason: format!(
                            "expected {} entries, got {}",
                            self.chain.tiers,
                            list.len()
                        ),
                    });
                }
                Ok(list.clone())
            }
            None => Ok(vec![self.chain.defaults.clone(); self.chain.tiers]),
        }
    }

    pub fn per_tier_policies(&self) -> Result<Vec<PolicySpec>, ScenarioError> {
        match &self.policies {
            Some(list) => {
                if list.len() != self.chain.tiers {
                    return Err(ScenarioError::Invalid {
                        field: "policies".into(),
                        reason: format!(
                            "expected {} entries, got {}",
                            self.chain.tiers,
                            list.len()
                        ),
                    });
                }
                Ok(list.clone())
            }
            None => Ok(vec![self.policy.clone(); self.chain.tiers]),
        }
    }

    /// Whether the scenario runs on the unclamped benchmark recursion.
    pub fn is_linear(&self) -> Result<bool, ScenarioError> {
        let specs = self.per_tier_policies()?;
        let linear_count = specs
            .iter()
            .filter(|s| matches!(s.kind, PolicyKind::Linear { .. }))
            .count();
        if linear_count == 0 {
            Ok(false)
        } else if linear_count == specs.len() {
            Ok(true)
        } else {
            Err(ScenarioError::Invalid {
                field: "policies".into(),
                reason: "linear and physical policies cannot be mixed".into(),
            })
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.chain.tiers == 0 {
            return Err(ScenarioError::Invalid {
                field: "chain.tiers".into(),
                reason: "must be at least 1".into(),
            });
        }
        if self.run.horizon == 0 {
            return Err(ScenarioError::Invalid {
                field: "run.horizon".into(),
                reason: "must be at least 1".into(),
            });
        }
        for (i, p) in self.tier_params()?.iter().enumerate() {
            p.validate(i + 1).map_err(ScenarioError::Chain)?;
        }
        self.demand.validate()?;
        let linear = self.is_linear()?;
        if !linear && !self.demand.is_nonnegative() {
            return Err(ScenarioError::Invalid {
                field: "demand.regime".into(),
                reason: "physical policies need a nonnegative demand regime".into(),
            });
        }
        for (i, spec) in self.per_tier_policies()?.iter().enumerate() {
            if let Some(v) = spec.vote {
                if v == 0 {
                    return Err(ScenarioError::Invalid {
                        field: format!("policies[{i}].vote"),
                        reason: "vote size must be at least 1".into(),
                    });
                }
            }
            match &spec.kind {
                PolicyKind::OrderUpTo { theta, shock } | PolicyKind::Linear { theta, shock } => {
                    if let Some(t) = theta {
                        if !(*t > 0.0) {
                            return Err(ScenarioError::Invalid {
                                field: format!("policies[{i}].theta"),
                                reason: format!("must be > 0, got {t}"),
                            });
                        }
                    }
                    shock.validate()?;
                }
                PolicyKind::Categorical { max_order, .. } => {
                    if let Some(m) = max_order {
                        if *m == 0 {
                            return Err(ScenarioError::Invalid {
                                field: format!("policies[{i}].max_order"),
                                reason: "must be at least 1".into(),
                            });
                        }
                    }
                }
                PolicyKind::Remote { remote } => {
                    if remote.endpoint.is_empty() {
                        return Err(ScenarioError::Invalid {
                            field: format!("policies[{i}].endpoint"),
                            reason: "must not be empty".into(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Initial chain state for physical runs.
    pub fn build_chain(&self) -> Result<ChainState, ScenarioError> {
        let rate = self.chain.steady_rate.unwrap_or_else(|| self.demand.nominal_rate());
        Ok(ChainState::new(self.tier_params()?, self.chain.on_hand, rate)?)
    }

    /// Gain profile of the benchmark chain: theta from the policy (falling
    /// back to the tier's target multiplier) and lambda from the tier.
    pub fn gain_profile(&self) -> Result<GainProfile, ScenarioError> {
        let params = self.tier_params()?;
        let specs = self.per_tier_policies()?;
        let tiers = params
            .iter()
            .zip(&specs)
            .map(|(p, s)| {
                let theta = match &s.kind {
                    PolicyKind::OrderUpTo { theta, .. } | PolicyKind::Linear { theta, .. } => {
                        theta.unwrap_or(p.target_multiplier)
                    }
                    _ => p.target_multiplier,
                };
                TierGainParams { theta, lambda: p.smoothing }
            })
            .collect();
        GainProfile::new(tiers).map_err(|e| ScenarioError::Invalid {
            field: "chain".into(),
            reason: e.to_string(),
        })
    }

    /// Per-tier decision-shock laws (zero for policies without one).
    pub fn shock_specs(&self) -> Result<Vec<DecisionShock>, ScenarioError> {
        Ok(self
            .per_tier_policies()?
            .iter()
            .map(|s| match &s.kind {
                PolicyKind::OrderUpTo { shock, .. } | PolicyKind::Linear { shock, .. } => {
                    shock.clone()
                }
                _ => DecisionShock::Zero,
            })
            .collect())
    }

    /// Instantiates one agent per tier for physical runs.
    pub fn build_policies(&self) -> Result<Vec<Arc<dyn AgentPolicy>>, ScenarioError> {
        let params = self.tier_params()?;
        let specs = self.per_tier_policies()?;
        let mut out: Vec<Arc<dyn AgentPolicy>> = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let base: Box<dyn AgentPolicy> = match &spec.kind {
                PolicyKind::OrderUpTo { theta, shock } => {
                    let theta = theta.unwrap_or(params[i].target_multiplier);
                    Box::new(crate::policy::OrderUpToPolicy::new(theta, shock.clone())?)
                }
                PolicyKind::Linear { .. } => {
                    return Err(ScenarioError::Invalid {
                        field: format!("policies[{i}].kind"),
                        reason: "linear policies run on the benchmark recursion, not agents"
                            .into(),
                    })
                }
                PolicyKind::Categorical { max_order, checkpoint } => match checkpoint {
                    Some(path) => Box::new(load_checkpoint_policy(path)?),
                    None => Box::new(CategoricalPolicy::uniform(max_order.unwrap_or(64))),
                },
                PolicyKind::Remote { remote } => {
                    let transport =
                        HttpTransport::new(remote.endpoint.clone(), remote.timeout_ms);
                    let template = crate::policy::role_template(i + 1, specs.len());
                    Box::new(
                        RemoteAgentPolicy::new(
                            transport,
                            template,
                            remote.retries,
                            remote.fallback.clone(),
                        )
                        .with_lead_times(params[i].order_delay, params[i].ship_delay),
                    )
                }
            };
            let agent: Arc<dyn AgentPolicy> = match spec.vote {
                Some(n) if n > 1 => Arc::new(MajorityVote::new(base, n)?),
                _ => Arc::from(base),
            };
            out.push(agent);
        }
        Ok(out)
    }

    /// Replaces every remote endpoint, used for environment overrides.
    pub fn override_remote_endpoint(&mut self, endpoint: &str) {
        let apply = |spec: &mut PolicySpec| {
            if let PolicyKind::Remote { remote } = &mut spec.kind {
                remote.endpoint = endpoint.to_string();
            }
        };
        apply(&mut self.policy);
        if let Some(list) = &mut self.policies {
            list.iter_mut().for_each(apply);
        }
    }

    /// Default burn-in: five times the longest lead time.
    pub fn burn_in(&self) -> usize {
        self.run.burn_in.unwrap_or_else(|| {
            let max_lead = self
                .tier_params()
                .map(|ps| ps.iter().map(|p| p.lead_time()).max().unwrap_or(0))
                .unwrap_or(0);
            5 * max_lead as usize
        })
    }
}

impl AgentPolicy for Box<dyn AgentPolicy> {
    fn decide(
        &self,
        obs: &crate::policy::Observation,
        rng: &mut ChaCha8Rng,
    ) -> Result<crate::policy::Decision, PolicyError> {
        (**self).decide(obs, rng)
    }
}

fn load_checkpoint_policy(path: &str) -> Result<CategoricalPolicy, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Checkpoint {
        path: path.to_string(),
        reason: e.to_string(),
    })?;
    crate::grpo::Checkpoint::from_json(&text)
        .map(|c| c.into_policy())
        .map_err(|e| ScenarioError::Checkpoint { path: path.to_string(), reason: e.to_string() })
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Demand curricula for training
// ---------------------------------------------------------------------------

/// Synthetic demand curriculum: each episode draws a regime uniformly at
/// random and fresh hyperparameters from the configured ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandCurriculum {
    #[serde(default = "default_regimes")]
    pub regimes: Vec<CurriculumRegime>,
    /// Resample hyperparameters every episode; otherwise one draw is made
    /// when training starts and reused.
    #[serde(default = "default_true")]
    pub resample_per_episode: bool,
}

fn default_true() -> bool {
    true
}

fn default_regimes() -> Vec<CurriculumRegime> {
    vec![CurriculumRegime::poisson_default(), CurriculumRegime::trunc_normal_default()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum CurriculumRegime {
    /// Poisson demand with the rate drawn uniformly per episode.
    Poisson { lambda_lo: f64, lambda_hi: f64 },
    /// Truncated-normal demand with mean and spread drawn uniformly.
    TruncNormal {
        mu_lo: f64,
        mu_hi: f64,
        sigma_lo: f64,
        sigma_hi: f64,
        #[serde(default)]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
    },
}

impl CurriculumRegime {
    pub fn poisson_default() -> Self {
        CurriculumRegime::Poisson { lambda_lo: 5.0, lambda_hi: 20.0 }
    }

    pub fn trunc_normal_default() -> Self {
        CurriculumRegime::TruncNormal {
            mu_lo: 8.0,
            mu_hi: 20.0,
            sigma_lo: 2.0,
            sigma_hi: 6.0,
            lo: 0.0,
            hi: 50.0,
        }
    }

    fn instantiate(&self, rng: &mut ChaCha8Rng) -> DemandRegime {
        match self {
            CurriculumRegime::Poisson { lambda_lo, lambda_hi } => DemandRegime::Poisson {
                lambda: rng.gen_range(*lambda_lo..=*lambda_hi),
            },
            CurriculumRegime::TruncNormal { mu_lo, mu_hi, sigma_lo, sigma_hi, lo, hi } => {
                DemandRegime::TruncNormal {
                    mu: rng.gen_range(*mu_lo..=*mu_hi),
                    sigma: rng.gen_range(*sigma_lo..=*sigma_hi),
                    lo: *lo,
                    hi: *hi,
                }
            }
        }
    }
}

impl Default for DemandCurriculum {
    fn default() -> Self {
        DemandCurriculum { regimes: default_regimes(), resample_per_episode: true }
    }
}

impl DemandCurriculum {
    pub fn single(regime: CurriculumRegime) -> Self {
        DemandCurriculum { regimes: vec![regime], resample_per_episode: true }
    }

    /// Demand path for one episode; `rng` advances across episodes, and the
    /// frozen variant reuses the first instantiation.
    pub fn sample_episode(
        &self,
        horizon: usize,
        rng: &mut ChaCha8Rng,
        frozen: &mut Option<DemandRegime>,
    ) -> Vec<f64> {
        let regime = if self.resample_per_episode {
            let idx = rng.gen_range(0..self.regimes.len());
            self.regimes[idx].instantiate(rng)
        } else {
            if frozen.is_none() {
                let idx = rng.gen_range(0..self.regimes.len());
                *frozen = Some(self.regimes[idx].instantiate(rng));
            }
            frozen.clone().unwrap()
        };
        regime.sample_path(horizon, rng)
    }
}
