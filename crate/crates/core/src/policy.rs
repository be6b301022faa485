//! Ordering policies and the agent decision interface.
//!
//! A policy sees only its own tier: local balances, the most recent
//! downstream order, the last delivery, and cost rates. Policies are
//! immutable; all randomness comes from the RNG handed to `decide`, so a
//! fixed seed reproduces every decision bit for bit.

use rand::Rng;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainState, StepOutcome};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy parameter {field}: {reason}")]
    InvalidParam { field: String, reason: String },
    #[error("protocol violation: {0}")]
    Protocol(#[from] ProtocolViolation),
    #[error("remote agent failed after {attempts} attempts: {last_error}")]
    RemoteExhausted { attempts: u32, last_error: String },
}

/// Everything a tier's agent is allowed to see when deciding its order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// 1-based week about to be played.
    pub week: u32,
    /// 1-based tier index.
    pub tier: usize,
    pub on_hand: f64,
    pub backlog: f64,
    pub outstanding: f64,
    pub inventory_position: f64,
    /// Current exponentially smoothed forecast of downstream orders.
    pub forecast: f64,
    /// Downstream order observed last period.
    pub incoming_order: f64,
    /// This tier's own order last period.
    pub last_order: f64,
    /// Units received last period.
    pub last_delivery: f64,
    pub holding_rate: f64,
    pub backlog_rate: f64,
}

impl Observation {
    /// Local view of tier `k` (1-based) about to decide its next order.
    /// `prev` is the outcome of the step that produced `chain`, if any.
    pub fn from_chain(chain: &ChainState, prev: Option<&StepOutcome>, k: usize) -> Self {
        let tier = &chain.tiers[k - 1];
        let params = &chain.params[k - 1];
        Observation {
            week: chain.period + 1,
            tier: k,
            on_hand: tier.on_hand,
            backlog: tier.backlog,
            outstanding: tier.outstanding,
            inventory_position: tier.inventory_position(),
            forecast: tier.forecast,
            incoming_order: chain.observed_downstream_order(k),
            last_order: chain.last_orders[k - 1],
            last_delivery: prev.map(|o| o.receipts[k - 1]).unwrap_or(0.0),
            holding_rate: params.holding_rate,
            backlog_rate: params.backlog_rate,
        }
    }
}

/// A single order decision, with the log-probability of the sampled action
/// when the policy exposes one.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub order: f64,
    pub log_prob: Option<f64>,
}

impl Decision {
    pub fn deterministic(order: f64) -> Self {
        Decision { order, log_prob: None }
    }
}

/// Behavioral interface of a tier agent.
pub trait AgentPolicy: Send + Sync {
    fn decide(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<Decision, PolicyError>;
}

/// Exponential-smoothing forecast update: the new forecast moves a fraction
/// `lambda` of the way toward the observed order.
pub fn forecast_update(forecast: f64, lambda: f64, observed_order: f64) -> f64 {
    lambda * observed_order + (1.0 - lambda) * forecast
}

/// Order-up-to rule: order the positive part of the target (multiplier times
/// forecast, perturbed by the decision shock) minus the inventory position.
pub fn order_up_to(forecast: f64, theta: f64, shock: f64, inventory_position: f64) -> f64 {
    (theta * forecast + shock - inventory_position).max(0.0)
}

/// Unclamped ordering rule used by the linear benchmark; may go negative.
pub fn linear_order(forecast: f64, theta: f64, shock: f64, inventory_position: f64) -> f64 {
    theta * forecast + shock - inventory_position
}

/// Mean-zero perturbation of the order target.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DecisionShock {
    #[default]
    Zero,
    Gaussian { sigma: f64 },
    /// Uniform on [-half_width, half_width].
    Uniform { half_width: f64 },
    /// Finite support with explicit probabilities; must be mean zero.
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl DecisionShock {
    pub fn validate(&self) -> Result<(), PolicyError> {
        match self {
            DecisionShock::Zero => Ok(()),
            DecisionShock::Gaussian { sigma } if *sigma >= 0.0 => Ok(()),
            DecisionShock::Gaussian { sigma } => Err(PolicyError::InvalidParam {
                field: "shock.sigma".into(),
                reason: format!("must be >= 0, got {sigma}"),
            }),
            DecisionShock::Uniform { half_width } if *half_width >= 0.0 => Ok(()),
            DecisionShock::Uniform { half_width } => Err(PolicyError::InvalidParam {
                field: "shock.half_width".into(),
                reason: format!("must be >= 0, got {half_width}"),
            }),
            DecisionShock::Discrete { values, probs } => {
                if values.len() != probs.len() || values.is_empty() {
                    return Err(PolicyError::InvalidParam {
                        field: "shock.values".into(),
                        reason: "values and probs must be nonempty and equal length".into(),
                    });
                }
                let total: f64 = probs.iter().sum();
                if probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(PolicyError::InvalidParam {
                        field: "shock.probs".into(),
                        reason: "must be nonnegative and sum to 1".into(),
                    });
                }
                let mean: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
                if mean.abs() > 1e-9 {
                    return Err(PolicyError::InvalidParam {
                        field: "shock.values".into(),
                        reason: format!("must be mean zero, got mean {mean}"),
                    });
                }
                Ok(())
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            DecisionShock::Zero => 0.0,
            DecisionShock::Gaussian { sigma } => {
                if *sigma == 0.0 {
                    0.0
                } else {
                    Normal::new(0.0, *sigma).expect("validated sigma").sample(rng)
                }
            }
            DecisionShock::Uniform { half_width } => {
                if *half_width == 0.0 {
                    0.0
                } else {
                    rng.gen_range(-half_width..=*half_width)
                }
            }
            DecisionShock::Discrete { values, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u <= acc {
                        return *v;
                    }
                }
                *values.last().expect("validated nonempty")
            }
        }
    }

    /// Exact variance of the shock law.
    pub fn variance(&self) -> f64 {
        match self {
            DecisionShock::Zero => 0.0,
            DecisionShock::Gaussian { sigma } => sigma * sigma,
            DecisionShock::Uniform { half_width } => half_width * half_width / 3.0,
            DecisionShock::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * v * p).sum()
            }
        }
    }
}

/// Order-up-to agent with a decision shock on the target.
#[derive(Debug, Clone)]
pub struct OrderUpToPolicy {
    pub theta: f64,
    pub shock: DecisionShock,
}

impl OrderUpToPolicy {
    pub fn new(theta: f64, shock: DecisionShock) -> Result<Self, PolicyError> {
        if !(theta > 0.0) {
            return Err(PolicyError::InvalidParam {
                field: "theta".into(),
                reason: format!("must be > 0, got {theta}"),
            });
        }
        shock.validate()?;
        Ok(OrderUpToPolicy { theta, shock })
    }
}

impl AgentPolicy for OrderUpToPolicy {
    fn decide(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<Decision, PolicyError> {
        let eps = self.shock.sample(rng);
        Ok(Decision::deterministic(order_up_to(
            obs.forecast,
            self.theta,
            eps,
            obs.inventory_position,
        )))
    }
}

/// Wraps a policy in repeated sampling: draw `n` decisions on the same
/// observation, round to the nearest integer, and return the modal order.
/// Ties break toward the smallest order. Each sample uses its own stream
/// deterministically derived from the caller's RNG.
pub struct MajorityVote<P> {
    base: P,
    n: usize,
}

impl<P: AgentPolicy> MajorityVote<P> {
    pub fn new(base: P, n: usize) -> Result<Self, PolicyError> {
        if n == 0 {
            return Err(PolicyError::InvalidParam {
                field: "n".into(),
                reason: "vote size must be at least 1".into(),
            });
        }
        Ok(MajorityVote { base, n })
    }
}

impl<P: AgentPolicy> AgentPolicy for MajorityVote<P> {
    fn decide(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<Decision, PolicyError> {
        let mut counts: Vec<(i64, usize)> = Vec::new();
        for _ in 0..self.n {
            let mut sub = ChaCha8Rng::seed_from_u64(rng.next_u64());
            let d = self.base.decide(obs, &mut sub)?;
            let key = d.order.round() as i64;
            match counts.iter_mut().find(|(k, _)| *k == key) {
                Some((_, c)) => *c += 1,
                None => counts.push((key, 1)),
            }
        }
        let (order, _) = counts
            .into_iter()
            .max_by(|(ka, ca), (kb, cb)| ca.cmp(cb).then(kb.cmp(ka)))
            .expect("n >= 1");
        Ok(Decision::deterministic(order.max(0) as f64))
    }
}

// ---------------------------------------------------------------------------
// Prompt protocol
// ---------------------------------------------------------------------------

/// Violations of the order-response protocol.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolViolation {
    #[error("no JSON object line with an order_quantity field in response")]
    MissingOrder,
    #[error("order_quantity is not numeric")]
    NonNumericOrder,
    #[error("order_quantity {0} is negative")]
    NegativeOrder(f64),
    #[error("prompt template placeholder {{{0}}} has no value")]
    MissingField(String),
}

pub const ROLE_NAMES: [&str; 4] = ["Retailer", "Wholesaler", "Distributor", "Factory"];

/// Week-by-week ordering prompt for one tier agent. Placeholders in braces
/// are filled by `render_prompt`.
pub fn default_prompt_template(role: &str, upstream: &str, downstream_signal: &str) -> String {
    format!(
        r#"You are the {role} in the Beer Distribution Game.
Your objective is to minimize your total supply chain costs by managing your beer inventory efficiently. You receive orders from {downstream_signal} and stock up your inventory from the {upstream}.
Your only task is to decide, based on your inventory status and incoming order (shown below), how many new cases of beer you want to buy this week.

Here are the costs you face:
- Holding Cost: {{holding_cost}} per case per week.
- Backorder Cost: {{backorder_cost}} per case per week.
- Order Lead Time: {{order_lead_time}} week (your order reaches the {upstream} next week).
- Shipping Lead Time: {{shipping_lead_time}} weeks (your delivery from the {upstream} arrives after they ship).

**Your Current Situation (Week {{week}}):**
- Current Inventory: {{current_inventory}} cases
- Current Backlog: {{current_backlog}} cases
- Incoming Order from Downstream: {{incoming_order_this_week}} cases
- Last Order You Placed: {{last_order_placed}} cases
- Last Delivery You Received: {{last_delivery_received}} cases

---------------------------
Your Task:
Decide how many cases of beer to order from your upstream this week based on your current situation.

Start your response with a JSON object **on its own line** in the following exact format:
{{"order_quantity": <number_of_cases>}}

Important:
- Replace `<number_of_cases>` with your actual numeric decision.
- Do not add any text, notes, or punctuation after the JSON.
- This will be parsed by a program, so the format must be valid and exact.

Example (your response should end like this):
{{"order_quantity": 5}}
"#
    )
}

/// Template for the named tier of a chain with `n` tiers.
pub fn role_template(tier: usize, n: usize) -> String {
    let role = role_name(tier, n);
    let upstream = if tier >= n { "outside supplier".to_string() } else { role_name(tier + 1, n) };
    let downstream = if tier == 1 {
        "customers".to_string()
    } else {
        format!("the {}", role_name(tier - 1, n))
    };
    default_prompt_template(&role, &upstream, &downstream)
}

fn role_name(tier: usize, n: usize) -> String {
    if n == 4 && (1..=4).contains(&tier) {
        ROLE_NAMES[tier - 1].to_string()
    } else {
        format!("Tier-{tier} supplier")
    }
}

fn format_qty(x: f64) -> String {
    if (x - x.round()).abs() < 1e-9 {
        format!("{}", x.round() as i64)
    } else {
        format!("{x:.2}")
    }
}

/// Substitutes observation fields into every `{placeholder}` of the template.
/// Unknown placeholders are an error so that template drift never silently
/// ships a half-filled prompt.
pub fn render_prompt(obs: &Observation, template: &str) -> Result<String, ProtocolViolation> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after.find('}').ok_or_else(|| ProtocolViolation::MissingField("{".into()))?;
        let key = &after[..end];
        let value = match key {
            "week" => Some(obs.week.to_string()),
            "current_inventory" => Some(format_qty(obs.on_hand)),
            "current_backlog" => Some(format_qty(obs.backlog)),
            "incoming_order_this_week" => Some(format_qty(obs.incoming_order)),
            "last_order_placed" => Some(format_qty(obs.last_order)),
            "last_delivery_received" => Some(format_qty(obs.last_delivery)),
            "holding_cost" => Some(format!("{:.2}", obs.holding_rate)),
            "backorder_cost" => Some(format!("{:.2}", obs.backlog_rate)),
            "order_lead_time" => None, // filled by the scenario layer when known
            "shipping_lead_time" => None,
            "\"order_quantity\": <number_of_cases>" | "\"order_quantity\": 5" => {
                // literal JSON braces in the instructions
                out.push('{');
                out.push_str(key);
                out.push('}');
                rest = &after[end + 1..];
                continue;
            }
            _ => return Err(ProtocolViolation::MissingField(key.to_string())),
        };
        match value {
            Some(v) => out.push_str(&v),
            None => {
                out.push('{');
                out.push_str(key);
                out.push('}');
            }
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Extracts the order from a response: the first line that parses as a JSON
/// object must carry a nonnegative numeric `order_quantity`.
pub fn parse_order(response: &str) -> Result<f64, ProtocolViolation> {
    for line in response.lines() {
        let line = line.trim();
        if !line.starts_with('{') {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let obj = match value.as_object() {
            Some(o) => o,
            None => continue,
        };
        let qty = match obj.get("order_quantity") {
            Some(q) => q,
            None => continue,
        };
        let order = qty.as_f64().ok_or(ProtocolViolation::NonNumericOrder)?;
        if order < 0.0 {
            return Err(ProtocolViolation::NegativeOrder(order));
        }
        return Ok(order);
    }
    Err(ProtocolViolation::MissingOrder)
}

// ---------------------------------------------------------------------------
// Remote agent adapter
// ---------------------------------------------------------------------------

/// What to do when the remote agent keeps violating the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RemoteFallback {
    /// Repeat the tier's previous order.
    RepeatLastOrder,
    /// Substitute a fixed order.
    Fixed { order: f64 },
    /// Propagate the failure; the run is abandoned.
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteAgentConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_fallback")]
    pub fallback: RemoteFallback,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_fallback() -> RemoteFallback {
    RemoteFallback::RepeatLastOrder
}

/// Transport used to exchange a rendered prompt for a raw response.
pub trait OrderTransport: Send + Sync {
    fn request(&self, prompt: &str) -> Result<String, String>;
}

/// POSTs the prompt body to the configured endpoint and returns the
/// response body.
pub struct HttpTransport {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: String, timeout_ms: u64) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(std::time::Duration::from_millis(timeout_ms))
            .build();
        HttpTransport { endpoint, agent }
    }
}

impl OrderTransport for HttpTransport {
    fn request(&self, prompt: &str) -> Result<String, String> {
        self.agent
            .post(&self.endpoint)
            .set("Content-Type", "text/plain")
            .send_string(prompt)
            .map_err(|e| e.to_string())?
            .into_string()
            .map_err(|e| e.to_string())
    }
}

/// Tier agent backed by a remote order service speaking the prompt protocol.
/// Violations and transport failures are retried up to the configured
/// budget, then resolved by the fallback rule; every violation is counted.
pub struct RemoteAgentPolicy<T> {
    transport: T,
    template: String,
    retries: u32,
    fallback: RemoteFallback,
    lead_times: Option<(u32, u32)>,
    violations: std::sync::atomic::AtomicU64,
}

impl<T: OrderTransport> RemoteAgentPolicy<T> {
    pub fn new(transport: T, template: String, retries: u32, fallback: RemoteFallback) -> Self {
        RemoteAgentPolicy {
            transport,
            template,
            retries,
            fallback,
            lead_times: None,
            violations: std::sync::atomic::AtomicU64::new(0),
        }
    }

    /// Fill the static lead-time placeholders left open by `render_prompt`.
    pub fn with_lead_times(mut self, order_delay: u32, ship_delay: u32) -> Self {
        self.lead_times = Some((order_delay, ship_delay));
        self
    }

    /// Protocol violations observed so far.
    pub fn violation_count(&self) -> u64 {
        self.violations.load(std::sync::atomic::Ordering::Relaxed)
    }

    fn render(&self, obs: &Observation) -> Result<String, ProtocolViolation> {
        let mut prompt = render_prompt(obs, &self.template)?;
        if let Some((od, sd)) = self.lead_times {
            prompt = prompt
                .replace("{order_lead_time}", &od.to_string())
                .replace("{shipping_lead_time}", &sd.to_string());
        }
        Ok(prompt)
    }
}

impl<T: OrderTransport> AgentPolicy for RemoteAgentPolicy<T> {
    fn decide(&self, obs: &Observation, _rng: &mut ChaCha8Rng) -> Result<Decision, PolicyError> {
        let prompt = self.render(obs).map_err(PolicyError::Protocol)?;
        let mut last_error = String::new();
        for _ in 0..=self.retries {
            match self.transport.request(&prompt) {
                Ok(body) => match parse_order(&body) {
                    Ok(order) => return Ok(Decision::deterministic(order)),
                    Err(v) => {
                        self.violations
                            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        last_error = v.to_string();
                    }
                },
                Err(e) => last_error = e,
            }
        }
        match &self.fallback {
            RemoteFallback::RepeatLastOrder => Ok(Decision::deterministic(obs.last_order)),
            RemoteFallback::Fixed { order } => Ok(Decision::deterministic(*order)),
            RemoteFallback::Fail => Err(PolicyError::RemoteExhausted {
                attempts: self.retries + 1,
                last_error,
            }),
        }
    }
}
