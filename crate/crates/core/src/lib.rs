//! Supply-chain reliability lab: serial multi-echelon inventory physics,
//! stochastic ordering policies, exact bullwhip analytics for the linear
//! benchmark, repeated-run variance decomposition, and group-relative
//! policy optimization for post-training stochastic policies.

pub mod chain;
pub mod ensemble;
pub mod export;
pub mod grpo;
pub mod linear;
pub mod policy;
pub mod scenario;
pub mod stats;
