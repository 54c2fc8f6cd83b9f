//! Trace-driven simulation of a single cache node in front of remote
//! storage, with write-everything baselines and three reinforcement-learning
//! admission/eviction policies (SCDL, SCDL2 and a DQN-based cache), plus the
//! throughput/cost/score metrics used to compare them.

pub mod bandit;
pub mod baselines;
pub mod cache;
pub mod dqn;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod scdl;
pub mod scdl2;
pub mod trace;
pub mod units;

pub use error::{Error, Result};
