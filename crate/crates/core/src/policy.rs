//! The contract between the simulation driver and a caching policy.

use std::any::Any;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cache::{Access, Node, Outcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Admission {
    Store,
    NotStore,
}

impl Admission {
    pub fn index(self) -> usize {
        match self {
            Admission::Store => 0,
            Admission::NotStore => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Admission::Store
        } else {
            Admission::NotStore
        }
    }
}

/// What a policy promises about occupancy after it frees space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceContract {
    /// Eviction runs from W_high down to W_low.
    LowWatermark,
    /// Only W_high exists; eviction must end strictly below it.
    HighWatermarkOnly,
}

/// A caching policy: an admission decision on every miss plus whatever
/// eviction behaviour it needs.
///
/// The driver calls [`Policy::free_space`] whenever a store would not fit or
/// occupancy has reached W_high, and then audits the result against
/// [`Policy::space_contract`].
pub trait Policy: Send + AsAny {
    fn id(&self) -> PolicyId;

    fn admit(&mut self, access: &Access, node: &Node) -> Admission;

    /// Free space so that `needed` more bytes fit and the space contract
    /// holds.
    fn free_space(&mut self, node: &mut Node, needed: u64) -> Result<()>;

    fn space_contract(&self) -> SpaceContract {
        SpaceContract::LowWatermark
    }

    /// Called once the request has been fully served.
    fn after_request(&mut self, _access: &Access, _outcome: Outcome, _node: &mut Node) -> Result<()> {
        Ok(())
    }

    fn on_day_end(&mut self, _day: u32, _node: &mut Node) -> Result<()> {
        Ok(())
    }

    fn finish(&mut self, _node: &mut Node) -> Result<()> {
        Ok(())
    }

    /// Write learned state (Q-tables, checkpoints) into `dir`.
    fn dump(&self, _dir: &Path) -> Result<Vec<PathBuf>> {
        Ok(Vec::new())
    }

    /// Per-day diagnostics such as exploration rates.
    fn diagnostics(&self) -> PolicyDiagnostics {
        PolicyDiagnostics::default()
    }
}

/// Lets callers recover the concrete policy behind a `dyn Policy`.
pub trait AsAny {
    fn as_any(&self) -> &dyn Any;
}

impl<T: Any> AsAny for T {
    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyDiagnostics {
    /// (series name, per-day mean) pairs, e.g. the addition agent's epsilon.
    pub daily_series: Vec<(String, Vec<f64>)>,
    pub counters: Vec<(String, u64)>,
}

/// Per-day mean of a sampled quantity (e.g. epsilon at each decision).
/// A day without samples repeats the fallback passed to `close_day`.
#[derive(Debug, Clone, Default)]
pub struct DailyMean {
    sum: f64,
    count: u64,
    series: Vec<f64>,
}

impl DailyMean {
    pub fn record(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    pub fn close_day(&mut self, fallback: f64) {
        let v = if self.count > 0 {
            self.sum / self.count as f64
        } else {
            fallback
        };
        self.series.push(v);
        self.sum = 0.0;
        self.count = 0;
    }

    pub fn series(&self) -> &[f64] {
        &self.series
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyId {
    #[serde(rename = "we-lru")]
    WeLru,
    #[serde(rename = "we-lfu")]
    WeLfu,
    #[serde(rename = "we-size-big")]
    WeSizeBig,
    #[serde(rename = "we-size-small")]
    WeSizeSmall,
    #[serde(rename = "scdl")]
    Scdl,
    #[serde(rename = "scdl2-noeviction")]
    Scdl2NoEviction,
    #[serde(rename = "scdl2-onfree")]
    Scdl2OnFree,
    #[serde(rename = "scdl2-ondayend")]
    Scdl2OnDayEnd,
    #[serde(rename = "scdl2-onk")]
    Scdl2OnK,
    #[serde(rename = "dqn")]
    Dqn,
}

impl PolicyId {
    pub const ALL: [PolicyId; 10] = [
        PolicyId::WeLru,
        PolicyId::WeLfu,
        PolicyId::WeSizeBig,
        PolicyId::WeSizeSmall,
        PolicyId::Scdl,
        PolicyId::Scdl2NoEviction,
        PolicyId::Scdl2OnFree,
        PolicyId::Scdl2OnDayEnd,
        PolicyId::Scdl2OnK,
        PolicyId::Dqn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyId::WeLru => "we-lru",
            PolicyId::WeLfu => "we-lfu",
            PolicyId::WeSizeBig => "we-size-big",
            PolicyId::WeSizeSmall => "we-size-small",
            PolicyId::Scdl => "scdl",
            PolicyId::Scdl2NoEviction => "scdl2-noeviction",
            PolicyId::Scdl2OnFree => "scdl2-onfree",
            PolicyId::Scdl2OnDayEnd => "scdl2-ondayend",
            PolicyId::Scdl2OnK => "scdl2-onk",
            PolicyId::Dqn => "dqn",
        }
    }

    pub fn is_write_everything(self) -> bool {
        matches!(
            self,
            PolicyId::WeLru | PolicyId::WeLfu | PolicyId::WeSizeBig | PolicyId::WeSizeSmall
        )
    }

    pub fn is_learning(self) -> bool {
        !self.is_write_everything()
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnknownPolicy {
                id: s.to_string(),
                valid: PolicyId::ALL.map(PolicyId::as_str).join(", "),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in PolicyId::ALL {
            assert_eq!(id.as_str().parse::<PolicyId>().unwrap(), id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{}\"", id.as_str()));
        }
    }

    #[test]
    fn unknown_id_lists_valid_ones() {
        let err = "arc".parse::<PolicyId>().unwrap_err().to_string();
        assert!(err.contains("we-lru") && err.contains("dqn"), "{err}");
    }
}
