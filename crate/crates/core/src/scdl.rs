//! SCDL: a contextual-bandit addition agent over binned file statistics,
//! with LRU eviction under the watermark sweep.
//!
//! Every admission decision is remembered under its discrete state and is
//! rewarded the next time a request maps to the same state: `+size` when
//! the decision turned out well, `-size` otherwise. The next state of the
//! update is the state itself.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{order_for_eviction, EvictionOrdering};
use crate::bandit::{q_update, select_action, AdditionVariant, BinningScheme, DiscreteState, EpsilonSchedule, QTable};
use crate::cache::{Access, FileKey, Node, Outcome};
use crate::error::{Error, Result};
use crate::policy::{Admission, DailyMean, Policy, PolicyDiagnostics, PolicyId};

pub const ADDITION_ACTIONS: [&str; 2] = ["Store", "NotStore"];

/// How a settled decision is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScdlReward {
    /// Store is good iff the file was hit since the decision and occupancy
    /// is below W_high at settlement; NotStore is good iff the file was not
    /// missed since.
    #[default]
    HitBelowHigh,
    /// As above without the occupancy condition.
    HitOnly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingDecision {
    pub state: DiscreteState,
    pub action: Admission,
    pub file: FileKey,
    pub size: u64,
    pub decision_tick: u64,
    pub hits_since: u64,
    pub misses_since: u64,
}

#[derive(Debug, Clone)]
pub struct ScdlParams {
    pub bins: BinningScheme,
    pub alpha: f64,
    pub gamma: f64,
    pub schedule: EpsilonSchedule,
    pub reward: ScdlReward,
    pub forced_action: Option<Admission>,
    pub seed: u64,
}

/// Signed reward for a settled decision; `at_or_above_high` is the cache
/// state at settlement.
pub fn scdl_reward(pending: &PendingDecision, at_or_above_high: bool, strategy: ScdlReward) -> f64 {
    let size = pending.size;
    let good = match pending.action {
        Admission::Store => {
            pending.hits_since >= 1 && (strategy == ScdlReward::HitOnly || !at_or_above_high)
        }
        Admission::NotStore => pending.misses_since == 0,
    };
    if good {
        size as f64
    } else {
        -(size as f64)
    }
}

pub struct Scdl {
    params: ScdlParams,
    table: QTable,
    rng: ChaCha8Rng,
    pending: HashMap<DiscreteState, PendingDecision>,
    by_file: HashMap<FileKey, Vec<DiscreteState>>,
    last_decision: Option<(DiscreteState, Admission)>,
    epsilon: DailyMean,
    settled: u64,
    positive: u64,
}

impl Scdl {
    pub fn new(params: ScdlParams) -> Result<Self> {
        params.bins.validate()?;
        if !(params.alpha > 0.0 && params.alpha <= 1.0 && (0.0..=1.0).contains(&params.gamma)) {
            return Err(Error::Config("alpha must be in (0,1] and gamma in [0,1]".into()));
        }
        Ok(Scdl {
            table: QTable::new(&["size_bin", "freq_bin", "dt_bin"], &ADDITION_ACTIONS),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            params,
            pending: HashMap::new(),
            by_file: HashMap::new(),
            last_decision: None,
            epsilon: DailyMean::default(),
            settled: 0,
            positive: 0,
        })
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut QTable {
        &mut self.table
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn pending(&self, state: &DiscreteState) -> Option<&PendingDecision> {
        self.pending.get(state)
    }

    fn state_of(&self, access: &Access, node: &Node) -> DiscreteState {
        self.params
            .bins
            .addition_state(&access.stats, &node.cache, AdditionVariant::Scdl)
    }

    fn settle(&mut self, pending: PendingDecision, node: &Node) -> Result<()> {
        if let Some(states) = self.by_file.get_mut(&pending.file) {
            states.retain(|s| *s != pending.state);
            if states.is_empty() {
                self.by_file.remove(&pending.file);
            }
        }
        let r = scdl_reward(&pending, node.cache.at_or_above_high(), self.params.reward);
        q_update(
            &mut self.table,
            &pending.state,
            pending.action.index(),
            r,
            None,
            self.params.alpha,
            self.params.gamma,
        )?;
        self.settled += 1;
        self.positive += (r > 0.0) as u64;
        Ok(())
    }
}

impl Policy for Scdl {
    fn id(&self) -> PolicyId {
        PolicyId::Scdl
    }

    fn admit(&mut self, access: &Access, node: &Node) -> Admission {
        let state = self.state_of(access, node);
        let action = match self.params.forced_action {
            Some(a) => a,
            None => {
                self.epsilon.record(self.params.schedule.value());
                Admission::from_index(select_action(&self.table, &state, &mut self.params.schedule, &mut self.rng))
            }
        };
        self.last_decision = Some((state, action));
        action
    }

    fn free_space(&mut self, node: &mut Node, needed: u64) -> Result<()> {
        let order = order_for_eviction(&node.cache, EvictionOrdering::Lru);
        node.evict_to_low_watermark(&order, needed)?;
        Ok(())
    }

    fn after_request(&mut self, access: &Access, outcome: Outcome, node: &mut Node) -> Result<()> {
        if let Some(states) = self.by_file.get(&access.key) {
            for s in states {
                if let Some(p) = self.pending.get_mut(s) {
                    if outcome.is_hit() {
                        p.hits_since += 1;
                    } else {
                        p.misses_since += 1;
                    }
                }
            }
        }
        let state = self.state_of(access, node);
        if let Some(p) = self.pending.remove(&state) {
            self.settle(p, node)?;
        }
        if let Some((s, action)) = self.last_decision.take() {
            self.by_file.entry(access.key).or_default().push(s.clone());
            self.pending.insert(
                s.clone(),
                PendingDecision {
                    state: s,
                    action,
                    file: access.key,
                    size: access.size,
                    decision_tick: access.tick,
                    hits_since: 0,
                    misses_since: 0,
                },
            );
        }
        Ok(())
    }

    fn on_day_end(&mut self, _day: u32, _node: &mut Node) -> Result<()> {
        self.epsilon.close_day(self.params.schedule.value());
        Ok(())
    }

    fn dump(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let path = dir.join("addition_qtable.csv");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.table.write_csv(BufWriter::new(f))?;
        Ok(vec![path])
    }

    fn diagnostics(&self) -> PolicyDiagnostics {
        PolicyDiagnostics {
            daily_series: vec![("addition_epsilon".into(), self.epsilon.series().to_vec())],
            counters: vec![
                ("addition_decisions".into(), self.params.schedule.decisions),
                ("settled".into(), self.settled),
                ("positive_rewards".into(), self.positive),
                ("pending_at_end".into(), self.pending.len() as u64),
                ("q_states".into(), self.table.len() as u64),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{NodeConfig, Simulator};
    use crate::trace::Request;

    fn req(tick: u64, id: &str, size: u64) -> Request {
        Request {
            tick,
            day: 0,
            file_id: id.into(),
            size,
            data_type: "data".into(),
            user_id: "u".into(),
            site_id: "s".into(),
        }
    }

    fn params(eps: f64) -> ScdlParams {
        ScdlParams {
            bins: BinningScheme {
                size_edges: vec![10, 100],
                ..BinningScheme::default()
            },
            alpha: 0.5,
            gamma: 0.5,
            schedule: EpsilonSchedule::constant(eps),
            reward: ScdlReward::HitBelowHigh,
            forced_action: None,
            seed: 1,
        }
    }

    #[test]
    fn reward_rule_cases() {
        let base = PendingDecision {
            state: DiscreteState(vec![0]),
            action: Admission::Store,
            file: FileKey(0),
            size: 7,
            decision_tick: 0,
            hits_since: 1,
            misses_since: 0,
        };
        assert_eq!(scdl_reward(&base, false, ScdlReward::HitBelowHigh), 7.0);
        assert_eq!(scdl_reward(&base, true, ScdlReward::HitBelowHigh), -7.0);
        assert_eq!(scdl_reward(&base, true, ScdlReward::HitOnly), 7.0);
        let cold = PendingDecision { hits_since: 0, ..base.clone() };
        assert_eq!(scdl_reward(&cold, false, ScdlReward::HitBelowHigh), -7.0);
        let skip = PendingDecision {
            action: Admission::NotStore,
            hits_since: 0,
            ..base.clone()
        };
        assert_eq!(scdl_reward(&skip, false, ScdlReward::HitBelowHigh), 7.0);
        let missed = PendingDecision { misses_since: 2, ..skip };
        assert_eq!(scdl_reward(&missed, false, ScdlReward::HitBelowHigh), -7.0);
    }

    #[test]
    fn greedy_store_admits() {
        let mut agent = Scdl::new(params(0.0)).unwrap();
        // A first-time 5-byte file maps to (0, 0, never).
        let s = DiscreteState(vec![0, 0, BinningScheme::default().dt_never()]);
        agent.table_mut().set(&s, 0, 1.0);
        agent.table_mut().set(&s, 1, 0.0);
        let mut sim = Simulator::new(&NodeConfig::new(1_000), Box::new(agent)).unwrap();
        assert_eq!(sim.process(&req(0, "A", 5)).unwrap(), Outcome::MissStored);
    }

    #[test]
    fn recurring_state_settles_with_positive_reward() {
        let mut p = params(0.0);
        p.forced_action = Some(Admission::Store);
        let mut sim = Simulator::new(&NodeConfig::new(1_000), Box::new(Scdl::new(p).unwrap())).unwrap();
        // Store A in state (0,0,never); hit A; then a new file B with the
        // same state (0,0,never) settles the pending Store on A.
        sim.process(&req(0, "A", 5)).unwrap();
        assert_eq!(sim.process(&req(1, "A", 5)).unwrap(), Outcome::Hit);
        sim.process(&req(2, "B", 6)).unwrap();
        let d = sim.policy().diagnostics();
        let settled = d.counters.iter().find(|(n, _)| n == "settled").unwrap().1;
        assert_eq!(settled, 1);
        let positive = d.counters.iter().find(|(n, _)| n == "positive_rewards").unwrap().1;
        assert_eq!(positive, 1);
    }

    #[test]
    fn q_value_after_settlement() {
        let mut p = params(0.0);
        p.forced_action = Some(Admission::Store);
        let mut agent = Scdl::new(p).unwrap();
        let mut node = crate::cache::Node::new(&NodeConfig::new(1_000)).unwrap();
        let s = DiscreteState(vec![0, 0, 7]);
        let pending = PendingDecision {
            state: s.clone(),
            action: Admission::Store,
            file: FileKey(0),
            size: 5,
            decision_tick: 0,
            hits_since: 1,
            misses_since: 0,
        };
        node.stats.record(FileKey(0), 5, 0, 0, 0);
        agent.settle(pending, &node).unwrap();
        // 0 + 0.5 * (5 + 0.5 * 0 - 0)
        assert_eq!(agent.table().value(&s, 0), 2.5);
    }

    #[test]
    fn watermark_lru_runs_after_store() {
        let mut p = params(0.0);
        p.forced_action = Some(Admission::Store);
        let mut sim = Simulator::new(&NodeConfig::new(100), Box::new(Scdl::new(p).unwrap())).unwrap();
        for i in 0..8 {
            sim.process(&req(i, &format!("f{i}"), 12)).unwrap();
        }
        // Eighth store reached 96 >= 95, sweep to <= 75.
        assert!(sim.node().cache.occupancy() <= 75);
        assert_eq!(sim.node().audit.low_watermark_events, 1);
    }
}
