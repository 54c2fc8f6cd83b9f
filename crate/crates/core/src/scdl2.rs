//! SCDL2: a tabular addition agent over an enriched state plus a tabular
//! eviction agent that acts on categories of cached files.
//!
//! Cached files are grouped by their binned (size, frequency, recency); for
//! each category the eviction agent picks one of five actions, from keeping
//! every member to deleting all of them. Both agents are rewarded with
//! delayed +-1 signals (with a +-1 bonus/malus) when the affected file is
//! requested again.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{order_for_eviction, EvictionOrdering};
use crate::bandit::{
    q_update, select_action, AdditionVariant, BinningScheme, DiscreteState, EpsilonSchedule, QTable,
};
use crate::cache::{Access, FileKey, FileStats, Node, Outcome};
use crate::error::{Error, Result};
use crate::policy::{Admission, DailyMean, Policy, PolicyDiagnostics, PolicyId};
use crate::scdl::ADDITION_ACTIONS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvictionAction {
    NotDelete,
    DeleteAll,
    DeleteHalf,
    DeleteQuarter,
    DeleteOne,
}

impl EvictionAction {
    pub const ALL: [EvictionAction; 5] = [
        EvictionAction::NotDelete,
        EvictionAction::DeleteAll,
        EvictionAction::DeleteHalf,
        EvictionAction::DeleteQuarter,
        EvictionAction::DeleteOne,
    ];
    pub const NAMES: [&'static str; 5] = ["NotDelete", "DeleteAll", "DeleteHalf", "DeleteQuarter", "DeleteOne"];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    /// How many of `members` files the action removes.
    pub fn victims(self, members: usize) -> usize {
        match self {
            EvictionAction::NotDelete => 0,
            EvictionAction::DeleteAll => members,
            EvictionAction::DeleteHalf => members.div_ceil(2),
            EvictionAction::DeleteQuarter => members.div_ceil(4),
            EvictionAction::DeleteOne => members.min(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerMode {
    /// Plain LRU watermark sweep; the eviction agent never runs.
    #[default]
    NoEviction,
    /// Only when space is needed.
    OnFree,
    /// Once at every day boundary, plus whenever space is needed.
    OnDayEnd,
    /// Every K requests, plus whenever space is needed.
    OnK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionTrigger {
    pub mode: TriggerMode,
    pub k: u64,
}

impl Default for EvictionTrigger {
    fn default() -> Self {
        EvictionTrigger {
            mode: TriggerMode::NoEviction,
            k: 8192,
        }
    }
}

/// What "the previous outcome" refers to in the bonus/malus rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PrevOutcome {
    /// The previous request of the same file.
    #[default]
    PerFile,
    /// The previous request that mapped to the same addition state.
    PerState,
}

/// Cached files sharing binned (size, frequency, recency).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileCategory {
    pub key: [u16; 3],
    /// Members in insertion order.
    pub members: Vec<FileKey>,
    pub occupied: u64,
}

fn category_key(bins: &BinningScheme, stats: &FileStats) -> [u16; 3] {
    [
        bins.size_bin(stats.size),
        bins.freq_bin(stats.frequency),
        bins.dt_bin(stats.delta_days),
    ]
}

/// Partition the cache into categories, largest occupied bytes first (ties
/// by key).
pub fn categories(node: &Node, bins: &BinningScheme) -> Vec<FileCategory> {
    let mut by_key: BTreeMap<[u16; 3], FileCategory> = BTreeMap::new();
    for (key, file) in node.cache.iter() {
        let stats = node.file_stats(key).unwrap_or(FileStats {
            size: file.size,
            frequency: 0,
            delta_days: None,
            delta_ticks: None,
            data_type: 0,
        });
        let ck = category_key(bins, &stats);
        let cat = by_key.entry(ck).or_insert_with(|| FileCategory {
            key: ck,
            members: Vec::new(),
            occupied: 0,
        });
        cat.members.push(key);
        cat.occupied += file.size;
    }
    let mut cats: Vec<_> = by_key.into_values().collect();
    // BTreeMap order is key order; a stable sort keeps it for ties.
    cats.sort_by(|a, b| b.occupied.cmp(&a.occupied));
    cats
}

#[derive(Debug, Clone)]
pub struct Scdl2Params {
    pub bins: BinningScheme,
    pub alpha: f64,
    pub gamma: f64,
    pub addition_schedule: EpsilonSchedule,
    pub eviction_schedule: EpsilonSchedule,
    pub trigger: EvictionTrigger,
    pub prev_outcome: PrevOutcome,
    pub forced_addition: Option<Admission>,
    pub forced_eviction: Option<EvictionAction>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardHistogram {
    pub minus_two: u64,
    pub minus_one: u64,
    pub plus_one: u64,
    pub plus_two: u64,
    pub other: u64,
}

impl RewardHistogram {
    fn record(&mut self, r: f64) {
        match r as i64 {
            -2 if r == -2.0 => self.minus_two += 1,
            -1 if r == -1.0 => self.minus_one += 1,
            1 if r == 1.0 => self.plus_one += 1,
            2 if r == 2.0 => self.plus_two += 1,
            _ => self.other += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.minus_two + self.minus_one + self.plus_one + self.plus_two + self.other
    }
}

/// Addition reward for a settled decision, or `None` when the rules assign none.
pub fn addition_reward(action: Admission, hit_now: bool, prev_hit: Option<bool>) -> Option<f64> {
    match (action, hit_now) {
        (Admission::Store, true) => Some(if prev_hit == Some(false) { 2.0 } else { 1.0 }),
        (Admission::NotStore, false) => Some(if prev_hit == Some(true) { -2.0 } else { -1.0 }),
        _ => None,
    }
}

/// Eviction reward for a settled decision on one file.
pub fn eviction_reward(
    action: EvictionAction,
    hit_now: bool,
    prev_hit: Option<bool>,
    occupancy_not_increased: bool,
) -> Option<f64> {
    match (action, hit_now) {
        (EvictionAction::NotDelete, true) => Some(if occupancy_not_increased { 2.0 } else { 1.0 }),
        (EvictionAction::NotDelete, false) => None,
        (_, false) => Some(if prev_hit == Some(true) { -2.0 } else { -1.0 }),
        (_, true) => None,
    }
}

pub struct Scdl2 {
    params: Scdl2Params,
    addition: QTable,
    eviction: QTable,
    rng: ChaCha8Rng,
    addition_pending: HashMap<FileKey, (DiscreteState, Admission)>,
    eviction_pending: HashMap<FileKey, Vec<(DiscreteState, EvictionAction)>>,
    last_decision: Option<(DiscreteState, Admission)>,
    prev_by_file: HashMap<FileKey, bool>,
    prev_by_state: HashMap<DiscreteState, bool>,
    add_eps: DailyMean,
    evict_eps: DailyMean,
    rewards: RewardHistogram,
    agent_calls: u64,
    passes: u64,
    forced_deletions: u64,
}

impl Scdl2 {
    pub fn new(params: Scdl2Params) -> Result<Self> {
        params.bins.validate()?;
        if !(params.alpha > 0.0 && params.alpha <= 1.0 && (0.0..=1.0).contains(&params.gamma)) {
            return Err(Error::Config("alpha must be in (0,1] and gamma in [0,1]".into()));
        }
        if params.trigger.mode == TriggerMode::OnK && params.trigger.k == 0 {
            return Err(Error::Config("onK eviction needs k > 0".into()));
        }
        Ok(Scdl2 {
            addition: QTable::new(&["size_bin", "freq_bin", "dt_bin", "oc_bin", "hr_bin"], &ADDITION_ACTIONS),
            eviction: QTable::new(
                &["size_bin", "freq_bin", "dt_bin", "cat_oc_bin", "oc_bin", "hr_bin"],
                &EvictionAction::NAMES,
            ),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            params,
            addition_pending: HashMap::new(),
            eviction_pending: HashMap::new(),
            last_decision: None,
            prev_by_file: HashMap::new(),
            prev_by_state: HashMap::new(),
            add_eps: DailyMean::default(),
            evict_eps: DailyMean::default(),
            rewards: RewardHistogram::default(),
            agent_calls: 0,
            passes: 0,
            forced_deletions: 0,
        })
    }

    pub fn addition_table(&self) -> &QTable {
        &self.addition
    }

    pub fn addition_table_mut(&mut self) -> &mut QTable {
        &mut self.addition
    }

    pub fn eviction_table(&self) -> &QTable {
        &self.eviction
    }

    pub fn rewards(&self) -> RewardHistogram {
        self.rewards
    }

    /// Number of times the eviction agent was invoked.
    pub fn agent_calls(&self) -> u64 {
        self.agent_calls
    }

    pub fn forced_deletions(&self) -> u64 {
        self.forced_deletions
    }

    fn eviction_state(&self, cat_key: [u16; 3], occupied: u64, node: &Node) -> DiscreteState {
        let bins = &self.params.bins;
        let cap = node.cache.capacity() as f64;
        DiscreteState(vec![
            cat_key[0],
            cat_key[1],
            cat_key[2],
            bins.cat_occupancy_bin(occupied as f64 / cap),
            bins.occupancy_bin(node.cache.occupancy_fraction()),
            bins.hitrate_bin(node.cache.hit_rate()),
        ])
    }

    fn remember_eviction(&mut self, file: FileKey, state: &DiscreteState, action: EvictionAction) {
        let entries = self.eviction_pending.entry(file).or_default();
        match entries.iter_mut().find(|(s, _)| s == state) {
            Some(e) => e.1 = action,
            None => entries.push((state.clone(), action)),
        }
    }

    /// Apply `action` to `cat` and memorize the decision. Evicted members
    /// are removed from `cat`. Returns bytes freed.
    fn apply(&mut self, node: &mut Node, cat: &mut FileCategory, state: &DiscreteState, action: EvictionAction) -> u64 {
        let n = cat.members.len();
        let count = action.victims(n);
        if action == EvictionAction::NotDelete {
            for &f in &cat.members {
                self.remember_eviction(f, state, action);
            }
            return 0;
        }
        let mut victims: Vec<usize> = if count == n {
            (0..n).collect()
        } else if action == EvictionAction::DeleteOne {
            // The least recently used member; insertion order breaks ties.
            let lru = (0..n)
                .min_by_key(|&i| node.cache.get(cat.members[i]).map_or(0, |f| f.last_access_tick))
                .unwrap_or(0);
            vec![lru]
        } else {
            sample(&mut self.rng, n, count).into_vec()
        };
        victims.sort_unstable();
        let mut freed = 0;
        for &i in &victims {
            let f = cat.members[i];
            freed += node.evict(f).unwrap_or(0);
            self.remember_eviction(f, state, action);
        }
        let mut next = victims.iter().peekable();
        let mut i = 0;
        cat.members.retain(|_| {
            let hit = next.next_if_eq(&&i).is_some();
            i += 1;
            !hit
        });
        cat.occupied -= freed.min(cat.occupied);
        freed
    }

    fn decide(&mut self, node: &Node, cat: &FileCategory) -> (DiscreteState, EvictionAction) {
        let state = self.eviction_state(cat.key, cat.occupied, node);
        let action = match self.params.forced_eviction {
            Some(a) => a,
            None => {
                self.evict_eps.record(self.params.eviction_schedule.value());
                EvictionAction::from_index(select_action(
                    &self.eviction,
                    &state,
                    &mut self.params.eviction_schedule,
                    &mut self.rng,
                ))
            }
        };
        (state, action)
    }

    /// One eviction-agent invocation. With `space = Some(needed)` passes
    /// repeat until occupancy is at most W_low and `needed` bytes fit; a
    /// pass that frees nothing forces DeleteOne on the largest category.
    pub fn evict_by_categories(&mut self, node: &mut Node, space: Option<u64>) -> Result<u64> {
        self.agent_calls += 1;
        let mut freed = 0;
        let satisfied = |node: &Node, needed: u64| {
            node.cache.occupancy() as f64 <= node.cache.low_mark()
                && node.cache.occupancy() + needed <= node.cache.capacity()
        };
        match space {
            None => {
                self.passes += 1;
                for mut cat in categories(node, &self.params.bins) {
                    let (state, action) = self.decide(node, &cat);
                    freed += self.apply(node, &mut cat, &state, action);
                }
            }
            Some(needed) => {
                // Stats do not change inside one invocation, so categories are
                // built once and shrunk in place as members are evicted.
                let mut cats = categories(node, &self.params.bins);
                let mut memo: Vec<Option<DiscreteState>> = vec![None; cats.len()];
                while !satisfied(node, needed) {
                    if cats.is_empty() {
                        return Err(Error::PolicyContract("empty cache cannot satisfy space request".into()));
                    }
                    self.passes += 1;
                    let mut pass_freed = 0;
                    for (cat, last) in cats.iter_mut().zip(memo.iter_mut()) {
                        if satisfied(node, needed) {
                            break;
                        }
                        let (state, action) = self.decide(node, cat);
                        if action == EvictionAction::NotDelete {
                            // Re-memorizing an identical decision is a no-op.
                            if last.as_ref() != Some(&state) {
                                self.apply(node, cat, &state, action);
                                *last = Some(state);
                            }
                        } else {
                            pass_freed += self.apply(node, cat, &state, action);
                        }
                    }
                    if pass_freed == 0 && !satisfied(node, needed) {
                        let state = self.eviction_state(cats[0].key, cats[0].occupied, node);
                        pass_freed += self.apply(node, &mut cats[0], &state, EvictionAction::DeleteOne);
                        self.forced_deletions += 1;
                    }
                    freed += pass_freed;
                    let mut paired: Vec<_> = cats.drain(..).zip(memo.drain(..)).filter(|(c, _)| !c.members.is_empty()).collect();
                    paired.sort_by(|(a, _), (b, _)| b.occupied.cmp(&a.occupied).then(a.key.cmp(&b.key)));
                    (cats, memo) = paired.into_iter().unzip();
                }
            }
        }
        Ok(freed)
    }

    fn prev_outcome(&self, key: FileKey, state: &DiscreteState) -> Option<bool> {
        match self.params.prev_outcome {
            PrevOutcome::PerFile => self.prev_by_file.get(&key).copied(),
            PrevOutcome::PerState => self.prev_by_state.get(state).copied(),
        }
    }

    fn settle(&mut self, access: &Access, outcome: Outcome, node: &Node) -> Result<()> {
        let hit = outcome.is_hit();
        let add_state = self
            .params
            .bins
            .addition_state(&access.stats, &node.cache, AdditionVariant::Scdl2);
        let prev = self.prev_outcome(access.key, &add_state);
        let (alpha, gamma) = (self.params.alpha, self.params.gamma);

        if let Some((s, a)) = self.addition_pending.remove(&access.key) {
            if let Some(r) = addition_reward(a, hit, prev) {
                q_update(&mut self.addition, &s, a.index(), r, Some(&add_state), alpha, gamma)?;
                self.rewards.record(r);
            }
        }

        if let Some(entries) = self.eviction_pending.remove(&access.key) {
            let not_increased = node.cache.occupancy() <= access.occupancy_at_start;
            let key_now = category_key(&self.params.bins, &access.stats);
            for (s, a) in entries {
                if let Some(r) = eviction_reward(a, hit, prev, not_increased) {
                    let next = self.eviction_state_like(&s, key_now, node);
                    q_update(&mut self.eviction, &s, a.index(), r, Some(&next), alpha, gamma)?;
                    self.rewards.record(r);
                }
            }
        }

        match self.params.prev_outcome {
            PrevOutcome::PerFile => {
                self.prev_by_file.insert(access.key, hit);
            }
            PrevOutcome::PerState => {
                self.prev_by_state.insert(add_state, hit);
            }
        }
        Ok(())
    }

    /// The eviction state of the file's current category, keeping the
    /// category-occupancy bin of the original decision.
    fn eviction_state_like(&self, s: &DiscreteState, key_now: [u16; 3], node: &Node) -> DiscreteState {
        let bins = &self.params.bins;
        DiscreteState(vec![
            key_now[0],
            key_now[1],
            key_now[2],
            s.0[3],
            bins.occupancy_bin(node.cache.occupancy_fraction()),
            bins.hitrate_bin(node.cache.hit_rate()),
        ])
    }
}

impl Policy for Scdl2 {
    fn id(&self) -> PolicyId {
        match self.params.trigger.mode {
            TriggerMode::NoEviction => PolicyId::Scdl2NoEviction,
            TriggerMode::OnFree => PolicyId::Scdl2OnFree,
            TriggerMode::OnDayEnd => PolicyId::Scdl2OnDayEnd,
            TriggerMode::OnK => PolicyId::Scdl2OnK,
        }
    }

    fn admit(&mut self, access: &Access, node: &Node) -> Admission {
        let state = self
            .params
            .bins
            .addition_state(&access.stats, &node.cache, AdditionVariant::Scdl2);
        let action = match self.params.forced_addition {
            Some(a) => a,
            None => {
                self.add_eps.record(self.params.addition_schedule.value());
                Admission::from_index(select_action(
                    &self.addition,
                    &state,
                    &mut self.params.addition_schedule,
                    &mut self.rng,
                ))
            }
        };
        self.last_decision = Some((state, action));
        action
    }

    fn free_space(&mut self, node: &mut Node, needed: u64) -> Result<()> {
        if self.params.trigger.mode == TriggerMode::NoEviction {
            let order = order_for_eviction(&node.cache, EvictionOrdering::Lru);
            node.evict_to_low_watermark(&order, needed)?;
        } else {
            self.evict_by_categories(node, Some(needed))?;
        }
        Ok(())
    }

    fn after_request(&mut self, access: &Access, outcome: Outcome, node: &mut Node) -> Result<()> {
        if self.params.trigger.mode == TriggerMode::OnK && (access.index + 1) % self.params.trigger.k == 0 {
            self.evict_by_categories(node, None)?;
        }
        self.settle(access, outcome, node)?;
        if let Some(d) = self.last_decision.take() {
            self.addition_pending.insert(access.key, d);
        }
        Ok(())
    }

    fn on_day_end(&mut self, _day: u32, node: &mut Node) -> Result<()> {
        if self.params.trigger.mode == TriggerMode::OnDayEnd {
            self.evict_by_categories(node, None)?;
        }
        self.add_eps.close_day(self.params.addition_schedule.value());
        self.evict_eps.close_day(self.params.eviction_schedule.value());
        Ok(())
    }

    fn dump(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for (name, table) in [("addition_qtable.csv", &self.addition), ("eviction_qtable.csv", &self.eviction)] {
            let path = dir.join(name);
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            table.write_csv(BufWriter::new(f))?;
            out.push(path);
        }
        Ok(out)
    }

    fn diagnostics(&self) -> PolicyDiagnostics {
        let r = self.rewards;
        PolicyDiagnostics {
            daily_series: vec![
                ("addition_epsilon".into(), self.add_eps.series().to_vec()),
                ("eviction_epsilon".into(), self.evict_eps.series().to_vec()),
            ],
            counters: vec![
                ("addition_decisions".into(), self.params.addition_schedule.decisions),
                ("eviction_decisions".into(), self.params.eviction_schedule.decisions),
                ("eviction_agent_calls".into(), self.agent_calls),
                ("eviction_passes".into(), self.passes),
                ("forced_deletions".into(), self.forced_deletions),
                ("reward_minus_two".into(), r.minus_two),
                ("reward_minus_one".into(), r.minus_one),
                ("reward_plus_one".into(), r.plus_one),
                ("reward_plus_two".into(), r.plus_two),
            ],
        }
    }
}
