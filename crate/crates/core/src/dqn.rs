//! DQN cache: a deep-Q addition agent (Store/NotStore on each miss) and a
//! deep-Q eviction agent (Keep/NotKeep applied to every cached file on each
//! pass), each with its own replay memory, target network and delayed,
//! windowed rewards.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{order_for_eviction, EvictionOrdering};
use crate::bandit::EpsilonSchedule;
use crate::cache::{Access, FileKey, FileStats, Node, Outcome};
use crate::error::{Error, Result};
use crate::nn::{Adam, Network, Sample};
use crate::policy::{Admission, DailyMean, Policy, PolicyDiagnostics, PolicyId, SpaceContract};
use crate::units::GIB;

pub const KEEP: usize = 0;
pub const NOT_KEEP: usize = 1;

/// Raw inputs of one decision; encoded into a network input on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqnState {
    pub size: u64,
    pub frequency: u32,
    pub delta_days: Option<u32>,
    pub data_type: u16,
    pub occupancy: f64,
    pub hit_rate: f64,
}

impl DqnState {
    pub fn from_stats(stats: &FileStats, node: &Node) -> Self {
        DqnState {
            size: stats.size,
            frequency: stats.frequency,
            delta_days: stats.delta_days,
            data_type: stats.data_type,
            occupancy: node.cache.occupancy_fraction(),
            hit_rate: node.cache.hit_rate(),
        }
    }

    /// The state seen once the decision settles: one more request, current
    /// occupancy and hit rate.
    pub fn next(&self, node: &Node) -> Self {
        DqnState {
            frequency: self.frequency + 1,
            occupancy: node.cache.occupancy_fraction(),
            hit_rate: node.cache.hit_rate(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: DqnState,
    pub action: usize,
    /// Signed bytes.
    pub reward: f64,
    pub next: DqnState,
}

/// Reward of a settled decision. `positive` is Store/Keep.
pub fn dqn_reward(positive: bool, size: u64, hits: u32, misses: u32) -> f64 {
    let s = size as f64;
    if positive {
        if hits > 0 {
            hits as f64 * s
        } else {
            -s
        }
    } else if misses > 0 {
        -(misses as f64) * s
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingDecision {
    pub file: FileKey,
    pub index: u64,
    pub state: DqnState,
    pub action: usize,
    pub hits: u32,
    pub misses: u32,
}

/// Decisions waiting for `h` requests to elapse, with per-file hit/miss
/// counts over that window.
#[derive(Debug, Clone)]
pub struct RewardWindow {
    pub h: u64,
    pending: VecDeque<PendingDecision>,
    /// Sequence number of `pending[0]`.
    front_seq: u64,
    by_file: HashMap<FileKey, VecDeque<u64>>,
}

impl RewardWindow {
    pub fn new(h: u64) -> Self {
        RewardWindow {
            h,
            pending: VecDeque::new(),
            front_seq: 0,
            by_file: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Decisions must arrive with non-decreasing `index`.
    pub fn push(&mut self, file: FileKey, index: u64, state: DqnState, action: usize) {
        let seq = self.front_seq + self.pending.len() as u64;
        self.pending.push_back(PendingDecision {
            file,
            index,
            state,
            action,
            hits: 0,
            misses: 0,
        });
        self.by_file.entry(file).or_default().push_back(seq);
    }

    /// Count request `index` of `file` against every earlier decision whose
    /// window still covers it.
    pub fn observe(&mut self, file: FileKey, index: u64, hit: bool) {
        let Some(seqs) = self.by_file.get(&file) else {
            return;
        };
        for &seq in seqs {
            let d = &mut self.pending[(seq - self.front_seq) as usize];
            if d.index < index && index <= d.index + self.h {
                if hit {
                    d.hits += 1;
                } else {
                    d.misses += 1;
                }
            }
        }
    }

    fn pop_front(&mut self) -> Option<PendingDecision> {
        let d = self.pending.pop_front()?;
        if let Some(seqs) = self.by_file.get_mut(&d.file) {
            seqs.pop_front();
            if seqs.is_empty() {
                self.by_file.remove(&d.file);
            }
        }
        self.front_seq += 1;
        Some(d)
    }

    /// Remove decisions whose window has fully elapsed at `index`.
    pub fn settle(&mut self, index: u64) -> Vec<PendingDecision> {
        let mut out = Vec::new();
        while self.pending.front().is_some_and(|d| d.index + self.h <= index) {
            out.extend(self.pop_front());
        }
        out
    }

    pub fn flush(&mut self) -> Vec<PendingDecision> {
        let mut out = Vec::with_capacity(self.pending.len());
        while let Some(d) = self.pop_front() {
            out.push(d);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    /// Requests before the addition agent stops acting randomly.
    pub addition_warmup: u64,
    /// Eviction passes before the eviction agent stops acting randomly.
    pub eviction_warmup: u64,
    pub scan_period: u64,
    pub addition_window: u64,
    pub eviction_window: u64,
    /// Eviction pass every `k` requests.
    pub k: u64,
    /// Bytes per unit reward fed to the networks.
    pub reward_unit: f64,
    /// Data-type labels with their own one-hot slot; others share one.
    pub data_types: Vec<String>,
    /// One training step every this many addition decisions.
    pub train_interval: u64,
    /// One training step every this many eviction decisions.
    pub eviction_train_interval: u64,
    pub addition_eps: EpsilonSchedule,
    pub eviction_eps: EpsilonSchedule,
    pub seed: u64,
    #[serde(skip)]
    pub forced_addition: Option<Admission>,
    #[serde(skip)]
    pub forced_eviction: Option<usize>,
    #[serde(skip)]
    pub log_decisions: bool,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![32, 32],
            learning_rate: 1e-3,
            gamma: 0.95,
            replay_capacity: 100_000,
            batch_size: 32,
            target_sync: 1000,
            addition_warmup: 5000,
            eviction_warmup: 50,
            scan_period: 1000,
            addition_window: 100_000,
            eviction_window: 200_000,
            k: 50_000,
            reward_unit: GIB as f64,
            data_types: vec!["data".into(), "mc".into(), "user".into()],
            train_interval: 1,
            eviction_train_interval: 64,
            addition_eps: EpsilonSchedule::new(1.0, 0.1, 1e-5),
            eviction_eps: EpsilonSchedule::new(1.0, 0.1, 1e-6),
            seed: 0,
            forced_addition: None,
            forced_eviction: None,
            log_decisions: false,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("dqn: {m}")));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be non-empty and positive");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("need 0 < batch_size <= replay_capacity");
        }
        if self.scan_period == 0 || self.k == 0 || self.target_sync == 0 {
            return bad("scan_period, k and target_sync must be positive");
        }
        if self.train_interval == 0 || self.eviction_train_interval == 0 {
            return bad("training intervals must be positive");
        }
        if !(self.reward_unit > 0.0 && self.reward_unit.is_finite()) {
            return bad("reward_unit must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.learning_rate > 0.0) {
            return bad("gamma must be in [0,1] and learning_rate positive");
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        3 + self.data_types.len() + 1 + 2
    }
}

/// One logged addition decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRecord {
    pub index: u64,
    pub file: FileKey,
    pub size: u64,
    pub action: Admission,
    pub warmup: bool,
    pub explored: bool,
}

/// Network pair, optimizer, replay memory and RNG of one agent.
struct Agent {
    online: Network,
    target: Network,
    adam: Adam,
    replay: VecDeque<Experience>,
    capacity: usize,
    train_steps: u64,
    decisions_since_train: u64,
    schedule: EpsilonSchedule,
    rng: ChaCha8Rng,
    eps_daily: DailyMean,
    last_loss: f64,
}

impl Agent {
    fn new(cfg: &DqnConfig, schedule: EpsilonSchedule, seed: u64) -> Result<Self> {
        let mut sizes = vec![cfg.input_len()];
        sizes.extend(&cfg.hidden);
        sizes.push(2);
        let online = Network::new(&sizes, seed)?;
        Ok(Agent {
            target: online.clone(),
            adam: Adam::new(&online, cfg.learning_rate),
            online,
            replay: VecDeque::new(),
            capacity: cfg.replay_capacity,
            train_steps: 0,
            decisions_since_train: 0,
            schedule,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a9e7),
            eps_daily: DailyMean::default(),
            last_loss: 0.0,
        })
    }

    fn remember(&mut self, e: Experience) {
        if self.replay.len() == self.capacity {
            self.replay.pop_front();
        }
        self.replay.push_back(e);
    }

    /// (action, explored). `warm` forces a uniform random action.
    fn choose(&mut self, input: &[f64], warm: bool) -> Result<(usize, bool)> {
        if warm {
            return Ok((self.rng.random_range(0..2), true));
        }
        let eps = self.schedule.value();
        self.schedule.advance();
        self.eps_daily.record(eps);
        if eps > 0.0 && self.rng.random::<f64>() < eps {
            return Ok((self.rng.random_range(0..2), true));
        }
        let q = self.online.forward(input)?;
        Ok((if q[1] > q[0] { 1 } else { 0 }, false))
    }

    fn train(&mut self, batch_size: usize, gamma: f64, unit: f64, sync: u64, encode: &Encoder) -> Result<()> {
        if self.replay.len() < batch_size {
            return Ok(());
        }
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let e = &self.replay[self.rng.random_range(0..self.replay.len())];
            let q_next = self.target.forward(&encode.encode(&e.next))?;
            let target = e.reward / unit + gamma * q_next[0].max(q_next[1]);
            batch.push(Sample {
                input: encode.encode(&e.state),
                target,
                action: e.action,
            });
        }
        self.last_loss = self.online.train_batch(&mut self.adam, &batch)?;
        self.train_steps += 1;
        if self.train_steps % sync == 0 {
            self.target.copy_from(&self.online)?;
        }
        Ok(())
    }
}

/// Maps raw states to network inputs.
struct Encoder {
    /// One-hot slot per node-interned data-type id.
    slots: Vec<usize>,
    n_types: usize,
}

impl Encoder {
    fn encode(&self, s: &DqnState) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_types + 6);
        v.push((s.size.max(1) as f64).log10() / 12.0);
        v.push((1.0 + s.frequency as f64).log2() / 10.0);
        v.push(s.delta_days.map_or(1.0, |d| (d as f64 / 7.0).min(1.0)));
        let slot = self.slots.get(s.data_type as usize).copied().unwrap_or(self.n_types);
        v.extend((0..=self.n_types).map(|i| if i == slot { 1.0 } else { 0.0 }));
        v.push(s.occupancy);
        v.push(s.hit_rate);
        v
    }
}

pub struct Dqn {
    cfg: DqnConfig,
    addition: Agent,
    eviction: Agent,
    encoder: Encoder,
    add_window: RewardWindow,
    evict_window: RewardWindow,
    passes: u64,
    safety_valve: u64,
    log: Vec<DecisionRecord>,
    /// Set by a post-warm-up addition decision; consumed after the request.
    train_due: bool,
}

impl Dqn {
    pub fn new(cfg: DqnConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Dqn {
            addition: Agent::new(&cfg, cfg.addition_eps.clone(), cfg.seed)?,
            eviction: Agent::new(&cfg, cfg.eviction_eps.clone(), cfg.seed.wrapping_add(1))?,
            encoder: Encoder {
                slots: Vec::new(),
                n_types: cfg.data_types.len(),
            },
            add_window: RewardWindow::new(cfg.addition_window),
            evict_window: RewardWindow::new(cfg.eviction_window),
            passes: 0,
            safety_valve: 0,
            log: Vec::new(),
            train_due: false,
            cfg,
        })
    }

    pub fn config(&self) -> &DqnConfig {
        &self.cfg
    }

    pub fn decision_log(&self) -> &[DecisionRecord] {
        &self.log
    }

    pub fn addition_replay(&self) -> impl Iterator<Item = &Experience> {
        self.addition.replay.iter()
    }

    pub fn eviction_replay(&self) -> impl Iterator<Item = &Experience> {
        self.eviction.replay.iter()
    }

    pub fn pending(&self) -> (usize, usize) {
        (self.add_window.len(), self.evict_window.len())
    }

    pub fn addition_network(&self) -> &Network {
        &self.addition.online
    }

    pub fn addition_network_mut(&mut self) -> &mut Network {
        &mut self.addition.online
    }

    pub fn encode(&self, s: &DqnState) -> Vec<f64> {
        self.encoder.encode(s)
    }

    pub fn passes(&self) -> u64 {
        self.passes
    }

    pub fn safety_valve_events(&self) -> u64 {
        self.safety_valve
    }

    fn learn_types(&mut self, node: &Node, data_type: u16) {
        while self.encoder.slots.len() <= data_type as usize {
            let id = self.encoder.slots.len() as u16;
            let label = node.data_type_label(id);
            let slot = self
                .cfg
                .data_types
                .iter()
                .position(|t| t == label)
                .unwrap_or(self.encoder.n_types);
            self.encoder.slots.push(slot);
        }
    }

    fn scan(&mut self, index: u64, node: &Node, flush: bool) {
        for (window, agent, positive) in [
            (&mut self.add_window, &mut self.addition, Admission::Store.index()),
            (&mut self.evict_window, &mut self.eviction, KEEP),
        ] {
            let settled = if flush { window.flush() } else { window.settle(index) };
            for d in settled {
                agent.remember(Experience {
                    state: d.state,
                    action: d.action,
                    reward: dqn_reward(d.action == positive, d.state.size, d.hits, d.misses),
                    next: d.state.next(node),
                });
            }
        }
    }

    /// One pass of the eviction agent over every cached file in insertion
    /// order. Returns bytes freed.
    pub fn eviction_pass(&mut self, node: &mut Node) -> Result<u64> {
        let warm = self.passes < self.cfg.eviction_warmup;
        self.passes += 1;
        let index = node.requests();
        let mut freed = 0;
        for key in node.cache.keys() {
            let Some(file) = node.cache.get(key) else { continue };
            let stats = node.file_stats(key).unwrap_or(FileStats {
                size: file.size,
                frequency: 0,
                delta_days: None,
                delta_ticks: None,
                data_type: 0,
            });
            self.learn_types(node, stats.data_type);
            let state = DqnState::from_stats(&stats, node);
            let action = match self.cfg.forced_eviction {
                Some(a) => a,
                None => {
                    let input = self.encoder.encode(&state);
                    self.eviction.choose(&input, warm)?.0
                }
            };
            if action == NOT_KEEP {
                freed += node.evict(key).unwrap_or(0);
            }
            self.evict_window.push(key, index, state, action);
            if !warm {
                self.eviction.decisions_since_train += 1;
                if self.eviction.decisions_since_train >= self.cfg.eviction_train_interval {
                    self.eviction.decisions_since_train = 0;
                    self.eviction.train(
                        self.cfg.batch_size,
                        self.cfg.gamma,
                        self.cfg.reward_unit,
                        self.cfg.target_sync,
                        &self.encoder,
                    )?;
                }
            }
        }
        Ok(freed)
    }

    pub fn write_checkpoint(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for (name, net) in [
            ("addition_network.txt", &self.addition.online),
            ("eviction_network.txt", &self.eviction.online),
        ] {
            let path = dir.join(name);
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            net.write_checkpoint(BufWriter::new(f)).map_err(|e| Error::io(&path, e))?;
            out.push(path);
        }
        let path = dir.join("dqn_state.json");
        let summary = serde_json::json!({
            "addition_replay": self.addition.replay.len(),
            "eviction_replay": self.eviction.replay.len(),
            "addition_train_steps": self.addition.train_steps,
            "eviction_train_steps": self.eviction.train_steps,
            "eviction_passes": self.passes,
        });
        let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(&mut f, &summary)?;
        writeln!(f).map_err(|e| Error::io(&path, e))?;
        out.push(path);
        Ok(out)
    }

    /// Load both networks (online and target) from a checkpoint directory.
    pub fn load_checkpoint(&mut self, dir: &Path) -> Result<()> {
        for (name, agent) in [
            ("addition_network.txt", &mut self.addition),
            ("eviction_network.txt", &mut self.eviction),
        ] {
            let path = dir.join(name);
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let net = Network::read_checkpoint(BufReader::new(f))?;
            agent.online.copy_from(&net)?;
            agent.target.copy_from(&net)?;
        }
        Ok(())
    }
}

impl Policy for Dqn {
    fn id(&self) -> PolicyId {
        PolicyId::Dqn
    }

    fn space_contract(&self) -> SpaceContract {
        SpaceContract::HighWatermarkOnly
    }

    fn admit(&mut self, access: &Access, node: &Node) -> Admission {
        self.learn_types(node, access.stats.data_type);
        let state = DqnState::from_stats(&access.stats, node);
        let warm = access.index < self.cfg.addition_warmup;
        let (action, explored) = match self.cfg.forced_addition {
            Some(a) => (a.index(), false),
            None => {
                let input = self.encoder.encode(&state);
                // Shapes are fixed at construction, so forward cannot fail.
                self.addition.choose(&input, warm).unwrap_or((0, true))
            }
        };
        let action = Admission::from_index(action);
        self.train_due = !warm && self.cfg.forced_addition.is_none();
        self.add_window.push(access.key, access.index, state, action.index());
        if self.cfg.log_decisions {
            self.log.push(DecisionRecord {
                index: access.index,
                file: access.key,
                size: access.size,
                action,
                warmup: warm,
                explored,
            });
        }
        action
    }

    fn free_space(&mut self, node: &mut Node, needed: u64) -> Result<()> {
        self.eviction_pass(node)?;
        if node.cache.at_or_above_high() || node.cache.occupancy() + needed > node.cache.capacity() {
            self.safety_valve += 1;
            let target = (node.cache.w_high() - 0.05) * node.cache.capacity() as f64;
            let order = order_for_eviction(&node.cache, EvictionOrdering::Lru);
            node.evict_in_order(&order, target, needed)?;
        }
        Ok(())
    }

    fn after_request(&mut self, access: &Access, outcome: Outcome, node: &mut Node) -> Result<()> {
        let hit = outcome.is_hit();
        self.add_window.observe(access.key, access.index, hit);
        self.evict_window.observe(access.key, access.index, hit);

        if std::mem::take(&mut self.train_due) {
            self.addition.decisions_since_train += 1;
            if self.addition.decisions_since_train >= self.cfg.train_interval {
                self.addition.decisions_since_train = 0;
                self.addition.train(
                    self.cfg.batch_size,
                    self.cfg.gamma,
                    self.cfg.reward_unit,
                    self.cfg.target_sync,
                    &self.encoder,
                )?;
            }
        }

        if (access.index + 1) % self.cfg.k == 0 {
            self.eviction_pass(node)?;
            if node.cache.at_or_above_high() {
                self.safety_valve += 1;
                let target = (node.cache.w_high() - 0.05) * node.cache.capacity() as f64;
                let order = order_for_eviction(&node.cache, EvictionOrdering::Lru);
                node.evict_in_order(&order, target, 0)?;
            }
        }

        if access.index % self.cfg.scan_period == 0 {
            self.scan(access.index, node, false);
        }
        Ok(())
    }

    fn on_day_end(&mut self, _day: u32, _node: &mut Node) -> Result<()> {
        let (a, e) = (self.addition.schedule.value(), self.eviction.schedule.value());
        self.addition.eps_daily.close_day(a);
        self.eviction.eps_daily.close_day(e);
        Ok(())
    }

    fn finish(&mut self, node: &mut Node) -> Result<()> {
        self.scan(node.requests(), node, true);
        Ok(())
    }

    fn dump(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.write_checkpoint(dir)
    }

    fn diagnostics(&self) -> PolicyDiagnostics {
        PolicyDiagnostics {
            daily_series: vec![
                ("addition_epsilon".into(), self.addition.eps_daily.series().to_vec()),
                ("eviction_epsilon".into(), self.eviction.eps_daily.series().to_vec()),
            ],
            counters: vec![
                ("addition_decisions".into(), self.addition.schedule.decisions),
                ("eviction_decisions".into(), self.eviction.schedule.decisions),
                ("eviction_passes".into(), self.passes),
                ("safety_valve_events".into(), self.safety_valve),
                ("addition_train_steps".into(), self.addition.train_steps),
                ("eviction_train_steps".into(), self.eviction.train_steps),
                ("addition_replay".into(), self.addition.replay.len() as u64),
                ("eviction_replay".into(), self.eviction.replay.len() as u64),
                ("pending_addition".into(), self.add_window.len() as u64),
                ("pending_eviction".into(), self.evict_window.len() as u64),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{NodeConfig, Simulator};
    use crate::trace::Request;
    use crate::units::MIB;

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

    fn state(size: u64) -> DqnState {
        DqnState {
            size,
            frequency: 1,
            delta_days: None,
            data_type: 0,
            occupancy: 0.0,
            hit_rate: 0.0,
        }
    }

    #[test]
    fn reward_formula() {
        assert_eq!(dqn_reward(true, 2 * GIB, 3, 0), 6.0 * GIB as f64);
        assert_eq!(dqn_reward(true, 5, 0, 4), -5.0);
        assert_eq!(dqn_reward(false, 5, 0, 0), 5.0);
        assert_eq!(dqn_reward(false, 5, 1, 2), -10.0);
    }

    #[test]
    fn window_settles_after_h_requests() {
        let mut w = RewardWindow::new(100);
        w.push(FileKey(1), 1000, state(10), 0);
        let mut settled_at = None;
        for i in 1001..1300u64 {
            if i == 1050 || i == 1100 {
                w.observe(FileKey(1), i, true);
            }
            // Outside the window: not counted.
            if i == 1101 {
                w.observe(FileKey(1), i, true);
            }
            if i % 50 == 0 && settled_at.is_none() {
                let s = w.settle(i);
                if !s.is_empty() {
                    assert_eq!(s[0].hits, 2);
                    settled_at = Some(i);
                }
            }
        }
        assert_eq!(settled_at, Some(1100));
        assert!(w.is_empty());
    }

    #[test]
    fn window_does_not_count_the_deciding_request() {
        let mut w = RewardWindow::new(10);
        w.push(FileKey(3), 5, state(1), 1);
        w.observe(FileKey(3), 5, false);
        w.observe(FileKey(4), 6, false);
        let d = w.flush();
        assert_eq!((d[0].hits, d[0].misses), (0, 0));
    }

    #[test]
    fn encoding_is_bounded() {
        let cfg = DqnConfig::default();
        let enc = Encoder { slots: vec![1], n_types: cfg.data_types.len() };
        let v = enc.encode(&DqnState {
            size: 500 * GIB,
            frequency: 1000,
            delta_days: Some(30),
            data_type: 0,
            occupancy: 0.5,
            hit_rate: 0.25,
        });
        assert_eq!(v.len(), cfg.input_len());
        assert!(v.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x)), "{v:?}");
        assert_eq!(&v[3..7], &[0.0, 1.0, 0.0, 0.0]);
        let other = enc.encode(&DqnState { data_type: 9, ..state(1) });
        assert_eq!(&other[3..7], &[0.0, 0.0, 0.0, 1.0]);
    }

    fn small_cfg() -> DqnConfig {
        DqnConfig {
            hidden: vec![4, 4],
            addition_warmup: 0,
            eviction_warmup: 0,
            scan_period: 10,
            addition_window: 20,
            eviction_window: 20,
            k: 4,
            replay_capacity: 50,
            batch_size: 4,
            ..DqnConfig::default()
        }
    }

    #[test]
    fn passes_every_k_requests() {
        let cfg = DqnConfig {
            forced_eviction: Some(KEEP),
            forced_addition: Some(Admission::Store),
            ..small_cfg()
        };
        let mut sim = Simulator::new(&NodeConfig::new(1 << 30), Box::new(Dqn::new(cfg).unwrap())).unwrap();
        for i in 0..13 {
            sim.process(&req(i, &format!("f{i}"), 10)).unwrap();
        }
        let d = sim.policy().diagnostics();
        let passes = d.counters.iter().find(|(n, _)| n == "eviction_passes").unwrap().1;
        assert_eq!(passes, 3);
    }

    #[test]
    fn not_keep_empties_the_cache() {
        let cfg = DqnConfig {
            forced_eviction: Some(NOT_KEEP),
            forced_addition: Some(Admission::Store),
            ..small_cfg()
        };
        let mut sim = Simulator::new(&NodeConfig::new(1 << 30), Box::new(Dqn::new(cfg).unwrap())).unwrap();
        for i in 0..3 {
            sim.process(&req(i, &format!("f{i}"), 10)).unwrap();
        }
        let before = sim.node().cache.occupancy();
        sim.process(&req(3, "f3", 10)).unwrap();
        assert_eq!(sim.node().cache.occupancy(), 0);
        assert_eq!(sim.node().accounting.totals.dd, before + 10);
    }

    #[test]
    fn keep_everything_triggers_safety_valve() {
        let cfg = DqnConfig {
            forced_eviction: Some(KEEP),
            forced_addition: Some(Admission::Store),
            k: 1_000_000,
            ..small_cfg()
        };
        let mut sim = Simulator::new(&NodeConfig::new(100), Box::new(Dqn::new(cfg).unwrap())).unwrap();
        for i in 0..30 {
            sim.process(&req(i, &format!("f{i}"), 10)).unwrap();
            assert!(sim.node().cache.occupancy() < 95);
        }
        let d = sim.policy().diagnostics();
        assert!(d.counters.iter().find(|(n, _)| n == "safety_valve_events").unwrap().1 > 0);
        assert!(sim.node().audit.max_fraction_after_high_event <= 0.90);
        assert_eq!(sim.node().audit.low_watermark_events, 0);
    }

    #[test]
    fn finish_flushes_every_pending_decision() {
        let mut sim = Simulator::new(&NodeConfig::new(100 * MIB), Box::new(Dqn::new(small_cfg()).unwrap())).unwrap();
        for i in 0..200u64 {
            sim.process(&req(i, &format!("f{}", i % 17), MIB * (1 + (i % 17) % 5))).unwrap();
        }
        sim.finish().unwrap();
        let d = sim.policy().diagnostics();
        let get = |n: &str| d.counters.iter().find(|(k, _)| k == n).unwrap().1;
        assert_eq!(get("pending_addition"), 0);
        assert_eq!(get("pending_eviction"), 0);
        assert!(get("addition_replay") <= 50);
        assert!(get("addition_train_steps") > 0);
    }

    #[test]
    fn greedy_follows_the_network() {
        let cfg = DqnConfig {
            addition_eps: EpsilonSchedule::constant(0.0),
            ..small_cfg()
        };
        let mut dqn = Dqn::new(cfg).unwrap();
        // Bias the output layer so NotStore always wins.
        let net = dqn.addition_network_mut();
        let last = net.layers_mut().last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.biases = vec![0.0, 1.0];
        let mut sim = Simulator::new(&NodeConfig::new(1000), Box::new(dqn)).unwrap();
        assert_eq!(sim.process(&req(0, "a", 10)).unwrap(), Outcome::MissProxied);
    }
}
