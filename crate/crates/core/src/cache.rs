//! The cache node: stored files, occupancy and watermarks, per-file request
//! statistics, the daily bandwidth gate, hit/miss and data-volume
//! accounting, and the per-request driver that hands decisions to a
//! [`Policy`].

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Admission, Policy, SpaceContract};
use crate::trace::Request;

/// Days of history kept in the per-file request statistics.
pub const STATS_WINDOW_DAYS: u32 = 7;

/// Interned file identity; only meaningful within one [`Node`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FileKey(pub u32);

#[derive(Debug, Default)]
struct Interner {
    ids: HashMap<String, u32>,
    names: Vec<String>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }
}

/// Snapshot of one file's statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileStats {
    pub size: u64,
    /// Requests within the trailing statistics window.
    pub frequency: u32,
    /// Days since the previous request; `None` when never seen before.
    pub delta_days: Option<u32>,
    pub delta_ticks: Option<u64>,
    pub data_type: u16,
}

#[derive(Debug, Clone)]
struct FileRecord {
    size: u64,
    data_type: u16,
    per_day: VecDeque<(u32, u32)>,
    last_day: u32,
    last_tick: u64,
}

impl FileRecord {
    fn frequency_at(&self, day: u32) -> u32 {
        self.per_day
            .iter()
            .filter(|(d, _)| day.saturating_sub(*d) < STATS_WINDOW_DAYS)
            .map(|(_, c)| c)
            .sum()
    }
}

/// Rolling per-file statistics over a 7-day window.
#[derive(Debug, Default)]
pub struct FileStatsStore {
    records: HashMap<FileKey, FileRecord>,
}

impl FileStatsStore {
    /// Register a request and return the statistics seen by the policy for it.
    pub fn record(&mut self, key: FileKey, size: u64, data_type: u16, day: u32, tick: u64) -> FileStats {
        match self.records.get_mut(&key) {
            Some(rec) => {
                let delta_days = day - rec.last_day;
                let delta_ticks = tick - rec.last_tick;
                while rec
                    .per_day
                    .front()
                    .is_some_and(|(d, _)| day - d >= STATS_WINDOW_DAYS)
                {
                    rec.per_day.pop_front();
                }
                match rec.per_day.back_mut() {
                    Some((d, c)) if *d == day => *c += 1,
                    _ => rec.per_day.push_back((day, 1)),
                }
                rec.last_day = day;
                rec.last_tick = tick;
                FileStats {
                    size: rec.size,
                    frequency: rec.frequency_at(day),
                    delta_days: Some(delta_days),
                    delta_ticks: Some(delta_ticks),
                    data_type: rec.data_type,
                }
            }
            None => {
                self.records.insert(
                    key,
                    FileRecord {
                        size,
                        data_type,
                        per_day: VecDeque::from([(day, 1)]),
                        last_day: day,
                        last_tick: tick,
                    },
                );
                FileStats {
                    size,
                    frequency: 1,
                    delta_days: None,
                    delta_ticks: None,
                    data_type,
                }
            }
        }
    }

    /// Statistics of a file as seen at `day`/`tick` without a new request.
    pub fn get(&self, key: FileKey, day: u32, tick: u64) -> Option<FileStats> {
        self.records.get(&key).map(|rec| FileStats {
            size: rec.size,
            frequency: rec.frequency_at(day),
            delta_days: Some(day.saturating_sub(rec.last_day)),
            delta_ticks: Some(tick.saturating_sub(rec.last_tick)),
            data_type: rec.data_type,
        })
    }

    /// Drop entries that are out of the cache and unrequested for a full window.
    pub fn purge(&mut self, day: u32, cached: impl Fn(FileKey) -> bool) {
        self.records
            .retain(|k, rec| cached(*k) || day.saturating_sub(rec.last_day) < STATS_WINDOW_DAYS);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CachedFile {
    pub size: u64,
    pub last_access_tick: u64,
    pub insertion_tick: u64,
    pub access_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "requests")]
pub enum HitRateMode {
    #[default]
    Cumulative,
    /// Hit rate over the most recent N requests.
    Window(usize),
}

#[derive(Debug, Clone)]
struct HitRate {
    mode: HitRateMode,
    hits: u64,
    total: u64,
    recent: VecDeque<bool>,
    recent_hits: u64,
}

impl HitRate {
    fn new(mode: HitRateMode) -> Self {
        HitRate {
            mode,
            hits: 0,
            total: 0,
            recent: VecDeque::new(),
            recent_hits: 0,
        }
    }

    fn record(&mut self, hit: bool) {
        self.total += 1;
        self.hits += hit as u64;
        if let HitRateMode::Window(n) = self.mode {
            self.recent.push_back(hit);
            self.recent_hits += hit as u64;
            if self.recent.len() > n.max(1) {
                if self.recent.pop_front() == Some(true) {
                    self.recent_hits -= 1;
                }
            }
        }
    }

    fn value(&self) -> f64 {
        match self.mode {
            HitRateMode::Cumulative if self.total > 0 => self.hits as f64 / self.total as f64,
            HitRateMode::Window(_) if !self.recent.is_empty() => {
                self.recent_hits as f64 / self.recent.len() as f64
            }
            _ => 0.0,
        }
    }
}

/// Stored files, occupancy and watermarks.
#[derive(Debug, Clone)]
pub struct CacheState {
    capacity: u64,
    occupancy: u64,
    w_high: f64,
    w_low: f64,
    files: HashMap<FileKey, CachedFile>,
    by_insertion: BTreeMap<u64, FileKey>,
    hit_rate: HitRate,
}

impl CacheState {
    pub fn new(capacity: u64, w_high: f64, w_low: f64, hit_rate: HitRateMode) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("capacity must be positive".into()));
        }
        if !(0.0 < w_low && w_low < w_high && w_high <= 1.0) {
            return Err(Error::Config(format!(
                "watermarks must satisfy 0 < w_low < w_high <= 1, got {w_low} / {w_high}"
            )));
        }
        Ok(CacheState {
            capacity,
            occupancy: 0,
            w_high,
            w_low,
            files: HashMap::new(),
            by_insertion: BTreeMap::new(),
            hit_rate: HitRate::new(hit_rate),
        })
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn occupancy(&self) -> u64 {
        self.occupancy
    }

    /// Occupancy as a fraction of capacity.
    pub fn occupancy_fraction(&self) -> f64 {
        self.occupancy as f64 / self.capacity as f64
    }

    pub fn hit_rate(&self) -> f64 {
        self.hit_rate.value()
    }

    pub fn w_high(&self) -> f64 {
        self.w_high
    }

    pub fn w_low(&self) -> f64 {
        self.w_low
    }

    pub fn high_mark(&self) -> f64 {
        self.w_high * self.capacity as f64
    }

    pub fn low_mark(&self) -> f64 {
        self.w_low * self.capacity as f64
    }

    pub fn at_or_above_high(&self) -> bool {
        self.occupancy as f64 >= self.high_mark()
    }

    pub fn contains(&self, key: FileKey) -> bool {
        self.files.contains_key(&key)
    }

    pub fn get(&self, key: FileKey) -> Option<&CachedFile> {
        self.files.get(&key)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Cached files in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (FileKey, &CachedFile)> + '_ {
        self.by_insertion.values().map(|k| (*k, &self.files[k]))
    }

    pub fn keys(&self) -> Vec<FileKey> {
        self.by_insertion.values().copied().collect()
    }

    fn insert(&mut self, key: FileKey, size: u64, tick: u64) -> Result<()> {
        if self.files.contains_key(&key) {
            return Err(Error::PolicyContract("file inserted twice".into()));
        }
        if self.occupancy + size > self.capacity {
            return Err(Error::PolicyContract(format!(
                "insertion of {size} bytes would exceed capacity ({} of {})",
                self.occupancy, self.capacity
            )));
        }
        self.files.insert(
            key,
            CachedFile {
                size,
                last_access_tick: tick,
                insertion_tick: tick,
                access_count: 1,
            },
        );
        self.by_insertion.insert(tick, key);
        self.occupancy += size;
        Ok(())
    }

    fn touch(&mut self, key: FileKey, tick: u64) {
        if let Some(f) = self.files.get_mut(&key) {
            f.last_access_tick = tick;
            f.access_count += 1;
        }
    }

    fn remove(&mut self, key: FileKey) -> Option<u64> {
        let f = self.files.remove(&key)?;
        self.by_insertion.remove(&f.insertion_tick);
        self.occupancy -= f.size;
        Some(f.size)
    }
}

/// Hit/miss and data-volume counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub hits: u64,
    pub misses: u64,
    /// Read on hit data.
    pub rhd: u64,
    /// Read on miss data.
    pub rhm: u64,
    /// Written data.
    pub wd: u64,
    /// Deleted data.
    pub dd: u64,
}

impl Counters {
    pub fn requests(&self) -> u64 {
        self.hits + self.misses
    }

    fn minus(&self, other: &Counters) -> Counters {
        Counters {
            hits: self.hits - other.hits,
            misses: self.misses - other.misses,
            rhd: self.rhd - other.rhd,
            rhm: self.rhm - other.rhm,
            wd: self.wd - other.wd,
            dd: self.dd - other.dd,
        }
    }

    pub fn add(&mut self, other: &Counters) {
        self.hits += other.hits;
        self.misses += other.misses;
        self.rhd += other.rhd;
        self.rhm += other.rhm;
        self.wd += other.wd;
        self.dd += other.dd;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRow {
    pub day: u32,
    #[serde(flatten)]
    pub counters: Counters,
    pub occupancy_eod: u64,
    pub hit_rate: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Accounting {
    pub totals: Counters,
    pub daily: Vec<DailyRow>,
    day_start: Counters,
}

impl Accounting {
    fn snapshot_day(&mut self, day: u32, occupancy: u64, hit_rate: f64) -> &DailyRow {
        let delta = self.totals.minus(&self.day_start);
        self.day_start = self.totals;
        self.daily.push(DailyRow {
            day,
            counters: delta,
            occupancy_eod: occupancy,
            hit_rate,
        });
        self.daily.last().unwrap()
    }
}

/// Per-day cap on bytes served from the cache.
#[derive(Debug, Clone, Default)]
pub struct BandwidthGate {
    pub daily_limit: Option<u64>,
    pub consumed_today: u64,
}

impl BandwidthGate {
    fn try_serve(&mut self, size: u64) -> bool {
        match self.daily_limit {
            Some(limit) if self.consumed_today + size > limit => false,
            _ => {
                self.consumed_today += size;
                true
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Hit,
    MissStored,
    MissProxied,
    MissBandwidth,
}

impl Outcome {
    pub fn is_hit(self) -> bool {
        self == Outcome::Hit
    }
}

/// Everything a policy knows about the request being served.
#[derive(Debug, Clone, Copy)]
pub struct Access {
    pub key: FileKey,
    pub size: u64,
    pub stats: FileStats,
    pub tick: u64,
    /// Zero-based position of the request in the run.
    pub index: u64,
    pub day: u32,
    pub occupancy_at_start: u64,
}

/// Watermark bookkeeping used to verify the space contracts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvictionAudit {
    pub low_watermark_events: u64,
    pub high_only_events: u64,
    /// Largest occupancy/capacity ratio seen right after an eviction event.
    pub max_fraction_after_low_event: f64,
    pub max_fraction_after_high_event: f64,
    /// Largest occupancy/capacity ratio seen at any tick.
    pub max_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub capacity: u64,
    pub w_high: f64,
    pub w_low: f64,
    pub bandwidth_limit: Option<u64>,
    pub hit_rate: HitRateMode,
}

impl NodeConfig {
    pub fn new(capacity: u64) -> Self {
        NodeConfig {
            capacity,
            w_high: 0.95,
            w_low: 0.75,
            bandwidth_limit: None,
            hit_rate: HitRateMode::Cumulative,
        }
    }
}

/// The simulated cache node, minus the policy.
#[derive(Debug)]
pub struct Node {
    pub cache: CacheState,
    pub stats: FileStatsStore,
    pub accounting: Accounting,
    pub gate: BandwidthGate,
    pub audit: EvictionAudit,
    files: Interner,
    data_types: Interner,
    day: u32,
    tick: u64,
    requests: u64,
}

impl Node {
    pub fn new(config: &NodeConfig) -> Result<Self> {
        Ok(Node {
            cache: CacheState::new(config.capacity, config.w_high, config.w_low, config.hit_rate)?,
            stats: FileStatsStore::default(),
            accounting: Accounting::default(),
            gate: BandwidthGate {
                daily_limit: config.bandwidth_limit,
                consumed_today: 0,
            },
            audit: EvictionAudit::default(),
            files: Interner::default(),
            data_types: Interner::default(),
            day: 0,
            tick: 0,
            requests: 0,
        })
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Requests fully processed so far.
    pub fn requests(&self) -> u64 {
        self.requests
    }

    pub fn file_name(&self, key: FileKey) -> &str {
        self.files.name(key.0)
    }

    pub fn data_type_label(&self, id: u16) -> &str {
        self.data_types.name(id as u32)
    }

    pub fn file_stats(&self, key: FileKey) -> Option<FileStats> {
        self.stats.get(key, self.day, self.tick)
    }

    /// Remove a cached file, charging its size to deleted data.
    pub fn evict(&mut self, key: FileKey) -> Option<u64> {
        let size = self.cache.remove(key)?;
        self.accounting.totals.dd += size;
        Some(size)
    }

    /// Whether `needed` more bytes call for an eviction: they would not fit,
    /// or occupancy has reached W_high.
    pub fn needs_space(&self, needed: u64) -> bool {
        self.cache.at_or_above_high() || self.cache.occupancy() + needed > self.cache.capacity()
    }

    fn space_satisfied(&self, target: f64, needed: u64) -> bool {
        self.cache.occupancy() as f64 <= target
            && self.cache.occupancy() + needed <= self.cache.capacity()
    }

    /// Evict along `order` until occupancy is at most `target` bytes and
    /// `needed` more bytes fit. Returns the bytes freed.
    pub fn evict_in_order(&mut self, order: &[FileKey], target: f64, needed: u64) -> Result<u64> {
        let mut freed = 0;
        for &key in order {
            if self.space_satisfied(target, needed) {
                break;
            }
            freed += self.evict(key).unwrap_or(0);
        }
        if !self.space_satisfied(target, needed) {
            return Err(Error::PolicyContract(format!(
                "eviction order exhausted at occupancy {} (target {target:.0}, needed {needed})",
                self.cache.occupancy()
            )));
        }
        Ok(freed)
    }

    /// The W_high/W_low sweep: a no-op unless occupancy has reached W_high
    /// or `needed` bytes do not fit, otherwise evicts along `order` until
    /// occupancy is at most W_low and `needed` fits.
    pub fn evict_to_low_watermark(&mut self, order: &[FileKey], needed: u64) -> Result<u64> {
        if !self.needs_space(needed) {
            return Ok(0);
        }
        let target = self.cache.low_mark();
        self.evict_in_order(order, target, needed)
    }

    /// Record an eviction event and check it against `contract`.
    pub fn audit_eviction(&mut self, contract: SpaceContract) -> Result<()> {
        let frac = self.cache.occupancy_fraction();
        match contract {
            SpaceContract::LowWatermark => {
                self.audit.low_watermark_events += 1;
                self.audit.max_fraction_after_low_event = self.audit.max_fraction_after_low_event.max(frac);
                if self.cache.occupancy() as f64 > self.cache.low_mark() {
                    return Err(Error::PolicyContract(format!(
                        "occupancy {frac:.4} above W_low after eviction"
                    )));
                }
            }
            SpaceContract::HighWatermarkOnly => {
                self.audit.high_only_events += 1;
                self.audit.max_fraction_after_high_event = self.audit.max_fraction_after_high_event.max(frac);
                if self.cache.at_or_above_high() {
                    return Err(Error::PolicyContract(format!(
                        "occupancy {frac:.4} still at W_high after eviction"
                    )));
                }
            }
        }
        Ok(())
    }

    fn snapshot_day(&mut self) -> &DailyRow {
        self.gate.consumed_today = 0;
        let (occ, hr) = (self.cache.occupancy(), self.cache.hit_rate());
        self.accounting.snapshot_day(self.day, occ, hr)
    }

    fn note_occupancy(&mut self) {
        self.audit.max_fraction = self.audit.max_fraction.max(self.cache.occupancy_fraction());
    }
}

/// Aggregate result of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub totals: Counters,
    pub daily: Vec<DailyRow>,
    pub audit: EvictionAudit,
    pub requested_bytes: u64,
    pub final_occupancy: u64,
    pub final_hit_rate: f64,
}

/// Per-request simulation driver.
pub struct Simulator {
    node: Node,
    policy: Box<dyn Policy>,
    last_tick: Option<u64>,
    started: bool,
    requested_bytes: u64,
    outcomes: Option<Vec<Outcome>>,
}

impl Simulator {
    pub fn new(config: &NodeConfig, policy: Box<dyn Policy>) -> Result<Self> {
        Ok(Simulator {
            node: Node::new(config)?,
            policy,
            last_tick: None,
            started: false,
            requested_bytes: 0,
            outcomes: None,
        })
    }

    /// Keep the outcome of every request (for differential tests).
    pub fn record_outcomes(mut self) -> Self {
        self.outcomes = Some(Vec::new());
        self
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn policy(&self) -> &dyn Policy {
        self.policy.as_ref()
    }

    pub fn policy_mut(&mut self) -> &mut dyn Policy {
        self.policy.as_mut()
    }

    pub fn outcomes(&self) -> Option<&[Outcome]> {
        self.outcomes.as_deref()
    }

    pub fn into_node(self) -> Node {
        self.node
    }

    pub fn into_parts(self) -> (Node, Box<dyn Policy>) {
        (self.node, self.policy)
    }

    fn close_day(&mut self) -> Result<()> {
        let day = self.node.day;
        self.policy.on_day_end(day, &mut self.node)?;
        self.node.snapshot_day();
        let cache = &self.node.cache;
        self.node.stats.purge(day + 1, |k| cache.contains(k));
        Ok(())
    }

    fn make_room(&mut self, needed: u64) -> Result<()> {
        self.policy.free_space(&mut self.node, needed)?;
        self.node.audit_eviction(self.policy.space_contract())?;
        if self.node.cache.occupancy() + needed > self.node.cache.capacity() {
            return Err(Error::PolicyContract(format!(
                "{} did not free room for {needed} bytes",
                self.policy.id()
            )));
        }
        Ok(())
    }

    pub fn process(&mut self, req: &Request) -> Result<Outcome> {
        if let Some(prev) = self.last_tick {
            if req.tick <= prev {
                return Err(Error::NonMonotonicTick {
                    tick: req.tick,
                    previous: prev,
                });
            }
        }
        if !self.started {
            self.node.day = req.day;
            self.started = true;
        }
        if req.day < self.node.day {
            return Err(Error::NonMonotonicDay {
                day: req.day,
                current: self.node.day,
            });
        }
        while self.node.day < req.day {
            self.close_day()?;
            self.node.day += 1;
        }
        self.last_tick = Some(req.tick);
        self.node.tick = req.tick;
        self.requested_bytes += req.size;

        let key = FileKey(self.node.files.intern(&req.file_id));
        let dtype = self.node.data_types.intern(&req.data_type) as u16;
        let stats = self.node.stats.record(key, req.size, dtype, req.day, req.tick);
        if stats.size != req.size {
            return Err(Error::InconsistentFile {
                file_id: req.file_id.clone(),
                field: "size",
                row: req.tick as usize,
            });
        }
        let size = stats.size;
        let access = Access {
            key,
            size,
            stats,
            tick: req.tick,
            index: self.node.requests,
            day: req.day,
            occupancy_at_start: self.node.cache.occupancy(),
        };

        let outcome = if self.node.cache.contains(key) {
            if self.node.gate.try_serve(size) {
                self.node.cache.touch(key, req.tick);
                self.node.accounting.totals.hits += 1;
                self.node.accounting.totals.rhd += size;
                self.node.cache.hit_rate.record(true);
                Outcome::Hit
            } else {
                self.node.accounting.totals.misses += 1;
                self.node.accounting.totals.rhm += size;
                self.node.cache.hit_rate.record(false);
                Outcome::MissBandwidth
            }
        } else {
            self.node.accounting.totals.misses += 1;
            self.node.accounting.totals.rhm += size;
            self.node.cache.hit_rate.record(false);
            if size > self.node.cache.capacity() {
                Outcome::MissProxied
            } else {
                match self.policy.admit(&access, &self.node) {
                    Admission::NotStore => Outcome::MissProxied,
                    Admission::Store => {
                        if self.node.needs_space(size) {
                            self.make_room(size)?;
                        }
                        self.node.cache.insert(key, size, req.tick)?;
                        self.node.accounting.totals.wd += size;
                        self.node.note_occupancy();
                        if self.node.cache.at_or_above_high() {
                            self.make_room(0)?;
                        }
                        Outcome::MissStored
                    }
                }
            }
        };

        self.policy.after_request(&access, outcome, &mut self.node)?;
        self.node.note_occupancy();
        if self.node.cache.occupancy() > self.node.cache.capacity() {
            return Err(Error::PolicyContract("occupancy exceeds capacity".into()));
        }
        self.node.requests += 1;
        if let Some(o) = self.outcomes.as_mut() {
            o.push(outcome);
        }
        Ok(outcome)
    }

    /// Close the last day, let the policy flush, and summarise.
    pub fn finish(&mut self) -> Result<RunSummary> {
        if self.started {
            self.close_day()?;
        }
        self.policy.finish(&mut self.node)?;
        Ok(RunSummary {
            totals: self.node.accounting.totals,
            daily: self.node.accounting.daily.clone(),
            audit: self.node.audit,
            requested_bytes: self.requested_bytes,
            final_occupancy: self.node.cache.occupancy(),
            final_hit_rate: self.node.cache.hit_rate(),
        })
    }

    /// Drive a whole trace and finish.
    pub fn run<'a>(&mut self, requests: impl IntoIterator<Item = &'a Request>) -> Result<RunSummary> {
        for r in requests {
            self.process(r)?;
        }
        self.finish()
    }
}
