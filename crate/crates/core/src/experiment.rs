//! Run configuration, policy construction, single runs and sweeps.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{BinningScheme, EpsilonConfig, EpsilonSchedule};
use crate::baselines::{EvictionOrdering, WriteEverything};
use crate::cache::{EvictionAudit, HitRateMode, NodeConfig, RunSummary, Simulator};
use crate::dqn::{Dqn, DqnConfig};
use crate::error::{Error, Result};
use crate::metrics::{compute_report, infinite_cache_oracle, MetricsReport, Oracle};
use crate::policy::{Policy, PolicyDiagnostics, PolicyId};
use crate::scdl::{Scdl, ScdlParams, ScdlReward};
use crate::scdl2::{EvictionTrigger, PrevOutcome, Scdl2, Scdl2Params, TriggerMode};
use crate::trace::{generate_trace, mean_requests_per_repeated_file, read_trace, Request, TraceSpec, TwoClassSpec};
use crate::units::{ByteSize, GIB, TIB};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TraceSource {
    Preset {
        name: String,
        #[serde(default = "default_trace_seed")]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
    Spec {
        spec: TraceSpec,
    },
    TwoClass {
        spec: TwoClassSpec,
    },
}

fn default_trace_seed() -> u64 {
    1
}

impl TraceSource {
    pub fn preset(name: &str, seed: u64) -> Self {
        TraceSource::Preset {
            name: name.to_string(),
            seed,
        }
    }

    pub fn load(&self) -> Result<Vec<Request>> {
        match self {
            TraceSource::Preset { name, seed } => match name.as_str() {
                "paper-like" => Ok(generate_trace(&TraceSpec::paper_like(*seed))?.collect()),
                "small" => Ok(generate_trace(&TraceSpec::small(*seed))?.collect()),
                "two-class" => TwoClassSpec::preset(*seed).generate(),
                other => Err(Error::Config(format!(
                    "unknown trace preset '{other}' (valid: {})",
                    TraceSpec::PRESETS.join(", ")
                ))),
            },
            TraceSource::File { path } => read_trace(path),
            TraceSource::Spec { spec } => Ok(generate_trace(spec)?.collect()),
            TraceSource::TwoClass { spec } => spec.generate(),
        }
    }
}

/// Shape of a loaded trace, used to derive automatic parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInfo {
    pub requests: u64,
    pub days: u32,
    pub distinct_files: u64,
    pub requested_bytes: u64,
    pub data_types: Vec<String>,
    pub mean_requests_per_repeated_file: Option<f64>,
}

impl TraceInfo {
    pub fn of(trace: &[Request]) -> Self {
        let files: BTreeSet<&str> = trace.iter().map(|r| r.file_id.as_str()).collect();
        let types: BTreeSet<&str> = trace.iter().map(|r| r.data_type.as_str()).collect();
        let days = match (trace.first(), trace.last()) {
            (Some(a), Some(b)) => b.day - a.day + 1,
            _ => 0,
        };
        TraceInfo {
            requests: trace.len() as u64,
            days,
            distinct_files: files.len() as u64,
            requested_bytes: trace.iter().map(|r| r.size).sum(),
            data_types: types.into_iter().map(String::from).collect(),
            mean_requests_per_repeated_file: mean_requests_per_repeated_file(trace),
        }
    }

    pub fn mean_size(&self) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            self.requested_bytes as f64 / self.requests as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    pub addition_warmup: u64,
    pub eviction_warmup: u64,
    pub scan_period: u64,
    pub addition_window: u64,
    pub eviction_window: u64,
    /// Eviction pass period; derived from capacity when absent.
    pub k: Option<u64>,
    /// Bytes per unit reward; 1 GiB times `byte_scale` when absent.
    pub reward_unit: Option<ByteSize>,
    /// One-hot data types; the trace's types when absent.
    pub data_types: Option<Vec<String>>,
    pub train_interval: u64,
    pub eviction_train_interval: u64,
    pub addition_eps: EpsilonConfig,
    pub eviction_eps: EpsilonConfig,
    pub checkpoint: Option<PathBuf>,
}

impl Default for DqnParams {
    fn default() -> Self {
        let d = DqnConfig::default();
        DqnParams {
            hidden: d.hidden,
            learning_rate: d.learning_rate,
            gamma: d.gamma,
            replay_capacity: d.replay_capacity,
            batch_size: d.batch_size,
            target_sync: d.target_sync,
            addition_warmup: d.addition_warmup,
            eviction_warmup: d.eviction_warmup,
            scan_period: d.scan_period,
            addition_window: d.addition_window,
            eviction_window: d.eviction_window,
            k: None,
            reward_unit: None,
            data_types: None,
            train_interval: d.train_interval,
            eviction_train_interval: d.eviction_train_interval,
            addition_eps: default_eps(),
            eviction_eps: default_eps(),
            checkpoint: None,
        }
    }
}

fn default_eps() -> EpsilonConfig {
    EpsilonConfig::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Binning for the tabular agents; the default edges scaled by
    /// `byte_scale` when absent.
    pub bins: Option<BinningScheme>,
    pub scdl_eps: EpsilonConfig,
    pub scdl_reward: ScdlReward,
    pub scdl2_addition_eps: EpsilonConfig,
    pub scdl2_eviction_eps: EpsilonConfig,
    pub scdl2_k: u64,
    pub scdl2_prev_outcome: PrevOutcome,
    pub dqn: DqnParams,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            alpha: 0.5,
            gamma: 0.5,
            bins: None,
            scdl_eps: default_eps(),
            scdl_reward: ScdlReward::default(),
            scdl2_addition_eps: default_eps(),
            scdl2_eviction_eps: default_eps(),
            scdl2_k: 8192,
            scdl2_prev_outcome: PrevOutcome::default(),
            dqn: DqnParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub trace: TraceSource,
    pub policy: PolicyId,
    pub capacity: ByteSize,
    #[serde(default = "default_w_high")]
    pub w_high: f64,
    #[serde(default = "default_w_low")]
    pub w_low: f64,
    /// Daily cap on bytes served from cache.
    #[serde(default)]
    pub bandwidth_limit: Option<ByteSize>,
    #[serde(default)]
    pub hit_rate: HitRateMode,
    #[serde(default)]
    pub seed: u64,
    /// Ratio of simulated bytes to the production scale the default
    /// binning, reward unit and eviction period are expressed in.
    #[serde(default = "default_byte_scale")]
    pub byte_scale: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub params: PolicyParams,
}

fn default_w_high() -> f64 {
    0.95
}

fn default_w_low() -> f64 {
    0.75
}

fn default_byte_scale() -> f64 {
    1e-3
}

/// Parse a `--set` value: TOML syntax when it parses, a bare string otherwise.
fn parse_override_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Holder {
        v: toml::Value,
    }
    toml::from_str::<Holder>(&format!("v = {raw}"))
        .map(|h| h.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

/// Set `dotted.key` in a TOML table, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{key}'")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{p}' is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn new(trace: TraceSource, policy: PolicyId, capacity: u64) -> Self {
        RunConfig {
            trace,
            policy,
            capacity: ByteSize(capacity),
            w_high: default_w_high(),
            w_low: default_w_low(),
            bandwidth_limit: None,
            hit_rate: HitRateMode::default(),
            seed: 0,
            byte_scale: default_byte_scale(),
            output_dir: None,
            params: PolicyParams::default(),
        }
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn node_config(&self) -> NodeConfig {
        NodeConfig {
            capacity: self.capacity.0,
            w_high: self.w_high,
            w_low: self.w_low,
            bandwidth_limit: self.bandwidth_limit.map(|b| b.0),
            hit_rate: self.hit_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity.0 == 0 {
            return Err(Error::Config("capacity must be positive".into()));
        }
        if !(0.0 < self.w_low && self.w_low < self.w_high && self.w_high <= 1.0) {
            return Err(Error::Config("watermarks must satisfy 0 < w_low < w_high <= 1".into()));
        }
        if !(self.byte_scale > 0.0 && self.byte_scale.is_finite()) {
            return Err(Error::Config("byte_scale must be positive".into()));
        }
        let p = &self.params;
        for e in [&p.scdl_eps, &p.scdl2_addition_eps, &p.scdl2_eviction_eps, &p.dqn.addition_eps, &p.dqn.eviction_eps] {
            e.validate()?;
        }
        if let Some(b) = &p.bins {
            b.validate()?;
        }
        Ok(())
    }

    /// Production-equivalent capacity in TiB.
    pub fn equivalent_tib(&self) -> f64 {
        self.capacity.0 as f64 / self.byte_scale / TIB as f64
    }

    /// Eviction period for the DQN cache: 500 requests per equivalent TiB.
    pub fn dqn_k(&self) -> u64 {
        self.params
            .dqn
            .k
            .unwrap_or_else(|| ((500.0 * self.equivalent_tib()).round() as u64).max(1))
    }

    pub fn bins(&self) -> BinningScheme {
        self.params
            .bins
            .clone()
            .unwrap_or_else(|| BinningScheme::default().scaled(self.byte_scale))
    }
}

/// Epsilon decay rates filled in when a config leaves them out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoRates {
    pub dqn_addition: f64,
    pub dqn_eviction: f64,
    pub scdl: f64,
    pub scdl2_eviction: f64,
}

impl AutoRates {
    /// DQN schedules reach 0.2 halfway through the expected decisions.
    /// SCDL decays ten times faster; the SCDL2 addition agent keeps the
    /// DQN pace.
    pub fn derive(cfg: &RunConfig, info: &TraceInfo) -> Self {
        let d = &cfg.params.dqn;
        let add_decisions = info.requests.saturating_sub(d.addition_warmup) / 2;
        let dqn_addition = EpsilonSchedule::rate_reaching(d.addition_eps.eps_max, d.addition_eps.eps_min, 0.2, add_decisions);
        let cached = if info.mean_size() > 0.0 {
            (cfg.capacity.0 as f64 / info.mean_size()).max(1.0)
        } else {
            1.0
        };
        let passes = (info.requests / cfg.dqn_k()).max(1);
        let evict_decisions = ((passes as f64 * cached) as u64 / 2).max(1);
        let dqn_eviction =
            EpsilonSchedule::rate_reaching(d.eviction_eps.eps_max, d.eviction_eps.eps_min, 0.2, evict_decisions);
        let e = &cfg.params.scdl2_eviction_eps;
        let scdl2_eviction = EpsilonSchedule::rate_reaching(e.eps_max, e.eps_min, 0.2, (info.requests / 200).max(1));
        AutoRates {
            dqn_addition,
            dqn_eviction,
            scdl: 10.0 * dqn_addition,
            scdl2_eviction,
        }
    }
}

pub fn dqn_config(cfg: &RunConfig, info: &TraceInfo) -> DqnConfig {
    let rates = AutoRates::derive(cfg, info);
    let d = &cfg.params.dqn;
    DqnConfig {
        hidden: d.hidden.clone(),
        learning_rate: d.learning_rate,
        gamma: d.gamma,
        replay_capacity: d.replay_capacity,
        batch_size: d.batch_size,
        target_sync: d.target_sync,
        addition_warmup: d.addition_warmup,
        eviction_warmup: d.eviction_warmup,
        scan_period: d.scan_period,
        addition_window: d.addition_window,
        eviction_window: d.eviction_window,
        k: cfg.dqn_k(),
        reward_unit: d.reward_unit.map_or(GIB as f64 * cfg.byte_scale, |b| b.0 as f64),
        data_types: d.data_types.clone().unwrap_or_else(|| info.data_types.clone()),
        train_interval: d.train_interval,
        eviction_train_interval: d.eviction_train_interval,
        addition_eps: d.addition_eps.schedule(rates.dqn_addition),
        eviction_eps: d.eviction_eps.schedule(rates.dqn_eviction),
        seed: cfg.seed,
        forced_addition: None,
        forced_eviction: None,
        log_decisions: false,
    }
}

pub fn build_policy(cfg: &RunConfig, info: &TraceInfo) -> Result<Box<dyn Policy>> {
    let p = &cfg.params;
    let rates = AutoRates::derive(cfg, info);
    let scdl2 = |mode: TriggerMode| -> Result<Box<dyn Policy>> {
        Ok(Box::new(Scdl2::new(Scdl2Params {
            bins: cfg.bins(),
            alpha: p.alpha,
            gamma: p.gamma,
            addition_schedule: p.scdl2_addition_eps.schedule(rates.dqn_addition),
            eviction_schedule: p.scdl2_eviction_eps.schedule(rates.scdl2_eviction),
            trigger: EvictionTrigger { mode, k: p.scdl2_k },
            prev_outcome: p.scdl2_prev_outcome,
            forced_addition: None,
            forced_eviction: None,
            seed: cfg.seed,
        })?))
    };
    Ok(match cfg.policy {
        PolicyId::WeLru => Box::new(WriteEverything::new(EvictionOrdering::Lru)),
        PolicyId::WeLfu => Box::new(WriteEverything::new(EvictionOrdering::Lfu)),
        PolicyId::WeSizeBig => Box::new(WriteEverything::new(EvictionOrdering::SizeBig)),
        PolicyId::WeSizeSmall => Box::new(WriteEverything::new(EvictionOrdering::SizeSmall)),
        PolicyId::Scdl => Box::new(Scdl::new(ScdlParams {
            bins: cfg.bins(),
            alpha: p.alpha,
            gamma: p.gamma,
            schedule: p.scdl_eps.schedule(rates.scdl),
            reward: p.scdl_reward,
            forced_action: None,
            seed: cfg.seed,
        })?),
        PolicyId::Scdl2NoEviction => scdl2(TriggerMode::NoEviction)?,
        PolicyId::Scdl2OnFree => scdl2(TriggerMode::OnFree)?,
        PolicyId::Scdl2OnDayEnd => scdl2(TriggerMode::OnDayEnd)?,
        PolicyId::Scdl2OnK => scdl2(TriggerMode::OnK)?,
        PolicyId::Dqn => {
            let mut dqn = Dqn::new(dqn_config(cfg, info))?;
            if let Some(dir) = &p.dqn.checkpoint {
                dqn.load_checkpoint(dir)?;
            }
            Box::new(dqn)
        }
    })
}

/// Everything written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: PolicyId,
    pub capacity: u64,
    pub seed: u64,
    pub trace: TraceInfo,
    pub metrics: MetricsReport,
    pub audit: EvictionAudit,
    pub final_occupancy: u64,
    pub diagnostics: PolicyDiagnostics,
}

pub struct RunOutput {
    pub report: RunReport,
    pub summary: RunSummary,
    pub policy: Box<dyn Policy>,
}

/// Run one config against an already-loaded trace and its oracle.
pub fn run_on_trace(cfg: &RunConfig, trace: &[Request], info: &TraceInfo, oracle: &Oracle) -> Result<RunOutput> {
    cfg.validate()?;
    let policy = build_policy(cfg, info)?;
    let mut sim = Simulator::new(&cfg.node_config(), policy)?;
    let summary = sim.run(trace)?;
    let metrics = compute_report(&summary, oracle);
    let diagnostics = sim.policy().diagnostics();
    let report = RunReport {
        policy: cfg.policy,
        capacity: cfg.capacity.0,
        seed: cfg.seed,
        trace: info.clone(),
        metrics,
        audit: summary.audit,
        final_occupancy: summary.final_occupancy,
        diagnostics,
    };
    let policy = sim_into_policy(sim);
    Ok(RunOutput { report, summary, policy })
}

fn sim_into_policy(sim: Simulator) -> Box<dyn Policy> {
    sim.into_parts().1
}

/// Load the trace, run, and write artifacts to `cfg.output_dir` if set.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let trace = cfg.trace.load()?;
    let info = TraceInfo::of(&trace);
    let oracle = infinite_cache_oracle(&trace);
    let out = run_on_trace(cfg, &trace, &info, &oracle)?;
    if let Some(dir) = &cfg.output_dir {
        write_run_outputs(dir, &out)?;
    }
    Ok(out)
}

pub fn report_json(report: &RunReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn write_daily_csv<W: Write>(w: W, summary: &RunSummary) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["day", "hits", "misses", "rhd", "rhm", "wd", "dd", "occupancy_eod", "hit_rate"])?;
    for r in &summary.daily {
        let c = &r.counters;
        wtr.write_record([
            r.day.to_string(),
            c.hits.to_string(),
            c.misses.to_string(),
            c.rhd.to_string(),
            c.rhm.to_string(),
            c.wd.to_string(),
            c.dd.to_string(),
            r.occupancy_eod.to_string(),
            r.hit_rate.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

/// Writes `report.json`, `daily.csv`, a one-row `table.csv` and the
/// policy's dumps. Returns the paths written.
pub fn write_run_outputs(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("report.json");
    fs::write(&path, report_json(&out.report)?).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("daily.csv");
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_daily_csv(BufWriter::new(f), &out.summary)?;
    written.push(path);

    let path = dir.join("table.csv");
    let table = SweepTable::from_rows(vec![SweepRow::from_report(&out.report)]);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    table.write_csv(BufWriter::new(f))?;
    written.push(path);

    written.extend(out.policy.dump(dir)?);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: PolicyId,
    pub capacity: u64,
    pub score: Option<f64>,
    pub throughput: Option<f64>,
    pub cost: Option<f64>,
    pub rhd: u64,
    pub rhm: u64,
    pub wd: u64,
    pub dd: u64,
    /// Metrics for which this row holds the best value.
    pub best: Vec<String>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn from_report(r: &RunReport) -> Self {
        let m = &r.metrics;
        SweepRow {
            policy: r.policy,
            capacity: r.capacity,
            score: m.whole_run.score,
            throughput: m.whole_run.throughput,
            cost: m.whole_run.cost,
            rhd: m.raw.rhd,
            rhm: m.raw.rhm,
            wd: m.raw.wd,
            dd: m.raw.dd,
            best: Vec::new(),
            error: None,
        }
    }

    fn failed(cfg: &RunConfig, err: &Error) -> Self {
        SweepRow {
            policy: cfg.policy,
            capacity: cfg.capacity.0,
            score: None,
            throughput: None,
            cost: None,
            rhd: 0,
            rhm: 0,
            wd: 0,
            dd: 0,
            best: Vec::new(),
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl SweepTable {
    /// Sort by capacity, then score (undefined and failed rows last), and
    /// flag the best score, throughput and lowest cost within each capacity.
    pub fn from_rows(mut rows: Vec<SweepRow>) -> Self {
        rows.sort_by(|a, b| {
            a.capacity.cmp(&b.capacity).then_with(|| match (a.score, b.score) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            })
        });
        let best_of = |cap: u64, key: fn(&SweepRow) -> Option<f64>, lower: bool| {
            rows.iter()
                .filter(|r| r.capacity == cap)
                .filter_map(key)
                .fold(None, |acc: Option<f64>, v| match acc {
                    None => Some(v),
                    Some(a) if (lower && v < a) || (!lower && v > a) => Some(v),
                    keep => keep,
                })
        };
        let flags: Vec<_> = rows
            .iter()
            .map(|r| {
                let cap = r.capacity;
                [
                    ("score", r.score, best_of(cap, |r| r.score, false)),
                    ("throughput", r.throughput, best_of(cap, |r| r.throughput, false)),
                    ("cost", r.cost, best_of(cap, |r| r.cost, true)),
                ]
                .into_iter()
                .filter(|(_, v, best)| v.is_some() && v == best)
                .map(|(name, _, _)| name.to_string())
                .collect::<Vec<_>>()
            })
            .collect();
        for (r, f) in rows.iter_mut().zip(flags) {
            r.best = f;
        }
        SweepTable { rows }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["policy", "capacity", "score", "throughput", "cost", "rhd", "rhm", "wd", "dd", "best", "error"])?;
        for r in &self.rows {
            let error = r.error.as_deref().map_or(String::new(), |e| format!("ERROR: {e}"));
            wtr.write_record([
                r.policy.to_string(),
                r.capacity.to_string(),
                fmt_opt(r.score),
                fmt_opt(r.throughput),
                fmt_opt(r.cost),
                r.rhd.to_string(),
                r.rhm.to_string(),
                r.wd.to_string(),
                r.dd.to_string(),
                r.best.join(";"),
                error,
            ])?;
        }
        wtr.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

/// A grid of policies x capacities over one base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub policies: Vec<PolicyId>,
    pub capacities: Vec<ByteSize>,
}

impl SweepConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: SweepConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if cfg.policies.is_empty() || cfg.capacities.is_empty() {
            return Err(Error::Config("sweep needs at least one policy and one capacity".into()));
        }
        for c in cfg.expand() {
            c.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn expand(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &cap in &self.capacities {
            for &policy in &self.policies {
                let mut c = self.base.clone();
                c.policy = policy;
                c.capacity = cap;
                c.output_dir = self
                    .base
                    .output_dir
                    .as_ref()
                    .map(|d| d.join(format!("{}-{}", policy, cap.0)));
                out.push(c);
            }
        }
        out
    }
}

pub struct SweepOutput {
    pub table: SweepTable,
    pub reports: Vec<Option<RunReport>>,
}

/// Run every config against one shared trace and oracle, in parallel.
pub fn sweep(configs: &[RunConfig]) -> Result<SweepOutput> {
    let first = configs.first().ok_or_else(|| Error::Config("sweep needs at least one config".into()))?;
    if configs.iter().any(|c| c.trace != first.trace) {
        return Err(Error::Config("all sweep configs must share one trace".into()));
    }
    let trace = first.trace.load()?;
    let info = TraceInfo::of(&trace);
    let oracle = infinite_cache_oracle(&trace);
    let results: Vec<std::result::Result<RunReport, (usize, Error)>> = configs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let out = run_on_trace(cfg, &trace, &info, &oracle).map_err(|e| (i, e))?;
            if let Some(dir) = &cfg.output_dir {
                write_run_outputs(dir, &out).map_err(|e| (i, e))?;
            }
            Ok(out.report)
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(rep) => {
                rows.push(SweepRow::from_report(&rep));
                reports.push(Some(rep));
            }
            Err((i, e)) => {
                rows.push(SweepRow::failed(&configs[i], &e));
                reports.push(None);
            }
        }
    }
    Ok(SweepOutput {
        table: SweepTable::from_rows(rows),
        reports,
    })
}
