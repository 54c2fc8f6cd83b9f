//! Tabular Q-learning machinery shared by the SCDL agents: feature binning,
//! Q-tables, epsilon-greedy selection with exponential decay, and the
//! Q-learning update.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{CacheState, FileStats};
use crate::error::{Error, Result};
use crate::units::{GIB, MIB};

/// Bin index of `v` against ascending `edges`: the number of edges `<= v`.
/// Values below the first edge land in bin 0, values past the last edge in
/// the top bin.
fn edge_bin<T: PartialOrd>(edges: &[T], v: T) -> u16 {
    edges.partition_point(|e| *e <= v) as u16
}

/// Decile-style bin of a fraction, clamped into `0..bins`.
pub fn fraction_bin(frac: f64, bins: u16) -> u16 {
    if !(frac > 0.0) {
        return 0;
    }
    ((frac * bins as f64).floor() as u64).min(bins.saturating_sub(1) as u64) as u16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningScheme {
    pub size_edges: Vec<u64>,
    pub freq_edges: Vec<u32>,
    pub dt_edges: Vec<u32>,
    pub occupancy_bins: u16,
    pub hitrate_bins: u16,
    pub cat_occupancy_edges: Vec<f64>,
}

impl Default for BinningScheme {
    fn default() -> Self {
        BinningScheme {
            size_edges: vec![100 * MIB, 500 * MIB, GIB, 2 * GIB, 4 * GIB],
            freq_edges: vec![2, 3, 4, 8, 16],
            dt_edges: vec![1, 2, 3, 4, 5, 6],
            occupancy_bins: 10,
            hitrate_bins: 10,
            cat_occupancy_edges: vec![0.01, 0.05, 0.10, 0.25],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdditionVariant {
    Scdl,
    Scdl2,
}

impl BinningScheme {
    /// Same scheme with byte edges multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        s.size_edges = self
            .size_edges
            .iter()
            .map(|&e| ((e as f64 * factor).round() as u64).max(1))
            .collect();
        s
    }

    pub fn validate(&self) -> Result<()> {
        fn ascending<T: PartialOrd>(v: &[T]) -> bool {
            v.windows(2).all(|w| w[0] < w[1])
        }
        if !ascending(&self.size_edges)
            || !ascending(&self.freq_edges)
            || !ascending(&self.dt_edges)
            || !ascending(&self.cat_occupancy_edges)
        {
            return Err(Error::Config("bin edges must be strictly ascending".into()));
        }
        if self.occupancy_bins == 0 || self.hitrate_bins == 0 {
            return Err(Error::Config("occupancy and hit-rate bins must be positive".into()));
        }
        Ok(())
    }

    pub fn size_bin(&self, size: u64) -> u16 {
        edge_bin(&self.size_edges, size)
    }

    pub fn freq_bin(&self, n: u32) -> u16 {
        edge_bin(&self.freq_edges, n)
    }

    /// The bin reserved for files without a previous request.
    pub fn dt_never(&self) -> u16 {
        self.dt_edges.len() as u16 + 1
    }

    pub fn dt_bin(&self, delta_days: Option<u32>) -> u16 {
        match delta_days {
            Some(d) => edge_bin(&self.dt_edges, d),
            None => self.dt_never(),
        }
    }

    pub fn occupancy_bin(&self, frac: f64) -> u16 {
        fraction_bin(frac, self.occupancy_bins)
    }

    pub fn hitrate_bin(&self, frac: f64) -> u16 {
        fraction_bin(frac, self.hitrate_bins)
    }

    pub fn cat_occupancy_bin(&self, frac: f64) -> u16 {
        edge_bin(&self.cat_occupancy_edges, frac)
    }

    /// The addition-agent state: `(size, frequency, delta)` for SCDL, plus
    /// binned occupancy and hit rate for SCDL2.
    pub fn addition_state(&self, stats: &FileStats, cache: &CacheState, variant: AdditionVariant) -> DiscreteState {
        let mut bins = vec![
            self.size_bin(stats.size),
            self.freq_bin(stats.frequency),
            self.dt_bin(stats.delta_days),
        ];
        if variant == AdditionVariant::Scdl2 {
            bins.push(self.occupancy_bin(cache.occupancy_fraction()));
            bins.push(self.hitrate_bin(cache.hit_rate()));
        }
        DiscreteState(bins)
    }
}

/// A tuple of bin indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiscreteState(pub Vec<u16>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QEntry {
    pub values: Vec<f64>,
    pub visits: Vec<u64>,
}

/// State -> action-value table. Unseen states read as all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    state_labels: Vec<String>,
    actions: Vec<String>,
    entries: BTreeMap<DiscreteState, QEntry>,
}

impl QTable {
    pub fn new(state_labels: &[&str], actions: &[&str]) -> Self {
        assert!(!actions.is_empty(), "a Q-table needs at least one action");
        QTable {
            state_labels: state_labels.iter().map(|s| s.to_string()).collect(),
            actions: actions.iter().map(|s| s.to_string()).collect(),
            entries: BTreeMap::new(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&mut self, s: &DiscreteState) -> &mut QEntry {
        let n = self.actions.len();
        self.entries.entry(s.clone()).or_insert_with(|| QEntry {
            values: vec![0.0; n],
            visits: vec![0; n],
        })
    }

    pub fn get(&self, s: &DiscreteState) -> Option<&QEntry> {
        self.entries.get(s)
    }

    pub fn value(&self, s: &DiscreteState, a: usize) -> f64 {
        self.entries.get(s).map_or(0.0, |e| e.values[a])
    }

    pub fn set(&mut self, s: &DiscreteState, a: usize, v: f64) {
        self.entry(s).values[a] = v;
    }

    pub fn max_value(&self, s: &DiscreteState) -> f64 {
        self.entries
            .get(s)
            .map_or(0.0, |e| e.values.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Argmax over actions; ties go to the lowest action index.
    pub fn greedy(&self, s: &DiscreteState) -> usize {
        match self.entries.get(s) {
            None => 0,
            Some(e) => argmax(&e.values),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DiscreteState, &QEntry)> {
        self.entries.iter()
    }

    /// CSV dump: one row per (state, action) with the bins, the action name,
    /// its visit count and its value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.state_labels.clone();
        header.extend(["action".to_string(), "visits".into(), "q_value".into()]);
        w.write_record(&header)?;
        for (s, e) in &self.entries {
            for (a, name) in self.actions.iter().enumerate() {
                let mut row: Vec<String> = s.0.iter().map(|b| b.to_string()).collect();
                row.push(name.clone());
                row.push(e.visits[a].to_string());
                row.push(e.values[a].to_string());
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io("<q-table>", e))?;
        Ok(())
    }

    /// Inverse of [`QTable::write_csv`] given the action names.
    pub fn read_csv<R: Read>(input: R, actions: &[&str]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 3 {
            return Err(Error::Parse("q-table header too short".into()));
        }
        let n_bins = header.len() - 3;
        let labels: Vec<&str> = header.iter().take(n_bins).collect();
        let mut table = QTable::new(&labels, actions);
        for rec in r.records() {
            let rec = rec?;
            let bins = (0..n_bins)
                .map(|i| rec[i].parse::<u16>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("bad bin: {e}")))?;
            let a = actions
                .iter()
                .position(|n| *n == &rec[n_bins])
                .ok_or_else(|| Error::Parse(format!("unknown action `{}`", &rec[n_bins])))?;
            let visits: u64 = rec[n_bins + 1].parse().map_err(|e| Error::Parse(format!("bad visits: {e}")))?;
            let value: f64 = rec[n_bins + 2].parse().map_err(|e| Error::Parse(format!("bad q_value: {e}")))?;
            let e = table.entry(&DiscreteState(bins));
            e.values[a] = value;
            e.visits[a] = visits;
        }
        Ok(table)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `eps(t) = eps_min + (eps_max - eps_min) * exp(-decay_rate * t)` where `t`
/// counts decisions taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps_max: f64,
    pub eps_min: f64,
    pub decay_rate: f64,
    pub decisions: u64,
}

impl EpsilonSchedule {
    pub fn new(eps_max: f64, eps_min: f64, decay_rate: f64) -> Self {
        EpsilonSchedule {
            eps_max,
            eps_min,
            decay_rate,
            decisions: 0,
        }
    }

    pub fn constant(eps: f64) -> Self {
        EpsilonSchedule::new(eps, eps, 0.0)
    }

    /// Decay rate that brings epsilon to `target` after `decisions` steps.
    pub fn rate_reaching(eps_max: f64, eps_min: f64, target: f64, decisions: u64) -> f64 {
        if decisions == 0 || target <= eps_min || eps_max <= eps_min {
            return 0.0;
        }
        ((eps_max - eps_min) / (target - eps_min)).ln() / decisions as f64
    }

    pub fn value(&self) -> f64 {
        self.value_at(self.decisions)
    }

    pub fn value_at(&self, t: u64) -> f64 {
        self.eps_min + (self.eps_max - self.eps_min) * (-self.decay_rate * t as f64).exp()
    }

    pub fn advance(&mut self) {
        self.decisions += 1;
    }
}

/// Epsilon-greedy choice; advances the schedule by one decision.
pub fn select_action<R: Rng + ?Sized>(
    table: &QTable,
    state: &DiscreteState,
    schedule: &mut EpsilonSchedule,
    rng: &mut R,
) -> usize {
    let eps = schedule.value();
    schedule.advance();
    if eps > 0.0 && rng.random::<f64>() < eps {
        rng.random_range(0..table.n_actions())
    } else {
        table.greedy(state)
    }
}

/// One Q-learning step on `(s, a)`. `s_next = None` is the contextual-bandit
/// case where the next state is `s` itself. Returns the new value.
pub fn q_update(
    table: &mut QTable,
    s: &DiscreteState,
    a: usize,
    r: f64,
    s_next: Option<&DiscreteState>,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    if !r.is_finite() {
        return Err(Error::NonFiniteReward(r));
    }
    let next_max = table.max_value(s_next.unwrap_or(s));
    let e = table.entry(s);
    let q = e.values[a];
    let updated = q + alpha * (r + gamma * next_max - q);
    e.values[a] = updated;
    e.visits[a] += 1;
    Ok(updated)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonConfig {
    pub eps_max: f64,
    pub eps_min: f64,
    /// Per-decision decay rate; `None` lets the runner derive it from the
    /// trace length.
    pub decay_rate: Option<f64>,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        EpsilonConfig {
            eps_max: 1.0,
            eps_min: 0.1,
            decay_rate: None,
        }
    }
}

impl EpsilonConfig {
    pub fn schedule(&self, fallback_rate: f64) -> EpsilonSchedule {
        EpsilonSchedule::new(self.eps_max, self.eps_min, self.decay_rate.unwrap_or(fallback_rate))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.eps_min)
            && (0.0..=1.0).contains(&self.eps_max)
            && self.eps_min <= self.eps_max
            && self.decay_rate.is_none_or(|r| r.is_finite() && r >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("epsilon bounds must satisfy 0 <= eps_min <= eps_max <= 1".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::HitRateMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn st(v: &[u16]) -> DiscreteState {
        DiscreteState(v.to_vec())
    }

    #[test]
    fn addition_state_default_edges() {
        let scheme = BinningScheme::default();
        let cache = CacheState::new(100, 0.95, 0.75, HitRateMode::Cumulative).unwrap();
        let stats = FileStats {
            size: 3 * GIB / 2,
            frequency: 1,
            delta_days: None,
            delta_ticks: None,
            data_type: 0,
        };
        let s = scheme.addition_state(&stats, &cache, AdditionVariant::Scdl);
        assert_eq!(s, st(&[3, 0, scheme.dt_never()]));
        assert_eq!(scheme.addition_state(&stats, &cache, AdditionVariant::Scdl), s);
        assert_eq!(scheme.addition_state(&stats, &cache, AdditionVariant::Scdl2).0.len(), 5);
    }

    #[test]
    fn out_of_range_clamps() {
        let scheme = BinningScheme::default();
        assert_eq!(scheme.size_bin(10 * crate::units::TIB), 5);
        assert_eq!(scheme.size_bin(0), 0);
        assert_eq!(scheme.freq_bin(1_000), 5);
        assert_eq!(scheme.dt_bin(Some(400)), 6);
        assert_eq!(scheme.dt_bin(Some(0)), 0);
        assert_eq!(scheme.occupancy_bin(1.0), 9);
        assert_eq!(scheme.occupancy_bin(-0.5), 0);
        assert_eq!(scheme.occupancy_bin(0.95), 9);
        assert_eq!(scheme.cat_occupancy_bin(0.5), 4);
        assert_eq!(scheme.cat_occupancy_bin(0.0), 0);
    }

    #[test]
    fn greedy_and_tie_break() {
        let mut t = QTable::new(&["x"], &["a", "b"]);
        let s = st(&[0]);
        let mut sched = EpsilonSchedule::constant(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        t.set(&s, 0, 0.2);
        t.set(&s, 1, 0.7);
        assert_eq!(select_action(&t, &s, &mut sched, &mut rng), 1);
        t.set(&s, 0, 0.5);
        t.set(&s, 1, 0.5);
        assert_eq!(select_action(&t, &s, &mut sched, &mut rng), 0);
        assert_eq!(sched.decisions, 2);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let t = QTable::new(&["x"], &["a", "b"]);
        let s = st(&[0]);
        let mut sched = EpsilonSchedule::constant(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let ones = (0..n).filter(|_| select_action(&t, &s, &mut sched, &mut rng) == 1).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((ones - n as f64 / 2.0).abs() < 3.0 * sigma, "{ones}");
    }

    #[test]
    fn q_update_plug_in_and_fixed_point() {
        let mut t = QTable::new(&["x"], &["a", "b"]);
        let s = st(&[0]);
        let s2 = st(&[1]);
        let v = q_update(&mut t, &s, 0, 1.0, Some(&s2), 0.1, 0.95).unwrap();
        assert!((v - 0.1).abs() < 1e-15);

        let mut t = QTable::new(&["x"], &["a", "b"]);
        t.set(&s, 0, 0.8);
        t.set(&s2, 0, 0.8);
        let v = q_update(&mut t, &s, 0, 0.0, Some(&s2), 0.3, 1.0).unwrap();
        assert_eq!(v, 0.8);
        assert!(matches!(
            q_update(&mut t, &s, 0, f64::NAN, None, 0.3, 1.0),
            Err(Error::NonFiniteReward(_))
        ));
    }

    #[test]
    fn bandit_update_converges_to_reward() {
        let mut t = QTable::new(&["x"], &["a", "b"]);
        let s = st(&[2]);
        let mut v = 0.0;
        for _ in 0..200 {
            v = q_update(&mut t, &s, 1, 3.5, None, 0.2, 0.0).unwrap();
        }
        // |v - r| = r (1 - alpha)^n
        assert!((v - 3.5).abs() < 1e-6);
    }

    #[test]
    fn epsilon_schedule_shape() {
        let mut s = EpsilonSchedule::new(1.0, 0.1, 0.01);
        assert_eq!(s.value(), 1.0);
        let mut prev = s.value();
        for _ in 0..1_000 {
            s.advance();
            let v = s.value();
            assert!(v <= prev && v >= 0.1);
            prev = v;
        }
        let rate = EpsilonSchedule::rate_reaching(1.0, 0.1, 0.2, 500);
        assert!((EpsilonSchedule::new(1.0, 0.1, rate).value_at(500) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn q_table_csv_round_trip() {
        let mut t = QTable::new(&["size", "freq"], &["Store", "NotStore"]);
        t.set(&st(&[1, 2]), 0, 0.1 + 0.2);
        t.set(&st(&[0, 5]), 1, -1.0e-300);
        t.entry(&st(&[0, 5])).visits[1] = 7;
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = QTable::read_csv(buf.as_slice(), &["Store", "NotStore"]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn scaled_scheme_scales_sizes_only() {
        let s = BinningScheme::default().scaled(1e-3);
        assert_eq!(s.size_edges[2], (GIB as f64 * 1e-3).round() as u64);
        assert_eq!(s.freq_edges, BinningScheme::default().freq_edges);
        assert!(s.validate().is_ok());
    }
}
