//! Throughput, Cost and Score against an infinite write-everything cache.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::cache::RunSummary;
use crate::trace::Request;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleDay {
    pub day: u32,
    pub rhd: u64,
    pub wd: u64,
}

/// Read-on-hit and written bytes of an unbounded write-everything cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Oracle {
    pub rhd: u64,
    pub wd: u64,
    pub requests: u64,
    pub requested_bytes: u64,
    /// One entry per day from the first to the last day of the trace.
    pub daily: Vec<OracleDay>,
}

impl Oracle {
    pub fn is_empty(&self) -> bool {
        self.requests == 0
    }

    pub fn day(&self, day: u32) -> Option<&OracleDay> {
        let first = self.daily.first()?.day;
        self.daily.get(day.checked_sub(first)? as usize)
    }
}

pub fn infinite_cache_oracle<'a>(requests: impl IntoIterator<Item = &'a Request>) -> Oracle {
    let mut seen: HashSet<&str> = HashSet::new();
    let mut o = Oracle {
        rhd: 0,
        wd: 0,
        requests: 0,
        requested_bytes: 0,
        daily: Vec::new(),
    };
    for r in requests {
        while o.daily.last().is_none_or(|d| d.day < r.day) {
            let day = o.daily.last().map_or(r.day, |d| d.day + 1);
            o.daily.push(OracleDay { day, rhd: 0, wd: 0 });
        }
        let today = o.daily.last_mut().expect("day pushed above");
        o.requests += 1;
        o.requested_bytes += r.size;
        if seen.insert(r.file_id.as_str()) {
            o.wd += r.size;
            today.wd += r.size;
        } else {
            o.rhd += r.size;
            today.rhd += r.size;
        }
    }
    o
}

/// The three ratios; `None` where a denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Ratios {
    pub throughput: Option<f64>,
    pub cost: Option<f64>,
    pub score: Option<f64>,
}

pub fn throughput(rhd: u64, rhd_inf: u64) -> Option<f64> {
    (rhd_inf > 0).then(|| rhd as f64 / rhd_inf as f64)
}

pub fn cost(wd: u64, dd: u64, wd_inf: u64) -> Option<f64> {
    (wd_inf > 0).then(|| (wd + dd) as f64 / (2.0 * wd_inf as f64))
}

pub fn score(throughput: f64, cost: f64) -> Option<f64> {
    (cost > 0.0).then(|| throughput / cost)
}

pub fn ratios(rhd: u64, wd: u64, dd: u64, rhd_inf: u64, wd_inf: u64) -> Ratios {
    let tp = throughput(rhd, rhd_inf);
    let c = cost(wd, dd, wd_inf);
    Ratios {
        throughput: tp,
        cost: c,
        score: tp.zip(c).and_then(|(t, c)| score(t, c)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTotals {
    pub hits: u64,
    pub misses: u64,
    pub rhd: u64,
    pub rhm: u64,
    pub wd: u64,
    pub dd: u64,
    pub rhd_inf: u64,
    pub wd_inf: u64,
    pub requested_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyMetrics {
    pub day: u32,
    /// That day's counters against that day's oracle counters.
    pub daily: Ratios,
    /// Counters up to the end of the day against whole-trace oracle values.
    pub cumulative: Ratios,
    pub hit_rate: f64,
    pub occupancy_eod: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub raw: RawTotals,
    pub whole_run: Ratios,
    /// Means of the defined daily ratios.
    pub daily_mean: Ratios,
    pub daily: Vec<DailyMetrics>,
    pub final_hit_rate: f64,
    /// Human-readable notes for every undefined headline value.
    pub undefined: Vec<String>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0u64), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn compute_report(summary: &RunSummary, oracle: &Oracle) -> MetricsReport {
    let t = &summary.totals;
    let whole_run = ratios(t.rhd, t.wd, t.dd, oracle.rhd, oracle.wd);
    let mut undefined = Vec::new();
    if oracle.rhd == 0 {
        undefined.push("throughput undefined: the trace has no repeated requests (RHD_inf = 0)".to_string());
    }
    if oracle.wd == 0 {
        undefined.push("cost undefined: the trace is empty (WD_inf = 0)".to_string());
    } else if whole_run.cost == Some(0.0) {
        undefined.push("score undefined: nothing was written or deleted (cost = 0)".to_string());
    }

    let mut cum = crate::cache::Counters::default();
    let daily: Vec<DailyMetrics> = summary
        .daily
        .iter()
        .map(|row| {
            cum.add(&row.counters);
            let (o_rhd, o_wd) = oracle.day(row.day).map_or((0, 0), |d| (d.rhd, d.wd));
            let c = &row.counters;
            DailyMetrics {
                day: row.day,
                daily: ratios(c.rhd, c.wd, c.dd, o_rhd, o_wd),
                cumulative: ratios(cum.rhd, cum.wd, cum.dd, oracle.rhd, oracle.wd),
                hit_rate: row.hit_rate,
                occupancy_eod: row.occupancy_eod,
            }
        })
        .collect();
    let daily_mean = Ratios {
        throughput: mean(daily.iter().map(|d| d.daily.throughput)),
        cost: mean(daily.iter().map(|d| d.daily.cost)),
        score: mean(daily.iter().map(|d| d.daily.score)),
    };

    MetricsReport {
        raw: RawTotals {
            hits: t.hits,
            misses: t.misses,
            rhd: t.rhd,
            rhm: t.rhm,
            wd: t.wd,
            dd: t.dd,
            rhd_inf: oracle.rhd,
            wd_inf: oracle.wd,
            requested_bytes: summary.requested_bytes,
        },
        whole_run,
        daily_mean,
        daily,
        final_hit_rate: summary.final_hit_rate,
        undefined,
    }
}
