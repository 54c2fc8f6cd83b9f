//! Request traces: CSV ingestion and synthetic generation.
//!
//! The on-disk format is a headed CSV with the columns
//! `day,file_id,size_bytes,data_type,user_id,site_id`. The tick of a request is
//! its row order, starting at 0.
//!
//! Synthetic traces draw file popularity from a Zipf law over a fixed file
//! universe, file sizes from a log-normal law and data types independently of
//! popularity. An optional drift period re-draws the popularity permutation so
//! that the hot set changes over time.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{ByteSize, MIB};

pub const CSV_HEADER: [&str; 6] = ["day", "file_id", "size_bytes", "data_type", "user_id", "site_id"];

/// One trace event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub tick: u64,
    pub day: u32,
    pub file_id: String,
    pub size: u64,
    pub data_type: String,
    pub user_id: String,
    pub site_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SizeDistribution {
    /// Log-normal with the given median and log-space standard deviation.
    LogNormal { median: ByteSize, sigma: f64 },
    Fixed { size: ByteSize },
}

/// Parameters of the Zipf/log-normal trace generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    pub num_days: u32,
    pub requests_per_day: u32,
    pub num_distinct_files: u32,
    /// Zipf exponent; 0 gives uniform popularity.
    pub popularity_skew: f64,
    pub size_distribution: SizeDistribution,
    pub data_types: Vec<String>,
    pub data_type_weights: Vec<f64>,
    /// Re-draw the popularity permutation every this many days.
    #[serde(default)]
    pub drift_days: Option<u32>,
    #[serde(default = "default_users")]
    pub num_users: u32,
    #[serde(default = "default_sites")]
    pub num_sites: u32,
    pub rng_seed: u64,
}

fn default_users() -> u32 {
    200
}

fn default_sites() -> u32 {
    20
}

impl TraceSpec {
    pub const PRESETS: [&'static str; 3] = ["paper-like", "small", "two-class"];

    /// Desk-scale workload shaped like the CMS 2018 analysis traffic: a month
    /// of 20k requests/day, mostly unique requests, a popular head that moves
    /// every few days. Byte sizes are the HEP regime scaled by 1/1000.
    pub fn paper_like(seed: u64) -> Self {
        TraceSpec {
            num_days: 30,
            requests_per_day: 20_000,
            num_distinct_files: 300_000,
            popularity_skew: 0.9,
            size_distribution: SizeDistribution::LogNormal {
                median: ByteSize(2 * MIB),
                sigma: 1.0,
            },
            data_types: vec!["data".into(), "mc".into(), "user".into()],
            data_type_weights: vec![0.5, 0.35, 0.15],
            drift_days: Some(3),
            num_users: default_users(),
            num_sites: default_sites(),
            rng_seed: seed,
        }
    }

    /// A few thousand requests; handy for examples and quick runs.
    pub fn small(seed: u64) -> Self {
        TraceSpec {
            num_days: 5,
            requests_per_day: 1_000,
            num_distinct_files: 2_000,
            popularity_skew: 0.8,
            size_distribution: SizeDistribution::LogNormal {
                median: ByteSize(2 * MIB),
                sigma: 1.0,
            },
            data_types: vec!["data".into(), "mc".into(), "user".into()],
            data_type_weights: vec![0.5, 0.35, 0.15],
            drift_days: None,
            num_users: 20,
            num_sites: 5,
            rng_seed: seed,
        }
    }

    pub fn total_requests(&self) -> u64 {
        self.num_days as u64 * self.requests_per_day as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::TraceSpec(m.to_string()));
        if self.num_days == 0 {
            return bad("num_days must be positive");
        }
        if self.requests_per_day == 0 {
            return bad("requests_per_day must be positive");
        }
        if self.num_distinct_files == 0 {
            return bad("num_distinct_files must be positive");
        }
        if !(self.popularity_skew.is_finite() && self.popularity_skew >= 0.0) {
            return bad("popularity_skew must be finite and >= 0");
        }
        match self.size_distribution {
            SizeDistribution::LogNormal { median, sigma } => {
                if median.0 == 0 || !(sigma.is_finite() && sigma >= 0.0) {
                    return bad("log-normal sizes need median > 0 and sigma >= 0");
                }
            }
            SizeDistribution::Fixed { size } => {
                if size.0 == 0 {
                    return bad("fixed size must be positive");
                }
            }
        }
        if self.data_types.is_empty() || self.data_types.len() != self.data_type_weights.len() {
            return bad("data_types and data_type_weights must be non-empty and equally long");
        }
        if self.data_type_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("data_type_weights must be finite and non-negative");
        }
        let total: f64 = self.data_type_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad("data_type_weights must sum to 1");
        }
        if self.drift_days == Some(0) {
            return bad("drift_days must be positive when set");
        }
        if self.num_users == 0 || self.num_sites == 0 {
            return bad("num_users and num_sites must be positive");
        }
        Ok(())
    }
}

/// Hot/cold workload used to check that an admission learner separates
/// classes: a small pool of small files requested over and over, and a
/// stream of large files each requested exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoClassSpec {
    pub num_days: u32,
    pub requests_per_day: u32,
    pub hot_files: u32,
    pub hot_size: ByteSize,
    pub cold_size: ByteSize,
    /// Probability that a request goes to the hot pool.
    pub hot_fraction: f64,
    pub rng_seed: u64,
}

impl TwoClassSpec {
    pub fn preset(seed: u64) -> Self {
        TwoClassSpec {
            num_days: 10,
            requests_per_day: 20_000,
            hot_files: 4_000,
            hot_size: ByteSize(MIB),
            cold_size: ByteSize(16 * MIB),
            hot_fraction: 0.5,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_days == 0 || self.requests_per_day == 0 || self.hot_files == 0 {
            return Err(Error::TraceSpec("two-class spec needs positive days, requests and hot files".into()));
        }
        if self.hot_size.0 == 0 || self.cold_size.0 == 0 {
            return Err(Error::TraceSpec("two-class sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hot_fraction) {
            return Err(Error::TraceSpec("hot_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Vec<Request>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        let total = self.num_days as u64 * self.requests_per_day as u64;
        let mut out = Vec::with_capacity(total as usize);
        let mut cold_seq = 0u64;
        for tick in 0..total {
            let day = (tick / self.requests_per_day as u64) as u32;
            let (file_id, size, data_type) = if rng.random_bool(self.hot_fraction) {
                let idx = rng.random_range(0..self.hot_files);
                (format!("hot{idx:06}"), self.hot_size.0, "data")
            } else {
                cold_seq += 1;
                (format!("cold{cold_seq:08}"), self.cold_size.0, "mc")
            };
            out.push(Request {
                tick,
                day,
                file_id,
                size,
                data_type: data_type.to_string(),
                user_id: "u0".into(),
                site_id: "s0".into(),
            });
        }
        Ok(out)
    }
}

/// Whether a file id belongs to the hot class of a [`TwoClassSpec`] trace.
pub fn is_hot_file(file_id: &str) -> bool {
    file_id.starts_with("hot")
}

/// Streaming generator for a [`TraceSpec`].
pub struct TraceGenerator {
    spec: TraceSpec,
    rng: ChaCha8Rng,
    sizes: Vec<u64>,
    types: Vec<u16>,
    cdf: Vec<f64>,
    perm: Vec<u32>,
    tick: u64,
    total: u64,
}

impl TraceGenerator {
    pub fn new(spec: TraceSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let n = spec.num_distinct_files as usize;

        let sizes: Vec<u64> = match spec.size_distribution {
            SizeDistribution::Fixed { size } => vec![size.0; n],
            SizeDistribution::LogNormal { median, sigma } => {
                let dist = LogNormal::new((median.0 as f64).ln(), sigma)
                    .map_err(|e| Error::TraceSpec(e.to_string()))?;
                (0..n)
                    .map(|_| (dist.sample(&mut rng).round() as u64).max(1))
                    .collect()
            }
        };
        let type_dist = WeightedIndex::new(&spec.data_type_weights)
            .map_err(|e| Error::TraceSpec(e.to_string()))?;
        let types: Vec<u16> = (0..n).map(|_| type_dist.sample(&mut rng) as u16).collect();

        let cdf = if spec.popularity_skew == 0.0 {
            Vec::new()
        } else {
            let mut acc = 0.0;
            let mut cdf: Vec<f64> = (0..n)
                .map(|r| {
                    acc += 1.0 / ((r + 1) as f64).powf(spec.popularity_skew);
                    acc
                })
                .collect();
            for c in &mut cdf {
                *c /= acc;
            }
            cdf
        };

        let mut perm: Vec<u32> = (0..spec.num_distinct_files).collect();
        perm.shuffle(&mut rng);

        let total = spec.total_requests();
        Ok(TraceGenerator {
            spec,
            rng,
            sizes,
            types,
            cdf,
            perm,
            tick: 0,
            total,
        })
    }

    fn draw_rank(&mut self) -> usize {
        if self.cdf.is_empty() {
            return self.rng.random_range(0..self.perm.len());
        }
        let u: f64 = self.rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

impl Iterator for TraceGenerator {
    type Item = Request;

    fn next(&mut self) -> Option<Request> {
        if self.tick >= self.total {
            return None;
        }
        let per_day = self.spec.requests_per_day as u64;
        let day = (self.tick / per_day) as u32;
        if self.tick % per_day == 0 && day > 0 {
            if let Some(d) = self.spec.drift_days {
                if day % d == 0 {
                    self.perm.shuffle(&mut self.rng);
                }
            }
        }
        let rank = self.draw_rank();
        let file = self.perm[rank] as usize;
        let user = self.rng.random_range(0..self.spec.num_users);
        let site = self.rng.random_range(0..self.spec.num_sites);
        let req = Request {
            tick: self.tick,
            day,
            file_id: format!("f{file:07}"),
            size: self.sizes[file],
            data_type: self.spec.data_types[self.types[file] as usize].clone(),
            user_id: format!("u{user}"),
            site_id: format!("s{site}"),
        };
        self.tick += 1;
        Some(req)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.total - self.tick) as usize;
        (left, Some(left))
    }
}

pub fn generate_trace(spec: &TraceSpec) -> Result<TraceGenerator> {
    TraceGenerator::new(spec.clone())
}

/// Parse a trace from any CSV reader. Rows are numbered by line, header = 1.
pub fn parse_trace<R: Read>(input: R) -> Result<Vec<Request>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::TraceHeader {
            expected: CSV_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut seen: HashMap<String, (u64, String)> = HashMap::new();
    let mut out = Vec::new();
    let mut last_day = 0u32;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record?;
        if record.len() != CSV_HEADER.len() {
            return Err(Error::TraceRow {
                row,
                field: "record",
                message: format!("expected {} fields, found {}", CSV_HEADER.len(), record.len()),
            });
        }
        let day: u32 = record[0].parse().map_err(|_| Error::TraceRow {
            row,
            field: "day",
            message: format!("day must be a non-negative integer, got `{}`", &record[0]),
        })?;
        let file_id = record[1].to_string();
        if file_id.is_empty() {
            return Err(Error::TraceRow {
                row,
                field: "file_id",
                message: "file_id must not be empty".into(),
            });
        }
        let size: i128 = record[2].parse().map_err(|_| Error::TraceRow {
            row,
            field: "size_bytes",
            message: format!("size must be an integer, got `{}`", &record[2]),
        })?;
        if size <= 0 || size > u64::MAX as i128 {
            return Err(Error::TraceRow {
                row,
                field: "size_bytes",
                message: "size must be positive".into(),
            });
        }
        let size = size as u64;
        if day < last_day {
            return Err(Error::TraceRow {
                row,
                field: "day",
                message: format!("days must be non-decreasing ({day} after {last_day})"),
            });
        }
        last_day = day;
        let data_type = record[3].to_string();
        match seen.get(&file_id) {
            Some((s, _)) if *s != size => {
                return Err(Error::InconsistentFile {
                    file_id,
                    field: "size",
                    row,
                })
            }
            Some((_, t)) if *t != data_type => {
                return Err(Error::InconsistentFile {
                    file_id,
                    field: "data_type",
                    row,
                })
            }
            Some(_) => {}
            None => {
                seen.insert(file_id.clone(), (size, data_type.clone()));
            }
        }
        out.push(Request {
            tick: out.len() as u64,
            day,
            file_id,
            size,
            data_type,
            user_id: record[4].to_string(),
            site_id: record[5].to_string(),
        });
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<Request>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(BufReader::new(file))
}

pub fn write_trace_to<W: Write>(out: W, requests: impl IntoIterator<Item = Request>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in requests {
        w.write_record([
            r.day.to_string().as_str(),
            &r.file_id,
            r.size.to_string().as_str(),
            &r.data_type,
            &r.user_id,
            &r.site_id,
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trace writer>", e))?;
    Ok(())
}

pub fn write_trace(path: &Path, requests: impl IntoIterator<Item = Request>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_to(BufWriter::new(file), requests)
}

/// Mean number of requests per file, counting only files requested more
/// than once. `None` when no file repeats.
pub fn mean_requests_per_repeated_file(requests: &[Request]) -> Option<f64> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for r in requests {
        *counts.entry(r.file_id.as_str()).or_default() += 1;
    }
    let (files, reqs) = counts
        .values()
        .filter(|&&c| c > 1)
        .fold((0u64, 0u64), |(f, q), &c| (f + 1, q + c));
    (files > 0).then(|| reqs as f64 / files as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(body: &str) -> String {
        format!("day,file_id,size_bytes,data_type,user_id,site_id\n{body}")
    }

    #[test]
    fn parses_rows_in_order() {
        let text = csv("0,A,10,data,u1,s1\n0,B,5,mc,u1,s1\n1,A,10,data,u2,s1\n");
        let reqs = parse_trace(text.as_bytes()).unwrap();
        assert_eq!(reqs.len(), 3);
        assert_eq!(reqs.iter().map(|r| r.tick).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(reqs[2].day, 1);
        assert_eq!(reqs[1].file_id, "B");
        assert_eq!(reqs[1].size, 5);
    }

    #[test]
    fn negative_size_names_row() {
        let text = csv("0,A,-5,data,u1,s1\n");
        let err = parse_trace(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("size must be positive"), "{err}");
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn size_change_names_file() {
        let text = csv("0,A,10,data,u,s\n0,A,12,data,u,s\n");
        let err = parse_trace(text.as_bytes()).unwrap_err();
        assert!(matches!(&err, Error::InconsistentFile { file_id, .. } if file_id == "A"));
        assert!(err.to_string().contains("`A`"));
    }

    #[test]
    fn rejects_bad_header_and_decreasing_days() {
        assert!(matches!(
            parse_trace("day,file,size\n0,A,1\n".as_bytes()),
            Err(Error::TraceHeader { .. })
        ));
        let err = parse_trace(csv("2,A,1,data,u,s\n1,B,1,data,u,s\n").as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = TraceSpec::small(1);
        let a: Vec<_> = generate_trace(&spec).unwrap().collect();
        let b: Vec<_> = generate_trace(&spec).unwrap().collect();
        assert_eq!(a, b);
        assert_eq!(a.len() as u64, spec.total_requests());
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        write_trace_to(&mut bytes_a, a).unwrap();
        write_trace_to(&mut bytes_b, b).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn zero_days_or_files_rejected() {
        let mut spec = TraceSpec::small(1);
        spec.num_days = 0;
        assert!(generate_trace(&spec).is_err());
        let mut spec = TraceSpec::small(1);
        spec.num_distinct_files = 0;
        assert!(generate_trace(&spec).is_err());
        let mut spec = TraceSpec::small(1);
        spec.data_type_weights = vec![0.5, 0.5, 0.5];
        assert!(generate_trace(&spec).is_err());
    }

    #[test]
    fn written_trace_parses_back() {
        let reqs: Vec<_> = generate_trace(&TraceSpec::small(3)).unwrap().take(500).collect();
        let mut buf = Vec::new();
        write_trace_to(&mut buf, reqs.clone()).unwrap();
        assert_eq!(parse_trace(buf.as_slice()).unwrap(), reqs);
    }

    #[test]
    fn two_class_sizes_follow_class() {
        let mut spec = TwoClassSpec::preset(5);
        spec.num_days = 1;
        spec.requests_per_day = 2_000;
        let reqs = spec.generate().unwrap();
        assert_eq!(reqs.len(), 2_000);
        for r in &reqs {
            let expected = if is_hot_file(&r.file_id) { spec.hot_size.0 } else { spec.cold_size.0 };
            assert_eq!(r.size, expected);
        }
        let cold: Vec<_> = reqs.iter().filter(|r| !is_hot_file(&r.file_id)).collect();
        let distinct: std::collections::HashSet<_> = cold.iter().map(|r| &r.file_id).collect();
        assert_eq!(distinct.len(), cold.len());
    }

    #[test]
    fn mean_requests_counts_only_repeated_files() {
        let text = csv("0,A,1,d,u,s\n0,A,1,d,u,s\n0,A,1,d,u,s\n0,B,1,d,u,s\n0,C,1,d,u,s\n0,C,1,d,u,s\n");
        let reqs = parse_trace(text.as_bytes()).unwrap();
        assert_eq!(mean_requests_per_repeated_file(&reqs), Some(2.5));
    }
}
