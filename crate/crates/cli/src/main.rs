use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lakecache::experiment::{run, sweep, RunConfig, SweepConfig, TraceInfo, TraceSource};
use lakecache::metrics::infinite_cache_oracle;
use lakecache::trace::{write_trace, write_trace_to, TraceSpec};

#[derive(Parser)]
#[command(name = "lakecache", version, about = "Trace-driven cache node simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct TraceArgs {
    /// Built-in trace preset (paper-like, small, two-class).
    #[arg(long, conflicts_with = "trace")]
    preset: Option<String>,
    /// Trace CSV file.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Seed for a generated preset trace.
    #[arg(long)]
    trace_seed: Option<u64>,
}

impl TraceArgs {
    /// Overrides pointing `prefix.trace` at the chosen source.
    fn overrides(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(p) = &self.preset {
            out.push(format!("{prefix}trace.kind=\"preset\""));
            out.push(format!("{prefix}trace.name={}", toml_str(p)));
        }
        if let Some(t) = &self.trace {
            out.push(format!("{prefix}trace.kind=\"file\""));
            out.push(format!("{prefix}trace.path={}", toml_str(&t.display().to_string())));
        }
        if let Some(s) = self.trace_seed {
            out.push(format!("{prefix}trace.seed={s}"));
        }
        out
    }

    fn source(&self) -> Result<TraceSource> {
        match (&self.preset, &self.trace) {
            (Some(p), None) => Ok(TraceSource::preset(p, self.trace_seed.unwrap_or(1))),
            (None, Some(t)) => Ok(TraceSource::File { path: t.clone() }),
            _ => bail!("give exactly one of --preset or --trace"),
        }
    }
}

fn toml_str(s: &str) -> String {
    format!("{s:?}")
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one policy at one capacity.
    Run {
        /// TOML run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        policy: Option<String>,
        /// Capacity such as "100GiB" or a byte count.
        #[arg(long)]
        capacity: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        trace: TraceArgs,
        /// Output directory for report.json, daily.csv, table.csv and dumps.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override any config key, e.g. --set params.dqn.batch_size=64
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Simulate a grid of policies x capacities on one trace.
    Sweep {
        /// TOML sweep configuration with `policies`, `capacities` and a `[base]` run config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated policy ids.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<String>,
        /// Comma-separated capacities.
        #[arg(long, value_delimiter = ',')]
        capacities: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override any config key, e.g. --set base.params.alpha=0.3
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Write a synthetic trace as CSV.
    GenTrace {
        /// Preset name (paper-like, small, two-class).
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// TOML generator spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print infinite-cache reference values for a trace.
    Oracle {
        #[command(flatten)]
        trace: TraceArgs,
    },
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

fn cmd_run(
    config: Option<PathBuf>,
    policy: Option<String>,
    capacity: Option<String>,
    seed: Option<u64>,
    trace: TraceArgs,
    out: Option<PathBuf>,
    set: Vec<String>,
) -> Result<()> {
    let text = match &config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut overrides = trace.overrides("");
    if let Some(p) = policy {
        overrides.push(format!("policy={}", toml_str(&p)));
    }
    if let Some(c) = capacity {
        overrides.push(format!("capacity={}", toml_str(&c)));
    }
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = &out {
        overrides.push(format!("output_dir={}", toml_str(&o.display().to_string())));
    }
    overrides.extend(set);
    let cfg = RunConfig::from_toml(&text, &overrides)?;
    let result = run(&cfg)?;
    let m = &result.report.metrics;
    println!(
        "policy={} capacity={} score={} throughput={} cost={} hit_rate={:.4}",
        cfg.policy,
        cfg.capacity,
        fmt_opt(m.whole_run.score),
        fmt_opt(m.whole_run.throughput),
        fmt_opt(m.whole_run.cost),
        m.final_hit_rate
    );
    for note in &m.undefined {
        eprintln!("note: {note}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: Option<PathBuf>,
    policies: Vec<String>,
    capacities: Vec<String>,
    seed: Option<u64>,
    trace: TraceArgs,
    out: Option<PathBuf>,
    set: Vec<String>,
) -> Result<()> {
    let text = match &config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut overrides = trace.overrides("base.");
    if !policies.is_empty() {
        let list: Vec<String> = policies.iter().map(|p| toml_str(p)).collect();
        overrides.push(format!("policies=[{}]", list.join(",")));
    }
    if !capacities.is_empty() {
        let list: Vec<String> = capacities.iter().map(|c| toml_str(c)).collect();
        overrides.push(format!("capacities=[{}]", list.join(",")));
    }
    if let Some(s) = seed {
        overrides.push(format!("base.seed={s}"));
    }
    if let Some(o) = &out {
        overrides.push(format!("base.output_dir={}", toml_str(&o.display().to_string())));
    }
    // The base config needs a policy and capacity to parse; the grid replaces both.
    if config.is_none() {
        overrides.push("base.policy=\"we-lru\"".into());
        overrides.push(format!("base.capacity={}", toml_str(capacities.first().map_or("1", |c| c))));
    }
    overrides.extend(set);
    let cfg = SweepConfig::from_toml(&text, &overrides)?;
    let result = sweep(&cfg.expand())?;
    let stdout = io::stdout();
    result.table.write_csv(stdout.lock())?;
    if let Some(dir) = &cfg.base.output_dir {
        fs::create_dir_all(dir)?;
        let path = dir.join("table.csv");
        result.table.write_csv(BufWriter::new(File::create(&path)?))?;
    }
    Ok(())
}

fn cmd_gen_trace(preset: Option<String>, spec: Option<PathBuf>, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let source = match (preset, spec) {
        (Some(p), None) => TraceSource::preset(&p, seed),
        (None, Some(path)) => {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let spec: TraceSpec = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            TraceSource::Spec { spec }
        }
        _ => bail!("give exactly one of --preset or --spec"),
    };
    let requests = source.load()?;
    match out {
        Some(path) => write_trace(&path, requests)?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_trace_to(&mut lock, requests)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn cmd_oracle(trace: TraceArgs) -> Result<()> {
    let requests = trace.source()?.load()?;
    let oracle = infinite_cache_oracle(&requests);
    let info = TraceInfo::of(&requests);
    let value = serde_json::json!({
        "rhd_inf": oracle.rhd,
        "wd_inf": oracle.wd,
        "requests": info.requests,
        "requested_bytes": info.requested_bytes,
        "distinct_files": info.distinct_files,
        "days": info.days,
        "mean_requests_per_repeated_file": info.mean_requests_per_repeated_file,
        "empty": oracle.is_empty(),
    });
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            policy,
            capacity,
            seed,
            trace,
            out,
            set,
        } => cmd_run(config, policy, capacity, seed, trace, out, set),
        Command::Sweep {
            config,
            policies,
            capacities,
            seed,
            trace,
            out,
            set,
        } => cmd_sweep(config, policies, capacities, seed, trace, out, set),
        Command::GenTrace { preset, spec, seed, out } => cmd_gen_trace(preset, spec, seed, out),
        Command::Oracle { trace } => cmd_oracle(trace),
    }
}
