//! Experiment specs, paired baseline/RPDP runs and CSV reporting.
//!
//! A spec is flat `key = value` text. Keys under `experiment.` describe the
//! experiment; keys under `sim.` set [`SimConfig`] fields by their dotted
//! names. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::{self, CaptureSample, PlacementMethod, RunResult, SimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Single,
    Compare,
    Sweep,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Compare => "compare",
            Mode::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub mode: Mode,
    pub base: SimConfig,
    pub sweep_node_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".into(),
            mode: Mode::Compare,
            base: SimConfig::default(),
            sweep_node_counts: Vec::new(),
            seeds: vec![1],
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::config(key, format!("cannot parse list item {s:?}")))
        })
        .collect()
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec = Self::parse_unvalidated(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Like [`ExperimentSpec::parse`] but leaves [`ExperimentSpec::validate`]
    /// to the caller, so command-line overrides can be applied first.
    pub fn parse_unvalidated(text: &str) -> Result<Self> {
        let mut spec = ExperimentSpec::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", lineno + 1), "expected `key = value`")
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "set more than once"));
            }
            spec.set(key, value)?;
        }
        Ok(spec)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(field) = key.strip_prefix("sim.") {
            return self.base.set(field, value).map_err(|e| match e {
                Error::Config { field, reason } => Error::Config {
                    field: format!("sim.{field}"),
                    reason,
                },
                e => e,
            });
        }
        match key {
            "experiment.name" => self.name = value.to_string(),
            "experiment.mode" => {
                self.mode = match value {
                    "single" => Mode::Single,
                    "compare" => Mode::Compare,
                    "sweep" => Mode::Sweep,
                    _ => return Err(Error::config(key, format!("unknown mode {value:?}"))),
                }
            }
            "experiment.seeds" => self.seeds = parse_list(key, value)?,
            "experiment.sweepNodeCounts" => self.sweep_node_counts = parse_list(key, value)?,
            "experiment.outputDir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("experiment.seeds", "needs at least one seed"));
        }
        if self.mode == Mode::Sweep && self.sweep_node_counts.len() < 2 {
            return Err(Error::config(
                "experiment.sweepNodeCounts",
                "sweep needs at least two node counts",
            ));
        }
        for cfg in self.configs() {
            cfg.validate().map_err(|e| match e {
                Error::Config { field, reason } => Error::Config {
                    field: format!("sim.{field}"),
                    reason: format!("{reason} ({} run, {} nodes)", cfg.method, cfg.node_count),
                },
                e => e,
            })?;
        }
        Ok(())
    }

    /// Every run the experiment performs, in a fixed order.
    pub fn configs(&self) -> Vec<SimConfig> {
        let methods: &[PlacementMethod] = match self.mode {
            Mode::Single => &[],
            _ => &[PlacementMethod::Baseline, PlacementMethod::Rpdp],
        };
        let counts = match self.mode {
            Mode::Sweep => self.sweep_node_counts.clone(),
            _ => vec![self.base.node_count],
        };
        let mut out = Vec::new();
        for &n in &counts {
            for &seed in &self.seeds {
                if methods.is_empty() {
                    out.push(SimConfig {
                        node_count: n,
                        seed,
                        ..self.base.clone()
                    });
                }
                for &method in methods {
                    out.push(SimConfig {
                        node_count: n,
                        seed,
                        method,
                        replicas: if method == PlacementMethod::Baseline {
                            1
                        } else {
                            self.base.replicas
                        },
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }

    /// Replaces the seed list with a single seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencySummary {
    pub overall_latency_ms: f64,
    pub stddev_ms: f64,
}

/// Time-average of the non-idle captures, in milliseconds.
pub fn summarize(captures: &[CaptureSample]) -> Result<LatencySummary> {
    let busy: Vec<&CaptureSample> = captures.iter().filter(|c| !c.idle).collect();
    if busy.is_empty() {
        return Err(Error::EmptyData);
    }
    let n = busy.len() as f64;
    Ok(LatencySummary {
        overall_latency_ms: 1000.0 * busy.iter().map(|c| c.overall_latency).sum::<f64>() / n,
        stddev_ms: 1000.0 * busy.iter().map(|c| c.latency_stddev).sum::<f64>() / n,
    })
}

/// Positive when residual-performance placement is faster.
pub fn improvement_pct(baseline_ms: f64, rpdp_ms: f64) -> f64 {
    100.0 * (baseline_ms - rpdp_ms) / baseline_ms
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub seed: u64,
    pub nodes: usize,
    pub baseline_latency_ms: f64,
    pub rpdp_latency_ms: f64,
    pub improvement_pct: f64,
    pub baseline_stddev_ms: f64,
    pub rpdp_stddev_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonSummary {
    pub per_seed: Vec<ComparisonRow>,
    /// Column means over `per_seed`; `seed` is 0.
    pub aggregate: ComparisonRow,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub spec: ExperimentSpec,
    /// In the order of [`ExperimentSpec::configs`].
    pub runs: Vec<RunResult>,
}

impl ExperimentOutcome {
    pub fn run(&self, method: PlacementMethod, nodes: usize, seed: u64) -> Option<&RunResult> {
        self.runs.iter().find(|r| {
            r.config.method == method && r.config.node_count == nodes && r.config.seed == seed
        })
    }

    pub fn node_counts(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.runs.iter().map(|r| r.config.node_count).collect();
        set.into_iter().collect()
    }

    /// Paired rows for one node count; empty in single mode.
    pub fn comparison(&self, nodes: usize) -> Result<Option<ComparisonSummary>> {
        if self.spec.mode == Mode::Single {
            return Ok(None);
        }
        let mut per_seed = Vec::new();
        for &seed in &self.spec.seeds {
            let (Some(b), Some(r)) = (
                self.run(PlacementMethod::Baseline, nodes, seed),
                self.run(PlacementMethod::Rpdp, nodes, seed),
            ) else {
                continue;
            };
            let (bs, rs) = (summarize(&b.captures)?, summarize(&r.captures)?);
            per_seed.push(ComparisonRow {
                seed,
                nodes,
                baseline_latency_ms: bs.overall_latency_ms,
                rpdp_latency_ms: rs.overall_latency_ms,
                improvement_pct: improvement_pct(bs.overall_latency_ms, rs.overall_latency_ms),
                baseline_stddev_ms: bs.stddev_ms,
                rpdp_stddev_ms: rs.stddev_ms,
            });
        }
        if per_seed.is_empty() {
            return Ok(None);
        }
        let n = per_seed.len() as f64;
        let mean = |f: fn(&ComparisonRow) -> f64| per_seed.iter().map(f).sum::<f64>() / n;
        let aggregate = ComparisonRow {
            seed: 0,
            nodes,
            baseline_latency_ms: mean(|r| r.baseline_latency_ms),
            rpdp_latency_ms: mean(|r| r.rpdp_latency_ms),
            improvement_pct: mean(|r| r.improvement_pct),
            baseline_stddev_ms: mean(|r| r.baseline_stddev_ms),
            rpdp_stddev_ms: mean(|r| r.rpdp_stddev_ms),
        };
        Ok(Some(ComparisonSummary {
            per_seed,
            aggregate,
        }))
    }
}

fn thread_cap() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var("RPDP_SIM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(available, |n| n.min(available))
}

#[cfg(feature = "parallel")]
fn run_all(configs: &[SimConfig]) -> Result<Vec<RunResult>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap())
        .build()
        .map_err(|e| Error::Invariant(format!("worker pool: {e}")))?;
    pool.install(|| configs.par_iter().map(sim::run).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_all(configs: &[SimConfig]) -> Result<Vec<RunResult>> {
    let _ = thread_cap();
    configs.iter().map(sim::run).collect()
}

/// Runs every configuration of the experiment without writing anything.
pub fn execute(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let runs = run_all(&spec.configs())?;
    Ok(ExperimentOutcome {
        spec: spec.clone(),
        runs,
    })
}

pub fn capture_file_name(cfg: &SimConfig) -> String {
    format!(
        "capture_{}_n{}_seed{}.csv",
        cfg.method, cfg.node_count, cfg.seed
    )
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "seed",
    "method",
    "nodes",
    "overall_latency_ms",
    "latency_stddev_ms",
    "improvement_pct",
    "mean_lookup_hops",
    "mean_retrieval_lookups",
];

/// Two rows per seed and node count, then two `mean` rows per node count.
pub fn write_summary_csv<W: Write>(out: W, outcome: &ExperimentOutcome) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    let f = |v: f64| format!("{v:.6}");
    for nodes in outcome.node_counts() {
        let Some(cmp) = outcome.comparison(nodes)? else {
            continue;
        };
        let mut hops = [0.0; 2];
        let mut lookups = [0.0; 2];
        for row in &cmp.per_seed {
            for (k, method) in [PlacementMethod::Baseline, PlacementMethod::Rpdp]
                .into_iter()
                .enumerate()
            {
                let run = outcome.run(method, nodes, row.seed).expect("paired run");
                let (lat, sd) = match method {
                    PlacementMethod::Baseline => (row.baseline_latency_ms, row.baseline_stddev_ms),
                    PlacementMethod::Rpdp => (row.rpdp_latency_ms, row.rpdp_stddev_ms),
                };
                hops[k] += run.summary.mean_lookup_hops;
                lookups[k] += run.summary.mean_retrieval_lookups;
                w.write_record([
                    row.seed.to_string(),
                    method.to_string(),
                    nodes.to_string(),
                    f(lat),
                    f(sd),
                    f(row.improvement_pct),
                    f(run.summary.mean_lookup_hops),
                    f(run.summary.mean_retrieval_lookups),
                ])?;
            }
        }
        let n = cmp.per_seed.len() as f64;
        let a = &cmp.aggregate;
        for (k, (method, lat, sd)) in [
            (
                PlacementMethod::Baseline,
                a.baseline_latency_ms,
                a.baseline_stddev_ms,
            ),
            (PlacementMethod::Rpdp, a.rpdp_latency_ms, a.rpdp_stddev_ms),
        ]
        .into_iter()
        .enumerate()
        {
            w.write_record([
                "mean".to_string(),
                method.to_string(),
                nodes.to_string(),
                f(lat),
                f(sd),
                f(a.improvement_pct),
                f(hops[k] / n),
                f(lookups[k] / n),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes one capture CSV per run, plus `summary.csv` unless the mode is
/// single. Returns the paths written.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for run in &outcome.runs {
        let path = dir.join(capture_file_name(&run.config));
        sim::write_capture_csv(fs::File::create(&path)?, run)?;
        written.push(path);
    }
    if outcome.spec.mode != Mode::Single {
        let path = dir.join("summary.csv");
        write_summary_csv(fs::File::create(&path)?, outcome)?;
        written.push(path);
    }
    Ok(written)
}

/// [`execute`] followed by [`write_outputs`] into the experiment's output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(ExperimentOutcome, Vec<PathBuf>)> {
    let outcome = execute(spec)?;
    let written = write_outputs(&outcome, &spec.output_dir)?;
    Ok((outcome, written))
}
