use std::fmt;
use std::str::FromStr;

use crate::cluster::{DEFAULT_EPSILON, DEFAULT_TTL};
use crate::error::{Error, Result};
use crate::overlay::{DEFAULT_ALPHA, DEFAULT_K};
use crate::residual::{IdlePolicy, Weights, DEFAULT_HISTORY_LIMIT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlacementMethod {
    Baseline,
    Rpdp,
}

impl PlacementMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PlacementMethod::Baseline => "baseline",
            PlacementMethod::Rpdp => "rpdp",
        }
    }
}

impl fmt::Display for PlacementMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlacementMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "kademlia" => Ok(PlacementMethod::Baseline),
            "rpdp" => Ok(PlacementMethod::Rpdp),
            _ => Err(Error::config(
                "placementMethod",
                format!("unknown method {s:?}"),
            )),
        }
    }
}

/// Which extremes a node normalizes against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExtremesScope {
    /// Its own monitor's running extremes.
    #[default]
    Cluster,
    /// The union over all monitors.
    Global,
}

/// Node maximum throughput is `max(floor, mean + stddev * z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThroughputDist {
    pub mean: f64,
    pub stddev: f64,
    pub floor: f64,
}

impl Default for ThroughputDist {
    fn default() -> Self {
        ThroughputDist {
            mean: 10.0,
            stddev: 3.0,
            floor: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub node_count: usize,
    pub seed: u64,
    pub block_size_mb: f64,
    pub warmup_s: f64,
    pub total_s: f64,
    pub capture_start_s: f64,
    pub capture_interval_s: f64,
    pub requests_per_second: usize,
    pub cluster_count: usize,
    pub status_period_s: f64,
    pub throughput: ThroughputDist,
    pub method: PlacementMethod,
    pub weights: Weights,
    pub replicas: usize,
    pub k: usize,
    pub alpha: usize,
    pub bootstrap_peers: usize,
    pub warmup_lookup_interval_s: f64,
    pub cdc_ttl: u32,
    pub cdc_epsilon: f64,
    pub history_limit: usize,
    /// Periods pooled into each status report.
    pub status_window: usize,
    pub idle_policy: IdlePolicy,
    pub extremes_scope: ExtremesScope,
    /// Per-node storage in MB; `None` is unlimited.
    pub capacity_mb: Option<u64>,
    pub control_delay_s: f64,
    /// Stored items retrieved after the run to count lookups.
    pub retrieval_samples: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            node_count: 100,
            seed: 1,
            block_size_mb: 1.0,
            warmup_s: 3600.0,
            total_s: 36000.0,
            capture_start_s: 3.0 * 3600.0,
            capture_interval_s: 60.0,
            requests_per_second: 30,
            cluster_count: 4,
            status_period_s: 10.0,
            throughput: ThroughputDist::default(),
            method: PlacementMethod::Rpdp,
            weights: Weights::default(),
            replicas: 1,
            k: DEFAULT_K,
            alpha: DEFAULT_ALPHA,
            bootstrap_peers: 3,
            warmup_lookup_interval_s: 180.0,
            cdc_ttl: DEFAULT_TTL,
            cdc_epsilon: DEFAULT_EPSILON,
            history_limit: DEFAULT_HISTORY_LIMIT,
            status_window: 6,
            idle_policy: IdlePolicy::default(),
            extremes_scope: ExtremesScope::default(),
            capacity_mb: None,
            control_delay_s: 0.0,
            retrieval_samples: 1000,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse {value:?}")))
}

impl SimConfig {
    pub const KEYS: &'static [&'static str] = &[
        "nodeCount",
        "seed",
        "blockSizeMB",
        "warmupSimSeconds",
        "totalSimSeconds",
        "captureStartSimSeconds",
        "captureIntervalSimSeconds",
        "workloadRequestsPerSecond",
        "clusterCount",
        "statusPeriodSeconds",
        "throughput.mean",
        "throughput.stddev",
        "throughput.floor",
        "placementMethod",
        "weights.w1",
        "weights.w2",
        "replicas",
        "k",
        "alpha",
        "bootstrapPeers",
        "warmupLookupIntervalSeconds",
        "cdc.ttl",
        "cdc.epsilon",
        "historyLimit",
        "statusWindow",
        "idlePolicy",
        "extremesScope",
        "capacityMB",
        "controlDelaySeconds",
        "retrievalSamples",
    ];

    /// Sets one field by its dotted key, without validating the whole.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "nodeCount" => self.node_count = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "blockSizeMB" => self.block_size_mb = parse(key, v)?,
            "warmupSimSeconds" => self.warmup_s = parse(key, v)?,
            "totalSimSeconds" => self.total_s = parse(key, v)?,
            "captureStartSimSeconds" => self.capture_start_s = parse(key, v)?,
            "captureIntervalSimSeconds" => self.capture_interval_s = parse(key, v)?,
            "workloadRequestsPerSecond" => self.requests_per_second = parse(key, v)?,
            "clusterCount" => self.cluster_count = parse(key, v)?,
            "statusPeriodSeconds" => self.status_period_s = parse(key, v)?,
            "throughput.mean" => self.throughput.mean = parse(key, v)?,
            "throughput.stddev" => self.throughput.stddev = parse(key, v)?,
            "throughput.floor" => self.throughput.floor = parse(key, v)?,
            "placementMethod" => self.method = v.parse()?,
            "weights.w1" => self.weights.w1 = parse(key, v)?,
            "weights.w2" => self.weights.w2 = parse(key, v)?,
            "replicas" => self.replicas = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "bootstrapPeers" => self.bootstrap_peers = parse(key, v)?,
            "warmupLookupIntervalSeconds" => self.warmup_lookup_interval_s = parse(key, v)?,
            "cdc.ttl" => self.cdc_ttl = parse(key, v)?,
            "cdc.epsilon" => self.cdc_epsilon = parse(key, v)?,
            "historyLimit" => self.history_limit = parse(key, v)?,
            "statusWindow" => self.status_window = parse(key, v)?,
            "idlePolicy" => {
                self.idle_policy = match v {
                    "fullyAvailable" => IdlePolicy::FullyAvailable,
                    "nominalLatency" => IdlePolicy::NominalLatency,
                    _ => return Err(Error::config(key, format!("unknown policy {v:?}"))),
                }
            }
            "extremesScope" => {
                self.extremes_scope = match v {
                    "cluster" => ExtremesScope::Cluster,
                    "global" => ExtremesScope::Global,
                    _ => return Err(Error::config(key, format!("unknown scope {v:?}"))),
                }
            }
            "capacityMB" => {
                self.capacity_mb = match v {
                    "unlimited" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "controlDelaySeconds" => self.control_delay_s = parse(key, v)?,
            "retrievalSamples" => self.retrieval_samples = parse(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        };
        if self.node_count == 0 {
            return Err(Error::config("nodeCount", "must be at least 1"));
        }
        positive("blockSizeMB", self.block_size_mb)?;
        positive("captureIntervalSimSeconds", self.capture_interval_s)?;
        positive("statusPeriodSeconds", self.status_period_s)?;
        positive("throughput.floor", self.throughput.floor)?;
        positive("warmupLookupIntervalSeconds", self.warmup_lookup_interval_s)?;
        if !(self.throughput.mean.is_finite() && self.throughput.stddev >= 0.0) {
            return Err(Error::config(
                "throughput.stddev",
                "must be finite and nonnegative",
            ));
        }
        if !(self.warmup_s >= 0.0 && self.warmup_s < self.capture_start_s) {
            return Err(Error::config(
                "warmupSimSeconds",
                "must be below captureStartSimSeconds",
            ));
        }
        if !(self.capture_start_s < self.total_s && self.total_s.is_finite()) {
            return Err(Error::config(
                "captureStartSimSeconds",
                "must be below totalSimSeconds",
            ));
        }
        if self.method == PlacementMethod::Rpdp {
            if self.cluster_count == 0 || self.node_count < 2 * self.cluster_count {
                return Err(Error::config(
                    "clusterCount",
                    "needs at least one monitor and one data node per cluster",
                ));
            }
            if self.replicas == 0 || self.replicas > self.cluster_count {
                return Err(Error::config("replicas", "must be in 1..=clusterCount"));
            }
        } else if self.replicas != 1 {
            return Err(Error::config(
                "replicas",
                "baseline placement stores one copy",
            ));
        }
        if self.node_count < self.cluster_count {
            return Err(Error::config("nodeCount", "must be at least clusterCount"));
        }
        Weights::new(self.weights.w1, self.weights.w2)
            .map_err(|e| Error::config("weights", e.to_string()))?;
        if self.k == 0 || self.alpha == 0 {
            return Err(Error::config("k", "k and alpha must be positive"));
        }
        if self.bootstrap_peers == 0 {
            return Err(Error::config("bootstrapPeers", "must be positive"));
        }
        if self.history_limit == 0 {
            return Err(Error::config("historyLimit", "must be positive"));
        }
        if self.status_window == 0 || self.status_window > self.history_limit {
            return Err(Error::config("statusWindow", "must be in 1..=historyLimit"));
        }
        if !(self.control_delay_s >= 0.0 && self.control_delay_s.is_finite()) {
            return Err(Error::config("controlDelaySeconds", "must be nonnegative"));
        }
        if self.cdc_epsilon.is_nan() || self.cdc_epsilon < 0.0 {
            return Err(Error::config("cdc.epsilon", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn block_bytes(&self) -> u64 {
        (self.block_size_mb * (1u64 << 20) as f64).round() as u64
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_mb
            .map_or(u64::MAX, |mb| mb.saturating_mul(1 << 20))
    }

    pub fn warmup_rounds(&self) -> usize {
        (self.warmup_s / self.warmup_lookup_interval_s).floor() as usize
    }
}
