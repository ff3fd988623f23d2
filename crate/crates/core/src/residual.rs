//! Periodic node metrics, min-max residual normalization and the monitor's
//! scoreboard.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use crate::error::{Error, Result};
use crate::id::Identifier;

pub const DEFAULT_HISTORY_LIMIT: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RequestSample {
    /// MB/s.
    pub throughput: f64,
    /// Seconds, queue wait included.
    pub latency: f64,
    pub timestamp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodRecord {
    pub period_index: u64,
    pub avg_throughput: f64,
    pub avg_latency: f64,
    pub sample_count: usize,
}

impl PeriodRecord {
    pub fn idle(period_index: u64) -> Self {
        PeriodRecord {
            period_index,
            avg_throughput: 0.0,
            avg_latency: 0.0,
            sample_count: 0,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.sample_count == 0
    }
}

/// Mean throughput and latency of the requests completed in one period.
pub fn close_period(samples: &[RequestSample], period_index: u64) -> PeriodRecord {
    if samples.is_empty() {
        return PeriodRecord::idle(period_index);
    }
    let n = samples.len() as f64;
    PeriodRecord {
        period_index,
        avg_throughput: samples.iter().map(|s| s.throughput).sum::<f64>() / n,
        avg_latency: samples.iter().map(|s| s.latency).sum::<f64>() / n,
        sample_count: samples.len(),
    }
}

/// Bounded history of the most recent period records.
#[derive(Clone, Debug)]
pub struct MetricHistory {
    limit: usize,
    records: VecDeque<PeriodRecord>,
}

impl MetricHistory {
    pub fn new(limit: usize) -> Self {
        assert!(limit > 0, "history limit must be positive");
        MetricHistory {
            limit,
            records: VecDeque::with_capacity(limit),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn latest(&self) -> Option<&PeriodRecord> {
        self.records.back()
    }

    pub fn records(&self) -> impl Iterator<Item = &PeriodRecord> {
        self.records.iter()
    }

    pub fn push(&mut self, record: PeriodRecord) -> Result<()> {
        if let Some(last) = self.records.back() {
            if record.period_index <= last.period_index {
                return Err(Error::InvalidInput(format!(
                    "period {} does not follow {}",
                    record.period_index, last.period_index
                )));
            }
        }
        if self.records.len() == self.limit {
            self.records.pop_front();
        }
        self.records.push_back(record);
        Ok(())
    }

    /// Sample-weighted averages over the last `window` records, i.e. the
    /// averages of every request those periods completed. With `window = 1`
    /// this is the latest record itself.
    pub fn pooled(&self, window: usize) -> Option<PeriodRecord> {
        let latest = *self.records.back()?;
        let recent = self.records.iter().rev().take(window.max(1));
        let (mut t, mut l, mut count) = (0.0, 0.0, 0usize);
        for r in recent {
            let n = r.sample_count as f64;
            t += r.avg_throughput * n;
            l += r.avg_latency * n;
            count += r.sample_count;
        }
        if count == 0 {
            return Some(PeriodRecord::idle(latest.period_index));
        }
        Some(PeriodRecord {
            period_index: latest.period_index,
            avg_throughput: t / count as f64,
            avg_latency: l / count as f64,
            sample_count: count,
        })
    }
}

/// Running extremes of the period averages a monitor has seen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlobalExtremes {
    pub t_min: f64,
    pub t_max: f64,
    pub l_min: f64,
    pub l_max: f64,
}

impl GlobalExtremes {
    pub fn from_record(r: &PeriodRecord) -> Self {
        GlobalExtremes {
            t_min: r.avg_throughput,
            t_max: r.avg_throughput,
            l_min: r.avg_latency,
            l_max: r.avg_latency,
        }
    }

    /// Widens the bounds to cover `r`; bounds never shrink.
    pub fn widen(&mut self, r: &PeriodRecord) {
        self.t_min = self.t_min.min(r.avg_throughput);
        self.t_max = self.t_max.max(r.avg_throughput);
        self.l_min = self.l_min.min(r.avg_latency);
        self.l_max = self.l_max.max(r.avg_latency);
    }

    pub fn merge(&self, other: &GlobalExtremes) -> GlobalExtremes {
        GlobalExtremes {
            t_min: self.t_min.min(other.t_min),
            t_max: self.t_max.max(other.t_max),
            l_min: self.l_min.min(other.l_min),
            l_max: self.l_max.max(other.l_max),
        }
    }
}

fn residual(value: f64, min: f64, max: f64) -> f64 {
    if max <= min {
        return 1.0;
    }
    (1.0 - (value - min) / (max - min)).clamp(0.0, 1.0)
}

/// 1 at `t_min`, 0 at `t_max`, clamped outside.
pub fn residual_throughput(t: f64, ext: &GlobalExtremes) -> f64 {
    residual(t, ext.t_min, ext.t_max)
}

/// 1 at `l_min`, 0 at `l_max`, clamped outside.
pub fn residual_latency(l: f64, ext: &GlobalExtremes) -> f64 {
    residual(l, ext.l_min, ext.l_max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    pub w1: f64,
    pub w2: f64,
}

impl Weights {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        let ok = |w: f64| w > 0.0 && w <= 1.0;
        if !ok(w1) || !ok(w2) {
            return Err(Error::InvalidInput(format!(
                "weights must lie in (0, 1], got {w1}, {w2}"
            )));
        }
        Ok(Weights { w1, w2 })
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights { w1: 1.0, w2: 1.0 }
    }
}

pub fn residual_performance(rt: f64, rl: f64, w: Weights) -> f64 {
    0.5 * (w.w1 * rt + w.w2 * rl)
}

/// What a node reports when it completed nothing in its status window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum IdlePolicy {
    /// Residual performance 1.0.
    #[default]
    FullyAvailable,
    /// No delivered throughput, and the latency one block would take on an
    /// empty queue.
    NominalLatency,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatusReport {
    pub node_id: Identifier,
    pub residual_perf: f64,
    pub residual_space: u64,
    pub period_index: u64,
    pub idle: bool,
}

/// Node-side computation of the status report from pooled averages and the
/// extremes fetched from the monitor. Without extremes every node looks
/// equally good.
pub fn compute_status(
    node_id: Identifier,
    pooled: &PeriodRecord,
    extremes: Option<&GlobalExtremes>,
    weights: Weights,
    idle_policy: IdlePolicy,
    nominal_latency: f64,
    residual_space: u64,
) -> StatusReport {
    let idle = pooled.is_idle();
    let residual_perf = match (idle, idle_policy, extremes) {
        (true, IdlePolicy::FullyAvailable, _) => 1.0,
        (_, _, None) => residual_performance(1.0, 1.0, weights),
        (true, IdlePolicy::NominalLatency, Some(ext)) => residual_performance(
            residual_throughput(0.0, ext),
            residual_latency(nominal_latency, ext),
            weights,
        ),
        (false, _, Some(ext)) => residual_performance(
            residual_throughput(pooled.avg_throughput, ext),
            residual_latency(pooled.avg_latency, ext),
            weights,
        ),
    };
    StatusReport {
        node_id,
        residual_perf,
        residual_space,
        period_index: pooled.period_index,
        idle,
    }
}

#[derive(Clone, Debug)]
struct BoardEntry {
    report: StatusReport,
    raw: PeriodRecord,
}

/// A monitor's ranked view of the data nodes in its cluster.
#[derive(Clone, Debug)]
pub struct Scoreboard {
    cluster: Identifier,
    members: BTreeSet<Identifier>,
    per_node: BTreeMap<Identifier, BoardEntry>,
    extremes: Option<GlobalExtremes>,
}

impl Scoreboard {
    pub fn new(cluster: Identifier, members: impl IntoIterator<Item = Identifier>) -> Self {
        Scoreboard {
            cluster,
            members: members.into_iter().collect(),
            per_node: BTreeMap::new(),
            extremes: None,
        }
    }

    pub fn cluster(&self) -> Identifier {
        self.cluster
    }

    pub fn members(&self) -> impl Iterator<Item = &Identifier> {
        self.members.iter()
    }

    pub fn extremes(&self) -> Option<&GlobalExtremes> {
        self.extremes.as_ref()
    }

    pub fn report(&self, node: &Identifier) -> Option<&StatusReport> {
        self.per_node.get(node).map(|e| &e.report)
    }

    pub fn len(&self) -> usize {
        self.per_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_node.is_empty()
    }

    /// Records a node's report and widens the extremes with its raw
    /// averages. Idle reports leave the extremes alone.
    pub fn ingest_report(&mut self, report: StatusReport, raw: PeriodRecord) -> Result<()> {
        if !self.members.contains(&report.node_id) {
            return Err(Error::ClusterMismatch {
                node: report.node_id,
                cluster: self.cluster,
            });
        }
        if !raw.is_idle() {
            match &mut self.extremes {
                Some(ext) => ext.widen(&raw),
                None => self.extremes = Some(GlobalExtremes::from_record(&raw)),
            }
        }
        self.per_node
            .insert(report.node_id, BoardEntry { report, raw });
        Ok(())
    }

    /// Up to `c` nodes with room for `data_size` bytes, best residual
    /// performance first, ties to the smaller identifier.
    pub fn select_best_nodes(&self, c: usize, data_size: u64) -> Result<Vec<Identifier>> {
        let mut eligible: Vec<&StatusReport> = self
            .per_node
            .values()
            .map(|e| &e.report)
            .filter(|r| r.residual_space >= data_size)
            .collect();
        if eligible.is_empty() {
            return Err(Error::NoCapacity(data_size));
        }
        eligible.sort_by(|a, b| {
            b.residual_perf
                .total_cmp(&a.residual_perf)
                .then_with(|| a.node_id.cmp(&b.node_id))
        });
        Ok(eligible.into_iter().take(c).map(|r| r.node_id).collect())
    }

    /// Rows `period_index,node_id,throughput_mbps,latency_s,residual_perf,residual_space`.
    pub fn write_csv<W: Write>(&self, out: W, with_header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        if with_header {
            w.write_record([
                "period_index",
                "node_id",
                "throughput_mbps",
                "latency_s",
                "residual_perf",
                "residual_space",
            ])?;
        }
        for (id, e) in &self.per_node {
            w.write_record([
                e.report.period_index.to_string(),
                id.to_hex(),
                e.raw.avg_throughput.to_string(),
                e.raw.avg_latency.to_string(),
                e.report.residual_perf.to_string(),
                e.report.residual_space.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
