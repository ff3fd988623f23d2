use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cluster::{cdc_cluster, CdcParams, OverlayGraph};
use crate::error::{Error, Result};
use crate::id::{random_id, Identifier};
use crate::overlay::{NodeIndex, Overlay};
use crate::placement::{PlacementReceipt, PlacementRequest, StorageNetwork};
use crate::residual::{
    close_period, compute_status, GlobalExtremes, MetricHistory, PeriodRecord, RequestSample,
};
use crate::store::Payload;

use super::config::{ExtremesScope, PlacementMethod, SimConfig, ThroughputDist};

/// Independent random streams derived from one seed.
pub mod stream {
    pub const NETWORK: u64 = 0;
    pub const WARMUP: u64 = 1;
    pub const WORKLOAD: u64 = 2;
    pub const REPLICAS: u64 = 3;
    pub const RETRIEVAL: u64 = 4;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Service {
    pub arrival: f64,
    pub start: f64,
    pub completion: f64,
}

impl Service {
    pub fn latency(&self) -> f64 {
        self.completion - self.arrival
    }

    pub fn wait(&self) -> f64 {
        self.start - self.arrival
    }

    pub fn service_time(&self) -> f64 {
        self.completion - self.start
    }
}

/// Single-server FIFO queue in front of a node's disk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FifoServer {
    max_throughput: f64,
    busy_until: f64,
}

impl FifoServer {
    pub fn new(max_throughput: f64) -> Self {
        FifoServer {
            max_throughput,
            busy_until: 0.0,
        }
    }

    pub fn max_throughput(&self) -> f64 {
        self.max_throughput
    }

    pub fn busy_until(&self) -> f64 {
        self.busy_until
    }

    pub fn service(&mut self, arrival: f64, size_mb: f64) -> Service {
        let start = arrival.max(self.busy_until);
        let completion = start + size_mb / self.max_throughput;
        self.busy_until = completion;
        Service {
            arrival,
            start,
            completion,
        }
    }
}

pub fn draw_throughputs<R: Rng + ?Sized>(dist: &ThroughputDist, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (dist.mean + dist.stddev * z).max(dist.floor)
        })
        .collect()
}

/// A warmed-up overlay with per-node maximum throughputs.
#[derive(Clone, Debug)]
pub struct Network {
    pub overlay: Overlay,
    pub throughputs: Vec<f64>,
}

pub fn build_network(cfg: &SimConfig) -> Result<Network> {
    cfg.validate()?;
    // Node i draws its ID then its throughput: a smaller network with the
    // same seed is a prefix of a larger one.
    let mut rng = stream_rng(cfg.seed, stream::NETWORK);
    let mut seen = HashSet::with_capacity(cfg.node_count);
    let mut ids = Vec::with_capacity(cfg.node_count);
    let mut throughputs = Vec::with_capacity(cfg.node_count);
    while ids.len() < cfg.node_count {
        let id = random_id(&mut rng);
        let t = draw_throughputs(&cfg.throughput, 1, &mut rng)[0];
        if seen.insert(id) {
            ids.push(id);
            throughputs.push(t);
        }
    }
    let mut overlay = Overlay::new(ids, cfg.k, cfg.alpha)?;
    let mut rng = stream_rng(cfg.seed, stream::WARMUP);
    overlay.bootstrap(&mut rng, cfg.bootstrap_peers);
    overlay.warm_up(&mut rng, cfg.warmup_rounds());
    Ok(Network {
        overlay,
        throughputs,
    })
}

/// Every tick, `per_tick` requests with random data IDs from uniformly
/// random origins.
#[derive(Clone, Debug)]
pub struct Workload {
    rng: ChaCha8Rng,
    nodes: usize,
    per_tick: usize,
}

impl Workload {
    pub fn new(cfg: &SimConfig) -> Self {
        Workload {
            rng: stream_rng(cfg.seed, stream::WORKLOAD),
            nodes: cfg.node_count,
            per_tick: cfg.requests_per_second,
        }
    }

    pub fn tick(&mut self) -> Vec<(NodeIndex, Identifier)> {
        (0..self.per_tick)
            .map(|_| {
                let origin = NodeIndex(self.rng.random_range(0..self.nodes));
                (origin, random_id(&mut self.rng))
            })
            .collect()
    }
}

pub fn generate_workload(cfg: &SimConfig, seconds: usize) -> Vec<(NodeIndex, Identifier)> {
    let mut w = Workload::new(cfg);
    (0..seconds).flat_map(|_| w.tick()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptureSample {
    pub time: f64,
    /// Mean latency (seconds) of each node that completed something.
    pub per_node_latency: Vec<(NodeIndex, f64)>,
    pub overall_latency: f64,
    pub latency_stddev: f64,
    pub completed: u64,
    pub mean_lookup_hops: f64,
    pub idle: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub overall_latency_ms: f64,
    pub latency_stddev_ms: f64,
    pub generated: u64,
    pub completed: u64,
    pub failed: u64,
    pub mean_lookup_hops: f64,
    pub mean_retrieval_lookups: f64,
    pub idle: bool,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: SimConfig,
    pub captures: Vec<CaptureSample>,
    pub summary: RunSummary,
    pub throughputs: Vec<f64>,
    /// Blocks written to each node as the actual holder.
    pub placements: Vec<u64>,
    pub is_monitor: Vec<bool>,
    pub retrieval_lookups: Vec<u8>,
}

impl RunResult {
    pub fn data_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.is_monitor.len()).filter(|&i| !self.is_monitor[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    ServiceComplete,
    StatusTick,
    CaptureTick,
    WorkloadTick,
    RequestArrival,
}

#[derive(Clone, Copy, Debug)]
enum Action {
    Complete { node: usize, arrival: f64 },
    Status,
    Capture { record: bool },
    Workload,
    Arrival { node: usize },
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    kind: Kind,
    seq: u64,
    action: Action,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.kind.cmp(&self.kind))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct NodeState {
    server: FifoServer,
    period: Vec<RequestSample>,
    history: MetricHistory,
    last_completion: f64,
    window_sum: f64,
    window_count: u64,
}

struct Engine {
    cfg: SimConfig,
    net: StorageNetwork,
    nodes: Vec<NodeState>,
    queue: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    workload: Workload,
    replica_rng: ChaCha8Rng,
    period_index: u64,
    captures: Vec<CaptureSample>,
    placements: Vec<u64>,
    generated: u64,
    completed: u64,
    failed: u64,
    window_hops: u64,
    window_lookups: u64,
    total_hops: u64,
    total_lookups: u64,
    sample_stride: u64,
    sampled: Vec<(Identifier, NodeIndex)>,
}

impl Engine {
    fn schedule(&mut self, time: f64, kind: Kind, action: Action) {
        self.seq += 1;
        self.queue.push(Event {
            time,
            kind,
            seq: self.seq,
            action,
        });
    }

    fn block_mb(&self) -> f64 {
        self.cfg.block_size_mb
    }

    fn record_placement(&mut self, r: &PlacementReceipt) {
        self.placements[r.actual.0] += 1;
        self.window_hops += u64::from(r.lookup_hops);
        self.window_lookups += 1;
        self.total_hops += u64::from(r.lookup_hops);
        self.total_lookups += 1;
    }

    fn maybe_sample(&mut self, data: Identifier, origin: NodeIndex) {
        if self.generated.is_multiple_of(self.sample_stride)
            && self.sampled.len() < self.cfg.retrieval_samples
        {
            self.sampled.push((data, origin));
        }
    }

    fn on_workload(&mut self) -> Result<()> {
        let requests = self.workload.tick();
        let bytes = self.cfg.block_bytes();
        let payload = Payload::Synthetic(bytes);
        let arrival = match self.cfg.method {
            PlacementMethod::Baseline => self.now,
            PlacementMethod::Rpdp => self.now + self.cfg.control_delay_s,
        };
        let mut targets = Vec::with_capacity(requests.len());
        match self.cfg.method {
            PlacementMethod::Baseline => {
                for (origin, data) in requests {
                    self.generated += 1;
                    let req = PlacementRequest {
                        data_id: data,
                        size: bytes,
                        origin,
                        replicas: 1,
                    };
                    match self.net.baseline_place(&req, payload.clone()) {
                        Ok(r) => {
                            self.record_placement(&r);
                            targets.push(r.actual);
                            self.maybe_sample(data, origin);
                        }
                        Err(Error::StorageFull { .. }) => self.failed += 1,
                        Err(e) => return Err(e),
                    }
                }
            }
            PlacementMethod::Rpdp => {
                // Requests routed to the same monitor within one tick form a
                // single top-c query and are spread over its answer.
                let mut batches: BTreeMap<usize, Vec<PlacementRequest>> = BTreeMap::new();
                for (origin, data) in requests {
                    self.generated += 1;
                    let req = PlacementRequest {
                        data_id: data,
                        size: bytes,
                        origin,
                        replicas: self.cfg.replicas,
                    };
                    for c in self.net.replica_clusters(
                        origin,
                        self.cfg.replicas,
                        &mut self.replica_rng,
                    )? {
                        batches.entry(c).or_default().push(req);
                    }
                    self.maybe_sample(data, origin);
                }
                for (c, batch) in batches {
                    let layout = self.net.layout().expect("clustered");
                    let ranked = match layout.boards[c].select_best_nodes(batch.len(), bytes) {
                        Ok(r) => r,
                        Err(Error::NoCapacity(_)) => {
                            self.failed += batch.len() as u64;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    let ranked: Vec<NodeIndex> = ranked
                        .iter()
                        .map(|id| self.net.node_of(id).expect("known node"))
                        .collect();
                    for (j, req) in batch.iter().enumerate() {
                        let actual = ranked[j % ranked.len()];
                        match self.net.commit_rpdp(req, actual, payload.clone(), Some(c)) {
                            Ok(r) => {
                                self.record_placement(&r);
                                targets.push(r.actual);
                            }
                            Err(Error::StorageFull { .. }) => self.failed += 1,
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
        }
        for node in targets {
            self.schedule(
                arrival,
                Kind::RequestArrival,
                Action::Arrival { node: node.0 },
            );
        }
        Ok(())
    }

    fn on_arrival(&mut self, node: usize) {
        let size = self.block_mb();
        let s = self.nodes[node].server.service(self.now, size);
        self.schedule(
            s.completion,
            Kind::ServiceComplete,
            Action::Complete {
                node,
                arrival: s.arrival,
            },
        );
    }

    fn on_complete(&mut self, node: usize, arrival: f64) {
        let size = self.block_mb();
        let st = &mut self.nodes[node];
        let gap = self.now - st.last_completion;
        st.last_completion = self.now;
        let latency = self.now - arrival;
        st.period.push(RequestSample {
            throughput: if gap > 0.0 {
                size / gap
            } else {
                st.server.max_throughput()
            },
            latency,
            timestamp: self.now,
        });
        st.window_sum += latency;
        st.window_count += 1;
        self.completed += 1;
    }

    fn on_status(&mut self) -> Result<()> {
        self.period_index += 1;
        let layout = match self.net.layout() {
            Some(l) => l,
            None => return Ok(()),
        };
        let assignment = &layout.assignment;
        let global = layout
            .boards
            .iter()
            .filter_map(|b| b.extremes().copied())
            .reduce(|a, b| a.merge(&b));
        let mut reports = Vec::new();
        for i in 0..self.nodes.len() {
            if assignment.is_monitor(NodeIndex(i)) {
                continue;
            }
            let c = assignment.cluster_of[i];
            let st = &mut self.nodes[i];
            let record = close_period(&st.period, self.period_index);
            st.period.clear();
            st.history.push(record)?;
            let pooled = st
                .history
                .pooled(self.cfg.status_window)
                .expect("just pushed");
            let extremes: Option<GlobalExtremes> = match self.cfg.extremes_scope {
                ExtremesScope::Cluster => layout.boards[c].extremes().copied(),
                ExtremesScope::Global => global,
            };
            let report = compute_status(
                self.net.overlay().id(NodeIndex(i)),
                &pooled,
                extremes.as_ref(),
                self.cfg.weights,
                self.cfg.idle_policy,
                self.cfg.block_size_mb / st.server.max_throughput(),
                self.net.store(NodeIndex(i)).remaining(),
            );
            reports.push((c, report, pooled));
        }
        for (c, report, pooled) in reports {
            self.net
                .board_mut(c)
                .expect("clustered")
                .ingest_report(report, pooled)?;
        }
        Ok(())
    }

    fn on_capture(&mut self, record: bool) {
        let mut per_node = Vec::new();
        let mut completed = 0;
        for (i, st) in self.nodes.iter_mut().enumerate() {
            if st.window_count > 0 {
                per_node.push((NodeIndex(i), st.window_sum / st.window_count as f64));
                completed += st.window_count;
            }
            st.window_sum = 0.0;
            st.window_count = 0;
        }
        let hops = if self.window_lookups > 0 {
            self.window_hops as f64 / self.window_lookups as f64
        } else {
            0.0
        };
        self.window_hops = 0;
        self.window_lookups = 0;
        if !record {
            return;
        }
        let (mean, sd) = mean_and_stddev(per_node.iter().map(|(_, l)| *l));
        self.captures.push(CaptureSample {
            time: self.now,
            idle: per_node.is_empty(),
            per_node_latency: per_node,
            overall_latency: mean,
            latency_stddev: sd,
            completed,
            mean_lookup_hops: hops,
        });
    }

    fn run_loop(&mut self) -> Result<()> {
        while let Some(ev) = self.queue.pop() {
            if ev.time < self.now {
                return Err(Error::Invariant(format!(
                    "event at {} popped after {}",
                    ev.time, self.now
                )));
            }
            self.now = ev.time;
            match ev.action {
                Action::Complete { node, arrival } => self.on_complete(node, arrival),
                Action::Arrival { node } => self.on_arrival(node),
                Action::Workload => self.on_workload()?,
                Action::Status => self.on_status()?,
                Action::Capture { record } => self.on_capture(record),
            }
        }
        Ok(())
    }
}

/// Population mean and standard deviation; both 0 for no values.
pub fn mean_and_stddev(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (sum, n) = values
        .clone()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

fn tick_times(start: f64, step: f64, end: f64) -> impl Iterator<Item = f64> {
    (0u64..)
        .map(move |k| start + k as f64 * step)
        .take_while(move |&t| t <= end)
}

/// Runs the phases in order: warm-up, clustering (residual-performance
/// placement only), steady workload, captures. Queues drain past the end
/// so every placed request completes.
pub fn run(cfg: &SimConfig) -> Result<RunResult> {
    run_with_network(cfg).map(|(r, _)| r)
}

pub fn run_with_network(cfg: &SimConfig) -> Result<(RunResult, StorageNetwork)> {
    let network = build_network(cfg)?;
    let n = cfg.node_count;
    let mut net = StorageNetwork::new(network.overlay, cfg.capacity_bytes());
    let start = cfg.warmup_s;

    if cfg.method == PlacementMethod::Rpdp {
        let graph = OverlayGraph::from_overlay(net.overlay());
        let params = CdcParams {
            clusters: cfg.cluster_count,
            ttl: cfg.cdc_ttl,
            epsilon: cfg.cdc_epsilon,
        };
        net.install_clusters(cdc_cluster(&graph, params)?)?;
        let layout = net.layout().expect("just installed");
        let mut initial = Vec::new();
        for i in 0..n {
            let node = NodeIndex(i);
            if layout.assignment.is_monitor(node) {
                continue;
            }
            let report = compute_status(
                net.overlay().id(node),
                &PeriodRecord::idle(0),
                None,
                cfg.weights,
                cfg.idle_policy,
                cfg.block_size_mb / network.throughputs[i],
                net.store(node).remaining(),
            );
            initial.push((layout.assignment.cluster_of[i], report));
        }
        for (c, report) in initial {
            net.board_mut(c)
                .expect("clustered")
                .ingest_report(report, PeriodRecord::idle(0))?;
        }
    }

    let nodes = network
        .throughputs
        .iter()
        .map(|&t| NodeState {
            server: FifoServer::new(t),
            period: Vec::new(),
            history: MetricHistory::new(cfg.history_limit),
            last_completion: start,
            window_sum: 0.0,
            window_count: 0,
        })
        .collect();
    let is_monitor = (0..n).map(|i| net.is_monitor(NodeIndex(i))).collect();
    let ticks = ((cfg.total_s - start).max(0.0).ceil() as u64).max(1);
    let expected = ticks * cfg.requests_per_second as u64;
    let sample_stride = (expected / cfg.retrieval_samples.max(1) as u64).max(1);

    let mut engine = Engine {
        cfg: cfg.clone(),
        net,
        nodes,
        queue: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        workload: Workload::new(cfg),
        replica_rng: stream_rng(cfg.seed, stream::REPLICAS),
        period_index: 0,
        captures: Vec::new(),
        placements: vec![0; n],
        generated: 0,
        completed: 0,
        failed: 0,
        window_hops: 0,
        window_lookups: 0,
        total_hops: 0,
        total_lookups: 0,
        sample_stride,
        sampled: Vec::new(),
    };
    for t in tick_times(start, 1.0, cfg.total_s).filter(|&t| t < cfg.total_s) {
        engine.schedule(t, Kind::WorkloadTick, Action::Workload);
    }
    if cfg.method == PlacementMethod::Rpdp {
        for t in tick_times(
            start + cfg.status_period_s,
            cfg.status_period_s,
            cfg.total_s,
        ) {
            engine.schedule(t, Kind::StatusTick, Action::Status);
        }
    }
    let reset = cfg.capture_start_s - cfg.capture_interval_s;
    if reset >= 0.0 {
        engine.schedule(reset, Kind::CaptureTick, Action::Capture { record: false });
    }
    for t in tick_times(cfg.capture_start_s, cfg.capture_interval_s, cfg.total_s) {
        engine.schedule(t, Kind::CaptureTick, Action::Capture { record: true });
    }
    engine.run_loop()?;

    let mut rng = stream_rng(cfg.seed, stream::RETRIEVAL);
    let mut retrieval_lookups = Vec::with_capacity(engine.sampled.len());
    for &(data, _) in &engine.sampled {
        let origin = NodeIndex(rng.random_range(0..n));
        match engine.net.retrieve(data, origin) {
            Ok(r) => retrieval_lookups.push(r.lookups),
            Err(Error::NotFound(_)) if engine.failed > 0 => {}
            Err(e) => return Err(e),
        }
    }

    let busy: Vec<&CaptureSample> = engine.captures.iter().filter(|c| !c.idle).collect();
    let avg = |f: fn(&CaptureSample) -> f64| {
        if busy.is_empty() {
            0.0
        } else {
            busy.iter().map(|c| f(c)).sum::<f64>() / busy.len() as f64
        }
    };
    let summary = RunSummary {
        overall_latency_ms: 1000.0 * avg(|c| c.overall_latency),
        latency_stddev_ms: 1000.0 * avg(|c| c.latency_stddev),
        generated: engine.generated,
        completed: engine.completed,
        failed: engine.failed,
        mean_lookup_hops: ratio(engine.total_hops, engine.total_lookups),
        mean_retrieval_lookups: if retrieval_lookups.is_empty() {
            0.0
        } else {
            retrieval_lookups.iter().map(|&l| f64::from(l)).sum::<f64>()
                / retrieval_lookups.len() as f64
        },
        idle: busy.is_empty(),
    };
    let result = RunResult {
        config: cfg.clone(),
        captures: engine.captures,
        summary,
        throughputs: network.throughputs,
        placements: engine.placements,
        is_monitor,
        retrieval_lookups,
    };
    Ok((result, engine.net))
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub const CAPTURE_HEADER: [&str; 5] = [
    "time_s",
    "overall_latency_ms",
    "latency_stddev_ms",
    "completed_requests",
    "mean_lookup_hops",
];

/// Capture series followed by a `summary` row of time-averaged values.
pub fn write_capture_csv<W: Write>(out: W, result: &RunResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CAPTURE_HEADER)?;
    for c in &result.captures {
        w.write_record([
            format!("{}", c.time),
            format!("{:.6}", 1000.0 * c.overall_latency),
            format!("{:.6}", 1000.0 * c.latency_stddev),
            c.completed.to_string(),
            format!("{:.6}", c.mean_lookup_hops),
        ])?;
    }
    let s = &result.summary;
    w.write_record([
        "summary".to_string(),
        format!("{:.6}", s.overall_latency_ms),
        format!("{:.6}", s.latency_stddev_ms),
        s.completed.to_string(),
        format!("{:.6}", s.mean_lookup_hops),
    ])?;
    w.flush()?;
    Ok(())
}
