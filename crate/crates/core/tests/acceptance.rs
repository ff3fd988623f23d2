//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The process exits nonzero when one of the exact criteria (4 to 8) fails.
//! Criteria 1, 2, 3 and 9 are statistical calibration checks: their verdict
//! is printed with the measured numbers but does not fail the run.

#![allow(clippy::needless_range_loop)]

use std::fs;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpdp_core::cluster::{cdc_cluster, two_hop_return_probability, CdcParams, OverlayGraph};
use rpdp_core::experiment::{self, ExperimentOutcome, ExperimentSpec, Mode};
use rpdp_core::id::random_id;
use rpdp_core::placement::{PlacementRequest, StorageNetwork};
use rpdp_core::residual::{
    residual_latency, residual_performance, residual_throughput, GlobalExtremes, PeriodRecord,
    Scoreboard, StatusReport, Weights,
};
use rpdp_core::sim::{build_network, PlacementMethod, SimConfig};
use rpdp_core::store::Payload;
use rpdp_core::{Error, Identifier, NodeIndex};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const SWEEP: [usize; 4] = [50, 100, 200, 400];

struct Report {
    hard_failures: usize,
}

impl Report {
    fn line(&mut self, n: u32, pass: bool, hard: bool, detail: String) {
        println!(
            "criterion {n}: {} {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass && hard {
            self.hard_failures += 1;
        }
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation of average ranks; 0 when either side is constant.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

fn compare_spec(mode: Mode, total_s: f64, retrievals: usize) -> ExperimentSpec {
    let mut spec = ExperimentSpec {
        mode,
        seeds: SEEDS.to_vec(),
        sweep_node_counts: if mode == Mode::Sweep {
            SWEEP.to_vec()
        } else {
            Vec::new()
        },
        ..ExperimentSpec::default()
    };
    spec.base.total_s = total_s;
    spec.base.retrieval_samples = retrievals;
    spec
}

fn latency_and_improvement(out: &ExperimentOutcome, report: &mut Report) {
    let cmp = out.comparison(100).unwrap().expect("paired runs");
    let wins = cmp
        .per_seed
        .iter()
        .filter(|r| r.rpdp_latency_ms < r.baseline_latency_ms)
        .count();
    let a = &cmp.aggregate;
    let in_band = (100.0..=200.0).contains(&a.baseline_latency_ms);
    let pass = wins >= 4 && (1.0..=15.0).contains(&a.improvement_pct) && in_band;
    let per_seed: Vec<String> = cmp
        .per_seed
        .iter()
        .map(|r| format!("{:.1}%", r.improvement_pct))
        .collect();
    report.line(
        1,
        pass,
        false,
        format!(
            "baseline {:.2} ms, rpdp {:.2} ms, mean improvement {:.2}% [{}], rpdp faster in {wins}/5",
            a.baseline_latency_ms,
            a.rpdp_latency_ms,
            a.improvement_pct,
            per_seed.join(" ")
        ),
    );
    let calmer = cmp
        .per_seed
        .iter()
        .filter(|r| r.rpdp_stddev_ms < r.baseline_stddev_ms)
        .count();
    report.line(
        2,
        calmer >= 4,
        false,
        format!(
            "stddev baseline {:.2} ms, rpdp {:.2} ms, rpdp lower in {calmer}/5",
            a.baseline_stddev_ms, a.rpdp_stddev_ms
        ),
    );
}

fn load_balance(out: &ExperimentOutcome, report: &mut Report) {
    let mut rho = [0.0; 2];
    for (k, method) in [PlacementMethod::Baseline, PlacementMethod::Rpdp]
        .into_iter()
        .enumerate()
    {
        for &seed in &SEEDS {
            let run = out.run(method, 100, seed).unwrap();
            let nodes: Vec<usize> = run.data_nodes().collect();
            let t: Vec<f64> = nodes.iter().map(|&i| run.throughputs[i]).collect();
            let p: Vec<f64> = nodes.iter().map(|&i| run.placements[i] as f64).collect();
            rho[k] += spearman(&t, &p) / SEEDS.len() as f64;
        }
    }
    report.line(
        9,
        rho[1] >= 0.5 && rho[0].abs() < 0.2,
        false,
        format!(
            "spearman(throughput, placements): rpdp {:.3}, baseline {:.3}",
            rho[1], rho[0]
        ),
    );
}

fn scalability(out: &ExperimentOutcome, report: &mut Report) {
    let mut detail = Vec::new();
    let mut pass = true;
    let mut means = Vec::new();
    for method in [PlacementMethod::Baseline, PlacementMethod::Rpdp] {
        let mut decreasing = 0;
        for &seed in &SEEDS {
            let lat: Vec<f64> = SWEEP
                .iter()
                .map(|&n| {
                    experiment::summarize(&out.run(method, n, seed).unwrap().captures)
                        .unwrap()
                        .overall_latency_ms
                })
                .collect();
            if lat.windows(2).all(|w| w[1] < w[0]) {
                decreasing += 1;
            }
        }
        pass &= decreasing * 2 > SEEDS.len();
        detail.push(format!("{method} decreasing in {decreasing}/5 seeds"));
    }
    for &n in &SWEEP {
        let a = out.comparison(n).unwrap().unwrap().aggregate;
        pass &= a.rpdp_latency_ms <= a.baseline_latency_ms;
        means.push(format!(
            "n={n}: {:.1}/{:.1}",
            a.baseline_latency_ms, a.rpdp_latency_ms
        ));
    }
    report.line(
        3,
        pass,
        false,
        format!(
            "{}; mean baseline/rpdp ms {}",
            detail.join(", "),
            means.join(" ")
        ),
    );
}

fn retrieval_complexity(out: &ExperimentOutcome, report: &mut Report) {
    let mut lookups_ok = true;
    let mut counts = [0usize; 2];
    let mut hops = Vec::new();
    for &n in &SWEEP {
        let mut sum = 0.0;
        let mut runs = 0.0;
        for &seed in &SEEDS {
            for (k, method) in [PlacementMethod::Baseline, PlacementMethod::Rpdp]
                .into_iter()
                .enumerate()
            {
                let run = out.run(method, n, seed).unwrap();
                counts[k] += run.retrieval_lookups.len();
                lookups_ok &= match method {
                    PlacementMethod::Baseline => run.retrieval_lookups.iter().all(|&l| l == 1),
                    PlacementMethod::Rpdp => {
                        run.retrieval_lookups.iter().all(|&l| (1..=2).contains(&l))
                    }
                };
                sum += run.summary.mean_lookup_hops;
                runs += 1.0;
            }
        }
        hops.push((n, sum / runs));
    }
    let logs: Vec<f64> = hops.iter().map(|&(n, _)| (n as f64).log2()).collect();
    let c = hops.iter().zip(&logs).map(|(h, l)| h.1 * l).sum::<f64>()
        / logs.iter().map(|l| l * l).sum::<f64>();
    let worst = hops
        .iter()
        .zip(&logs)
        .map(|(h, l)| ((h.1 - c * l) / (c * l)).abs())
        .fold(0.0, f64::max);
    let pass = lookups_ok && counts.iter().all(|&c| c >= 10_000) && worst < 0.3;
    let table: Vec<String> = hops.iter().map(|(n, h)| format!("{n}:{h:.2}")).collect();
    report.line(
        4,
        pass,
        true,
        format!(
            "{} baseline / {} rpdp retrievals, lookup bounds hold: {lookups_ok}; hops {} fit c={c:.3}, worst residual {:.1}%",
            counts[0],
            counts[1],
            table.join(" "),
            100.0 * worst
        ),
    );
}

fn equations(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad = Vec::new();
    for _ in 0..20_000 {
        let a = rng.random_range(0.5..20.0);
        let b = if rng.random_bool(0.05) {
            a
        } else {
            a + rng.random_range(0.01..20.0)
        };
        let ext = GlobalExtremes {
            t_min: a,
            t_max: b,
            l_min: a / 50.0,
            l_max: b / 50.0,
        };
        let t = rng.random_range(0.0..25.0);
        let l = rng.random_range(0.0..0.5);
        let (rt, rl) = (residual_throughput(t, &ext), residual_latency(l, &ext));
        if !(0.0..=1.0).contains(&rt) || !(0.0..=1.0).contains(&rl) {
            bad.push("bounds");
        }
        let w = Weights::new(rng.random_range(0.01..=1.0), rng.random_range(0.01..=1.0)).unwrap();
        let p = residual_performance(rt, rl, w);
        if !(0.0..=1.0).contains(&p) || (p - (w.w1 * rt + w.w2 * rl) / 2.0).abs() > 1e-12 {
            bad.push("weighted mean");
        }
        let unit = residual_performance(rt, rl, Weights::new(1.0, 1.0).unwrap());
        if (unit - (rt + rl) / 2.0).abs() > 1e-12 {
            bad.push("plain mean");
        }
        if ext.t_max == ext.t_min && (rt != 1.0 || rl != 1.0) {
            bad.push("degenerate extremes");
        }
        if ext.t_max > ext.t_min {
            let t1 = rng.random_range(ext.t_min..ext.t_max);
            let t2 = rng.random_range(t1..=ext.t_max);
            if t2 > t1 && residual_throughput(t1, &ext) <= residual_throughput(t2, &ext) {
                bad.push("throughput monotonicity");
            }
            let l1 = rng.random_range(ext.l_min..ext.l_max);
            let l2 = rng.random_range(l1..=ext.l_max);
            if l2 > l1 && residual_latency(l1, &ext) <= residual_latency(l2, &ext) {
                bad.push("latency monotonicity");
            }
            if (residual_throughput(ext.t_min, &ext) - 1.0).abs() > 1e-12
                || residual_throughput(ext.t_max, &ext).abs() > 1e-12
                || (residual_throughput((ext.t_min + ext.t_max) / 2.0, &ext) - 0.5).abs() > 1e-12
            {
                bad.push("endpoints");
            }
        }
    }
    let samples = [
        (1.0, 1.0, 1.0, 1.0, 1.0),
        (0.4, 0.8, 1.0, 1.0, 0.6),
        (1.0, 1.0, 0.5, 1.0, 0.75),
    ];
    for (rt, rl, w1, w2, want) in samples {
        if (residual_performance(rt, rl, Weights::new(w1, w2).unwrap()) - want).abs() > 1e-12 {
            bad.push("worked example");
        }
    }

    let mut boards_ok = 0;
    for trial in 0..1000 {
        let n = rng.random_range(1..=1000);
        let ids: Vec<Identifier> = (0..n).map(|_| random_id(&mut rng)).collect();
        let mut board = Scoreboard::new(Identifier::ZERO, ids.iter().copied());
        let mut reports = Vec::new();
        for &id in &ids {
            let r = StatusReport {
                node_id: id,
                residual_perf: f64::from(rng.random_range(0..20u32)) / 19.0,
                residual_space: if rng.random_bool(0.2) {
                    0
                } else {
                    rng.random_range(0..4_000_000)
                },
                period_index: 0,
                idle: false,
            };
            board.ingest_report(r, PeriodRecord::idle(0)).unwrap();
            reports.push(r);
        }
        let c = rng.random_range(1..=12);
        let size = if trial % 2 == 0 { 0 } else { 1_000_000 };
        let mut oracle: Vec<&StatusReport> = reports
            .iter()
            .filter(|r| r.residual_space >= size)
            .collect();
        oracle.sort_by_key(|r| r.node_id);
        oracle.sort_by(|a, b| b.residual_perf.total_cmp(&a.residual_perf));
        let want: Vec<Identifier> = oracle.iter().take(c).map(|r| r.node_id).collect();
        match board.select_best_nodes(c, size) {
            Ok(got) if got == want => boards_ok += 1,
            Err(Error::NoCapacity(_)) if want.is_empty() => boards_ok += 1,
            _ => {}
        }
    }
    if boards_ok != 1000 {
        bad.push("top-c oracle");
    }
    bad.dedup();
    report.line(
        5,
        bad.is_empty(),
        true,
        format!("20000 formula samples, top-c oracle agreed on {boards_ok}/1000 boards; violations: {bad:?}"),
    );
}

/// Sum over all two-step walks from `v` that come back, enumerated edge by edge.
fn brute_thp(adj: &[Vec<bool>], v: usize) -> f64 {
    let deg = |u: usize| adj[u].iter().filter(|&&e| e).count() as f64;
    let mut p = 0.0;
    for u in 0..adj.len() {
        if !adj[v][u] {
            continue;
        }
        for w in 0..adj.len() {
            if adj[u][w] && w == v {
                p += 1.0 / deg(v) * (1.0 / deg(u));
            }
        }
    }
    p
}

fn graph_from_mask(n: usize, mask: u128, ids: &[Identifier]) -> (OverlayGraph, Vec<Vec<bool>>) {
    let mut adj = vec![vec![false; n]; n];
    let mut edges = Vec::new();
    let mut bit = 0;
    for a in 0..n {
        for b in a + 1..n {
            if mask >> bit & 1 == 1 {
                adj[a][b] = true;
                adj[b][a] = true;
                edges.push((a, b));
            }
            bit += 1;
        }
    }
    (
        OverlayGraph::from_edges(ids[..n].to_vec(), edges).unwrap(),
        adj,
    )
}

fn cdc_suite(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ids: Vec<Identifier> = (0..12).map(|_| random_id(&mut rng)).collect();
    let mut graphs = 0;
    let mut thp_bad = 0;
    let mut partition_bad = 0;
    let mut nondeterministic = 0;
    let mut check = |n: usize, mask: u128| {
        let (g, adj) = graph_from_mask(n, mask, &ids);
        graphs += 1;
        for v in 0..n {
            match two_hop_return_probability(&g, v) {
                Ok(p) if (p - brute_thp(&adj, v)).abs() <= 1e-12 => {}
                Err(Error::UndefinedThp(_)) if g.degree(v) == 0 => {}
                _ => thp_bad += 1,
            }
        }
        let connected = (0..n).filter(|&v| g.degree(v) > 0).count();
        let q = 1 + (mask as usize % 3).min(connected.saturating_sub(1));
        if connected == 0 {
            return;
        }
        let params = CdcParams {
            clusters: q,
            ..CdcParams::default()
        };
        let a = cdc_cluster(&g, params).unwrap();
        let mut seen = vec![0; n];
        for (c, members) in a.members.iter().enumerate() {
            for m in members {
                seen[m.0] += 1;
                if a.cluster_of[m.0] != c {
                    partition_bad += 1;
                }
            }
        }
        if seen.iter().any(|&s| s != 1) || a.members.iter().any(Vec::is_empty) {
            partition_bad += 1;
        }
        let again = cdc_cluster(&g, params).unwrap();
        if again.cluster_of != a.cluster_of || again.monitors != a.monitors {
            nondeterministic += 1;
        }
    };
    for n in 1..=6 {
        let pairs = n * (n - 1) / 2;
        for mask in 0..1u128 << pairs {
            check(n, mask);
        }
    }
    for n in 7..=12 {
        let pairs = n * (n - 1) / 2;
        for _ in 0..2000 {
            check(n, rng.random::<u128>() & ((1u128 << pairs) - 1));
        }
    }
    let cfg = SimConfig {
        node_count: 100,
        ..SimConfig::default()
    };
    let cluster_once = || {
        let net = build_network(&cfg).unwrap();
        cdc_cluster(
            &OverlayGraph::from_overlay(&net.overlay),
            CdcParams::default(),
        )
        .unwrap()
    };
    let (x, y) = (cluster_once(), cluster_once());
    if x.cluster_of != y.cluster_of || x.monitors != y.monitors {
        nondeterministic += 1;
    }
    report.line(
        6,
        thp_bad == 0 && partition_bad == 0 && nondeterministic == 0,
        true,
        format!(
            "{graphs} graphs (all graphs up to 6 vertices, random up to 12): thp mismatches {thp_bad}, partition violations {partition_bad}, nondeterministic {nondeterministic}"
        ),
    );
}

fn round_trip(report: &mut Report) {
    let cfg = SimConfig {
        node_count: 120,
        seed: 7,
        ..SimConfig::default()
    };
    let network = build_network(&cfg).unwrap();
    let assignment = cdc_cluster(
        &OverlayGraph::from_overlay(&network.overlay),
        CdcParams::default(),
    )
    .unwrap();
    let mut net = StorageNetwork::new(network.overlay, u64::MAX);
    net.install_clusters(assignment).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = cfg.node_count;
    let rerank = |net: &mut StorageNetwork, rng: &mut ChaCha8Rng| {
        let layout = net.layout().unwrap();
        let reports: Vec<(usize, StatusReport)> = (0..layout.len())
            .flat_map(|c| layout.assignment.data_nodes(c).map(move |m| (c, m)))
            .map(|(c, m)| {
                let r = StatusReport {
                    node_id: net.overlay().id(m),
                    residual_perf: rng.random(),
                    residual_space: u64::MAX,
                    period_index: 0,
                    idle: false,
                };
                (c, r)
            })
            .collect();
        for (c, r) in reports {
            net.board_mut(c)
                .unwrap()
                .ingest_report(r, PeriodRecord::idle(0))
                .unwrap();
        }
    };
    rerank(&mut net, &mut rng);

    let mut placed = Vec::new();
    let mut kinds = [0usize; 3];
    let mut place_errors = 0;
    for i in 0..10_000u32 {
        if i % 50 == 0 {
            rerank(&mut net, &mut rng);
        }
        let data_id = random_id(&mut rng);
        let origin = NodeIndex(rng.random_range(0..n));
        let mut value = i.to_be_bytes().to_vec();
        value.extend((0..rng.random_range(0..24)).map(|_| rng.random::<u8>()));
        let req = PlacementRequest {
            data_id,
            size: value.len() as u64,
            origin,
            replicas: 1,
        };
        let value = Payload::Bytes(value);
        let closest = net.overlay().closest_oracle(data_id);
        let (kind, result) = match i % 3 {
            0 => (0, net.baseline_place(&req, value.clone())),
            1 => {
                let c = net.layout().unwrap().nearest_cluster(origin);
                (1, net.rpdp_place(&req, c, value.clone()))
            }
            _ if !net.is_monitor(closest) => {
                (2, net.commit_rpdp(&req, closest, value.clone(), None))
            }
            _ => (
                1,
                net.rpdp_place(
                    &req,
                    net.layout().unwrap().nearest_cluster(origin),
                    value.clone(),
                ),
            ),
        };
        match result {
            Ok(receipt) => {
                if kind == 2 && receipt.actual != receipt.virtual_node {
                    place_errors += 1;
                }
                kinds[kind] += 1;
                placed.push((data_id, value, kind));
            }
            Err(_) => place_errors += 1,
        }
    }
    let mut mismatches = 0;
    let mut dangling = 0;
    let mut lookup_bad = 0;
    for (data_id, value, kind) in &placed {
        let origin = NodeIndex(rng.random_range(0..n));
        match net.retrieve(*data_id, origin) {
            Ok(r) => {
                if &r.value != value {
                    mismatches += 1;
                }
                let ok = match kind {
                    1 => (1..=2).contains(&r.lookups),
                    _ => r.lookups == 1,
                };
                if !ok {
                    lookup_bad += 1;
                }
            }
            Err(Error::DanglingMap { .. }) => dangling += 1,
            Err(_) => mismatches += 1,
        }
    }
    report.line(
        7,
        placed.len() == 10_000 && place_errors == 0 && mismatches == 0 && dangling == 0 && lookup_bad == 0,
        true,
        format!(
            "{} placements (baseline {}, rpdp {}, forced coincident {}): mismatches {mismatches}, dangling maps {dangling}, lookup-count violations {lookup_bad}, placement errors {place_errors}",
            placed.len(),
            kinds[0],
            kinds[1],
            kinds[2]
        ),
    );
}

fn determinism(report: &mut Report) {
    let tmp = tempfile::tempdir().unwrap();
    let text = "\
experiment.mode = compare
experiment.seeds = 11, 12
sim.nodeCount = 60
sim.totalSimSeconds = 12600
sim.workloadRequestsPerSecond = 10
sim.retrievalSamples = 200
";
    let mut spec = ExperimentSpec::parse(text).unwrap();
    let mut files = Vec::new();
    for sub in ["a", "b"] {
        spec.output_dir = tmp.path().join(sub);
        let (_, written) = experiment::run_experiment(&spec).unwrap();
        files.push(written);
    }
    let mut differing = Vec::new();
    for (a, b) in files[0].iter().zip(&files[1]) {
        if fs::read(a).unwrap() != fs::read(b).unwrap() {
            differing.push(a.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    report.line(
        8,
        files[0].len() == 5 && files[0].len() == files[1].len() && differing.is_empty(),
        true,
        format!(
            "{} files compared byte for byte, differing: {differing:?}",
            files[0].len()
        ),
    );
}

fn main() {
    let mut report = Report { hard_failures: 0 };
    let started = Instant::now();

    let compare = experiment::execute(&compare_spec(Mode::Compare, 36_000.0, 200)).unwrap();
    latency_and_improvement(&compare, &mut report);
    let sweep = experiment::execute(&compare_spec(Mode::Sweep, 14_400.0, 1000)).unwrap();
    scalability(&sweep, &mut report);
    retrieval_complexity(&sweep, &mut report);
    equations(&mut report);
    cdc_suite(&mut report);
    round_trip(&mut report);
    determinism(&mut report);
    load_balance(&compare, &mut report);

    println!(
        "acceptance finished in {:.0} s",
        started.elapsed().as_secs_f64()
    );
    if report.hard_failures > 0 {
        std::process::exit(1);
    }
}
