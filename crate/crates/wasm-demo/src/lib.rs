//! Browser demo: small paired simulations, the clustered overlay, and the
//! residual-performance formula. Each operation returns a JSON string; the
//! `wasm32` build wraps them with `wasm-bindgen`.

use rpdp_core::cluster::{cdc_cluster, CdcParams, OverlayGraph};
use rpdp_core::experiment::{improvement_pct, summarize};
use rpdp_core::residual::{
    residual_latency, residual_performance, residual_throughput, GlobalExtremes, Weights,
};
use rpdp_core::sim::{build_network, run, PlacementMethod, RunResult, SimConfig};
use serde_json::{json, Value};

pub const MAX_NODES: usize = 400;

fn demo_config(nodes: usize, requests_per_second: usize, minutes: u64, seed: u64) -> SimConfig {
    let warmup = 1800.0;
    SimConfig {
        node_count: nodes,
        seed,
        requests_per_second,
        warmup_s: warmup,
        capture_start_s: warmup + 600.0,
        total_s: warmup + 600.0 + minutes as f64 * 60.0,
        retrieval_samples: 200,
        ..SimConfig::default()
    }
}

fn run_json(r: &RunResult) -> Result<Value, String> {
    let s = summarize(&r.captures).map_err(|e| e.to_string())?;
    let series: Vec<[f64; 2]> = r
        .captures
        .iter()
        .filter(|c| !c.idle)
        .map(|c| [c.time, 1000.0 * c.overall_latency])
        .collect();
    let load: Vec<[f64; 2]> = r
        .data_nodes()
        .map(|i| [r.throughputs[i], r.placements[i] as f64])
        .collect();
    Ok(json!({
        "latency_ms": s.overall_latency_ms,
        "stddev_ms": s.stddev_ms,
        "mean_lookup_hops": r.summary.mean_lookup_hops,
        "mean_retrieval_lookups": r.summary.mean_retrieval_lookups,
        "series": series,
        "load": load,
    }))
}

/// Baseline and RPDP on the same network and workload.
pub fn compare(
    nodes: usize,
    requests_per_second: usize,
    minutes: u64,
    seed: u64,
) -> Result<String, String> {
    if nodes > MAX_NODES {
        return Err(format!("at most {MAX_NODES} nodes in the browser"));
    }
    if minutes == 0 {
        return Err("run for at least one minute".into());
    }
    let base = demo_config(nodes, requests_per_second, minutes, seed);
    let mut out = json!({});
    let mut latency = [0.0; 2];
    for (k, method) in [PlacementMethod::Baseline, PlacementMethod::Rpdp]
        .into_iter()
        .enumerate()
    {
        let cfg = SimConfig {
            method,
            ..base.clone()
        };
        let r = run(&cfg).map_err(|e| e.to_string())?;
        let v = run_json(&r)?;
        latency[k] = v["latency_ms"].as_f64().unwrap_or(0.0);
        out[method.as_str()] = v;
    }
    out["improvement_pct"] = json!(improvement_pct(latency[0], latency[1]));
    Ok(out.to_string())
}

/// The warmed-up overlay, its routing-table graph and its clusters.
pub fn cluster_overlay(nodes: usize, clusters: usize, seed: u64) -> Result<String, String> {
    if nodes > MAX_NODES {
        return Err(format!("at most {MAX_NODES} nodes in the browser"));
    }
    let cfg = SimConfig {
        node_count: nodes,
        cluster_count: clusters,
        seed,
        ..SimConfig::default()
    };
    let network = build_network(&cfg).map_err(|e| e.to_string())?;
    let graph = OverlayGraph::from_overlay(&network.overlay);
    let params = CdcParams {
        clusters,
        ttl: cfg.cdc_ttl,
        epsilon: cfg.cdc_epsilon,
    };
    let assignment = cdc_cluster(&graph, params).map_err(|e| e.to_string())?;
    let node_list: Vec<Value> = (0..graph.len())
        .map(|v| {
            let id = graph.id(v);
            let b = id.as_bytes();
            json!({
                "id": id.to_hex()[..10],
                "angle": f64::from(u32::from_be_bytes([b[0], b[1], b[2], b[3]])) / 4294967296.0,
                "cluster": assignment.cluster_of[v],
                "monitor": assignment.is_monitor(rpdp_core::NodeIndex(v)),
                "degree": graph.degree(v),
                "throughput": network.throughputs[v],
            })
        })
        .collect();
    let edges: Vec<[usize; 2]> = (0..graph.len())
        .flat_map(|a| {
            graph
                .neighbors(a)
                .iter()
                .filter(move |&&b| a < b)
                .map(move |&b| [a, b])
        })
        .collect();
    let sizes: Vec<usize> = assignment.members.iter().map(Vec::len).collect();
    Ok(json!({ "nodes": node_list, "edges": edges, "cluster_sizes": sizes }).to_string())
}

/// Residual throughput, residual latency and residual performance.
#[allow(clippy::too_many_arguments)]
pub fn residual(
    t: f64,
    l: f64,
    t_min: f64,
    t_max: f64,
    l_min: f64,
    l_max: f64,
    w1: f64,
    w2: f64,
) -> Result<String, String> {
    let w = Weights::new(w1, w2).map_err(|e| e.to_string())?;
    let ext = GlobalExtremes {
        t_min,
        t_max,
        l_min,
        l_max,
    };
    let rt = residual_throughput(t, &ext);
    let rl = residual_latency(l, &ext);
    Ok(json!({ "rt": rt, "rl": rl, "p": residual_performance(rt, rl, w) }).to_string())
}

#[cfg(target_arch = "wasm32")]
mod bindings {
    use wasm_bindgen::prelude::*;

    #[wasm_bindgen(js_name = compare)]
    pub fn compare(nodes: usize, rps: usize, minutes: u32, seed: u32) -> Result<String, JsValue> {
        super::compare(nodes, rps, u64::from(minutes), u64::from(seed))
            .map_err(|e| JsValue::from_str(&e))
    }

    #[wasm_bindgen(js_name = clusterOverlay)]
    pub fn cluster_overlay(nodes: usize, clusters: usize, seed: u32) -> Result<String, JsValue> {
        super::cluster_overlay(nodes, clusters, u64::from(seed)).map_err(|e| JsValue::from_str(&e))
    }

    #[wasm_bindgen(js_name = residual)]
    #[allow(clippy::too_many_arguments)]
    pub fn residual(
        t: f64,
        l: f64,
        t_min: f64,
        t_max: f64,
        l_min: f64,
        l_max: f64,
        w1: f64,
        w2: f64,
    ) -> Result<String, JsValue> {
        super::residual(t, l, t_min, t_max, l_min, l_max, w1, w2).map_err(|e| JsValue::from_str(&e))
    }
}
