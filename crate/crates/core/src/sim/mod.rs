//! Deterministic discrete-event simulation of a storage overlay under a
//! constant placement workload.

mod config;
mod engine;

pub use config::{ExtremesScope, PlacementMethod, SimConfig, ThroughputDist};
pub use engine::{
    build_network, draw_throughputs, generate_workload, mean_and_stddev, run, run_with_network,
    stream, stream_rng, write_capture_csv, CaptureSample, FifoServer, Network, RunResult,
    RunSummary, Service, Workload, CAPTURE_HEADER,
};
