//! Benchmark mode: loopback server + worker runs that measure the three
//! quantities that bound distributed throughput — "comms" (model transfer
//! round trip), "gradient" (worker minibatch compute) and "latency" (server
//! apply time) — across model sizes, plus updates/sec scaling with the
//! number of workers.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::error::Result;
use crate::nncore::param_count;
use crate::server::{EventKind, Server, ServerConfig};
use crate::stats::mean;
use crate::worker::{run_worker, TimingEvent, WorkerConfig, WorkerRun};

use super::config::RunConfig;
use super::csv::CsvRecord;

/// Ignore this many leading iterations when averaging timings; first touches
/// pay for allocation and cache warm-up.
const TIMING_WARMUP: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub label: String,
    pub params: usize,
    pub comms_us: f64,
    pub gradient_us: f64,
    pub latency_us: f64,
    pub updates_per_s: f64,
    /// Predicted worker count where the server saturates: T / tau.
    pub predicted_saturation: f64,
}

impl CsvRecord for BenchRow {
    const HEADER: &'static str =
        "label,params,comms_us,gradient_us,latency_us,updates_per_s,predicted_saturation";

    fn to_row(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?}",
            self.label,
            self.params,
            self.comms_us,
            self.gradient_us,
            self.latency_us,
            self.updates_per_s,
            self.predicted_saturation
        )
    }

    fn parse_row(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(crate::error::Error::Config(format!(
                "bench row wants 7 fields: '{line}'"
            )));
        }
        let f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| crate::error::Error::Config(format!("bad float '{s}'")))
        };
        Ok(BenchRow {
            label: parts[0].to_string(),
            params: parts[1]
                .parse()
                .map_err(|_| crate::error::Error::Config("bad params".into()))?,
            comms_us: f(parts[2])?,
            gradient_us: f(parts[3])?,
            latency_us: f(parts[4])?,
            updates_per_s: f(parts[5])?,
            predicted_saturation: f(parts[6])?,
        })
    }
}

pub fn server_config_for(cfg: &RunConfig, max_iters: u64) -> ServerConfig {
    ServerConfig {
        listen: "127.0.0.1:0".into(),
        specs: cfg.full_specs(),
        input_shape: cfg.input_shape(),
        init_std: cfg.init_std,
        model_seed: cfg.model_seed,
        alpha: cfg.hp.alpha,
        rms_eps: cfg.hp.rms_eps,
        max_iters,
        checkpoint: None,
        metrics: None,
        record_digests: false,
        stop: None,
    }
}

/// Deterministic per-worker seed stream.
pub fn worker_seed(base: u64, worker_id: u32) -> u64 {
    base ^ (worker_id as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15)
}

pub fn worker_config_for(cfg: &RunConfig, addr: String, worker_id: u32) -> WorkerConfig {
    WorkerConfig {
        server_addr: addr,
        worker_id,
        agent: cfg.agent_settings(worker_seed(cfg.seed, worker_id)),
        warmup_min: cfg.warmup,
        target_refresh_fetches: cfg.worker_target_sync,
        metrics: None,
        episodes: None,
        connect_attempts: 20,
        connect_backoff: Duration::from_millis(50),
    }
}

/// One lock-step worker against a loopback server for `iters` updates;
/// returns the Fig.-3-style timing decomposition for this model size.
pub fn bench_size(label: &str, cfg: &RunConfig, iters: u64) -> Result<BenchRow> {
    let server = Server::bind(server_config_for(cfg, iters))?;
    let addr = server.local_addr()?.to_string();
    let server_thread = std::thread::spawn(move || server.run());
    let worker_run = run_worker(worker_config_for(cfg, addr, 0))?;
    let server_run = server_thread
        .join()
        .map_err(|_| crate::error::Error::Usage("server thread panicked".into()))??;

    let comms: Vec<f64> = worker_run
        .timings
        .iter()
        .filter(|t| t.event == TimingEvent::Comms)
        .skip(TIMING_WARMUP)
        .map(|t| t.duration_us as f64)
        .collect();
    let gradient: Vec<f64> = worker_run
        .timings
        .iter()
        .filter(|t| t.event == TimingEvent::Gradient)
        .skip(TIMING_WARMUP)
        .map(|t| t.duration_us as f64)
        .collect();
    let latency: Vec<f64> = server_run
        .metrics
        .iter()
        .filter(|m| m.event == EventKind::Apply)
        .skip(TIMING_WARMUP)
        .map(|m| m.duration_us as f64)
        .collect();
    let span = server_run.apply_span.as_secs_f64();
    let updates_per_s = if span > 0.0 {
        (server_run.updates.saturating_sub(1)) as f64 / span
    } else {
        0.0
    };
    let gradient_us = mean(&gradient);
    let latency_us = mean(&latency).max(1e-9);
    Ok(BenchRow {
        label: label.to_string(),
        params: param_count(&cfg.full_specs(), cfg.input_width, cfg.frame_count)?,
        comms_us: mean(&comms),
        gradient_us,
        latency_us,
        updates_per_s,
        predicted_saturation: gradient_us / latency_us,
    })
}

#[derive(Debug)]
pub struct ScalingRun {
    pub workers: usize,
    pub updates: u64,
    pub elapsed_s: f64,
    pub updates_per_s: f64,
    /// Mean reward over the trailing window of training episodes, pooled
    /// across workers by finish time.
    pub trailing_mean_reward: Option<f64>,
    pub worker_runs: Vec<WorkerRun>,
}

/// Runs `workers` concurrent workers against one server for a fixed
/// wall-clock budget, then shuts everything down cleanly.
pub fn run_scaling(
    cfg: &RunConfig,
    workers: usize,
    budget: Duration,
    trailing_window: usize,
) -> Result<ScalingRun> {
    let stop = Arc::new(AtomicBool::new(false));
    let mut server_cfg = server_config_for(cfg, u64::MAX);
    server_cfg.stop = Some(Arc::clone(&stop));
    let server = Server::bind(server_cfg)?;
    let addr = server.local_addr()?.to_string();
    let server_thread = std::thread::spawn(move || server.run());

    let mut worker_threads = Vec::new();
    for k in 0..workers {
        let wcfg = worker_config_for(cfg, addr.clone(), k as u32);
        worker_threads.push(std::thread::spawn(move || run_worker(wcfg)));
    }
    std::thread::sleep(budget);
    stop.store(true, Ordering::SeqCst);

    let mut worker_runs = Vec::new();
    for t in worker_threads {
        worker_runs.push(
            t.join()
                .map_err(|_| crate::error::Error::Usage("worker thread panicked".into()))??,
        );
    }
    let server_run = server_thread
        .join()
        .map_err(|_| crate::error::Error::Usage("server thread panicked".into()))??;

    let mut episodes: Vec<(f64, f64)> = worker_runs
        .iter()
        .flat_map(|w| w.episodes.iter().map(|e| (e.wall_clock_s, e.record.reward)))
        .collect();
    episodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let trailing_mean_reward = if episodes.is_empty() {
        None
    } else {
        let tail: Vec<f64> = episodes
            .iter()
            .rev()
            .take(trailing_window)
            .map(|(_, r)| *r)
            .collect();
        Some(mean(&tail))
    };

    let elapsed_s = budget.as_secs_f64();
    Ok(ScalingRun {
        workers,
        updates: server_run.updates,
        elapsed_s,
        updates_per_s: server_run.updates as f64 / elapsed_s,
        trailing_mean_reward,
        worker_runs,
    })
}
