//! The parameter server: owns the global model and RMSProp state, serves
//! model fetches, applies pushed gradients immediately under a write-lock,
//! counts applied updates toward MaxIters, then shuts the workers down.
//!
//! One lock covers model + accumulator + generation, so every fetch reply is
//! a self-consistent snapshot of exactly one generation and no reply can
//! observe a partially applied update. Each connection gets its own thread;
//! per-connection reads and writes are serialized, concurrent connections
//! contend only on the lock.

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::dqn::{rmsprop_update_le_bytes, RmsState};
use crate::error::{Error, Result};
use crate::nncore::{param_count, save_model, LayerSpec, ModelParams};
use crate::protocol::{
    decode_frame, gradient_frame_view, read_frame, write_message, GradientFrame, Message,
    ModelReply, ProtocolError,
};
use crate::rng::Rng64;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Listen address, e.g. "127.0.0.1:4332". Port 0 picks an ephemeral port.
    pub listen: String,
    /// Full layer chain including the output layer.
    pub specs: Vec<LayerSpec>,
    /// Network input shape [frames, d, d].
    pub input_shape: Vec<usize>,
    /// Weight init: theta_i ~ N(0, init_std).
    pub init_std: f64,
    pub model_seed: u64,
    pub alpha: f64,
    pub rms_eps: f64,
    /// Stop serving once this many gradient updates have been applied.
    pub max_iters: u64,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    /// Record a model digest per generation (tests use this to check
    /// snapshot atomicity); costs one extra pass over the parameters per
    /// update.
    pub record_digests: bool,
    /// Optional external kill switch for fixed-duration runs.
    pub stop: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Fetch,
    Apply,
    Reject,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Fetch => "fetch",
            EventKind::Apply => "apply",
            EventKind::Reject => "reject",
        }
    }
}

/// One metrics row: `event,worker_id,generation,staleness,duration_us`.
/// Staleness is meaningful for apply events only and zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub event: EventKind,
    pub worker_id: u32,
    pub generation: u64,
    pub staleness: u64,
    pub duration_us: u64,
}

#[derive(Debug)]
pub struct ServerRun {
    pub final_model: ModelParams,
    /// Number of gradient updates applied (the final generation n).
    pub updates: u64,
    pub metrics: Vec<MetricsRecord>,
    /// Model digest per generation (0..=updates) when `record_digests` set.
    pub digests: Vec<u64>,
    /// Wall-clock span from the first applied update to the last.
    pub apply_span: Duration,
}

struct Core {
    model: ModelParams,
    rms: RmsState,
    metrics: Vec<MetricsRecord>,
    digests: Vec<u64>,
    first_apply: Option<Instant>,
    last_apply: Option<Instant>,
}

struct Shared {
    core: Mutex<Core>,
    done: AtomicBool,
    param_count: usize,
    alpha: f64,
    rms_eps: f64,
    max_iters: u64,
    record_digests: bool,
}

pub struct Server {
    listener: TcpListener,
    config: ServerConfig,
    shared: Arc<Shared>,
}

const CONN_POLL: Duration = Duration::from_millis(25);

impl Server {
    pub fn bind(config: ServerConfig) -> Result<Server> {
        let expected = param_count(
            &config.specs,
            config.input_shape[1],
            config.input_shape[0],
        )?;
        let mut rng = Rng64::seeded(config.model_seed);
        let model = ModelParams::init(&config.specs, &config.input_shape, config.init_std, &mut rng)?;
        let rms = RmsState::zeros_like(&model);
        let mut digests = Vec::new();
        if config.record_digests {
            digests.push(model.digest());
        }
        let listener = TcpListener::bind(&config.listen)?;
        listener.set_nonblocking(true)?;
        let shared = Arc::new(Shared {
            core: Mutex::new(Core {
                model,
                rms,
                metrics: Vec::new(),
                digests,
                first_apply: None,
                last_apply: None,
            }),
            done: AtomicBool::new(false),
            param_count: expected,
            alpha: config.alpha,
            rms_eps: config.rms_eps,
            max_iters: config.max_iters,
            record_digests: config.record_digests,
        });
        Ok(Server {
            listener,
            config,
            shared,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Serves fetches and gradient pushes until `max_iters` updates have been
    /// applied (or the external stop flag fires), sends Shutdown to every
    /// connected worker, writes the checkpoint and metrics, and returns the
    /// final state.
    pub fn run(self) -> Result<ServerRun> {
        let Server {
            listener,
            config,
            shared,
        } = self;
        if config.max_iters == 0 {
            shared.done.store(true, Ordering::SeqCst);
        }
        let mut handles = Vec::new();
        while !shared.done.load(Ordering::SeqCst) {
            if let Some(stop) = &config.stop {
                if stop.load(Ordering::SeqCst) {
                    shared.done.store(true, Ordering::SeqCst);
                    break;
                }
            }
            match listener.accept() {
                Ok((stream, _peer)) => {
                    let shared = Arc::clone(&shared);
                    handles.push(std::thread::spawn(move || serve_connection(stream, shared)));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(Error::Io(e)),
            }
        }
        shared.done.store(true, Ordering::SeqCst);
        for h in handles {
            let _ = h.join();
        }
        drop(listener);

        let shared = Arc::try_unwrap(shared)
            .map_err(|_| Error::Usage("a server connection thread is still alive".into()))?;
        let Core {
            model,
            metrics,
            digests,
            first_apply,
            last_apply,
            ..
        } = shared
            .core
            .into_inner()
            .unwrap_or_else(|poisoned| poisoned.into_inner());

        if let Some(path) = &config.checkpoint {
            save_model(&model, path)?;
        }
        if let Some(path) = &config.metrics {
            crate::harness::csv::write_csv(path, &metrics)?;
        }
        let apply_span = match (first_apply, last_apply) {
            (Some(a), Some(b)) => b.duration_since(a),
            _ => Duration::ZERO,
        };
        Ok(ServerRun {
            updates: model.generation,
            final_model: model,
            metrics,
            digests,
            apply_span,
        })
    }
}

fn serve_connection(stream: TcpStream, shared: Arc<Shared>) {
    stream.set_nodelay(true).ok();
    stream.set_read_timeout(Some(CONN_POLL)).ok();
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let mut writer = BufWriter::new(stream);

    let mut first = true;
    let mut scratch = Vec::new();
    loop {
        if shared.done.load(Ordering::SeqCst) {
            let _ = write_message(&mut writer, &Message::Shutdown);
            return;
        }
        match read_frame(&mut reader, &mut scratch) {
            Ok(()) => {}
            Err(ProtocolError::Io(e))
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                continue;
            }
            // Disconnect or garbage: drop the connection.
            Err(_) => return,
        }

        // Gradient pushes are the hot path: apply straight from the frame
        // bytes, no intermediate float vector.
        match gradient_frame_view(&scratch) {
            Ok(Some(push)) => {
                if first {
                    reject_first_message(&shared);
                    return;
                }
                handle_gradient(&shared, &push);
                continue;
            }
            Ok(None) => {}
            Err(_) => {
                record_reject(&shared, u32::MAX);
                continue;
            }
        }

        let msg = match decode_frame(&scratch) {
            Ok(m) => m,
            Err(_) => return,
        };
        // The opening message on a connection must be a fetch.
        if first && !matches!(msg, Message::Fetch(_)) {
            reject_first_message(&shared);
            return;
        }
        first = false;

        match msg {
            Message::Fetch(req) => {
                if shared.done.load(Ordering::SeqCst) {
                    let _ = write_message(&mut writer, &Message::Shutdown);
                    return;
                }
                let reply = {
                    let mut core = lock(&shared);
                    let t0 = Instant::now();
                    let snapshot = core.model.flatten();
                    let generation = core.model.generation;
                    let duration_us = t0.elapsed().as_micros() as u64;
                    core.metrics.push(MetricsRecord {
                        event: EventKind::Fetch,
                        worker_id: req.worker_id,
                        generation,
                        staleness: 0,
                        duration_us,
                    });
                    Message::Model(ModelReply {
                        generation,
                        params: snapshot,
                    })
                };
                if write_message(&mut writer, &reply).is_err() {
                    return;
                }
            }
            Message::Shutdown | Message::Model(_) | Message::Gradient(_) => {
                // Clients have no business sending these; close. (Gradients
                // were already handled on the fast path above.)
                return;
            }
        }
    }
}

fn reject_first_message(shared: &Shared) {
    record_reject(shared, u32::MAX);
}

fn record_reject(shared: &Shared, worker_id: u32) {
    let mut core = lock(shared);
    let generation = core.model.generation;
    core.metrics.push(MetricsRecord {
        event: EventKind::Reject,
        worker_id,
        generation,
        staleness: 0,
        duration_us: 0,
    });
}

fn handle_gradient(shared: &Shared, push: &GradientFrame<'_>) {
    if push.element_count != shared.param_count {
        record_reject(shared, push.worker_id);
        return;
    }
    let mut guard = lock(shared);
    let core = &mut *guard;
    if core.model.generation >= shared.max_iters {
        // Already at the iteration cap; do not count extras.
        shared.done.store(true, Ordering::SeqCst);
        return;
    }
    let t0 = Instant::now();
    let generation_before = core.model.generation;
    // A gradient claiming to come from the future is malformed.
    let applied = if push.base_generation > generation_before {
        Err(Error::Usage("gradient from a future generation".into()))
    } else {
        rmsprop_update_le_bytes(
            &mut core.model,
            &mut core.rms,
            push.float_bytes,
            shared.alpha,
            shared.rms_eps,
        )
    };
    match applied {
        Ok(()) => {
            let duration_us = t0.elapsed().as_micros() as u64;
            let generation = core.model.generation;
            let staleness = generation_before - push.base_generation;
            if shared.record_digests {
                let digest = core.model.digest();
                core.digests.push(digest);
            }
            let now = Instant::now();
            if core.first_apply.is_none() {
                core.first_apply = Some(now);
            }
            core.last_apply = Some(now);
            core.metrics.push(MetricsRecord {
                event: EventKind::Apply,
                worker_id: push.worker_id,
                generation,
                staleness,
                duration_us,
            });
            if generation >= shared.max_iters {
                shared.done.store(true, Ordering::SeqCst);
            }
        }
        Err(_) => {
            core.metrics.push(MetricsRecord {
                event: EventKind::Reject,
                worker_id: push.worker_id,
                generation: generation_before,
                staleness: 0,
                duration_us: 0,
            });
        }
    }
}

fn lock(shared: &Shared) -> std::sync::MutexGuard<'_, Core> {
    shared
        .core
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}
