//! `ddq` — asynchronous parameter-server deep Q-learning on Snake.
//!
//! Subcommands: `serial` (in-process trainer), `server` / `worker` (the
//! distributed pair), `eval` (checkpoint rollouts), `bench` (timing
//! decomposition and worker scaling), `launch-local` (spawn a server and K
//! workers as local processes).

use std::net::TcpListener;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use ddq::harness::csv::write_csv;
use ddq::harness::{
    bench_size, evaluate, random_baseline, run_scaling, train_serial, RunConfig, SerialOptions,
};
use ddq::nncore::{load_model, save_model, LayerSpec};
use ddq::server::{Server, ServerConfig};
use ddq::worker::{run_worker, WorkerConfig};

#[derive(Parser)]
#[command(name = "ddq", version, about = "Distributed deep Q-learning on Snake")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's agent seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's model-init seed.
    #[arg(long)]
    model_seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> ddq::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(seed) = self.model_seed {
            cfg.model_seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train in-process: the serial baseline trainer.
    Serial {
        #[command(flatten)]
        config: ConfigArgs,
        /// Gradient updates to run.
        #[arg(long, default_value_t = 20_000)]
        updates: u64,
        /// Write the final model here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the reward curve CSV here.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Write the per-episode log CSV here.
        #[arg(long)]
        episodes: Option<PathBuf>,
        /// Print a progress line every N updates (0 = silent).
        #[arg(long, default_value_t = 1000)]
        progress: u64,
    },
    /// Run the parameter server until max-iters updates have been applied.
    Server {
        /// Listen address, e.g. 127.0.0.1:4332 (port 0 = ephemeral).
        #[arg(long)]
        listen: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        max_iters: u64,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Metrics CSV: event,worker_id,generation,staleness,duration_us.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run one worker against a server.
    Worker {
        /// Server address, e.g. 127.0.0.1:4332.
        #[arg(long)]
        server: String,
        /// Worker id; also salts this worker's random stream.
        #[arg(long)]
        id: u32,
        #[command(flatten)]
        config: ConfigArgs,
        /// Timing CSV: event,iteration,duration_us.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Episode CSV: episode,steps,apples,reward.
        #[arg(long)]
        episodes: Option<PathBuf>,
        /// Connection attempts before giving up.
        #[arg(long, default_value_t = 30)]
        retries: u32,
    },
    /// Play evaluation episodes from a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 100)]
        episodes: u64,
        /// Exploration rate during evaluation.
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        /// Write the per-episode log CSV here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Also report the random-action baseline over the same episode count.
        #[arg(long, default_value_t = false)]
        baseline: bool,
    },
    /// Loopback benchmark: timing decomposition across model sizes and
    /// updates/sec across worker counts.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        /// Hidden-layer widths to sweep, comma separated.
        #[arg(long, default_value = "32,64,128,256")]
        sizes: String,
        /// Lock-step iterations per size.
        #[arg(long, default_value_t = 150)]
        iters: u64,
        /// Worker counts for the scaling sweep, comma separated (empty = skip).
        #[arg(long, default_value = "1,2")]
        workers: String,
        /// Wall-clock budget per scaling run, in seconds.
        #[arg(long, default_value_t = 10.0)]
        budget_secs: f64,
        /// Write the size-sweep rows as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spawn a local server process plus K local worker processes.
    LaunchLocal {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 2)]
        workers: u32,
        #[arg(long, default_value_t = 10_000)]
        max_iters: u64,
        /// Directory for checkpoints and CSV logs.
        #[arg(long, default_value = "ddq-run")]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> ddq::Result<()> {
    match cli.cmd {
        Cmd::Serial {
            config,
            updates,
            checkpoint,
            curve,
            episodes,
            progress,
        } => {
            let cfg = config.load()?;
            let run = train_serial(
                &cfg,
                &SerialOptions {
                    updates,
                    record_digests: false,
                    progress_every: progress,
                },
            )?;
            println!(
                "serial: {updates} updates, {} episodes, mean loss {:.6}",
                run.episodes.len(),
                run.mean_loss
            );
            if let Some(c) = run.curve.last() {
                println!(
                    "final trailing reward {:.3} at {:.1}s",
                    c.mean_reward, c.wall_clock_s
                );
            }
            if let Some(path) = checkpoint {
                save_model(&run.model, &path)?;
                println!("checkpoint -> {}", path.display());
            }
            if let Some(path) = curve {
                write_csv(&path, &run.curve)?;
            }
            if let Some(path) = episodes {
                let records: Vec<_> = run.episodes.iter().map(|e| e.record.clone()).collect();
                write_csv(&path, &records)?;
            }
        }
        Cmd::Server {
            listen,
            config,
            max_iters,
            checkpoint,
            metrics,
        } => {
            let cfg = config.load()?;
            let server = Server::bind(ServerConfig {
                listen,
                specs: cfg.full_specs(),
                input_shape: cfg.input_shape(),
                init_std: cfg.init_std,
                model_seed: cfg.model_seed,
                alpha: cfg.hp.alpha,
                rms_eps: cfg.hp.rms_eps,
                max_iters,
                checkpoint,
                metrics,
                record_digests: false,
                stop: None,
            })?;
            println!("server listening on {}", server.local_addr()?);
            let run = server.run()?;
            println!("server done: {} updates applied", run.updates);
        }
        Cmd::Worker {
            server,
            id,
            config,
            metrics,
            episodes,
            retries,
        } => {
            let cfg = config.load()?;
            let seed = ddq::harness::bench::worker_seed(cfg.seed, id);
            let run = run_worker(WorkerConfig {
                server_addr: server,
                worker_id: id,
                agent: cfg.agent_settings(seed),
                warmup_min: cfg.warmup,
                target_refresh_fetches: cfg.worker_target_sync,
                metrics,
                episodes,
                connect_attempts: retries,
                connect_backoff: Duration::from_millis(250),
            })?;
            println!(
                "worker {id} done: {} iterations, {} episodes",
                run.iterations,
                run.episodes.len()
            );
        }
        Cmd::Eval {
            checkpoint,
            config,
            episodes,
            eps,
            log,
            baseline,
        } => {
            let cfg = config.load()?;
            let model = load_model(&checkpoint)?;
            let report = evaluate(&model, &cfg, episodes, eps, cfg.seed)?;
            println!(
                "eval: {} episodes, reward {:.3} +/- {:.3}, {:.1} steps, {:.2} apples",
                episodes, report.mean_reward, report.std_reward, report.mean_steps,
                report.mean_apples
            );
            if baseline {
                let base = random_baseline(cfg.grid_size, cfg.episode_cap(), episodes, cfg.seed)?;
                println!(
                    "random baseline: reward {:.3} +/- {:.3}",
                    base.mean_reward, base.std_reward
                );
            }
            if let Some(path) = log {
                write_csv(&path, &report.episodes)?;
            }
        }
        Cmd::Bench {
            config,
            sizes,
            iters,
            workers,
            budget_secs,
            out,
        } => {
            let cfg = config.load()?;
            let mut rows = Vec::new();
            println!("label      params   comms_us  gradient_us  latency_us  upd/s   T/tau");
            for part in sizes.split(',').filter(|s| !s.trim().is_empty()) {
                let hidden: usize = part.trim().parse().map_err(|_| {
                    ddq::Error::Config(format!("bad hidden size '{part}' in --sizes"))
                })?;
                let mut size_cfg = cfg.clone();
                size_cfg.arch = resize_hidden(&cfg.arch, hidden);
                let row = bench_size(&format!("h{hidden}"), &size_cfg, iters)?;
                println!(
                    "{:<10} {:<8} {:<9.1} {:<12.1} {:<11.1} {:<7.1} {:.1}",
                    row.label,
                    row.params,
                    row.comms_us,
                    row.gradient_us,
                    row.latency_us,
                    row.updates_per_s,
                    row.predicted_saturation
                );
                rows.push(row);
            }
            if let Some(path) = out {
                write_csv(&path, &rows)?;
            }
            let counts: Vec<usize> = workers
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse().unwrap_or(1))
                .collect();
            if !counts.is_empty() {
                println!("workers  updates  upd/s    trailing_reward");
                for &w in &counts {
                    let mut scale_cfg = cfg.clone();
                    // Workers each keep one core busy; gradient work stays
                    // on the worker thread.
                    scale_cfg.parallel = false;
                    let run = run_scaling(
                        &scale_cfg,
                        w,
                        Duration::from_secs_f64(budget_secs),
                        ddq::harness::REWARD_WINDOW,
                    )?;
                    println!(
                        "{:<8} {:<8} {:<8.1} {}",
                        run.workers,
                        run.updates,
                        run.updates_per_s,
                        run.trailing_mean_reward
                            .map(|r| format!("{r:.3}"))
                            .unwrap_or_else(|| "n/a".into())
                    );
                }
            }
        }
        Cmd::LaunchLocal {
            config,
            workers,
            max_iters,
            out_dir,
        } => {
            let cfg = config.load()?;
            std::fs::create_dir_all(&out_dir)?;
            // Write the effective config once so the children share it.
            let cfg_path = out_dir.join("run.cfg");
            std::fs::write(&cfg_path, cfg.to_text())?;

            let port = free_port()?;
            let addr = format!("127.0.0.1:{port}");
            let exe = std::env::current_exe()?;
            let mut server = Command::new(&exe)
                .args([
                    "server",
                    "--listen",
                    &addr,
                    "--config",
                    &cfg_path.display().to_string(),
                    "--max-iters",
                    &max_iters.to_string(),
                    "--checkpoint",
                    &out_dir.join("model.ddq").display().to_string(),
                    "--metrics",
                    &out_dir.join("server-metrics.csv").display().to_string(),
                ])
                .stdout(Stdio::inherit())
                .stderr(Stdio::inherit())
                .spawn()?;

            let mut children = Vec::new();
            for id in 0..workers {
                children.push(
                    Command::new(&exe)
                        .args([
                            "worker",
                            "--server",
                            &addr,
                            "--id",
                            &id.to_string(),
                            "--config",
                            &cfg_path.display().to_string(),
                            "--metrics",
                            &out_dir.join(format!("worker-{id}-timing.csv")).display().to_string(),
                            "--episodes",
                            &out_dir
                                .join(format!("worker-{id}-episodes.csv"))
                                .display()
                                .to_string(),
                        ])
                        .stdout(Stdio::inherit())
                        .stderr(Stdio::inherit())
                        .spawn()?,
                );
            }
            let status = server.wait()?;
            for mut child in children {
                child.wait()?;
            }
            if !status.success() {
                return Err(ddq::Error::Usage("server process failed".into()));
            }
            println!("launch-local done; artifacts in {}", out_dir.display());
        }
    }
    Ok(())
}

/// Swaps every fully-connected hidden layer in the chain to `hidden` units.
fn resize_hidden(arch: &[LayerSpec], hidden: usize) -> Vec<LayerSpec> {
    arch.iter()
        .map(|spec| match spec {
            LayerSpec::FullyConnected { .. } => LayerSpec::FullyConnected { output: hidden },
            other => *other,
        })
        .collect()
}

fn free_port() -> ddq::Result<u16> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    Ok(listener.local_addr()?.port())
}
