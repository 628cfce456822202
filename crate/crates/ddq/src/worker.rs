//! The worker: plays the game with epsilon-greedy actions from the freshest
//! fetched model, maintains a private replay buffer, computes minibatch
//! gradients and pushes them to the server.
//!
//! [`AgentCore`] holds the full act-store-sample-gradient step with no
//! networking attached; the serial trainer drives the exact same code with a
//! local model, which is what makes the serial/distributed equivalence check
//! meaningful. A worker is single-threaded over its own state and never talks
//! to other workers.

use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use crate::dqn::{
    compute_targets, compute_targets_seq, epsilon_at, epsilon_greedy, sync_target, Hyperparams,
    TargetModel,
};
use crate::envs::{preprocess, SnakeState, StackedState, ACTION_COUNT};
use crate::error::{Error, Result};
use crate::nncore::{
    backward_seq, forward, param_count, Gradient, LayerSpec, ModelParams, Tensor,
};
use crate::protocol::{read_message, write_message, FetchRequest, GradientPush, Message};
use crate::replay::{Experience, ReplayBuffer};
use crate::rng::Rng64;

#[derive(Debug, Clone)]
pub struct AgentSettings {
    /// Full layer chain including the output layer.
    pub specs: Vec<LayerSpec>,
    pub input_width: usize,
    pub frame_count: usize,
    pub grid_size: usize,
    pub hp: Hyperparams,
    pub replay_capacity: usize,
    /// Steps without eating before the episode is cut off.
    pub episode_cap: u32,
    /// Route minibatch work through the rayon pool. Either setting produces
    /// bit-identical numbers; this only chooses who does the arithmetic.
    pub parallel_grad: bool,
    pub seed: u64,
}

/// Per-episode stats in the order episodes finish.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub steps: u32,
    pub apples: u32,
    pub reward: f64,
}

#[derive(Debug)]
pub struct StepOutcome {
    pub action: usize,
    pub reward: f64,
    pub loss: f64,
    pub grad: Gradient,
    pub finished_episode: Option<EpisodeRecord>,
}

pub struct AgentCore {
    settings: AgentSettings,
    env: SnakeState,
    stack: StackedState,
    replay: ReplayBuffer,
    target: TargetModel,
    rng: Rng64,
    step_count: u64,
    episodes: u64,
    episode_steps: u32,
    episode_reward: f64,
}

impl AgentCore {
    pub fn new(settings: AgentSettings) -> Result<Self> {
        settings.hp.validate()?;
        if settings.hp.batch_size > settings.replay_capacity {
            return Err(Error::Config(
                "batch size exceeds replay capacity".into(),
            ));
        }
        let mut rng = Rng64::seeded(settings.seed);
        let env = SnakeState::reset_with_cap(settings.grid_size, settings.episode_cap, &mut rng)?;
        let first = preprocess(&env.render(), settings.input_width)?;
        let stack = StackedState::from_initial(first, settings.frame_count)?;
        let replay = ReplayBuffer::new(settings.replay_capacity)?;
        let target = TargetModel::new(ModelParams::zeros(
            &settings.specs,
            &[
                settings.frame_count,
                settings.input_width,
                settings.input_width,
            ],
        )?);
        Ok(AgentCore {
            settings,
            env,
            stack,
            replay,
            target,
            rng,
            step_count: 0,
            episodes: 0,
            episode_steps: 0,
            episode_reward: 0.0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn target_generation(&self) -> u64 {
        self.target.generation_synced
    }

    /// Copies the live model into the target network.
    pub fn sync_target(&mut self, live: &ModelParams) {
        sync_target(&mut self.target, live);
    }

    /// Overrides the target network directly (tests use this to probe
    /// off-policy behavior).
    pub fn set_target(&mut self, params: ModelParams) {
        self.target = TargetModel::new(params);
    }

    /// Plays one environment step, stores the transition, and handles the
    /// episode reset. The terminal experience is stored first; then the
    /// environment resets and the frame stack restarts from the initial
    /// frame replicated.
    fn advance_env(&mut self, action: usize) -> Result<(f64, Option<EpisodeRecord>)> {
        let phi = self.stack.to_tensor();
        let reward = self.env.step(action, &mut self.rng)?;
        let terminal = self.env.terminal();
        let frame = preprocess(&self.env.render(), self.settings.input_width)?;
        self.stack.push(frame)?;
        let phi_next = self.stack.to_tensor();
        self.replay.store(Experience {
            phi,
            action,
            reward,
            phi_next,
            terminal,
        });
        self.episode_steps += 1;
        self.episode_reward += reward;

        let finished = if terminal {
            let record = EpisodeRecord {
                episode: self.episodes,
                steps: self.episode_steps,
                apples: self.env.apples_eaten(),
                reward: self.episode_reward,
            };
            self.episodes += 1;
            self.episode_steps = 0;
            self.episode_reward = 0.0;
            self.env = SnakeState::reset_with_cap(
                self.settings.grid_size,
                self.settings.episode_cap,
                &mut self.rng,
            )?;
            let first = preprocess(&self.env.render(), self.settings.input_width)?;
            self.stack = StackedState::from_initial(first, self.settings.frame_count)?;
            Some(record)
        } else {
            None
        };
        Ok((reward, finished))
    }

    /// Fills the replay buffer to at least `min_size` by playing uniformly
    /// random actions. Episode stats from warm-up games are discarded.
    pub fn warmup(&mut self, min_size: usize) -> Result<()> {
        if min_size > self.settings.replay_capacity {
            return Err(Error::Config(
                "warm-up size exceeds replay capacity".into(),
            ));
        }
        while self.replay.len() < min_size {
            let action = self.rng.range(ACTION_COUNT);
            self.advance_env(action)?;
        }
        self.episodes = 0;
        self.episode_steps = 0;
        self.episode_reward = 0.0;
        Ok(())
    }

    /// One full learning step against the given live model: select an action
    /// epsilon-greedily, advance the environment, store the transition,
    /// sample a minibatch, compute targets with the target network, and
    /// return the minibatch gradient with respect to the live model.
    pub fn step(&mut self, live: &ModelParams) -> Result<StepOutcome> {
        let eps = epsilon_at(self.step_count, &self.settings.hp);
        let phi = self.stack.to_tensor();
        let q = forward(live, &self.settings.specs, &phi)?;
        let action = epsilon_greedy(&q, eps, &mut self.rng);

        let (reward, finished_episode) = self.advance_env(action)?;

        let batch = self
            .replay
            .sample_uniform(self.settings.hp.batch_size, &mut self.rng)?;
        let targets = if self.settings.parallel_grad {
            compute_targets(
                &batch,
                &self.target,
                &self.settings.specs,
                self.settings.hp.gamma,
            )?
        } else {
            compute_targets_seq(
                &batch,
                &self.target,
                &self.settings.specs,
                self.settings.hp.gamma,
            )?
        };
        let states: Vec<&Tensor> = batch.iter().map(|e| &e.phi).collect();
        let actions: Vec<usize> = batch.iter().map(|e| e.action).collect();
        let (loss, grad) = if self.settings.parallel_grad {
            crate::nncore::backward(live, &self.settings.specs, &states, &actions, &targets)?
        } else {
            backward_seq(live, &self.settings.specs, &states, &actions, &targets)?
        };
        self.step_count += 1;
        Ok(StepOutcome {
            action,
            reward,
            loss,
            grad,
            finished_episode,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingEvent {
    /// Fetch round trip: request plus model transfer.
    Comms,
    /// Minibatch gradient computation.
    Gradient,
}

impl TimingEvent {
    pub fn as_str(&self) -> &'static str {
        match self {
            TimingEvent::Comms => "comms",
            TimingEvent::Gradient => "gradient",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingSample {
    pub event: TimingEvent,
    pub iteration: u64,
    pub duration_us: u64,
}

/// Episode stats annotated with where in the run they finished.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSample {
    pub record: EpisodeRecord,
    pub wall_clock_s: f64,
    pub iteration: u64,
}

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub server_addr: String,
    pub worker_id: u32,
    pub agent: AgentSettings,
    pub warmup_min: usize,
    /// Refresh the target network from the fetched model every this many
    /// fetches.
    pub target_refresh_fetches: u64,
    pub metrics: Option<PathBuf>,
    pub episodes: Option<PathBuf>,
    pub connect_attempts: u32,
    pub connect_backoff: Duration,
}

#[derive(Debug)]
pub struct WorkerRun {
    pub iterations: u64,
    pub episodes: Vec<EpisodeSample>,
    pub timings: Vec<TimingSample>,
    /// Generation of the last fetched model.
    pub last_generation: u64,
}

fn connect_with_retry(cfg: &WorkerConfig) -> Result<TcpStream> {
    let mut attempt = 0;
    loop {
        match TcpStream::connect(&cfg.server_addr) {
            Ok(s) => return Ok(s),
            Err(e) => {
                attempt += 1;
                if attempt >= cfg.connect_attempts.max(1) {
                    return Err(Error::Io(e));
                }
                std::thread::sleep(cfg.connect_backoff);
            }
        }
    }
}

/// Warm up, then loop fetch -> act -> gradient -> push until the server says
/// Shutdown or drops the connection. Writes the per-episode reward log and
/// the comms/gradient timing log when paths are configured.
pub fn run_worker(cfg: WorkerConfig) -> Result<WorkerRun> {
    if cfg.target_refresh_fetches == 0 {
        return Err(Error::Config("target_refresh_fetches must be positive".into()));
    }
    let stream = connect_with_retry(&cfg)?;
    stream.set_nodelay(true).ok();
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);

    let input_shape = vec![
        cfg.agent.frame_count,
        cfg.agent.input_width,
        cfg.agent.input_width,
    ];
    let expected_params = param_count(
        &cfg.agent.specs,
        cfg.agent.input_width,
        cfg.agent.frame_count,
    )?;

    let mut core = AgentCore::new(cfg.agent.clone())?;
    core.warmup(cfg.warmup_min)?;

    let started = Instant::now();
    let mut iterations = 0u64;
    let mut fetches = 0u64;
    let mut last_generation = 0u64;
    let mut timings = Vec::new();
    let mut episodes = Vec::new();

    loop {
        let t_fetch = Instant::now();
        if write_message(
            &mut writer,
            &Message::Fetch(FetchRequest {
                worker_id: cfg.worker_id,
            }),
        )
        .is_err()
        {
            break; // connection loss counts as shutdown
        }
        let reply = match read_message(&mut reader) {
            Ok(Message::Model(m)) => m,
            Ok(Message::Shutdown) => break,
            Ok(other) => {
                return Err(Error::Usage(format!(
                    "unexpected reply to fetch: {other:?}"
                )))
            }
            Err(_) => break,
        };
        let comms_us = t_fetch.elapsed().as_micros() as u64;
        if reply.params.len() != expected_params {
            return Err(Error::Protocol(
                Message::Model(reply).check_param_count(expected_params).unwrap_err(),
            ));
        }
        let live = ModelParams::from_flat(
            &cfg.agent.specs,
            &input_shape,
            &reply.params,
            reply.generation,
        )?;
        last_generation = live.generation;
        if fetches % cfg.target_refresh_fetches == 0 {
            core.sync_target(&live);
        }
        fetches += 1;

        let t_grad = Instant::now();
        let out = core.step(&live)?;
        let gradient_us = t_grad.elapsed().as_micros() as u64;

        if write_message(
            &mut writer,
            &Message::Gradient(GradientPush {
                worker_id: cfg.worker_id,
                base_generation: live.generation,
                gradient: out.grad.flatten(),
            }),
        )
        .is_err()
        {
            break;
        }
        iterations += 1;
        timings.push(TimingSample {
            event: TimingEvent::Comms,
            iteration: iterations,
            duration_us: comms_us,
        });
        timings.push(TimingSample {
            event: TimingEvent::Gradient,
            iteration: iterations,
            duration_us: gradient_us,
        });
        if let Some(record) = out.finished_episode {
            episodes.push(EpisodeSample {
                record,
                wall_clock_s: started.elapsed().as_secs_f64(),
                iteration: iterations,
            });
        }
    }

    if let Some(path) = &cfg.metrics {
        crate::harness::csv::write_csv(path, &timings)?;
    }
    if let Some(path) = &cfg.episodes {
        let records: Vec<EpisodeRecord> =
            episodes.iter().map(|e| e.record.clone()).collect();
        crate::harness::csv::write_csv(path, &records)?;
    }
    Ok(WorkerRun {
        iterations,
        episodes,
        timings,
        last_generation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_settings(seed: u64) -> AgentSettings {
        AgentSettings {
            specs: vec![
                LayerSpec::FullyConnected { output: 8 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { output: ACTION_COUNT },
            ],
            input_width: 5,
            frame_count: 2,
            grid_size: 5,
            hp: Hyperparams {
                batch_size: 4,
                epsilon_anneal_steps: 100,
                ..Hyperparams::default()
            },
            replay_capacity: 500,
            episode_cap: 100,
            parallel_grad: false,
            seed,
        }
    }

    fn input_shape(s: &AgentSettings) -> Vec<usize> {
        vec![s.frame_count, s.input_width, s.input_width]
    }

    #[test]
    fn warmup_fills_replay_with_shaped_states() {
        let settings = toy_settings(1);
        let shape = input_shape(&settings);
        let mut core = AgentCore::new(settings).unwrap();
        core.warmup(120).unwrap();
        assert!(core.replay_len() >= 120);
        for e in core.replay().iter_in_order() {
            assert_eq!(e.phi.shape(), &shape[..]);
            assert_eq!(e.phi_next.shape(), &shape[..]);
        }
    }

    #[test]
    fn warmup_is_reproducible_per_seed() {
        let mut a = AgentCore::new(toy_settings(7)).unwrap();
        let mut b = AgentCore::new(toy_settings(7)).unwrap();
        a.warmup(50).unwrap();
        b.warmup(50).unwrap();
        let xs: Vec<_> = a.replay().iter_in_order().collect();
        let ys: Vec<_> = b.replay().iter_in_order().collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn distinct_seeds_give_distinct_histories() {
        let mut a = AgentCore::new(toy_settings(1)).unwrap();
        let mut b = AgentCore::new(toy_settings(2)).unwrap();
        a.warmup(50).unwrap();
        b.warmup(50).unwrap();
        let xs: Vec<_> = a.replay().iter_in_order().collect();
        let ys: Vec<_> = b.replay().iter_in_order().collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn action_comes_from_the_model_passed_to_step() {
        // Zero weights with a bias spike pin the argmax regardless of input.
        let settings = toy_settings(3);
        let shape = input_shape(&settings);
        let specs = settings.specs.clone();
        let mut core = AgentCore::new(settings).unwrap();
        core.warmup(10).unwrap();
        // Drive epsilon to zero so the argmax decides.
        for _ in 0..200 {
            let model = ModelParams::zeros(&specs, &shape).unwrap();
            core.step(&model).unwrap();
        }
        for preferred in [0usize, 1, 2, 3] {
            let mut model = ModelParams::zeros(&specs, &shape).unwrap();
            let out_layer = model.layers.len() - 1;
            model.layers[out_layer].bias.data_mut()[preferred] = 5.0;
            let out = core.step(&model).unwrap();
            assert_eq!(out.action, preferred);
            let newest = core.replay().iter_in_order().last().unwrap();
            assert_eq!(newest.action, preferred);
        }
    }

    #[test]
    fn target_perturbation_changes_gradients_not_actions() {
        let settings = toy_settings(11);
        let shape = input_shape(&settings);
        let specs = settings.specs.clone();

        let mut rng = Rng64::seeded(500);
        let live = ModelParams::init(&specs, &shape, 0.2, &mut rng).unwrap();
        let perturbed = ModelParams::init(&specs, &shape, 0.7, &mut rng).unwrap();

        let mut a = AgentCore::new(settings.clone()).unwrap();
        let mut b = AgentCore::new(settings).unwrap();
        a.warmup(50).unwrap();
        b.warmup(50).unwrap();
        a.sync_target(&live);
        b.set_target(perturbed);

        let mut grads_differ = false;
        for _ in 0..30 {
            let oa = a.step(&live).unwrap();
            let ob = b.step(&live).unwrap();
            assert_eq!(oa.action, ob.action, "action trace must not depend on the target");
            if oa.grad != ob.grad {
                grads_differ = true;
            }
        }
        assert!(grads_differ, "targets should influence the gradients");
    }

    #[test]
    fn gamma_zero_and_terminal_targets_shortcut_the_network() {
        // With gamma = 0 the minibatch targets equal rewards, so two cores
        // with different target nets push identical gradients.
        let mut settings = toy_settings(13);
        settings.hp.gamma = 0.0;
        let shape = input_shape(&settings);
        let specs = settings.specs.clone();
        let mut rng = Rng64::seeded(77);
        let live = ModelParams::init(&specs, &shape, 0.2, &mut rng).unwrap();
        let other = ModelParams::init(&specs, &shape, 0.9, &mut rng).unwrap();

        let mut a = AgentCore::new(settings.clone()).unwrap();
        let mut b = AgentCore::new(settings).unwrap();
        a.warmup(50).unwrap();
        b.warmup(50).unwrap();
        a.sync_target(&live);
        b.set_target(other);
        for _ in 0..10 {
            let oa = a.step(&live).unwrap();
            let ob = b.step(&live).unwrap();
            assert_eq!(oa.grad, ob.grad);
        }
    }
}
