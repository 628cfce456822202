//! The in-process serial trainer: the same act-store-sample-gradient step as
//! the worker, with the RMSProp update applied locally instead of being
//! shipped over a socket. With shared seeds a lock-step single-worker
//! distributed run reproduces this trainer's model sequence bit for bit.

use std::collections::VecDeque;
use std::time::Instant;

use crate::dqn::{rmsprop_update, RmsState};
use crate::error::Result;
use crate::nncore::ModelParams;
use crate::rng::Rng64;
use crate::worker::{AgentCore, EpisodeSample};

use super::config::RunConfig;

/// Trailing-window width for the reward curve.
pub const REWARD_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub updates: u64,
    pub wall_clock_s: f64,
    /// Mean episode reward over the trailing [`REWARD_WINDOW`] episodes.
    pub mean_reward: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SerialOptions {
    pub updates: u64,
    /// Record a model digest per generation (0..=updates); used by the
    /// equivalence tests.
    pub record_digests: bool,
    /// Print a progress line every this many updates (0 = silent).
    pub progress_every: u64,
}

#[derive(Debug)]
pub struct SerialRun {
    pub model: ModelParams,
    pub curve: Vec<CurvePoint>,
    pub episodes: Vec<EpisodeSample>,
    pub digests: Vec<u64>,
    pub mean_loss: f64,
}

/// Runs `opts.updates` gradient updates of serial deep Q-learning and
/// returns the trained model plus the reward curve.
pub fn train_serial(cfg: &RunConfig, opts: &SerialOptions) -> Result<SerialRun> {
    let specs = cfg.full_specs();
    let input_shape = cfg.input_shape();
    let mut init_rng = Rng64::seeded(cfg.model_seed);
    let mut model = ModelParams::init(&specs, &input_shape, cfg.init_std, &mut init_rng)?;
    let mut rms = RmsState::zeros_like(&model);

    let mut core = AgentCore::new(cfg.agent_settings(cfg.seed))?;
    core.warmup(cfg.warmup)?;

    let mut digests = Vec::new();
    if opts.record_digests {
        digests.push(model.digest());
    }

    let started = Instant::now();
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(REWARD_WINDOW);
    let mut curve = Vec::new();
    let mut episodes = Vec::new();
    let mut loss_sum = 0.0;

    for t in 0..opts.updates {
        if t % cfg.hp.target_sync == 0 {
            core.sync_target(&model);
        }
        let out = core.step(&model)?;
        rmsprop_update(&mut model, &mut rms, &out.grad, cfg.hp.alpha, cfg.hp.rms_eps)?;
        loss_sum += out.loss;
        if opts.record_digests {
            digests.push(model.digest());
        }
        if let Some(record) = out.finished_episode {
            if recent.len() == REWARD_WINDOW {
                recent.pop_front();
            }
            recent.push_back(record.reward);
            let mean_reward = recent.iter().sum::<f64>() / recent.len() as f64;
            curve.push(CurvePoint {
                updates: t + 1,
                wall_clock_s: started.elapsed().as_secs_f64(),
                mean_reward,
            });
            episodes.push(EpisodeSample {
                record,
                wall_clock_s: started.elapsed().as_secs_f64(),
                iteration: t + 1,
            });
        }
        if opts.progress_every > 0 && (t + 1) % opts.progress_every == 0 {
            let mean_reward = curve.last().map(|c| c.mean_reward).unwrap_or(f64::NAN);
            println!(
                "update {:>8}  eps {:.3}  trailing reward {:.3}  loss {:.5}",
                t + 1,
                crate::dqn::epsilon_at(core.step_count(), &cfg.hp),
                mean_reward,
                loss_sum / (t + 1) as f64,
            );
        }
    }

    Ok(SerialRun {
        model,
        curve,
        episodes,
        digests,
        mean_loss: if opts.updates > 0 {
            loss_sum / opts.updates as f64
        } else {
            0.0
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.input_width = 5;
        cfg.arch = vec![
            crate::nncore::LayerSpec::FullyConnected { output: 16 },
            crate::nncore::LayerSpec::Relu,
        ];
        cfg.hp.batch_size = 8;
        cfg.replay_capacity = 2000;
        cfg.warmup = 50;
        cfg.hp.target_sync = 25;
        cfg
    }

    #[test]
    fn zero_updates_returns_the_initialized_model() {
        let cfg = desk_config();
        let run = train_serial(
            &cfg,
            &SerialOptions {
                updates: 0,
                record_digests: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(run.model.generation, 0);
        assert_eq!(run.digests.len(), 1);
        let mut rng = Rng64::seeded(cfg.model_seed);
        let fresh =
            ModelParams::init(&cfg.full_specs(), &cfg.input_shape(), cfg.init_std, &mut rng)
                .unwrap();
        assert_eq!(run.model, fresh);
    }

    #[test]
    fn runs_are_deterministic_given_seeds() {
        let cfg = desk_config();
        let opts = SerialOptions {
            updates: 120,
            record_digests: true,
            ..Default::default()
        };
        let a = train_serial(&cfg, &opts).unwrap();
        let b = train_serial(&cfg, &opts).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.digests, b.digests);
        let ra: Vec<f64> = a.curve.iter().map(|c| c.mean_reward).collect();
        let rb: Vec<f64> = b.curve.iter().map(|c| c.mean_reward).collect();
        assert_eq!(ra, rb);
    }

    #[test]
    fn curve_updates_are_strictly_increasing() {
        let cfg = desk_config();
        let run = train_serial(
            &cfg,
            &SerialOptions {
                updates: 300,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!run.curve.is_empty());
        for pair in run.curve.windows(2) {
            assert!(pair[1].updates > pair[0].updates);
        }
        assert_eq!(run.model.generation, 300);
    }
}
