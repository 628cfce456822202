//! Evaluation rollouts and the random-policy baseline.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::dqn::epsilon_greedy;
use crate::envs::{preprocess, SnakeState, StackedState, ACTION_COUNT};
use crate::error::{Error, Result};
use crate::nncore::{forward, LayerSpec, ModelParams};
use crate::rng::Rng64;
use crate::stats::{mean, std_dev};
use crate::worker::EpisodeRecord;

use super::config::RunConfig;

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeRecord>,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_steps: f64,
    pub mean_apples: f64,
}

fn summarize(episodes: Vec<EpisodeRecord>) -> EvalReport {
    let rewards: Vec<f64> = episodes.iter().map(|e| e.reward).collect();
    let steps: Vec<f64> = episodes.iter().map(|e| e.steps as f64).collect();
    let apples: Vec<f64> = episodes.iter().map(|e| e.apples as f64).collect();
    EvalReport {
        mean_reward: mean(&rewards),
        std_reward: std_dev(&rewards),
        mean_steps: mean(&steps),
        mean_apples: mean(&apples),
        episodes,
    }
}

fn play_episode(
    model: &ModelParams,
    specs: &[LayerSpec],
    cfg: &RunConfig,
    eps: f64,
    episode: u64,
    rng: &mut Rng64,
) -> Result<EpisodeRecord> {
    let mut env = SnakeState::reset_with_cap(cfg.grid_size, cfg.episode_cap(), rng)?;
    let first = preprocess(&env.render(), cfg.input_width)?;
    let mut stack = StackedState::from_initial(first, cfg.frame_count)?;
    let mut reward_sum = 0.0;
    let mut steps = 0u32;
    while !env.terminal() {
        let q = forward(model, specs, &stack.to_tensor())?;
        let action = epsilon_greedy(&q, eps, rng);
        reward_sum += env.step(action, rng)?;
        stack.push(preprocess(&env.render(), cfg.input_width)?)?;
        steps += 1;
    }
    Ok(EpisodeRecord {
        episode,
        steps,
        apples: env.apples_eaten(),
        reward: reward_sum,
    })
}

/// Plays `episodes` full games with the given exploration rate and reports
/// mean and standard deviation of the episode reward. Each episode runs on
/// its own derived random stream, so the result is independent of how many
/// threads participate.
pub fn evaluate(
    model: &ModelParams,
    cfg: &RunConfig,
    episodes: u64,
    eps_eval: f64,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    if !(0.0..=1.0).contains(&eps_eval) {
        return Err(Error::Config(format!("eps_eval {eps_eval} not in [0, 1]")));
    }
    let specs = cfg.full_specs();
    let one = |i: u64| -> Result<EpisodeRecord> {
        let mut rng = Rng64::derive(seed, i);
        play_episode(model, &specs, cfg, eps_eval, i, &mut rng)
    };
    let records: Result<Vec<EpisodeRecord>> = {
        #[cfg(feature = "parallel")]
        {
            if cfg.parallel {
                (0..episodes).into_par_iter().map(one).collect()
            } else {
                (0..episodes).map(one).collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..episodes).map(one).collect()
        }
    };
    Ok(summarize(records?))
}

/// Mean and standard deviation of the episode reward under uniformly random
/// actions. No network involved; this is the independent baseline the
/// learning tests compare against.
pub fn random_baseline(
    grid_size: usize,
    episode_cap: u32,
    episodes: u64,
    seed: u64,
) -> Result<EvalReport> {
    let mut records = Vec::with_capacity(episodes as usize);
    for i in 0..episodes {
        let mut rng = Rng64::derive(seed, i);
        let mut env = SnakeState::reset_with_cap(grid_size, episode_cap, &mut rng)?;
        let mut reward_sum = 0.0;
        let mut steps = 0u32;
        while !env.terminal() {
            let action = rng.range(ACTION_COUNT);
            reward_sum += env.step(action, &mut rng)?;
            steps += 1;
        }
        records.push(EpisodeRecord {
            episode: i,
            steps,
            apples: env.apples_eaten(),
            reward: reward_sum,
        });
    }
    Ok(summarize(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.input_width = 5;
        cfg.arch = vec![
            LayerSpec::FullyConnected { output: 8 },
            LayerSpec::Relu,
        ];
        cfg
    }

    #[test]
    fn random_policy_reward_is_negative_on_5x5() {
        let report = random_baseline(5, 1000, 2000, 9).unwrap();
        assert!(
            report.mean_reward < -0.5,
            "random play should mostly die: {}",
            report.mean_reward
        );
    }

    #[test]
    fn full_exploration_matches_the_random_baseline() {
        let cfg = tiny_cfg();
        let model = ModelParams::zeros(&cfg.full_specs(), &cfg.input_shape()).unwrap();
        let eval = evaluate(&model, &cfg, 1500, 1.0, 33).unwrap();
        let base = random_baseline(5, cfg.episode_cap(), 1500, 77).unwrap();
        // Same distribution, independent draws: compare within 4 combined
        // standard errors.
        let se = (eval.std_reward.powi(2) / 1500.0 + base.std_reward.powi(2) / 1500.0).sqrt();
        assert!(
            (eval.mean_reward - base.mean_reward).abs() < 4.0 * se.max(0.02),
            "eval {} vs baseline {} (se {se})",
            eval.mean_reward,
            base.mean_reward
        );
    }

    #[test]
    fn greedy_evaluation_is_reproducible() {
        let cfg = tiny_cfg();
        let mut rng = Rng64::seeded(4);
        let model =
            ModelParams::init(&cfg.full_specs(), &cfg.input_shape(), 0.1, &mut rng).unwrap();
        let a = evaluate(&model, &cfg, 40, 0.0, 5).unwrap();
        let b = evaluate(&model, &cfg, 40, 0.0, 5).unwrap();
        let ra: Vec<f64> = a.episodes.iter().map(|e| e.reward).collect();
        let rb: Vec<f64> = b.episodes.iter().map(|e| e.reward).collect();
        assert_eq!(ra, rb);

        // Sequential mode sees the exact same episodes.
        let mut seq_cfg = cfg.clone();
        seq_cfg.parallel = false;
        let c = evaluate(&model, &seq_cfg, 40, 0.0, 5).unwrap();
        let rc: Vec<f64> = c.episodes.iter().map(|e| e.reward).collect();
        assert_eq!(ra, rc);
    }

    #[test]
    fn eval_rejects_bad_arguments() {
        let cfg = tiny_cfg();
        let model = ModelParams::zeros(&cfg.full_specs(), &cfg.input_shape()).unwrap();
        assert!(evaluate(&model, &cfg, 0, 0.1, 1).is_err());
        assert!(evaluate(&model, &cfg, 1, 1.5, 1).is_err());
    }
}
