//! Run configuration: defaults, the key=value file format, and the compact
//! architecture string.
//!
//! Example config file:
//!
//! ```text
//! # network
//! d=32
//! f=4
//! arch=conv:16x4s2,relu,conv:32x3s1,relu,fc:128,relu
//! # environment
//! grid=5
//! # hyperparameters
//! gamma=0.95
//! alpha=0.001
//! rms_eps=1e-8
//! batch=32
//! target_sync=1000
//! eps_start=1.0
//! eps_end=0.1
//! eps_anneal=50000
//! replay_capacity=50000
//! warmup=1000
//! worker_target_sync=16
//! init_std=0.01
//! seed=0
//! model_seed=0
//! episode_cap_factor=200
//! parallel=true
//! ```
//!
//! The `arch` value lists the hidden chain; the output layer (one unit per
//! action) is appended automatically. Alternatively the chain can be
//! generated from the dimension keys `k` (filter width), `n_filters`,
//! `conv_layers`, `hidden`, `fc_layers`.

use std::path::Path;

use crate::dqn::Hyperparams;
use crate::envs::ACTION_COUNT;
use crate::error::{Error, Result};
use crate::nncore::LayerSpec;
use crate::worker::AgentSettings;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid_size: usize,
    /// Network input width d.
    pub input_width: usize,
    /// Stacked frame count F.
    pub frame_count: usize,
    /// Hidden layer chain; the output FC(|A|) is appended by `full_specs`.
    pub arch: Vec<LayerSpec>,
    pub hp: Hyperparams,
    pub replay_capacity: usize,
    pub warmup: usize,
    /// Worker-side target refresh period, counted in fetches.
    pub worker_target_sync: u64,
    pub init_std: f64,
    /// Base seed for agent randomness (worker k derives its own stream).
    pub seed: u64,
    /// Seed for the server / serial model initialization.
    pub model_seed: u64,
    /// Episode cap = factor * grid_size steps without eating.
    pub episode_cap_factor: u32,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid_size: 5,
            input_width: 32,
            frame_count: 4,
            arch: default_hidden_chain(),
            hp: Hyperparams::default(),
            replay_capacity: 50_000,
            warmup: 1000,
            worker_target_sync: 16,
            init_std: 0.01,
            seed: 0,
            model_seed: 0,
            episode_cap_factor: 200,
            parallel: true,
        }
    }
}

fn default_hidden_chain() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv {
            filters: 16,
            width: 4,
            stride: 2,
        },
        LayerSpec::Relu,
        LayerSpec::Conv {
            filters: 32,
            width: 3,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::FullyConnected { output: 128 },
        LayerSpec::Relu,
    ]
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {path:?}: {e}")))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut generator = ArchGenerator::default();
        let mut explicit_arch = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {} is not key=value: '{line}'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "grid" => cfg.grid_size = num(key, value)?,
                "d" => cfg.input_width = num(key, value)?,
                "f" => cfg.frame_count = num(key, value)?,
                "arch" => {
                    cfg.arch = parse_arch(value)?;
                    explicit_arch = true;
                }
                "k" => generator.k = Some(num(key, value)?),
                "n_filters" => generator.filters = Some(num(key, value)?),
                "conv_layers" => generator.conv_layers = Some(num(key, value)?),
                "hidden" => generator.hidden = Some(num(key, value)?),
                "fc_layers" => generator.fc_layers = Some(num(key, value)?),
                "gamma" => cfg.hp.gamma = num(key, value)?,
                "alpha" => cfg.hp.alpha = num(key, value)?,
                "rms_eps" => cfg.hp.rms_eps = num(key, value)?,
                "batch" => cfg.hp.batch_size = num(key, value)?,
                "target_sync" => cfg.hp.target_sync = num(key, value)?,
                "eps_start" => cfg.hp.epsilon_start = num(key, value)?,
                "eps_end" => cfg.hp.epsilon_end = num(key, value)?,
                "eps_anneal" => cfg.hp.epsilon_anneal_steps = num(key, value)?,
                "replay_capacity" => cfg.replay_capacity = num(key, value)?,
                "warmup" => cfg.warmup = num(key, value)?,
                "worker_target_sync" => cfg.worker_target_sync = num(key, value)?,
                "init_std" => cfg.init_std = num(key, value)?,
                "seed" => cfg.seed = num(key, value)?,
                "model_seed" => cfg.model_seed = num(key, value)?,
                "episode_cap_factor" => cfg.episode_cap_factor = num(key, value)?,
                "parallel" => {
                    cfg.parallel = match value {
                        "true" | "1" => true,
                        "false" | "0" => false,
                        other => {
                            return Err(Error::Config(format!("bad bool '{other}' for parallel")))
                        }
                    }
                }
                other => return Err(Error::Config(format!("unknown config key '{other}'"))),
            }
        }
        if !explicit_arch {
            if let Some(chain) = generator.build()? {
                cfg.arch = chain;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.grid_size < 4 {
            return Err(Error::Config("grid must be at least 4".into()));
        }
        if self.input_width == 0 || self.frame_count == 0 {
            return Err(Error::Config("d and f must be positive".into()));
        }
        // The chain must produce a valid geometry end to end.
        crate::nncore::shape_chain(&self.full_specs(), &self.input_shape())?;
        Ok(())
    }

    /// The full layer chain: hidden chain plus the per-action output layer.
    pub fn full_specs(&self) -> Vec<LayerSpec> {
        let mut specs = self.arch.clone();
        specs.push(LayerSpec::FullyConnected {
            output: ACTION_COUNT,
        });
        specs
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.frame_count, self.input_width, self.input_width]
    }

    pub fn episode_cap(&self) -> u32 {
        self.episode_cap_factor * self.grid_size as u32
    }

    pub fn agent_settings(&self, seed: u64) -> AgentSettings {
        AgentSettings {
            specs: self.full_specs(),
            input_width: self.input_width,
            frame_count: self.frame_count,
            grid_size: self.grid_size,
            hp: self.hp.clone(),
            replay_capacity: self.replay_capacity,
            episode_cap: self.episode_cap(),
            parallel_grad: self.parallel,
            seed,
        }
    }

    /// Serializes back to the key=value format `parse` accepts.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("grid", self.grid_size.to_string());
        push("d", self.input_width.to_string());
        push("f", self.frame_count.to_string());
        push("arch", arch_to_string(&self.arch));
        push("gamma", format!("{:?}", self.hp.gamma));
        push("alpha", format!("{:?}", self.hp.alpha));
        push("rms_eps", format!("{:?}", self.hp.rms_eps));
        push("batch", self.hp.batch_size.to_string());
        push("target_sync", self.hp.target_sync.to_string());
        push("eps_start", format!("{:?}", self.hp.epsilon_start));
        push("eps_end", format!("{:?}", self.hp.epsilon_end));
        push("eps_anneal", self.hp.epsilon_anneal_steps.to_string());
        push("replay_capacity", self.replay_capacity.to_string());
        push("warmup", self.warmup.to_string());
        push("worker_target_sync", self.worker_target_sync.to_string());
        push("init_std", format!("{:?}", self.init_std));
        push("seed", self.seed.to_string());
        push("model_seed", self.model_seed.to_string());
        push("episode_cap_factor", self.episode_cap_factor.to_string());
        push("parallel", self.parallel.to_string());
        out
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
}

#[derive(Default)]
struct ArchGenerator {
    k: Option<usize>,
    filters: Option<usize>,
    conv_layers: Option<usize>,
    hidden: Option<usize>,
    fc_layers: Option<usize>,
}

impl ArchGenerator {
    /// Uniform chain: conv_layers convolutions (n_filters each, k x k,
    /// stride 1) then fc_layers hidden dense layers of width `hidden`, each
    /// followed by a rectifier.
    fn build(&self) -> Result<Option<Vec<LayerSpec>>> {
        if self.k.is_none()
            && self.filters.is_none()
            && self.conv_layers.is_none()
            && self.hidden.is_none()
            && self.fc_layers.is_none()
        {
            return Ok(None);
        }
        let k = self.k.unwrap_or(3);
        let filters = self.filters.unwrap_or(16);
        let conv_layers = self.conv_layers.unwrap_or(1);
        let hidden = self.hidden.unwrap_or(128);
        let fc_layers = self.fc_layers.unwrap_or(1);
        let mut chain = Vec::new();
        for _ in 0..conv_layers {
            chain.push(LayerSpec::Conv {
                filters,
                width: k,
                stride: 1,
            });
            chain.push(LayerSpec::Relu);
        }
        for _ in 0..fc_layers {
            chain.push(LayerSpec::FullyConnected { output: hidden });
            chain.push(LayerSpec::Relu);
        }
        Ok(Some(chain))
    }
}

/// Parses `conv:FxKsS`, `fc:H` and `relu` entries separated by commas or
/// whitespace, e.g. `conv:16x4s2,relu,fc:128,relu`.
pub fn parse_arch(text: &str) -> Result<Vec<LayerSpec>> {
    let mut specs = Vec::new();
    for token in text.split(|c: char| c == ',' || c.is_whitespace()) {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if token == "relu" {
            specs.push(LayerSpec::Relu);
        } else if let Some(rest) = token.strip_prefix("conv:") {
            let (fxk, stride) = match rest.split_once('s') {
                Some((fxk, s)) => (fxk, num("conv stride", s)?),
                None => (rest, 1),
            };
            let (f, k) = fxk
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("bad conv spec '{token}'")))?;
            specs.push(LayerSpec::Conv {
                filters: num("conv filters", f)?,
                width: num("conv width", k)?,
                stride,
            });
        } else if let Some(h) = token.strip_prefix("fc:") {
            specs.push(LayerSpec::FullyConnected {
                output: num("fc output", h)?,
            });
        } else {
            return Err(Error::Config(format!("unknown arch token '{token}'")));
        }
    }
    Ok(specs)
}

pub fn arch_to_string(specs: &[LayerSpec]) -> String {
    specs
        .iter()
        .map(|s| match s {
            LayerSpec::Conv {
                filters,
                width,
                stride,
            } => format!("conv:{filters}x{width}s{stride}"),
            LayerSpec::FullyConnected { output } => format!("fc:{output}"),
            LayerSpec::Relu => "relu".to_string(),
        })
        .collect::<Vec<_>>()
        .join(",")
}
