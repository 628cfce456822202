//! Q-learning mathematics: bootstrap targets through a delayed target
//! network, the epsilon-greedy behavior policy, the RMSProp parameter update
//! shared by the serial trainer and the parameter server, and the tabular
//! update used by the oracle tests.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nncore::{forward, Gradient, LayerParams, LayerSpec, ModelParams, Tensor};
use crate::oracle::QTable;
use crate::replay::Experience;
use crate::rng::Rng64;

/// Delayed copy of the Q-network used for bootstrap targets; synchronized
/// from the live model every C steps and held fixed in between.
#[derive(Debug, Clone)]
pub struct TargetModel {
    pub params: ModelParams,
    /// Generation of the live model at the moment of the last sync.
    pub generation_synced: u64,
}

impl TargetModel {
    pub fn new(params: ModelParams) -> Self {
        let generation_synced = params.generation;
        TargetModel {
            params,
            generation_synced,
        }
    }
}

/// Deep copy of the live parameters into the target network.
pub fn sync_target(target: &mut TargetModel, live: &ModelParams) {
    target.params = live.clone();
    target.generation_synced = live.generation;
}

/// Per-parameter accumulator r for the RMSProp update; every entry stays
/// non-negative.
#[derive(Debug, Clone)]
pub struct RmsState {
    pub layers: Vec<LayerParams>,
}

impl RmsState {
    pub fn zeros_like(model: &ModelParams) -> Self {
        let g = Gradient::zeros_like(model);
        RmsState { layers: g.layers }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub gamma: f64,
    pub alpha: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    pub batch_size: usize,
    pub target_sync: u64,
    pub rms_eps: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            gamma: 0.95,
            alpha: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_anneal_steps: 50_000,
            batch_size: 32,
            target_sync: 1000,
            rms_eps: 1e-8,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} not in [0, 1)", self.gamma)));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config("alpha must be positive".into()));
        }
        for (name, eps) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::Config(format!("{name} {eps} not in [0, 1]")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.target_sync == 0 {
            return Err(Error::Config("target sync period must be at least 1".into()));
        }
        if self.rms_eps <= 0.0 {
            return Err(Error::Config("rms_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Bootstrap targets: y_j = r_j for terminal transitions, otherwise
/// r_j + gamma * max_a' Q(phi_next, a'; target). Uses the target network
/// only, never the live model.
pub fn compute_targets(
    batch: &[&Experience],
    target: &TargetModel,
    specs: &[LayerSpec],
    gamma: f64,
) -> Result<Vec<f64>> {
    let one = |e: &Experience| -> Result<f64> {
        if e.terminal {
            Ok(e.reward)
        } else {
            let q = forward(&target.params, specs, &e.phi_next)?;
            let best = q.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok(e.reward + gamma * best)
        }
    };
    #[cfg(feature = "parallel")]
    {
        batch.par_iter().map(|e| one(e)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        batch.iter().map(|e| one(e)).collect()
    }
}

/// Sequential variant of [`compute_targets`]; same values bit for bit.
pub fn compute_targets_seq(
    batch: &[&Experience],
    target: &TargetModel,
    specs: &[LayerSpec],
    gamma: f64,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|e| {
            if e.terminal {
                Ok(e.reward)
            } else {
                let q = forward(&target.params, specs, &e.phi_next)?;
                let best = q.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                Ok(e.reward + gamma * best)
            }
        })
        .collect()
}

/// With probability eps a uniform random action, otherwise the argmax of the
/// Q-values with ties broken by the lowest index.
pub fn epsilon_greedy(q: &Tensor, eps: f64, rng: &mut Rng64) -> usize {
    debug_assert!((0.0..=1.0).contains(&eps));
    let n = q.numel();
    if eps > 0.0 && rng.f64() < eps {
        return rng.range(n);
    }
    argmax(q.data())
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Linear anneal from epsilon_start to epsilon_end over
/// `epsilon_anneal_steps`, constant afterwards.
pub fn epsilon_at(step: u64, hp: &Hyperparams) -> f64 {
    if step >= hp.epsilon_anneal_steps || hp.epsilon_anneal_steps == 0 {
        return hp.epsilon_end;
    }
    let frac = step as f64 / hp.epsilon_anneal_steps as f64;
    hp.epsilon_start + (hp.epsilon_end - hp.epsilon_start) * frac
}

/// The one RMSProp kernel. Every route into an update (structured gradient,
/// flat vector, raw wire bytes) funnels through this exact sequence of
/// floating-point operations, so all routes produce bit-identical models.
fn rmsprop_kernel(
    theta: &mut [f64],
    r: &mut [f64],
    grads: impl Iterator<Item = f64>,
    alpha: f64,
    rms_eps: f64,
) {
    for (i, g) in grads.enumerate() {
        r[i] = 0.9 * r[i] + 0.1 * g * g;
        theta[i] -= alpha * g / (r[i] + rms_eps).sqrt();
    }
}

fn rmsprop_slices(theta: &mut [f64], r: &mut [f64], grad: &[f64], alpha: f64, rms_eps: f64) {
    rmsprop_kernel(theta, r, grad.iter().copied(), alpha, rms_eps);
}

fn le_floats(bytes: &[u8]) -> impl Iterator<Item = f64> + '_ {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
}

/// RMSProp update, in place: r_i <- 0.9 r_i + 0.1 g_i^2, then
/// theta_i <- theta_i - alpha g_i / sqrt(r_i + rms_eps). Bumps the model
/// generation by one. A non-finite gradient element rejects the whole update
/// and leaves the model, accumulator and generation untouched.
pub fn rmsprop_update(
    model: &mut ModelParams,
    rms: &mut RmsState,
    grad: &Gradient,
    alpha: f64,
    rms_eps: f64,
) -> Result<()> {
    if !grad.congruent_with(model) {
        return Err(Error::Shape("gradient not congruent with model".into()));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient rejected".into()));
    }
    for ((m, r), g) in model.layers.iter_mut().zip(&mut rms.layers).zip(&grad.layers) {
        rmsprop_slices(
            m.weight.data_mut(),
            r.weight.data_mut(),
            g.weight.data(),
            alpha,
            rms_eps,
        );
        rmsprop_slices(
            m.bias.data_mut(),
            r.bias.data_mut(),
            g.bias.data(),
            alpha,
            rms_eps,
        );
    }
    model.generation += 1;
    Ok(())
}

/// RMSProp update applied from a flat gradient vector (the wire format),
/// walking the model's tensors in flatten order. Identical arithmetic to
/// [`rmsprop_update`] on the unflattened gradient.
pub fn rmsprop_update_flat(
    model: &mut ModelParams,
    rms: &mut RmsState,
    flat: &[f64],
    alpha: f64,
    rms_eps: f64,
) -> Result<()> {
    let expected = model.param_count();
    if flat.len() != expected {
        return Err(Error::Shape(format!(
            "flat gradient has {} elements, model wants {expected}",
            flat.len()
        )));
    }
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient rejected".into()));
    }
    let mut offset = 0;
    for (m, r) in model.layers.iter_mut().zip(&mut rms.layers) {
        let wlen = m.weight.numel();
        rmsprop_slices(
            m.weight.data_mut(),
            r.weight.data_mut(),
            &flat[offset..offset + wlen],
            alpha,
            rms_eps,
        );
        offset += wlen;
        let blen = m.bias.numel();
        rmsprop_slices(
            m.bias.data_mut(),
            r.bias.data_mut(),
            &flat[offset..offset + blen],
            alpha,
            rms_eps,
        );
        offset += blen;
    }
    model.generation += 1;
    Ok(())
}

/// RMSProp update applied directly from the wire format: little-endian f64
/// bytes in flatten order. Parsing is fused with the arithmetic, which is
/// what the parameter server runs under its write-lock; the result is
/// bit-identical to the other update routes.
pub fn rmsprop_update_le_bytes(
    model: &mut ModelParams,
    rms: &mut RmsState,
    bytes: &[u8],
    alpha: f64,
    rms_eps: f64,
) -> Result<()> {
    let expected = model.param_count();
    if bytes.len() != 8 * expected {
        return Err(Error::Shape(format!(
            "gradient bytes hold {} elements, model wants {expected}",
            bytes.len() / 8
        )));
    }
    if le_floats(bytes).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient rejected".into()));
    }
    let mut offset = 0;
    for (m, r) in model.layers.iter_mut().zip(&mut rms.layers) {
        let wlen = m.weight.numel();
        rmsprop_kernel(
            m.weight.data_mut(),
            r.weight.data_mut(),
            le_floats(&bytes[offset..offset + 8 * wlen]),
            alpha,
            rms_eps,
        );
        offset += 8 * wlen;
        let blen = m.bias.numel();
        rmsprop_kernel(
            m.bias.data_mut(),
            r.bias.data_mut(),
            le_floats(&bytes[offset..offset + 8 * blen]),
            alpha,
            rms_eps,
        );
        offset += 8 * blen;
    }
    model.generation += 1;
    Ok(())
}

/// One tabular Q-learning update:
/// Q(s,a) += alpha (r + gamma max_a' Q(s',a') - Q(s,a)).
pub fn tabular_q_update(
    q: &mut QTable,
    s: usize,
    a: usize,
    reward: f64,
    s_next: usize,
    alpha: f64,
    gamma: f64,
) {
    let bootstrap = q.max_over_actions(s_next);
    let old = q.get(s, a);
    q.set(s, a, old + alpha * (reward + gamma * bootstrap - old));
}
