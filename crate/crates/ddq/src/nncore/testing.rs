//! Test support: independent oracles and random instance generators.
//!
//! Nothing here is called by the training paths. The finite-difference
//! gradient and the naive forward evaluation exist so the test suites can
//! check the analytic implementations against a second, dumber route.

use crate::nncore::layers::{shape_chain, LayerSpec};
use crate::nncore::model::ModelParams;
use crate::nncore::net::forward;
use crate::nncore::tensor::Tensor;
use crate::rng::Rng64;

/// A random small but valid architecture: (specs, input width d, frames F).
pub fn random_arch(rng: &mut Rng64) -> (Vec<LayerSpec>, usize, usize) {
    loop {
        let d = 4 + rng.range(5); // 4..=8
        let f = 1 + rng.range(2); // 1..=2
        let out = 2 + rng.range(3); // 2..=4
        let template = rng.range(4);
        let specs: Vec<LayerSpec> = match template {
            0 => vec![
                LayerSpec::Conv {
                    filters: 1 + rng.range(3),
                    width: 1 + rng.range(3),
                    stride: 1 + rng.range(2),
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected {
                    output: 2 + rng.range(6),
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { output: out },
            ],
            1 => vec![
                LayerSpec::Conv {
                    filters: 1 + rng.range(2),
                    width: 1 + rng.range(3),
                    stride: 1 + rng.range(2),
                },
                LayerSpec::Relu,
                LayerSpec::Conv {
                    filters: 1 + rng.range(2),
                    width: 1 + rng.range(2),
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { output: out },
            ],
            2 => vec![
                LayerSpec::FullyConnected {
                    output: 3 + rng.range(6),
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { output: out },
            ],
            _ => vec![
                LayerSpec::Conv {
                    filters: 1 + rng.range(3),
                    width: 1 + rng.range(2),
                    stride: 1,
                },
                LayerSpec::FullyConnected { output: out },
            ],
        };
        if shape_chain(&specs, &[f, d, d]).is_ok() {
            return (specs, d, f);
        }
    }
}

pub fn random_tensor(rng: &mut Rng64, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gauss()).collect()).unwrap()
}

/// Model with random weights AND random biases. Training init keeps biases
/// at zero, but gradient-check instances must not: a rectifier fed by an
/// all-rectified window sees exactly the bias, and a zero there would sit on
/// the relu kink no matter how often the instance is resampled.
pub fn random_model(
    specs: &[LayerSpec],
    input_shape: &[usize],
    std: f64,
    rng: &mut Rng64,
) -> ModelParams {
    let mut model = ModelParams::init(specs, input_shape, std, rng).unwrap();
    for layer in &mut model.layers {
        for v in layer.bias.data_mut() {
            *v = rng.gauss() * std;
        }
    }
    model
}

/// Minibatch loss evaluated through the forward pass only:
/// (1/b) sum_i 1/2 (Q(state_i, action_i) - target_i)^2.
pub fn batch_loss(
    model: &ModelParams,
    specs: &[LayerSpec],
    states: &[&Tensor],
    actions: &[usize],
    targets: &[f64],
) -> f64 {
    let b = states.len() as f64;
    let mut loss = 0.0;
    for ((state, &action), &target) in states.iter().zip(actions).zip(targets) {
        let q = forward(model, specs, state).unwrap();
        let r = q.data()[action] - target;
        loss += 0.5 * r * r;
    }
    loss / b
}

/// Central finite-difference gradient of the minibatch loss, flattened in
/// model order. Step h is applied to one parameter at a time.
pub fn finite_difference_grad(
    model: &ModelParams,
    specs: &[LayerSpec],
    input_shape: &[usize],
    states: &[&Tensor],
    actions: &[usize],
    targets: &[f64],
    h: f64,
) -> Vec<f64> {
    let flat = model.flatten();
    let mut grad = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += h;
        let mut minus = flat.clone();
        minus[i] -= h;
        let mp = ModelParams::from_flat(specs, input_shape, &plus, 0).unwrap();
        let mm = ModelParams::from_flat(specs, input_shape, &minus, 0).unwrap();
        let lp = batch_loss(&mp, specs, states, actions, targets);
        let lm = batch_loss(&mm, specs, states, actions, targets);
        grad.push((lp - lm) / (2.0 * h));
    }
    grad
}

/// Smallest |pre-activation| feeding any rectifier across the batch. Finite
/// differences are invalid across the relu kink, so gradient-check instances
/// keep this margin comfortably above the probe step.
pub fn min_relu_margin(
    model: &ModelParams,
    specs: &[LayerSpec],
    states: &[&Tensor],
) -> f64 {
    let mut margin = f64::INFINITY;
    for state in states {
        let mut current = (*state).clone();
        let mut param_idx = 0;
        for spec in specs {
            match *spec {
                LayerSpec::Conv { stride, .. } => {
                    let layer = &model.layers[param_idx];
                    param_idx += 1;
                    current = crate::nncore::layers::conv_forward(
                        &current,
                        &layer.weight,
                        &layer.bias,
                        stride,
                    )
                    .unwrap();
                }
                LayerSpec::FullyConnected { .. } => {
                    let layer = &model.layers[param_idx];
                    param_idx += 1;
                    current =
                        crate::nncore::layers::fc_forward(&current, &layer.weight, &layer.bias)
                            .unwrap();
                }
                LayerSpec::Relu => {
                    for &v in current.data() {
                        margin = margin.min(v.abs());
                    }
                    current = crate::nncore::layers::relu(&current);
                }
            }
        }
    }
    margin
}

/// Relative error between an analytic and a finite-difference coordinate,
/// with an absolute floor so that near-zero pairs do not blow up the ratio.
pub fn grad_rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        0.0
    } else {
        (analytic - numeric).abs() / scale.max(1e-6)
    }
}
