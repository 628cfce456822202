//! Whole-network forward pass, minibatch loss and backpropagation.
//!
//! The minibatch gradient is assembled from fixed-size chunks of examples:
//! each chunk is accumulated sequentially in example order, and the chunk
//! partials are summed in chunk order. The parallel build evaluates chunks on
//! the rayon pool, the sequential build evaluates them in a plain loop; both
//! perform the identical sequence of floating-point operations, so the result
//! is bit-identical no matter how many threads run.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nncore::layers::{
    conv_backward, conv_forward, fc_backward, fc_forward, relu, relu_backward, shape_chain,
    LayerSpec,
};
use crate::nncore::model::{Gradient, ModelParams};
use crate::nncore::tensor::Tensor;

/// Examples accumulated sequentially per parallel work item.
const GRAD_CHUNK: usize = 4;

/// Q-values for every action in the given state: a single forward pass.
pub fn forward(model: &ModelParams, specs: &[LayerSpec], state: &Tensor) -> Result<Tensor> {
    let mut current = state.clone();
    let mut param_idx = 0;
    for spec in specs {
        current = match *spec {
            LayerSpec::Conv { stride, .. } => {
                let layer = model.layers.get(param_idx).ok_or_else(|| {
                    Error::Config("model has fewer parameter tensors than the spec chain".into())
                })?;
                param_idx += 1;
                conv_forward(&current, &layer.weight, &layer.bias, stride)?
            }
            LayerSpec::FullyConnected { .. } => {
                let layer = model.layers.get(param_idx).ok_or_else(|| {
                    Error::Config("model has fewer parameter tensors than the spec chain".into())
                })?;
                param_idx += 1;
                fc_forward(&current, &layer.weight, &layer.bias)?
            }
            LayerSpec::Relu => relu(&current),
        };
    }
    if param_idx != model.layers.len() {
        return Err(Error::Config(
            "model has more parameter tensors than the spec chain".into(),
        ));
    }
    Ok(current)
}

/// Forward pass that keeps the input to every layer, for backpropagation.
/// Returns (per-layer inputs, network output).
fn forward_trace(
    model: &ModelParams,
    specs: &[LayerSpec],
    state: &Tensor,
) -> Result<(Vec<Tensor>, Tensor)> {
    let mut inputs = Vec::with_capacity(specs.len());
    let mut current = state.clone();
    let mut param_idx = 0;
    for spec in specs {
        inputs.push(current.clone());
        current = match *spec {
            LayerSpec::Conv { stride, .. } => {
                let layer = &model.layers[param_idx];
                param_idx += 1;
                conv_forward(&current, &layer.weight, &layer.bias, stride)?
            }
            LayerSpec::FullyConnected { .. } => {
                let layer = &model.layers[param_idx];
                param_idx += 1;
                fc_forward(&current, &layer.weight, &layer.bias)?
            }
            LayerSpec::Relu => relu(&current),
        };
    }
    Ok((inputs, current))
}

/// Gradient of one example's squared-error term, accumulated into `grad`.
/// Returns this example's contribution to the minibatch loss.
fn accumulate_example(
    model: &ModelParams,
    specs: &[LayerSpec],
    state: &Tensor,
    action: usize,
    target: f64,
    batch_size: usize,
    grad: &mut Gradient,
) -> Result<f64> {
    let (inputs, q) = forward_trace(model, specs, state)?;
    if action >= q.numel() {
        return Err(Error::Usage(format!(
            "action index {action} out of range for {} outputs",
            q.numel()
        )));
    }
    let residual = q.data()[action] - target;
    let inv_b = 1.0 / batch_size as f64;
    let loss = 0.5 * residual * residual * inv_b;

    // Only the taken action's output unit receives error.
    let mut dout = Tensor::zeros(q.shape().to_vec());
    dout.data_mut()[action] = residual * inv_b;

    let mut param_idx = model.layers.len();
    for (idx, spec) in specs.iter().enumerate().rev() {
        let input = &inputs[idx];
        dout = match *spec {
            LayerSpec::Conv { stride, .. } => {
                param_idx -= 1;
                let layer = &model.layers[param_idx];
                let glayer = &mut grad.layers[param_idx];
                conv_backward(
                    input,
                    &layer.weight,
                    stride,
                    &dout,
                    &mut glayer.weight,
                    &mut glayer.bias,
                )
            }
            LayerSpec::FullyConnected { .. } => {
                param_idx -= 1;
                let layer = &model.layers[param_idx];
                let glayer = &mut grad.layers[param_idx];
                // The fc layer flattened its input; give the upstream layer
                // back its own shape.
                fc_backward(
                    input,
                    &layer.weight,
                    &dout,
                    &mut glayer.weight,
                    &mut glayer.bias,
                )
                .reshaped(input.shape().to_vec())?
            }
            LayerSpec::Relu => relu_backward(input, &dout),
        };
    }
    Ok(loss)
}

fn chunk_gradient(
    model: &ModelParams,
    specs: &[LayerSpec],
    states: &[&Tensor],
    actions: &[usize],
    targets: &[f64],
    range: std::ops::Range<usize>,
    batch_size: usize,
) -> Result<(f64, Gradient)> {
    let mut grad = Gradient::zeros_like(model);
    let mut loss = 0.0;
    for i in range {
        loss += accumulate_example(
            model,
            specs,
            states[i],
            actions[i],
            targets[i],
            batch_size,
            &mut grad,
        )?;
    }
    Ok((loss, grad))
}

fn check_batch(states: &[&Tensor], actions: &[usize], targets: &[f64]) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Usage("empty minibatch".into()));
    }
    if states.len() != actions.len() || states.len() != targets.len() {
        return Err(Error::Usage(format!(
            "minibatch slices disagree: {} states, {} actions, {} targets",
            states.len(),
            actions.len(),
            targets.len()
        )));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("minibatch target".into()));
    }
    Ok(())
}

fn chunk_ranges(len: usize) -> Vec<std::ops::Range<usize>> {
    (0..len)
        .step_by(GRAD_CHUNK)
        .map(|start| start..(start + GRAD_CHUNK).min(len))
        .collect()
}

fn combine(partials: Vec<Result<(f64, Gradient)>>) -> Result<(f64, Gradient)> {
    let mut iter = partials.into_iter();
    let (mut loss, mut grad) = iter.next().unwrap()?;
    for partial in iter {
        let (l, g) = partial?;
        loss += l;
        grad.add_assign(&g);
    }
    Ok((loss, grad))
}

/// Mean squared-error loss over the minibatch and its parameter gradient:
/// loss = (1/b) sum_i 1/2 (Q(state_i, action_i) - target_i)^2.
/// Dispatches to the rayon pool when the `parallel` feature is enabled.
pub fn backward(
    model: &ModelParams,
    specs: &[LayerSpec],
    states: &[&Tensor],
    actions: &[usize],
    targets: &[f64],
) -> Result<(f64, Gradient)> {
    #[cfg(feature = "parallel")]
    {
        backward_par(model, specs, states, actions, targets)
    }
    #[cfg(not(feature = "parallel"))]
    {
        backward_seq(model, specs, states, actions, targets)
    }
}

/// Sequential minibatch gradient. Always available; bit-identical to
/// [`backward`].
pub fn backward_seq(
    model: &ModelParams,
    specs: &[LayerSpec],
    states: &[&Tensor],
    actions: &[usize],
    targets: &[f64],
) -> Result<(f64, Gradient)> {
    check_batch(states, actions, targets)?;
    let b = states.len();
    let partials: Vec<Result<(f64, Gradient)>> = chunk_ranges(b)
        .into_iter()
        .map(|r| chunk_gradient(model, specs, states, actions, targets, r, b))
        .collect();
    combine(partials)
}

#[cfg(feature = "parallel")]
pub fn backward_par(
    model: &ModelParams,
    specs: &[LayerSpec],
    states: &[&Tensor],
    actions: &[usize],
    targets: &[f64],
) -> Result<(f64, Gradient)> {
    check_batch(states, actions, targets)?;
    let b = states.len();
    let partials: Vec<Result<(f64, Gradient)>> = chunk_ranges(b)
        .into_par_iter()
        .map(|r| chunk_gradient(model, specs, states, actions, targets, r, b))
        .collect();
    combine(partials)
}

/// Exact number of scalar parameters (weights plus biases) of the chain when
/// fed F stacked d x d frames.
pub fn param_count(specs: &[LayerSpec], d: usize, frames: usize) -> Result<usize> {
    let shapes = shape_chain(specs, &[frames, d, d])?;
    let mut count = 0;
    for (spec, input) in specs.iter().zip(&shapes) {
        if let Some((w, b)) = spec.param_shapes(input)? {
            count += w.iter().product::<usize>() + b.iter().product::<usize>();
        }
    }
    Ok(count)
}

/// Parameters held by the fully-connected layers of the chain alone.
pub fn fc_param_count(specs: &[LayerSpec], d: usize, frames: usize) -> Result<usize> {
    let shapes = shape_chain(specs, &[frames, d, d])?;
    let mut count = 0;
    for (spec, input) in specs.iter().zip(&shapes) {
        if matches!(spec, LayerSpec::FullyConnected { .. }) {
            if let Some((w, b)) = spec.param_shapes(input)? {
                count += w.iter().product::<usize>() + b.iter().product::<usize>();
            }
        }
    }
    Ok(count)
}
