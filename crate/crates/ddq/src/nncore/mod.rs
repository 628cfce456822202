//! From-scratch dense tensor and neural-network engine: valid convolution,
//! rectifier and fully-connected layers, a forward pass producing Q-values
//! for all actions, and backpropagation producing parameter gradients.
//!
//! Forward and backward are pure functions of (model, inputs) and are safe to
//! call concurrently; model values are plain data and cheap to copy between
//! threads.

mod checkpoint;
mod layers;
mod model;
mod net;
mod tensor;
pub mod testing;

pub use checkpoint::{load_model, save_model};
pub use layers::{conv_forward, fc_forward, relu, shape_chain, LayerSpec};
pub use tensor::Tensor;
pub use model::{digest_flat, Gradient, LayerParams, ModelParams};
pub use net::{backward, backward_seq, fc_param_count, forward, param_count};
#[cfg(feature = "parallel")]
pub use net::backward_par;

/// The stock architecture: 4 stacked 32x32 frames into
/// Conv(16, 4x4, stride 2) -> ReLU -> Conv(32, 3x3) -> ReLU -> FC(128) ->
/// ReLU -> FC(actions).
pub fn default_architecture(actions: usize) -> Vec<LayerSpec> {
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
        LayerSpec::FullyConnected { output: actions },
    ]
}
