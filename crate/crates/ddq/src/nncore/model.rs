//! Model parameters, gradients and their flat wire representation.
//!
//! A model is an ordered list of (weight, bias) tensor pairs, one pair per
//! parameterized layer in the spec chain, plus a generation counter that the
//! parameter server bumps on every applied update. Flattening walks layers in
//! chain order and each tensor in row-major order; the wire protocol and the
//! checkpoint format both rely on that ordering.

use crate::error::{Error, Result};
use crate::nncore::layers::{shape_chain, LayerSpec};
use crate::nncore::tensor::Tensor;
use crate::rng::Rng64;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    pub generation: u64,
}

/// Same tensor structure as [`ModelParams`], holding per-parameter values
/// (gradients, or the RMSProp accumulator).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<LayerParams>,
}

fn param_shapes(specs: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let shapes = shape_chain(specs, input_shape)?;
    let mut out = Vec::new();
    for (spec, input) in specs.iter().zip(&shapes) {
        if let Some(pair) = spec.param_shapes(input)? {
            out.push(pair);
        }
    }
    Ok(out)
}

impl ModelParams {
    /// Gaussian N(0, init_std) weights, zero biases, generation 0.
    pub fn init(
        specs: &[LayerSpec],
        input_shape: &[usize],
        init_std: f64,
        rng: &mut Rng64,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for (wshape, bshape) in param_shapes(specs, input_shape)? {
            let wlen = wshape.iter().product();
            let mut wdata = Vec::with_capacity(wlen);
            for _ in 0..wlen {
                wdata.push(rng.gauss() * init_std);
            }
            layers.push(LayerParams {
                weight: Tensor::new(wshape, wdata)?,
                bias: Tensor::zeros(bshape),
            });
        }
        Ok(ModelParams {
            layers,
            generation: 0,
        })
    }

    pub fn zeros(specs: &[LayerSpec], input_shape: &[usize]) -> Result<Self> {
        let layers = param_shapes(specs, input_shape)?
            .into_iter()
            .map(|(w, b)| LayerParams {
                weight: Tensor::zeros(w),
                bias: Tensor::zeros(b),
            })
            .collect();
        Ok(ModelParams {
            layers,
            generation: 0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.numel() + l.bias.numel())
            .sum()
    }

    /// Flat parameter vector: layer order, weight before bias, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(layer.bias.data());
        }
        out
    }

    /// Rebuilds structured parameters from a flat vector, using the spec
    /// chain to recover tensor shapes.
    pub fn from_flat(
        specs: &[LayerSpec],
        input_shape: &[usize],
        flat: &[f64],
        generation: u64,
    ) -> Result<Self> {
        let shapes = param_shapes(specs, input_shape)?;
        let expected: usize = shapes
            .iter()
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum();
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} elements, architecture wants {expected}",
                flat.len()
            )));
        }
        let mut layers = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for (wshape, bshape) in shapes {
            let wlen: usize = wshape.iter().product();
            let blen: usize = bshape.iter().product();
            let weight = Tensor::new(wshape, flat[offset..offset + wlen].to_vec())?;
            offset += wlen;
            let bias = Tensor::new(bshape, flat[offset..offset + blen].to_vec())?;
            offset += blen;
            layers.push(LayerParams { weight, bias });
        }
        Ok(ModelParams { layers, generation })
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    /// FNV-1a digest of the little-endian parameter bytes. Used by the tests
    /// to compare whole model snapshots cheaply.
    pub fn digest(&self) -> u64 {
        let mut h = FNV_OFFSET;
        for layer in &self.layers {
            for v in layer.weight.data().iter().chain(layer.bias.data()) {
                fnv_f64(&mut h, *v);
            }
        }
        h
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

#[inline]
fn fnv_f64(h: &mut u64, v: f64) {
    for byte in v.to_le_bytes() {
        *h ^= byte as u64;
        *h = h.wrapping_mul(FNV_PRIME);
    }
}

/// Digest of a flat parameter vector; matches [`ModelParams::digest`] for the
/// same values in the same order.
pub fn digest_flat(flat: &[f64]) -> u64 {
    let mut h = FNV_OFFSET;
    for v in flat {
        fnv_f64(&mut h, *v);
    }
    h
}

impl Gradient {
    pub fn zeros_like(model: &ModelParams) -> Self {
        Gradient {
            layers: model
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: Tensor::zeros(l.weight.shape().to_vec()),
                    bias: Tensor::zeros(l.bias.shape().to_vec()),
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.numel() + l.bias.numel())
            .sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(layer.bias.data());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    pub fn congruent_with(&self, model: &ModelParams) -> bool {
        self.layers.len() == model.layers.len()
            && self.layers.iter().zip(&model.layers).all(|(g, m)| {
                g.weight.shape() == m.weight.shape() && g.bias.shape() == m.bias.shape()
            })
    }

    /// Elementwise accumulate, in layer order. Shapes must be congruent.
    pub fn add_assign(&mut self, other: &Gradient) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += y;
            }
            for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                *x += y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv {
                filters: 2,
                width: 2,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { output: 3 },
        ]
    }

    #[test]
    fn init_shapes_follow_the_chain() {
        let mut rng = Rng64::seeded(1);
        let m = ModelParams::init(&small_specs(), &[1, 3, 3], 0.01, &mut rng).unwrap();
        assert_eq!(m.layers.len(), 2);
        assert_eq!(m.layers[0].weight.shape(), &[2, 1, 2, 2]);
        assert_eq!(m.layers[0].bias.shape(), &[2]);
        assert_eq!(m.layers[1].weight.shape(), &[3, 8]);
        assert_eq!(m.generation, 0);
        assert!(m.layers[0].bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn flatten_round_trips() {
        let mut rng = Rng64::seeded(2);
        let specs = small_specs();
        let m = ModelParams::init(&specs, &[1, 3, 3], 0.5, &mut rng).unwrap();
        let flat = m.flatten();
        assert_eq!(flat.len(), m.param_count());
        let back = ModelParams::from_flat(&specs, &[1, 3, 3], &flat, 7).unwrap();
        assert_eq!(back.layers, m.layers);
        assert_eq!(back.generation, 7);
        assert_eq!(digest_flat(&flat), m.digest());

        assert!(ModelParams::from_flat(&specs, &[1, 3, 3], &flat[1..], 0).is_err());
    }

    #[test]
    fn flatten_order_is_layer_then_row_major() {
        let specs = vec![LayerSpec::FullyConnected { output: 2 }];
        let mut m = ModelParams::zeros(&specs, &[2]).unwrap();
        m.layers[0].weight.data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        m.layers[0].bias.data_mut().copy_from_slice(&[5.0, 6.0]);
        assert_eq!(m.flatten(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn digests_differ_on_single_bit() {
        let specs = vec![LayerSpec::FullyConnected { output: 1 }];
        let mut a = ModelParams::zeros(&specs, &[2]).unwrap();
        let d0 = a.digest();
        a.layers[0].weight.data_mut()[0] = f64::from_bits(1);
        assert_ne!(a.digest(), d0);
    }

    #[test]
    fn gradient_accumulate() {
        let specs = vec![LayerSpec::FullyConnected { output: 1 }];
        let m = ModelParams::zeros(&specs, &[2]).unwrap();
        let mut g = Gradient::zeros_like(&m);
        let mut h = Gradient::zeros_like(&m);
        h.layers[0].weight.data_mut()[0] = 2.0;
        h.layers[0].bias.data_mut()[0] = -1.0;
        g.add_assign(&h);
        g.add_assign(&h);
        assert_eq!(g.layers[0].weight.data()[0], 4.0);
        assert_eq!(g.layers[0].bias.data()[0], -2.0);
        assert!(g.congruent_with(&m));
    }
}
