//! Layer definitions and the forward/backward kernels for each layer kind.
//!
//! All convolutions are "valid" (no padding); the output spatial size must
//! come out as a positive integer or the chain is rejected at configuration
//! time.

use crate::error::{Error, Result};
use crate::nncore::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// 2-d convolution with square filters: `filters` output channels,
    /// `width` x `width` kernels, the given stride.
    Conv {
        filters: usize,
        width: usize,
        stride: usize,
    },
    /// Dense affine layer with `output` units; flattens its input.
    FullyConnected { output: usize },
    Relu,
}

impl LayerSpec {
    /// Output shape of this layer for the given input shape, or a
    /// configuration error when the dimensions do not work out.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                filters,
                width,
                stride,
            } => {
                if filters == 0 || width == 0 || stride == 0 {
                    return Err(Error::Config(format!(
                        "conv layer needs positive filters/width/stride, got {self:?}"
                    )));
                }
                if input.len() != 3 {
                    return Err(Error::Config(format!(
                        "conv layer expects a CxHxW input, got shape {input:?}"
                    )));
                }
                let (h, w) = (input[1], input[2]);
                let out_h = conv_out_dim(h, width, stride)?;
                let out_w = conv_out_dim(w, width, stride)?;
                Ok(vec![filters, out_h, out_w])
            }
            LayerSpec::FullyConnected { output } => {
                if output == 0 {
                    return Err(Error::Config("fully-connected output size is 0".into()));
                }
                Ok(vec![output])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
        }
    }

    pub fn has_params(&self) -> bool {
        !matches!(self, LayerSpec::Relu)
    }

    /// Shapes of (weight, bias) for this layer given its input shape.
    pub fn param_shapes(&self, input: &[usize]) -> Result<Option<(Vec<usize>, Vec<usize>)>> {
        match *self {
            LayerSpec::Conv { filters, width, .. } => {
                let channels = input[0];
                Ok(Some((vec![filters, channels, width, width], vec![filters])))
            }
            LayerSpec::FullyConnected { output } => {
                let d: usize = input.iter().product();
                Ok(Some((vec![output, d], vec![output])))
            }
            LayerSpec::Relu => Ok(None),
        }
    }
}

fn conv_out_dim(input: usize, width: usize, stride: usize) -> Result<usize> {
    if width > input {
        return Err(Error::Config(format!(
            "filter width {width} exceeds input extent {input}"
        )));
    }
    if (input - width) % stride != 0 {
        return Err(Error::Config(format!(
            "conv geometry ({input} - {width}) not divisible by stride {stride}"
        )));
    }
    Ok((input - width) / stride + 1)
}

/// Walks a layer chain from `input` and returns every intermediate shape,
/// starting with `input` itself and ending with the network output shape.
pub fn shape_chain(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input.to_vec()];
    for spec in specs {
        let next = spec.output_shape(shapes.last().unwrap())?;
        shapes.push(next);
    }
    Ok(shapes)
}

/// Elementwise rectifier: max(0, x).
pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub(crate) fn relu_backward(input: &Tensor, dout: &Tensor) -> Tensor {
    let mut dx = dout.clone();
    for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Valid convolution of a CxHxW input with NxCxKxK filters.
pub fn conv_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (ws, is) = (weights.shape(), input.shape());
    if ws.len() != 4 || is.len() != 3 || bias.shape() != [ws[0]] || ws[1] != is[0] {
        return Err(Error::Shape(format!(
            "conv shapes disagree: input {is:?}, weights {ws:?}, bias {:?}",
            bias.shape()
        )));
    }
    let (filters, channels, k) = (ws[0], ws[1], ws[2]);
    let out_h = conv_out_dim(is[1], k, stride)?;
    let out_w = conv_out_dim(is[2], k, stride)?;

    let mut out = Tensor::zeros(vec![filters, out_h, out_w]);
    let x = input.data();
    let w = weights.data();
    let b = bias.data();
    for n in 0..filters {
        for i in 0..out_h {
            for j in 0..out_w {
                let mut acc = b[n];
                for c in 0..channels {
                    for p in 0..k {
                        let row = input.idx3(c, i * stride + p, j * stride);
                        let wrow = weights.idx4(n, c, p, 0);
                        for q in 0..k {
                            acc += w[wrow + q] * x[row + q];
                        }
                    }
                }
                let o = out.idx3(n, i, j);
                out.data_mut()[o] = acc;
            }
        }
    }
    Ok(out)
}

/// Backward pass of the valid convolution. Accumulates the weight and bias
/// gradients in place and returns the gradient with respect to the input.
pub(crate) fn conv_backward(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    dout: &Tensor,
    dweights: &mut Tensor,
    dbias: &mut Tensor,
) -> Tensor {
    let ws = weights.shape().to_vec();
    let (filters, channels, k) = (ws[0], ws[1], ws[2]);
    let (out_h, out_w) = (dout.shape()[1], dout.shape()[2]);

    let mut dx = Tensor::zeros(input.shape().to_vec());
    let x = input.data();
    let w = weights.data();
    let dy = dout.data();
    for n in 0..filters {
        for i in 0..out_h {
            for j in 0..out_w {
                let g = dy[dout.idx3(n, i, j)];
                dbias.data_mut()[n] += g;
                for c in 0..channels {
                    for p in 0..k {
                        let row = input.idx3(c, i * stride + p, j * stride);
                        let wrow = weights.idx4(n, c, p, 0);
                        for q in 0..k {
                            dweights.data_mut()[wrow + q] += g * x[row + q];
                            dx.data_mut()[row + q] += g * w[wrow + q];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Dense layer: output = weights . input + bias, flattening the input.
pub fn fc_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = input.numel();
    let ws = weights.shape();
    if ws.len() != 2 || ws[1] != d || bias.shape() != [ws[0]] {
        return Err(Error::Shape(format!(
            "fc shapes disagree: input {d} elements, weights {ws:?}, bias {:?}",
            bias.shape()
        )));
    }
    let h = ws[0];
    let mut out = Tensor::zeros(vec![h]);
    let x = input.data();
    let w = weights.data();
    for row in 0..h {
        let mut acc = bias.data()[row];
        let base = row * d;
        for col in 0..d {
            acc += w[base + col] * x[col];
        }
        out.data_mut()[row] = acc;
    }
    Ok(out)
}

pub(crate) fn fc_backward(
    input: &Tensor,
    weights: &Tensor,
    dout: &Tensor,
    dweights: &mut Tensor,
    dbias: &mut Tensor,
) -> Tensor {
    let d = input.numel();
    let h = weights.shape()[0];
    let mut dx = Tensor::zeros(input.shape().to_vec());
    let x = input.data();
    let w = weights.data();
    let dy = dout.data();
    for row in 0..h {
        let g = dy[row];
        dbias.data_mut()[row] += g;
        let base = row * d;
        for col in 0..d {
            dweights.data_mut()[base + col] += g * x[col];
            dx.data_mut()[col] += g * w[base + col];
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_examples() {
        let t = Tensor::new(vec![3], vec![3.0, -2.0, 0.0]).unwrap();
        assert_eq!(relu(&t).data(), &[3.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_zero_input_leaves_bias() {
        let input = Tensor::zeros(vec![1, 3, 3]);
        let weights = Tensor::filled(vec![1, 1, 2, 2], 1.0);
        let bias = Tensor::new(vec![1], vec![0.5]).unwrap();
        let out = conv_forward(&input, &weights, &bias, 1).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn conv_degenerate_is_scalar_affine() {
        let input = Tensor::new(vec![1, 1, 1], vec![3.0]).unwrap();
        let weights = Tensor::new(vec![1, 1, 1, 1], vec![-2.0]).unwrap();
        let bias = Tensor::new(vec![1], vec![0.25]).unwrap();
        let out = conv_forward(&input, &weights, &bias, 1).unwrap();
        assert_eq!(out.data(), &[3.0 * -2.0 + 0.25]);
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        // 1x3x3 input, one 2x2 filter, stride 1: each output element is the
        // dot product of the window with the filter, computed by hand here.
        let input = Tensor::new(
            vec![1, 3, 3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let weights = Tensor::new(vec![1, 1, 2, 2], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let bias = Tensor::new(vec![1], vec![0.0]).unwrap();
        let out = conv_forward(&input, &weights, &bias, 1).unwrap();

        let win = |a: f64, b: f64, c: f64, d: f64| a - b + 0.5 * c + 2.0 * d;
        let expect = [
            win(1.0, 2.0, 4.0, 5.0),
            win(2.0, 3.0, 5.0, 6.0),
            win(4.0, 5.0, 7.0, 8.0),
            win(5.0, 6.0, 8.0, 9.0),
        ];
        assert_eq!(out.data(), &expect);
    }

    #[test]
    fn conv_rejects_bad_geometry() {
        let input = Tensor::zeros(vec![1, 4, 4]);
        let weights = Tensor::zeros(vec![1, 1, 3, 3]);
        let bias = Tensor::zeros(vec![1]);
        // (4 - 3) not divisible by stride 2.
        assert!(conv_forward(&input, &weights, &bias, 2).is_err());
        let mismatched = Tensor::zeros(vec![1, 2, 3, 3]);
        assert!(conv_forward(&input, &mismatched, &bias, 1).is_err());
    }

    #[test]
    fn fc_identity_and_bias() {
        let x = Tensor::new(vec![2], vec![4.0, -1.0]).unwrap();
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero_bias = Tensor::zeros(vec![2]);
        assert_eq!(fc_forward(&x, &eye, &zero_bias).unwrap().data(), x.data());

        let zero_x = Tensor::zeros(vec![2]);
        let bias = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        assert_eq!(
            fc_forward(&zero_x, &eye, &bias).unwrap().data(),
            bias.data()
        );
    }

    #[test]
    fn fc_hand_matrix_multiply() {
        let x = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::zeros(vec![2]);
        assert_eq!(fc_forward(&x, &w, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn shape_chain_walks_the_default_style_network() {
        let specs = [
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
            LayerSpec::FullyConnected { output: 4 },
        ];
        let shapes = shape_chain(&specs, &[4, 32, 32]).unwrap();
        assert_eq!(shapes[1], vec![16, 15, 15]);
        assert_eq!(shapes[3], vec![32, 13, 13]);
        assert_eq!(shapes.last().unwrap(), &vec![4]);
    }
}
