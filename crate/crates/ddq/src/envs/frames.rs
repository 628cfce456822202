//! Frame preprocessing and stacking.
//!
//! The board renders directly to a single grayscale channel, so
//! preprocessing reduces to resampling the n x n image to the network input
//! width d by area-weighted averaging. The state fed to the network stacks
//! the last four frames; at episode start the initial frame is replicated.

use crate::error::{Error, Result};
use crate::nncore::Tensor;

/// Resamples a square image to `d x d` by area-weighted averaging. Constant
/// images stay constant, values stay inside the input range, and `n == d` is
/// the identity.
pub fn preprocess(raw: &Tensor, d: usize) -> Result<Tensor> {
    let shape = raw.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Shape(format!(
            "preprocess expects a square image, got {shape:?}"
        )));
    }
    let n = shape[0];
    if d == 0 {
        return Err(Error::Config("target width must be positive".into()));
    }
    let scale = n as f64 / d as f64;
    let src = raw.data();
    let mut out = Tensor::zeros(vec![d, d]);
    for i in 0..d {
        let y0 = i as f64 * scale;
        let y1 = (i + 1) as f64 * scale;
        for j in 0..d {
            let x0 = j as f64 * scale;
            let x1 = (j + 1) as f64 * scale;
            let mut vsum = 0.0;
            let mut wsum = 0.0;
            let r_start = y0.floor() as usize;
            let r_end = (y1.ceil() as usize).min(n);
            let c_start = x0.floor() as usize;
            let c_end = (x1.ceil() as usize).min(n);
            for r in r_start..r_end {
                let wy = (y1.min((r + 1) as f64) - y0.max(r as f64)).max(0.0);
                if wy == 0.0 {
                    continue;
                }
                for c in c_start..c_end {
                    let wx = (x1.min((c + 1) as f64) - x0.max(c as f64)).max(0.0);
                    if wx == 0.0 {
                        continue;
                    }
                    vsum += wy * wx * src[r * n + c];
                    wsum += wy * wx;
                }
            }
            out.data_mut()[i * d + j] = vsum / wsum;
        }
    }
    Ok(out)
}

/// The last F preprocessed frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedState {
    frames: Vec<Tensor>,
    d: usize,
}

impl StackedState {
    /// Episode start: the initial frame replicated F times.
    pub fn from_initial(frame: Tensor, frame_count: usize) -> Result<Self> {
        let shape = frame.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::Shape(format!(
                "stacked frames must be square, got {shape:?}"
            )));
        }
        if frame_count == 0 {
            return Err(Error::Config("frame count must be positive".into()));
        }
        let d = shape[0];
        Ok(StackedState {
            frames: vec![frame; frame_count],
            d,
        })
    }

    /// Drops the oldest frame and appends `frame`.
    pub fn push(&mut self, frame: Tensor) -> Result<()> {
        if frame.shape() != [self.d, self.d] {
            return Err(Error::Shape(format!(
                "frame shape {:?} does not match stack width {}",
                frame.shape(),
                self.d
            )));
        }
        self.frames.remove(0);
        self.frames.push(frame);
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn width(&self) -> usize {
        self.d
    }

    /// The F x d x d network input.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.frames.len() * self.d * self.d);
        for f in &self.frames {
            data.extend_from_slice(f.data());
        }
        Tensor::new(vec![self.frames.len(), self.d, self.d], data).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_images_stay_constant() {
        let raw = Tensor::filled(vec![5, 5], 0.3);
        let out = preprocess(&raw, 3).unwrap();
        for &v in out.data() {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn same_size_is_identity() {
        let raw = Tensor::new(vec![2, 2], vec![0.1, 0.4, 0.7, 1.0]).unwrap();
        let out = preprocess(&raw, 2).unwrap();
        assert_eq!(out.data(), raw.data());
    }

    #[test]
    fn two_by_two_averages_to_half() {
        let raw = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = preprocess(&raw, 1).unwrap();
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn upsampling_preserves_bounds() {
        let mut rng = crate::rng::Rng64::seeded(3);
        let raw = Tensor::new(vec![5, 5], (0..25).map(|_| rng.f64()).collect()).unwrap();
        for d in [3, 5, 8, 16] {
            let out = preprocess(&raw, d).unwrap();
            for &v in out.data() {
                assert!((0.0..=1.0).contains(&v), "{v} out of bounds at d={d}");
            }
        }
    }

    #[test]
    fn stack_replicates_then_shifts() {
        let f = |v: f64| Tensor::filled(vec![2, 2], v);
        let mut stack = StackedState::from_initial(f(1.0), 4).unwrap();
        assert_eq!(stack.frame_count(), 4);
        let t = stack.to_tensor();
        assert_eq!(t.shape(), &[4, 2, 2]);
        assert!(t.data().iter().all(|&v| v == 1.0));

        stack.push(f(2.0)).unwrap();
        let t = stack.to_tensor();
        assert_eq!(&t.data()[..4], &[1.0; 4]);
        assert_eq!(&t.data()[12..], &[2.0; 4]);

        // Pushing four frames replaces the whole stack.
        for v in [3.0, 4.0, 5.0, 6.0] {
            stack.push(f(v)).unwrap();
        }
        let t = stack.to_tensor();
        assert_eq!(&t.data()[..4], &[3.0; 4]);
        assert_eq!(&t.data()[12..], &[6.0; 4]);
    }

    #[test]
    fn push_rejects_mismatched_frames() {
        let mut stack = StackedState::from_initial(Tensor::zeros(vec![2, 2]), 4).unwrap();
        assert!(stack.push(Tensor::zeros(vec![3, 3])).is_err());
    }
}
