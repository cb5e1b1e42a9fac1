//! Minimal deterministic tensor kernel.
//!
//! Row-major `f32` tensors, the five layer kinds the detector networks are
//! built from (convolution, PReLU, max pooling, dense, softmax), forward and
//! backward passes for each, and a plain SGD trainer for toy-scale fitting.

mod layers;
mod network;
mod train;

pub use layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2d,
    maxpool2d_backward, prelu, prelu_backward, softmax, softmax_backward, Conv2d, Dense,
    LayerSpec, MaxPool2d, PRelu, Softmax,
};
pub use network::{ArchSize, Head, HeadKind, NetKind, NetOutput, NetworkSpec};
pub use train::{loss, loss_and_gradients, train_step, LossWeights, Sample};

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major array of `f32` with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::usage(format!("tensor shape {shape:?} has a zero extent")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Values drawn uniformly from `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape("chw", &self.shape, &[0, 0, 0])),
        }
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> f32 {
        let (_, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
