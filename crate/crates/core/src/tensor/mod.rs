//! Dense f64 arrays with reverse-mode differentiation over a recorded tape.
//!
//! Layout is row-major; image-like tensors are stored `[height, width, channels]`
//! so that the pixel-flattened view `[height * width, channels]` is a free reshape.

mod checkpoint;
mod conv;
mod gemm;
mod graph;
pub mod ops;
mod optim;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::conv3x3;
pub use gemm::gemm;
pub use graph::{Backward, Gradients, Graph, NodeId};
pub use optim::Adam;
pub use params::{Param, ParamId, ParamStore};

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::Config(format!("tensor rank must be 1..={MAX_RANK}, got {}", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::Config(format!("zero extent in shape {dims:?}")));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

/// A dense real-valued array of rank 1..=4 with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::dim("from_vec", dims, &[data.len()]));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Ok(Tensor { shape, data: vec![0.0; n], grad: None })
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        t.data.fill(value);
        Ok(t)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Shape(vec![1]), data: vec![value], grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut Vec<f64> {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(Error::dim("reshape", self.shape(), dims));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Extents of an image-like tensor `[h, w, c]`.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match *self.shape() {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::dim("hwc", self.shape(), &[0, 0, 0])),
        }
    }

    /// Extents of a matrix `[rows, cols]`.
    pub fn matrix(&self) -> Result<(usize, usize)> {
        match *self.shape() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim("matrix", self.shape(), &[0, 0])),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}
