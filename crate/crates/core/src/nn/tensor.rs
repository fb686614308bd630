use alloc::vec;
use alloc::vec::Vec;

use super::Scalar;
use crate::error::{bail, Result};

/// Dense NCHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<S> {
    pub dims: [usize; 4],
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor4<S> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self { dims, data: vec![S::zero(); dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<S>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            bail!(Shape, "tensor {:?} needs {n} values, got {}", dims, data.len());
        }
        Ok(Self { dims, data })
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }
    pub fn channels(&self) -> usize {
        self.dims[1]
    }
    pub fn height(&self) -> usize {
        self.dims[2]
    }
    pub fn width(&self) -> usize {
        self.dims[3]
    }
    pub fn plane(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    /// Values of sample `b`, all channels.
    pub fn sample(&self, b: usize) -> &[S] {
        let n = self.dims[1] * self.plane();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [S] {
        let n = self.dims[1] * self.plane();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn cast<T: Scalar>(&self) -> Tensor4<T> {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor4<S>) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}
