//! Plain dense tensors: row-major values plus a shape.
//!
//! `Tensor` is inert data. Recorded computation lives on [`crate::tape::Tape`].

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    values: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, values: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {:?} implies {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, values: vec![F::zero(); numel] }
    }

    pub fn scalar(v: F) -> Self {
        Tensor { shape: vec![], values: vec![v] }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let n = rows.len();
        let c = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(n * c);
        for r in rows {
            assert_eq!(r.len(), c, "ragged rows");
            values.extend_from_slice(r);
        }
        Tensor { shape: vec![n, c], values }
    }

    /// Uniform init in ±sqrt(1/fan_in), seed-controlled by the caller's rng.
    pub fn uniform_init<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        let numel = shape.iter().product();
        let values = (0..numel)
            .map(|_| F::of(rng.gen_range(-bound..bound)))
            .collect();
        Tensor { shape, values }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Element of a rank-2 tensor.
    pub fn at(&self, row: usize, col: usize) -> F {
        debug_assert_eq!(self.shape.len(), 2);
        self.values[row * self.shape[1] + col]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Lossy elementwise cast between scalar types.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| G::of(v.as_f64())).collect(),
        }
    }
}
