//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain row-major value type with no graph attachment; it is
//! what parameters, images and batches are made of, and it is safe to share
//! read-only across threads. Differentiable computation happens on a [`Tape`]:
//! ops append nodes, `backward` walks them in reverse insertion order (which
//! is reverse topological order by construction) and accumulates gradients
//! additively.
//!
//! Everything is 64-bit and single-threaded, so identical inputs produce
//! bit-identical outputs.

pub mod check;
mod error;
mod gemm;
mod tape;

pub use error::TensorError;
pub use tape::{softplus, Tape, Var};

/// Dense n-dimensional array of f64 in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NonScalarLoss {
                numel: self.data.len(),
            })
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row-wise softmax of a `[rows, cols]` matrix, stabilized by
    /// max-subtraction so saturated logits cannot overflow.
    pub fn softmax_rows(&self) -> Result<Tensor, TensorError> {
        if self.shape.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "softmax_rows",
                shape: self.shape.clone(),
                reason: "expected a 2-d tensor".into(),
            });
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &self.data[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..cols {
                let e = (row[c] - max).exp();
                out[r * cols + c] = e;
                sum += e;
            }
            for c in 0..cols {
                out[r * cols + c] /= sum;
            }
        }
        Tensor::from_vec(vec![rows, cols], out)
    }

    /// Index of the largest value in each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>, TensorError> {
        if self.shape.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "argmax_rows",
                shape: self.shape.clone(),
                reason: "expected a 2-d tensor".into(),
            });
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &self.data[r * cols..(r + 1) * cols];
            let mut best = 0;
            for c in 1..cols {
                if row[c] > row[best] {
                    best = c;
                }
            }
            out.push(best);
        }
        Ok(out)
    }
}
