//! Dense f64 tensors with a reverse-mode tape, the layers and optimizer the
//! graph networks need, and a versioned checkpoint format.

mod checkpoint;
mod layers;
mod loss;
mod optim;
mod params;
mod tape;

pub use checkpoint::{Checkpoint, CheckpointError, NamedArray, CHECKPOINT_VERSION};
pub use layers::{check_layer_gradients, BatchNorm, BnUpdate, Dense, ForwardCtx, GruCell, Layer, LayerGradCheck, LayerKind, LayerSpec, Mode};
pub use loss::{pos_weights, weighted_bce, PosWeightStrategy};
pub use optim::{adam_step, AdamConfig, CosineRestarts, OptimizerState};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("non-finite value")]
    NonFinite,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}

/// Row-major dense array. Rank-1 tensors behave as a single row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength { shape, len: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_parts(vec![1, 1], vec![value])
    }

    /// A `[1, n]` row.
    pub fn row(values: Vec<f64>) -> Tensor {
        Tensor::from_parts(vec![1, values.len()], values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor, TensorError> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Invalid("ragged rows".into()));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (rows, cols) view of a rank-1 or rank-2 tensor.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Tensor::from_parts(vec![m, n], matmul_raw(&self.data, &other.data, m, k, n)))
    }

    pub fn transpose(&self) -> Tensor {
        let (m, n) = self.dims2();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::from_parts(vec![n, m], out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// C[m,n] = A[m,k] · B[k,n], all row-major.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m <= 8 {
        // few rows: stream each row of B once and keep C in cache
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            for i in 0..m {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (cv, bv) in c[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
        return c;
    }
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C[m,n] = A[m,k] · B[n,k]ᵀ.
pub(crate) fn matmul_bt_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// C[k,n] = A[m,k]ᵀ · B[m,n].
pub(crate) fn matmul_at_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Five-point central difference of `f` at 0 with step `h`.
pub fn five_point_derivative(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

#[cfg(test)]
pub(crate) fn five_point(f: impl FnMut(f64) -> f64) -> f64 {
    five_point_derivative(f, 1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert_eq!(Tensor::new(vec![1], vec![f64::NAN]), Err(TensorError::NonFinite));
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0, 0.5], vec![-1.0, 2.0], vec![0.0, 3.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[-1.0, 13.5, -1.0, 30.0]);
        let bt = b.transpose();
        assert_eq!(matmul_bt_raw(a.data(), bt.data(), 2, 3, 2), c.data());
        let at = a.transpose();
        assert_eq!(matmul_at_raw(at.data(), b.data(), 3, 2, 2), c.data());
        assert!(a.matmul(&a).is_err());
    }
}
