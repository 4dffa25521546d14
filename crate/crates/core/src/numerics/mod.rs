//! Dense tensors and a reverse-mode differentiation tape.
//!
//! Everything is generic over [`Scalar`] so the same model code runs in `f32`
//! for training and in `f64` when checking gradients against finite differences.

mod gradcheck;
mod rng;
mod tape;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport};
pub use rng::Rng;
pub use tape::{LstmWeights, ParamId, Tape, Var};

use crate::{Error, Result};

/// Element type of tensors.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + DivAssign + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Working precision of the trained model.
pub type Real = f32;

/// Row-major dense tensor. Vectors have a one-element shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Fills with independent draws from `uniform(lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = T::of(rng.uniform(lo, hi));
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` when viewed as a matrix; a vector is a single row.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, rest @ ..] => (*r, rest.iter().product()),
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        let (_, cols) = self.matrix_dims();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Softmax over the positions where `valid` is true (all positions when `None`).
/// Masked positions come out as exactly zero.
pub fn softmax<T: Scalar>(v: &[T], valid: Option<&[bool]>) -> Result<Vec<T>> {
    if let Some(m) = valid {
        if m.len() != v.len() {
            return Err(Error::Shape {
                op: "softmax",
                left: vec![v.len()],
                right: vec![m.len()],
            });
        }
    }
    let live = |i: usize| valid.is_none_or(|m| m[i]);
    let max = (0..v.len())
        .filter(|&i| live(i))
        .map(|i| v[i])
        .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.max(x))))
        .ok_or(Error::AllMasked)?;
    let mut out = vec![T::zero(); v.len()];
    let mut total = T::zero();
    for i in 0..v.len() {
        if live(i) {
            out[i] = (v[i] - max).exp();
            total += out[i];
        }
    }
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// Inner product with eight independent accumulators. The summation order is
/// fixed, so results are reproducible bit for bit.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_examples() {
        let u = softmax(&[1.0f64, 1.0, 1.0], None).unwrap();
        for p in u {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
        }
        let p = softmax(&[0.0f64, 2f64.ln()], None).unwrap();
        assert_abs_diff_eq!(p[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 2.0 / 3.0, epsilon = 1e-12);
        let m = softmax(&[5.0f32, 5.0], Some(&[true, false])).unwrap();
        assert_eq!(m, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_all_masked_is_an_error() {
        assert!(matches!(
            softmax(&[1.0f32, 2.0], Some(&[false, false])),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let p = softmax(&[1000.0f32, 1000.0, -1000.0], None).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0f32), 0.5);
        assert_abs_diff_eq!(sigmoid(100.0f32), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sigmoid(3f64.ln()), 0.75, epsilon = 1e-12);
        assert!(sigmoid(-1000.0f32) >= 0.0);
        assert!(sigmoid(1000.0f64).is_finite());
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..19).map(|i| 1.0 - i as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert_abs_diff_eq!(dot(&a, &b), naive, epsilon = 1e-10);
    }

    #[test]
    fn tensor_shape_is_checked() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.matrix_dims(), (2, 3));
    }
}
