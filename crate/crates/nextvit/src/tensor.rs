//! Dense rank-4 tensor in NCHW layout.
//!
//! Row-major (n, c, h, w): the last axis is contiguous. Matrices reuse the
//! same type as (rows, cols, 1, 1); scalars as (1, 1, 1, 1). Tensors are
//! immutable after construction in all public pipelines and safe to share
//! across threads.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::{Precision, Scalar};

/// (n, c, h, w) extents.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Matrix shape (rows, cols, 1, 1).
    pub fn mat(rows: usize, cols: usize) -> Self {
        Shape::new(rows, cols, 1, 1)
    }

    pub fn is_mat(&self) -> bool {
        self.h == 1 && self.w == 1
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {} (= {} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![T::zero(); shape.numel()] }
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor { shape, data: vec![v; shape.numel()] }
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: Shape::new(1, 1, 1, 1), data: vec![v] }
    }

    /// Matrix (rows, cols, 1, 1) from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(Shape::mat(rows, cols), data)
    }

    pub fn random_normal(shape: Shape, rng: &mut SplitMix64, std: f64) -> Self {
        let mut data = vec![T::zero(); shape.numel()];
        rng.fill_normal(&mut data, std);
        Tensor { shape, data }
    }

    pub fn random_uniform(shape: Shape, rng: &mut SplitMix64, lo: f64, hi: f64) -> Self {
        let mut data = vec![T::zero(); shape.numel()];
        rng.fill_uniform(&mut data, lo, hi);
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.idx(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.idx(n, c, h, w);
        self.data[i] = v;
    }

    /// Rows of a matrix-shaped tensor.
    pub fn rows(&self) -> usize {
        debug_assert!(self.shape.is_mat());
        self.shape.n
    }

    /// Cols of a matrix-shaped tensor.
    pub fn cols(&self) -> usize {
        debug_assert!(self.shape.is_mat());
        self.shape.c
    }

    #[inline]
    pub fn mat_at(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape.c + c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest |a - b| over all elements; errors on shape disagreement.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "max_abs_diff: {} vs {}",
                self.shape, other.shape
            )));
        }
        let mut m = T::zero();
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = (*a - *b).abs();
            if d > m {
                m = d;
            }
        }
        Ok(m)
    }

    /// Extract sample `i` as a (1, c, h, w) tensor.
    pub fn sample(&self, i: usize) -> Self {
        let per = self.shape.c * self.shape.h * self.shape.w;
        let data = self.data[i * per..(i + 1) * per].to_vec();
        Tensor { shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w), data }
    }

    /// Stack (1, c, h, w) samples along the batch axis.
    pub fn stack_samples(samples: &[Tensor<T>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::ShapeMismatch("stack_samples: empty sample list".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(samples.len() * s.numel());
        for t in samples {
            if t.shape != s {
                return Err(Error::ShapeMismatch(format!("stack_samples: {} vs {}", t.shape, s)));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape: Shape::new(samples.len() * s.n, s.c, s.h, s.w), data })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64((*v).to_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 7]);
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 2), (0..8).map(|i| i as f32).collect())
            .unwrap();
        assert_eq!(t.at(0, 0, 0, 1), 1.0);
        assert_eq!(t.at(0, 0, 1, 0), 2.0);
        assert_eq!(t.at(0, 1, 0, 0), 4.0);
        assert_eq!(t.at(0, 1, 1, 1), 7.0);
    }

    #[test]
    fn sample_stack_round_trip() {
        let mut rng = SplitMix64::new(3);
        let t = Tensor::<f64>::random_normal(Shape::new(3, 2, 4, 4), &mut rng, 1.0);
        let parts: Vec<_> = (0..3).map(|i| t.sample(i)).collect();
        let back = Tensor::stack_samples(&parts).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn empty_channel_tensor_is_legal() {
        let t = Tensor::<f32>::zeros(Shape::new(1, 0, 2, 2));
        assert_eq!(t.numel(), 0);
    }
}
