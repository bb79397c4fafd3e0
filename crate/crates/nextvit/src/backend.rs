//! Execution backends for block forwards.
//!
//! Block code is written once against [`Backend`] and runs either on
//! [`Eval`] (plain tensors, selectable conv strategy and worker count) or on
//! a [`Tape`] (records every op for reverse-mode differentiation). This is
//! what lets the gradient suite check the exact same block code the model
//! runs in production.

use crate::error::Result;
use crate::ops::{self, ConvAlgo};
use crate::params::{BatchNormParams, ConvParams, LayerNormParams, LinearParams};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Shape, Tensor};

pub trait Backend<T: Scalar> {
    type Value: Clone;

    /// Bring a constant tensor into the backend's value domain.
    fn lift(&mut self, t: Tensor<T>) -> Self::Value;
    fn shape(&self, v: &Self::Value) -> Shape;

    fn conv2d(&mut self, x: &Self::Value, p: &ConvParams<T>) -> Result<Self::Value>;
    fn batch_norm(&mut self, x: &Self::Value, p: &BatchNormParams<T>) -> Result<Self::Value>;
    fn layer_norm(&mut self, x: &Self::Value, p: &LayerNormParams<T>) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn gelu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn avg_pool2d_ceil(&mut self, x: &Self::Value, k: usize, stride: usize) -> Result<Self::Value>;
    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn linear(&mut self, x: &Self::Value, p: &LinearParams<T>) -> Result<Self::Value>;
    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn transpose(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, x: &Self::Value, alpha: T) -> Result<Self::Value>;
    fn softmax_rows(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn concat_channels(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn tokens_from_nchw(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn nchw_from_tokens(
        &mut self,
        x: &Self::Value,
        n: usize,
        c: usize,
        h: usize,
        w: usize,
    ) -> Result<Self::Value>;
    fn slice_mat(
        &mut self,
        x: &Self::Value,
        r0: usize,
        rows: usize,
        c0: usize,
        cols: usize,
    ) -> Result<Self::Value>;
    fn concat_rows(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn concat_cols(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sum_all(&mut self, x: &Self::Value) -> Result<Self::Value>;
}

/// Direct tensor evaluation; the inference backend.
#[derive(Copy, Clone, Debug)]
pub struct Eval {
    pub algo: ConvAlgo,
    pub workers: usize,
}

impl Default for Eval {
    fn default() -> Self {
        Eval { algo: ConvAlgo::Im2col, workers: 1 }
    }
}

impl Eval {
    pub fn new(algo: ConvAlgo, workers: usize) -> Self {
        Eval { algo, workers: workers.max(1) }
    }

    /// Im2col with one worker per available core.
    pub fn parallel() -> Self {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(16);
        Eval { algo: ConvAlgo::Im2col, workers }
    }
}

impl<T: Scalar> Backend<T> for Eval {
    type Value = Tensor<T>;

    fn lift(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn shape(&self, v: &Tensor<T>) -> Shape {
        v.shape()
    }

    fn conv2d(&mut self, x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
        ops::conv2d_with(x, p, self.algo, self.workers)
    }

    fn batch_norm(&mut self, x: &Tensor<T>, p: &BatchNormParams<T>) -> Result<Tensor<T>> {
        ops::batch_norm_infer(x, p)
    }

    fn layer_norm(&mut self, x: &Tensor<T>, p: &LayerNormParams<T>) -> Result<Tensor<T>> {
        ops::layer_norm(x, p)
    }

    fn relu(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::relu(x))
    }

    fn gelu(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::gelu(x))
    }

    fn avg_pool2d_ceil(&mut self, x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
        ops::avg_pool2d_ceil(x, k, stride)
    }

    fn global_avg_pool(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::global_avg_pool(x)
    }

    fn linear(&mut self, x: &Tensor<T>, p: &LinearParams<T>) -> Result<Tensor<T>> {
        ops::linear(x, p)
    }

    fn matmul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::matmul(a, b)
    }

    fn transpose(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::transpose(x)
    }

    fn scale(&mut self, x: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
        Ok(ops::scale(x, alpha))
    }

    fn softmax_rows(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::softmax_rows(x)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::add(a, b)
    }

    fn concat_channels(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::concat_channels(a, b)
    }

    fn tokens_from_nchw(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::tokens_from_nchw(x))
    }

    fn nchw_from_tokens(
        &mut self,
        x: &Tensor<T>,
        n: usize,
        c: usize,
        h: usize,
        w: usize,
    ) -> Result<Tensor<T>> {
        ops::nchw_from_tokens(x, n, c, h, w)
    }

    fn slice_mat(
        &mut self,
        x: &Tensor<T>,
        r0: usize,
        rows: usize,
        c0: usize,
        cols: usize,
    ) -> Result<Tensor<T>> {
        ops::slice_mat(x, r0, rows, c0, cols)
    }

    fn concat_rows(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::concat_rows(a, b)
    }

    fn concat_cols(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::concat_cols(a, b)
    }

    fn sum_all(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::sum_all(x))
    }
}

impl<T: Scalar> Backend<T> for Tape<T> {
    type Value = ValueId;

    fn lift(&mut self, t: Tensor<T>) -> ValueId {
        self.input(t)
    }

    fn shape(&self, v: &ValueId) -> Shape {
        self.value(*v).expect("value recorded on this tape").shape()
    }

    fn conv2d(&mut self, x: &ValueId, p: &ConvParams<T>) -> Result<ValueId> {
        Tape::conv2d(self, *x, p)
    }

    fn batch_norm(&mut self, x: &ValueId, p: &BatchNormParams<T>) -> Result<ValueId> {
        Tape::batch_norm(self, *x, p)
    }

    fn layer_norm(&mut self, x: &ValueId, p: &LayerNormParams<T>) -> Result<ValueId> {
        Tape::layer_norm(self, *x, p)
    }

    fn relu(&mut self, x: &ValueId) -> Result<ValueId> {
        Tape::relu(self, *x)
    }

    fn gelu(&mut self, x: &ValueId) -> Result<ValueId> {
        Tape::gelu(self, *x)
    }

    fn avg_pool2d_ceil(&mut self, x: &ValueId, k: usize, stride: usize) -> Result<ValueId> {
        Tape::avg_pool2d_ceil(self, *x, k, stride)
    }

    fn global_avg_pool(&mut self, x: &ValueId) -> Result<ValueId> {
        Tape::global_avg_pool(self, *x)
    }

    fn linear(&mut self, x: &ValueId, p: &LinearParams<T>) -> Result<ValueId> {
        Tape::linear(self, *x, p)
    }

    fn matmul(&mut self, a: &ValueId, b: &ValueId) -> Result<ValueId> {
        Tape::matmul(self, *a, *b)
    }

    fn transpose(&mut self, x: &ValueId) -> Result<ValueId> {
        Tape::transpose(self, *x)
    }

    fn scale(&mut self, x: &ValueId, alpha: T) -> Result<ValueId> {
        Tape::scale(self, *x, alpha)
    }

    fn softmax_rows(&mut self, x: &ValueId) -> Result<ValueId> {
        Tape::softmax_rows(self, *x)
    }

    fn add(&mut self, a: &ValueId, b: &ValueId) -> Result<ValueId> {
        Tape::add(self, *a, *b)
    }

    fn concat_channels(&mut self, a: &ValueId, b: &ValueId) -> Result<ValueId> {
        Tape::concat_channels(self, *a, *b)
    }

    fn tokens_from_nchw(&mut self, x: &ValueId) -> Result<ValueId> {
        Tape::tokens_from_nchw(self, *x)
    }

    fn nchw_from_tokens(
        &mut self,
        x: &ValueId,
        n: usize,
        c: usize,
        h: usize,
        w: usize,
    ) -> Result<ValueId> {
        Tape::nchw_from_tokens(self, *x, n, c, h, w)
    }

    fn slice_mat(
        &mut self,
        x: &ValueId,
        r0: usize,
        rows: usize,
        c0: usize,
        cols: usize,
    ) -> Result<ValueId> {
        Tape::slice_mat(self, *x, r0, rows, c0, cols)
    }

    fn concat_rows(&mut self, a: &ValueId, b: &ValueId) -> Result<ValueId> {
        Tape::concat_rows(self, *a, *b)
    }

    fn concat_cols(&mut self, a: &ValueId, b: &ValueId) -> Result<ValueId> {
        Tape::concat_cols(self, *a, *b)
    }

    fn sum_all(&mut self, x: &ValueId) -> Result<ValueId> {
        Tape::sum_all(self, *x)
    }
}
