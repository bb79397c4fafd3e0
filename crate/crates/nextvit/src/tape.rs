//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records each op as a node holding its inputs and whatever the
//! vector-Jacobian product needs (parameters are treated as constants;
//! gradients flow to tensor inputs only). [`Tape::backward`] walks the nodes
//! in reverse from a scalar output and accumulates adjoints.
//! [`finite_diff_grad`] provides the central-difference oracle the tape is
//! checked against.

use crate::error::{Error, Result};
use crate::ops;
use crate::params::{BatchNormParams, ConvParams, LayerNormParams, LinearParams};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct ValueId(pub(crate) usize);

enum Op<T: Scalar> {
    Leaf,
    Add(ValueId, ValueId),
    ConcatChannels(ValueId, ValueId),
    SliceChannels { x: ValueId, c0: usize },
    Relu(ValueId),
    Gelu(ValueId),
    Conv2d { x: ValueId, p: Box<ConvParams<T>> },
    AvgPool { x: ValueId, k: usize, stride: usize },
    AvgPoolCeil { x: ValueId, k: usize, stride: usize },
    GlobalAvgPool(ValueId),
    BatchNorm { x: ValueId, scale: Vec<T> },
    LayerNorm { x: ValueId, p: Box<LayerNormParams<T>> },
    Linear { x: ValueId, p: Box<LinearParams<T>> },
    Matmul(ValueId, ValueId),
    Transpose(ValueId),
    Scale { x: ValueId, alpha: T },
    SoftmaxRows(ValueId),
    TokensFromNchw(ValueId),
    NchwFromTokens(ValueId),
    SliceMat { x: ValueId, r0: usize, c0: usize },
    ConcatRows(ValueId, ValueId),
    ConcatCols(ValueId, ValueId),
    SumAll(ValueId),
}

pub struct Tape<T: Scalar> {
    values: Vec<Tensor<T>>,
    nodes: Vec<Op<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { values: Vec::new(), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Record a differentiable leaf.
    pub fn input(&mut self, t: Tensor<T>) -> ValueId {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, id: ValueId) -> Result<&Tensor<T>> {
        self.values.get(id.0).ok_or(Error::NotOnTape(id.0))
    }

    fn push(&mut self, t: Tensor<T>, op: Op<T>) -> ValueId {
        self.values.push(t);
        self.nodes.push(op);
        ValueId(self.values.len() - 1)
    }

    fn get(&self, id: ValueId) -> Result<&Tensor<T>> {
        self.value(id)
    }

    // -- recorded ops -------------------------------------------------------

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let t = ops::add(self.get(a)?, self.get(b)?)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn concat_channels(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let t = ops::concat_channels(self.get(a)?, self.get(b)?)?;
        Ok(self.push(t, Op::ConcatChannels(a, b)))
    }

    pub fn slice_channels(&mut self, x: ValueId, c0: usize, len: usize) -> Result<ValueId> {
        let t = ops::slice_channels(self.get(x)?, c0, len)?;
        Ok(self.push(t, Op::SliceChannels { x, c0 }))
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        let t = ops::relu(self.get(x)?);
        Ok(self.push(t, Op::Relu(x)))
    }

    pub fn gelu(&mut self, x: ValueId) -> Result<ValueId> {
        let t = ops::gelu(self.get(x)?);
        Ok(self.push(t, Op::Gelu(x)))
    }

    pub fn conv2d(&mut self, x: ValueId, p: &ConvParams<T>) -> Result<ValueId> {
        let t = ops::conv2d_direct(self.get(x)?, p)?;
        Ok(self.push(t, Op::Conv2d { x, p: Box::new(p.clone()) }))
    }

    pub fn avg_pool2d(&mut self, x: ValueId, k: usize, stride: usize) -> Result<ValueId> {
        let t = ops::avg_pool2d(self.get(x)?, k, stride)?;
        Ok(self.push(t, Op::AvgPool { x, k, stride }))
    }

    pub fn avg_pool2d_ceil(&mut self, x: ValueId, k: usize, stride: usize) -> Result<ValueId> {
        let t = ops::avg_pool2d_ceil(self.get(x)?, k, stride)?;
        Ok(self.push(t, Op::AvgPoolCeil { x, k, stride }))
    }

    pub fn global_avg_pool(&mut self, x: ValueId) -> Result<ValueId> {
        let t = ops::global_avg_pool(self.get(x)?)?;
        Ok(self.push(t, Op::GlobalAvgPool(x)))
    }

    pub fn batch_norm(&mut self, x: ValueId, p: &BatchNormParams<T>) -> Result<ValueId> {
        let t = ops::batch_norm_infer(self.get(x)?, p)?;
        let (scale, _) = ops::bn_scale_shift(p);
        Ok(self.push(t, Op::BatchNorm { x, scale }))
    }

    pub fn layer_norm(&mut self, x: ValueId, p: &LayerNormParams<T>) -> Result<ValueId> {
        let t = ops::layer_norm(self.get(x)?, p)?;
        Ok(self.push(t, Op::LayerNorm { x, p: Box::new(p.clone()) }))
    }

    pub fn linear(&mut self, x: ValueId, p: &LinearParams<T>) -> Result<ValueId> {
        let t = ops::linear(self.get(x)?, p)?;
        Ok(self.push(t, Op::Linear { x, p: Box::new(p.clone()) }))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let t = ops::matmul(self.get(a)?, self.get(b)?)?;
        Ok(self.push(t, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, x: ValueId) -> Result<ValueId> {
        let t = ops::transpose(self.get(x)?)?;
        Ok(self.push(t, Op::Transpose(x)))
    }

    pub fn scale(&mut self, x: ValueId, alpha: T) -> Result<ValueId> {
        let t = ops::scale(self.get(x)?, alpha);
        Ok(self.push(t, Op::Scale { x, alpha }))
    }

    pub fn softmax_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let t = ops::softmax_rows(self.get(x)?)?;
        Ok(self.push(t, Op::SoftmaxRows(x)))
    }

    pub fn tokens_from_nchw(&mut self, x: ValueId) -> Result<ValueId> {
        let t = ops::tokens_from_nchw(self.get(x)?);
        Ok(self.push(t, Op::TokensFromNchw(x)))
    }

    pub fn nchw_from_tokens(
        &mut self,
        x: ValueId,
        n: usize,
        c: usize,
        h: usize,
        w: usize,
    ) -> Result<ValueId> {
        let t = ops::nchw_from_tokens(self.get(x)?, n, c, h, w)?;
        Ok(self.push(t, Op::NchwFromTokens(x)))
    }

    pub fn slice_mat(
        &mut self,
        x: ValueId,
        r0: usize,
        rows: usize,
        c0: usize,
        cols: usize,
    ) -> Result<ValueId> {
        let t = ops::slice_mat(self.get(x)?, r0, rows, c0, cols)?;
        Ok(self.push(t, Op::SliceMat { x, r0, c0 }))
    }

    pub fn concat_rows(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let t = ops::concat_rows(self.get(a)?, self.get(b)?)?;
        Ok(self.push(t, Op::ConcatRows(a, b)))
    }

    pub fn concat_cols(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let t = ops::concat_cols(self.get(a)?, self.get(b)?)?;
        Ok(self.push(t, Op::ConcatCols(a, b)))
    }

    pub fn sum_all(&mut self, x: ValueId) -> Result<ValueId> {
        let t = ops::sum_all(self.get(x)?);
        Ok(self.push(t, Op::SumAll(x)))
    }

    // -- backward -----------------------------------------------------------

    /// Adjoints of a scalar `output` with respect to every recorded value.
    pub fn backward(&self, output: ValueId) -> Result<Gradients<T>> {
        let out = self.get(output)?;
        if out.numel() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward: output must be scalar, got {}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.values.len()];
        grads[output.0] = Some(Tensor::scalar(T::one()));

        for i in (0..self.values.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.pull_back(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn pull_back(&self, node: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let acc = |grads: &mut [Option<Tensor<T>>], id: ValueId, delta: Tensor<T>| -> Result<()> {
            match &mut grads[id.0] {
                Some(existing) => {
                    *existing = ops::add(existing, &delta)?;
                }
                slot @ None => *slot = Some(delta),
            }
            Ok(())
        };

        match &self.nodes[node] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone())?;
                acc(grads, *b, g.clone())?;
            }
            Op::ConcatChannels(a, b) => {
                let ca = self.values[a.0].shape().c;
                let cb = self.values[b.0].shape().c;
                acc(grads, *a, ops::slice_channels(g, 0, ca)?)?;
                acc(grads, *b, ops::slice_channels(g, ca, cb)?)?;
            }
            Op::SliceChannels { x, c0 } => {
                let xs = self.values[x.0].shape();
                let gs = g.shape();
                let mut dx = Tensor::zeros(xs);
                let plane = xs.h * xs.w;
                for n in 0..gs.n {
                    for c in 0..gs.c {
                        let src = (n * gs.c + c) * plane;
                        let dst = (n * xs.c + c0 + c) * plane;
                        dx.data_mut()[dst..dst + plane]
                            .copy_from_slice(&g.data()[src..src + plane]);
                    }
                }
                acc(grads, *x, dx)?;
            }
            Op::Relu(x) => {
                let xin = &self.values[x.0];
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xin.data().iter()) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                acc(grads, *x, dx)?;
            }
            Op::Gelu(x) => {
                let xin = &self.values[x.0];
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xin.data().iter()) {
                    *d *= ops::gelu_grad_scalar(v);
                }
                acc(grads, *x, dx)?;
            }
            Op::Conv2d { x, p } => {
                acc(grads, *x, conv2d_input_grad(self.values[x.0].shape(), p, g))?;
            }
            Op::AvgPool { x, k, stride } => {
                let xs = self.values[x.0].shape();
                let gs = g.shape();
                let mut dx = Tensor::zeros(xs);
                let inv = T::from_f64(1.0 / (k * k) as f64);
                for n in 0..gs.n {
                    for c in 0..gs.c {
                        for oh in 0..gs.h {
                            for ow in 0..gs.w {
                                let gv = g.at(n, c, oh, ow) * inv;
                                for dh in 0..*k {
                                    for dw in 0..*k {
                                        let (ih, iw) = (oh * stride + dh, ow * stride + dw);
                                        let cur = dx.at(n, c, ih, iw);
                                        dx.set(n, c, ih, iw, cur + gv);
                                    }
                                }
                            }
                        }
                    }
                }
                acc(grads, *x, dx)?;
            }
            Op::AvgPoolCeil { x, k, stride } => {
                let xs = self.values[x.0].shape();
                let gs = g.shape();
                let mut dx = Tensor::zeros(xs);
                for n in 0..gs.n {
                    for c in 0..gs.c {
                        for oh in 0..gs.h {
                            let h0 = oh * stride;
                            let h1 = (h0 + k).min(xs.h);
                            for ow in 0..gs.w {
                                let w0 = ow * stride;
                                let w1 = (w0 + k).min(xs.w);
                                let count = ((h1 - h0) * (w1 - w0)) as f64;
                                let gv = g.at(n, c, oh, ow) * T::from_f64(1.0 / count);
                                for ih in h0..h1 {
                                    for iw in w0..w1 {
                                        let cur = dx.at(n, c, ih, iw);
                                        dx.set(n, c, ih, iw, cur + gv);
                                    }
                                }
                            }
                        }
                    }
                }
                acc(grads, *x, dx)?;
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.values[x.0].shape();
                let inv = T::from_f64(1.0 / (xs.h * xs.w) as f64);
                let mut dx = Tensor::zeros(xs);
                let plane = xs.h * xs.w;
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let gv = g.data()[n * xs.c + c] * inv;
                        let from = (n * xs.c + c) * plane;
                        for v in &mut dx.data_mut()[from..from + plane] {
                            *v = gv;
                        }
                    }
                }
                acc(grads, *x, dx)?;
            }
            Op::BatchNorm { x, scale } => {
                let xs = self.values[x.0].shape();
                let mut dx = g.clone();
                let plane = xs.h * xs.w;
                for n in 0..xs.n {
                    for (c, &sc) in scale.iter().enumerate() {
                        let from = (n * xs.c + c) * plane;
                        for v in &mut dx.data_mut()[from..from + plane] {
                            *v *= sc;
                        }
                    }
                }
                acc(grads, *x, dx)?;
            }
            Op::LayerNorm { x, p } => {
                acc(grads, *x, layer_norm_input_grad(&self.values[x.0], p, g)?)?;
            }
            Op::Linear { x, p } => {
                let xin = &self.values[x.0];
                let (t, fin, fout) = (xin.rows(), p.in_features, p.out_features);
                let mut dx = vec![T::zero(); t * fin];
                for i in 0..t {
                    let grow = &g.data()[i * fout..(i + 1) * fout];
                    let drow = &mut dx[i * fin..(i + 1) * fin];
                    for (o, &gv) in grow.iter().enumerate() {
                        if gv == T::zero() {
                            continue;
                        }
                        let wrow = &p.weight[o * fin..(o + 1) * fin];
                        for (d, &wv) in drow.iter_mut().zip(wrow.iter()) {
                            *d += gv * wv;
                        }
                    }
                }
                acc(grads, *x, Tensor::matrix(t, fin, dx)?)?;
            }
            Op::Matmul(a, b) => {
                let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                acc(grads, *a, ops::matmul(g, &ops::transpose(bv)?)?)?;
                acc(grads, *b, ops::matmul(&ops::transpose(av)?, g)?)?;
            }
            Op::Transpose(x) => {
                acc(grads, *x, ops::transpose(g)?)?;
            }
            Op::Scale { x, alpha } => {
                acc(grads, *x, ops::scale(g, *alpha))?;
            }
            Op::SoftmaxRows(x) => {
                // dx = y * (g - sum(g * y)) per row, with y the forward output.
                let y = &self.values[node];
                let (r, c) = (y.rows(), y.cols());
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    let yrow = &y.data()[i * c..(i + 1) * c];
                    let grow = &g.data()[i * c..(i + 1) * c];
                    let mut dot = T::zero();
                    for (&yv, &gv) in yrow.iter().zip(grow.iter()) {
                        dot += yv * gv;
                    }
                    let drow = &mut dx[i * c..(i + 1) * c];
                    for j in 0..c {
                        drow[j] = yrow[j] * (grow[j] - dot);
                    }
                }
                acc(grads, *x, Tensor::matrix(r, c, dx)?)?;
            }
            Op::TokensFromNchw(x) => {
                let xs = self.values[x.0].shape();
                acc(grads, *x, ops::nchw_from_tokens(g, xs.n, xs.c, xs.h, xs.w)?)?;
            }
            Op::NchwFromTokens(x) => {
                acc(grads, *x, ops::tokens_from_nchw(g))?;
            }
            Op::SliceMat { x, r0, c0 } => {
                let xin = &self.values[x.0];
                let (xr, xc) = (xin.rows(), xin.cols());
                let (gr, gc) = (g.rows(), g.cols());
                let mut dx = vec![T::zero(); xr * xc];
                for i in 0..gr {
                    for j in 0..gc {
                        dx[(r0 + i) * xc + c0 + j] = g.data()[i * gc + j];
                    }
                }
                acc(grads, *x, Tensor::matrix(xr, xc, dx)?)?;
            }
            Op::ConcatRows(a, b) => {
                let ra = self.values[a.0].rows();
                let rb = self.values[b.0].rows();
                let c = g.cols();
                acc(grads, *a, ops::slice_mat(g, 0, ra, 0, c)?)?;
                acc(grads, *b, ops::slice_mat(g, ra, rb, 0, c)?)?;
            }
            Op::ConcatCols(a, b) => {
                let ca = self.values[a.0].cols();
                let cb = self.values[b.0].cols();
                let r = g.rows();
                acc(grads, *a, ops::slice_mat(g, 0, r, 0, ca)?)?;
                acc(grads, *b, ops::slice_mat(g, 0, r, ca, cb)?)?;
            }
            Op::SumAll(x) => {
                let gv = g.data()[0];
                acc(grads, *x, Tensor::full(self.values[x.0].shape(), gv))?;
            }
        }
        Ok(())
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `id`; `None` if the value does not influence
    /// the output.
    pub fn wrt(&self, id: ValueId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn conv2d_input_grad<T: Scalar>(xs: Shape, p: &ConvParams<T>, g: &Tensor<T>) -> Tensor<T> {
    let gs = g.shape();
    let cig = p.in_channels / p.groups;
    let cog = p.out_channels / p.groups;
    let k = p.kernel;
    let mut dx = Tensor::zeros(xs);
    for n in 0..gs.n {
        for oc in 0..p.out_channels {
            let grp = oc / cog;
            for oh in 0..gs.h {
                for ow in 0..gs.w {
                    let gv = g.at(n, oc, oh, ow);
                    if gv == T::zero() {
                        continue;
                    }
                    for icg in 0..cig {
                        let ic = grp * cig + icg;
                        let wbase = ((oc * cig + icg) * k) * k;
                        for kh in 0..k {
                            let ih = (oh * p.stride + kh) as isize - p.padding as isize;
                            if ih < 0 || ih >= xs.h as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (ow * p.stride + kw) as isize - p.padding as isize;
                                if iw < 0 || iw >= xs.w as isize {
                                    continue;
                                }
                                let (ih, iw) = (ih as usize, iw as usize);
                                let cur = dx.at(n, ic, ih, iw);
                                dx.set(n, ic, ih, iw, cur + gv * p.weight[wbase + kh * k + kw]);
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn layer_norm_input_grad<T: Scalar>(
    x: &Tensor<T>,
    p: &LayerNormParams<T>,
    g: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = x.shape();
    let c = p.gamma.len();
    let plane = s.h * s.w;
    let inv_c = T::from_f64(1.0 / c as f64);
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for hw in 0..plane {
            let at = |ci: usize| (n * c + ci) * plane + hw;
            let mut mean = T::zero();
            for ci in 0..c {
                mean += x.data()[at(ci)];
            }
            mean *= inv_c;
            let mut var = T::zero();
            for ci in 0..c {
                let d = x.data()[at(ci)] - mean;
                var += d * d;
            }
            var *= inv_c;
            let inv_std = T::one() / (var + p.eps).sqrt();
            // With xhat = (x - mean) * inv_std and u = gamma * g:
            // dx = inv_std * (u - mean(u) - xhat * mean(u * xhat)).
            let mut mean_u = T::zero();
            let mut mean_ux = T::zero();
            for ci in 0..c {
                let xhat = (x.data()[at(ci)] - mean) * inv_std;
                let u = p.gamma[ci] * g.data()[at(ci)];
                mean_u += u;
                mean_ux += u * xhat;
            }
            mean_u *= inv_c;
            mean_ux *= inv_c;
            for ci in 0..c {
                let xhat = (x.data()[at(ci)] - mean) * inv_std;
                let u = p.gamma[ci] * g.data()[at(ci)];
                dx.data_mut()[at(ci)] = inv_std * (u - mean_u - xhat * mean_ux);
            }
        }
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_diff_grad<T: Scalar, F>(x: &Tensor<T>, eps: f64, mut f: F) -> Result<Tensor<T>>
where
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    let h = T::from_f64(eps);
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?.to_f64();
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?.to_f64();
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = T::from_f64((fp - fm) / (2.0 * eps));
    }
    Ok(grad)
}

/// Outcome of comparing an analytic gradient against a numeric one.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel: f64,
    pub max_abs: f64,
    pub worst_index: usize,
    pub count: usize,
}

impl GradReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel < rel_tol
    }
}

/// Element-wise relative error |a - b| / max(|a|, |b|, floor), maximized over
/// the tensor. The floor keeps near-zero entries from dominating.
pub fn compare_grads<T: Scalar>(
    analytic: &Tensor<T>,
    numeric: &Tensor<T>,
    floor: f64,
) -> Result<GradReport> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::ShapeMismatch(format!(
            "compare_grads: {} vs {}",
            analytic.shape(),
            numeric.shape()
        )));
    }
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut worst = 0usize;
    for (i, (&a, &b)) in analytic.data().iter().zip(numeric.data().iter()).enumerate() {
        let (a, b) = (a.to_f64(), b.to_f64());
        let abs = (a - b).abs();
        let rel = abs / a.abs().max(b.abs()).max(floor);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
        if abs > max_abs {
            max_abs = abs;
        }
    }
    Ok(GradReport { max_rel, max_abs, worst_index: worst, count: analytic.numel() })
}
