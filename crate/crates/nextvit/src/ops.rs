//! Layer primitives: grouped convolution, pooling, normalization, activations,
//! linear layers, and the matrix ops attention is written in.
//!
//! All functions are pure over immutable inputs. Convolution is
//! cross-correlation (no kernel flip) with zero padding. GELU uses the tanh
//! approximation. Two convolution strategies exist (`Direct` loops and
//! `Im2col` + matmul); they agree to float reassociation error and either can
//! be selected by the caller.

use crate::error::{Error, Result};
use crate::params::{BatchNormParams, ConvParams, LayerNormParams, LinearParams};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Convolution implementation strategy.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Default)]
pub enum ConvAlgo {
    Direct,
    #[default]
    Im2col,
}

impl std::str::FromStr for ConvAlgo {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "direct" => Ok(ConvAlgo::Direct),
            "im2col" => Ok(ConvAlgo::Im2col),
            other => Err(format!("unknown conv algorithm `{other}` (direct|im2col)")),
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("add: {} vs {}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Concatenate along the channel axis; channels of `a` precede channels of `b`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::ShapeMismatch(format!("concat_channels: {sa} vs {sb}")));
    }
    let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let plane = sa.h * sa.w;
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..sa.n {
        let a_from = n * sa.c * plane;
        data.extend_from_slice(&a.data()[a_from..a_from + sa.c * plane]);
        let b_from = n * sb.c * plane;
        data.extend_from_slice(&b.data()[b_from..b_from + sb.c * plane]);
    }
    Tensor::from_vec(out_shape, data)
}

/// Channels [c0, c0+len) of every sample.
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, c0: usize, len: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if c0 + len > s.c {
        return Err(Error::ShapeMismatch(format!(
            "slice_channels: [{c0}, {}) out of {} channels",
            c0 + len,
            s.c
        )));
    }
    let plane = s.h * s.w;
    let mut data = Vec::with_capacity(s.n * len * plane);
    for n in 0..s.n {
        let from = (n * s.c + c0) * plane;
        data.extend_from_slice(&x.data()[from..from + len * plane]);
    }
    Tensor::from_vec(Shape::new(s.n, len, s.h, s.w), data)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c0 = T::from_f64(0.7978845608028654); // sqrt(2/pi)
    let c1 = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    x.map(|v| {
        let inner = c0 * (v + c1 * v * v * v);
        half * v * (T::one() + inner.tanh())
    })
}

pub(crate) fn gelu_grad_scalar<T: Scalar>(v: T) -> T {
    let c0 = T::from_f64(0.7978845608028654);
    let c1 = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let inner = c0 * (v + c1 * v * v * v);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * v * sech2 * c0 * (T::one() + three * c1 * v * v)
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

pub fn conv_output_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    let padded = extent + 2 * padding;
    if padded < kernel {
        return Err(Error::ShapeMismatch(format!(
            "conv: spatial extent {extent} + 2*{padding} smaller than kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn conv_check<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<(usize, usize)> {
    p.validate()?;
    let s = x.shape();
    if s.c != p.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "conv: input has {} channels, params expect {}",
            s.c, p.in_channels
        )));
    }
    let ho = conv_output_extent(s.h, p.kernel, p.stride, p.padding)?;
    let wo = conv_output_extent(s.w, p.kernel, p.stride, p.padding)?;
    Ok((ho, wo))
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    conv2d_with(x, p, ConvAlgo::default(), 1)
}

pub fn conv2d_with<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    algo: ConvAlgo,
    workers: usize,
) -> Result<Tensor<T>> {
    match algo {
        ConvAlgo::Direct => conv2d_direct(x, p),
        ConvAlgo::Im2col => conv2d_im2col(x, p, workers.max(1)),
    }
}

/// Reference nested-loop cross-correlation.
pub fn conv2d_direct<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let (ho, wo) = conv_check(x, p)?;
    let s = x.shape();
    let cig = p.in_channels / p.groups;
    let cog = p.out_channels / p.groups;
    let k = p.kernel;
    let mut out = Tensor::zeros(Shape::new(s.n, p.out_channels, ho, wo));

    for n in 0..s.n {
        for g in 0..p.groups {
            for ocg in 0..cog {
                let oc = g * cog + ocg;
                let bias = p.bias.as_ref().map_or(T::zero(), |b| b[oc]);
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = bias;
                        for icg in 0..cig {
                            let ic = g * cig + icg;
                            let wbase = ((oc * cig + icg) * k) * k;
                            for kh in 0..k {
                                let ih = (oh * p.stride + kh) as isize - p.padding as isize;
                                if ih < 0 || ih >= s.h as isize {
                                    continue;
                                }
                                for kw in 0..k {
                                    let iw = (ow * p.stride + kw) as isize - p.padding as isize;
                                    if iw < 0 || iw >= s.w as isize {
                                        continue;
                                    }
                                    acc += p.weight[wbase + kh * k + kw]
                                        * x.at(n, ic, ih as usize, iw as usize);
                                }
                            }
                        }
                        out.set(n, oc, oh, ow, acc);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// im2col + matmul path; parallelizes over disjoint output-channel chunks so
/// the result is bit-identical for any worker count.
pub fn conv2d_im2col<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    workers: usize,
) -> Result<Tensor<T>> {
    let (ho, wo) = conv_check(x, p)?;
    let s = x.shape();
    let cig = p.in_channels / p.groups;
    let cog = p.out_channels / p.groups;
    let k = p.kernel;
    let kdim = cig * k * k;
    let plane_out = ho * wo;
    let mut out = Tensor::zeros(Shape::new(s.n, p.out_channels, ho, wo));
    let mut cols = vec![T::zero(); kdim * plane_out];

    for n in 0..s.n {
        for g in 0..p.groups {
            // Gather the patch matrix: row (icg, kh, kw), column (oh, ow).
            for icg in 0..cig {
                let ic = g * cig + icg;
                for kh in 0..k {
                    for kw in 0..k {
                        let row = (icg * k + kh) * k + kw;
                        let dst = &mut cols[row * plane_out..(row + 1) * plane_out];
                        for oh in 0..ho {
                            let ih = (oh * p.stride + kh) as isize - p.padding as isize;
                            if ih < 0 || ih >= s.h as isize {
                                for ow in 0..wo {
                                    dst[oh * wo + ow] = T::zero();
                                }
                                continue;
                            }
                            for ow in 0..wo {
                                let iw = (ow * p.stride + kw) as isize - p.padding as isize;
                                dst[oh * wo + ow] = if iw < 0 || iw >= s.w as isize {
                                    T::zero()
                                } else {
                                    x.at(n, ic, ih as usize, iw as usize)
                                };
                            }
                        }
                    }
                }
            }

            // weight rows (cog x kdim) times cols (kdim x plane_out)
            let wbase = g * cog * kdim;
            let obase = (n * p.out_channels + g * cog) * plane_out;
            let out_block = &mut out.data_mut()[obase..obase + cog * plane_out];
            let kernel_rows = &p.weight[wbase..wbase + cog * kdim];
            let run_rows = |rows: std::ops::Range<usize>, block: &mut [T]| {
                for (bi, oc_g) in rows.enumerate() {
                    let oc = g * cog + oc_g;
                    let dst = &mut block[bi * plane_out..(bi + 1) * plane_out];
                    let init = p.bias.as_ref().map_or(T::zero(), |b| b[oc]);
                    for v in dst.iter_mut() {
                        *v = init;
                    }
                    let wrow = &kernel_rows[oc_g * kdim..(oc_g + 1) * kdim];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        if wv == T::zero() {
                            continue;
                        }
                        let src = &cols[kk * plane_out..(kk + 1) * plane_out];
                        for (d, &sv) in dst.iter_mut().zip(src.iter()) {
                            *d += wv * sv;
                        }
                    }
                }
            };

            if workers <= 1 || cog < 2 * workers {
                run_rows(0..cog, out_block);
            } else {
                let chunk = cog.div_ceil(workers);
                std::thread::scope(|scope| {
                    let mut rest = out_block;
                    let mut start = 0;
                    while start < cog {
                        let take = chunk.min(cog - start);
                        let (head, tail) = rest.split_at_mut(take * plane_out);
                        let range = start..start + take;
                        let run = &run_rows;
                        scope.spawn(move || run(range, head));
                        rest = tail;
                        start += take;
                    }
                });
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

/// Average pooling over full k x k windows (floor semantics).
pub fn avg_pool2d<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if k == 0 || stride == 0 || s.h < k || s.w < k {
        return Err(Error::ShapeMismatch(format!(
            "avg_pool2d: window {k} stride {stride} on {}x{} input",
            s.h, s.w
        )));
    }
    let ho = (s.h - k) / stride + 1;
    let wo = (s.w - k) / stride + 1;
    let inv = T::from_f64(1.0 / (k * k) as f64);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, ho, wo));
    for n in 0..s.n {
        for c in 0..s.c {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = T::zero();
                    for dh in 0..k {
                        for dw in 0..k {
                            acc += x.at(n, c, oh * stride + dh, ow * stride + dw);
                        }
                    }
                    out.set(n, c, oh, ow, acc * inv);
                }
            }
        }
    }
    Ok(out)
}

/// Ceil-mode average pooling: edge windows are clipped to the input and
/// averaged over the elements actually covered. Output is ceil(h/stride) x
/// ceil(w/stride) when k == stride.
pub fn avg_pool2d_ceil<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if k == 0 || stride == 0 || s.h == 0 || s.w == 0 {
        return Err(Error::ShapeMismatch(format!(
            "avg_pool2d_ceil: window {k} stride {stride} on {}x{} input",
            s.h, s.w
        )));
    }
    let ho = s.h.div_ceil(stride);
    let wo = s.w.div_ceil(stride);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, ho, wo));
    for n in 0..s.n {
        for c in 0..s.c {
            for oh in 0..ho {
                let h0 = oh * stride;
                let h1 = (h0 + k).min(s.h);
                for ow in 0..wo {
                    let w0 = ow * stride;
                    let w1 = (w0 + k).min(s.w);
                    let mut acc = T::zero();
                    for ih in h0..h1 {
                        for iw in w0..w1 {
                            acc += x.at(n, c, ih, iw);
                        }
                    }
                    let count = ((h1 - h0) * (w1 - w0)) as f64;
                    out.set(n, c, oh, ow, acc * T::from_f64(1.0 / count));
                }
            }
        }
    }
    Ok(out)
}

/// Spatial mean per channel: (n, c, h, w) -> matrix (n, c).
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::ShapeMismatch("global_avg_pool: empty spatial extent".into()));
    }
    let inv = T::from_f64(1.0 / (s.h * s.w) as f64);
    let mut data = Vec::with_capacity(s.n * s.c);
    let plane = s.h * s.w;
    for n in 0..s.n {
        for c in 0..s.c {
            let from = (n * s.c + c) * plane;
            let mut acc = T::zero();
            for &v in &x.data()[from..from + plane] {
                acc += v;
            }
            data.push(acc * inv);
        }
    }
    Tensor::matrix(s.n, s.c, data)
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

pub fn batch_norm_infer<T: Scalar>(x: &Tensor<T>, p: &BatchNormParams<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let c = p.channels();
    if s.c != c || p.beta.len() != c || p.running_mean.len() != c || p.running_var.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "batch_norm_infer: input {} vs {} norm channels",
            s.c, c
        )));
    }
    if p.running_var.iter().any(|v| *v < T::zero()) {
        return Err(Error::NonFinite("batch_norm_infer: negative running variance".into()));
    }
    let mut scale = Vec::with_capacity(c);
    let mut shift = Vec::with_capacity(c);
    for i in 0..c {
        let sc = p.gamma[i] / (p.running_var[i] + p.eps).sqrt();
        scale.push(sc);
        shift.push(p.beta[i] - p.running_mean[i] * sc);
    }
    let plane = s.h * s.w;
    let mut out = x.clone();
    for n in 0..s.n {
        for ci in 0..c {
            let from = (n * c + ci) * plane;
            let (sc, sh) = (scale[ci], shift[ci]);
            for v in &mut out.data_mut()[from..from + plane] {
                *v = *v * sc + sh;
            }
        }
    }
    Ok(out)
}

/// Per-channel scale factors gamma / sqrt(var + eps); shared by the forward
/// pass, its gradient, and batch-norm folding.
pub fn bn_scale_shift<T: Scalar>(p: &BatchNormParams<T>) -> (Vec<T>, Vec<T>) {
    let c = p.channels();
    let mut scale = Vec::with_capacity(c);
    let mut shift = Vec::with_capacity(c);
    for i in 0..c {
        let sc = p.gamma[i] / (p.running_var[i] + p.eps).sqrt();
        scale.push(sc);
        shift.push(p.beta[i] - p.running_mean[i] * sc);
    }
    (scale, shift)
}

/// Normalizes over the channel axis per spatial position.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, p: &LayerNormParams<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let c = p.gamma.len();
    if s.c != c || p.beta.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "layer_norm: input {} vs {} norm channels",
            s.c, c
        )));
    }
    let plane = s.h * s.w;
    let inv_c = T::from_f64(1.0 / c as f64);
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for hw in 0..plane {
            let mut mean = T::zero();
            for ci in 0..c {
                mean += x.data()[(n * c + ci) * plane + hw];
            }
            mean *= inv_c;
            let mut var = T::zero();
            for ci in 0..c {
                let d = x.data()[(n * c + ci) * plane + hw] - mean;
                var += d * d;
            }
            var *= inv_c;
            let inv_std = T::one() / (var + p.eps).sqrt();
            for ci in 0..c {
                let v = x.data()[(n * c + ci) * plane + hw];
                let y = (v - mean) * inv_std * p.gamma[ci] + p.beta[ci];
                out.data_mut()[(n * c + ci) * plane + hw] = y;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

fn expect_mat<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<()> {
    if !x.shape().is_mat() {
        return Err(Error::ShapeMismatch(format!("{what}: expected matrix, got {}", x.shape())));
    }
    Ok(())
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_mat(a, "matmul lhs")?;
    expect_mat(b, "matmul rhs")?;
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::ShapeMismatch(format!("matmul: ({m}, {k}) x ({k2}, {n})")));
    }
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a.data()[i * k + kk];
            if av == T::zero() {
                continue;
            }
            let brow = &b.data()[kk * n..(kk + 1) * n];
            for (d, &bv) in dst.iter_mut().zip(brow.iter()) {
                *d += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

pub fn transpose<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    expect_mat(m, "transpose")?;
    let (r, c) = (m.rows(), m.cols());
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = m.data()[i * c + j];
        }
    }
    Tensor::matrix(c, r, out)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, alpha: T) -> Tensor<T> {
    x.map(|v| v * alpha)
}

/// Row-wise softmax, stabilized by row-max subtraction.
pub fn softmax_rows<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    expect_mat(m, "softmax_rows")?;
    if !m.all_finite() {
        return Err(Error::NonFinite("softmax_rows input".into()));
    }
    let (r, c) = (m.rows(), m.cols());
    if c == 0 {
        return Err(Error::ShapeMismatch("softmax_rows: zero columns".into()));
    }
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        let row = &m.data()[i * c..(i + 1) * c];
        let mut mx = row[0];
        for &v in row {
            if v > mx {
                mx = v;
            }
        }
        let dst = &mut out[i * c..(i + 1) * c];
        let mut denom = T::zero();
        for (d, &v) in dst.iter_mut().zip(row.iter()) {
            let e = (v - mx).exp();
            *d = e;
            denom += e;
        }
        let inv = T::one() / denom;
        for d in dst.iter_mut() {
            *d *= inv;
        }
    }
    Tensor::matrix(r, c, out)
}

/// x (tokens, in_features) times weight^T plus bias broadcast.
pub fn linear<T: Scalar>(x: &Tensor<T>, p: &LinearParams<T>) -> Result<Tensor<T>> {
    expect_mat(x, "linear input")?;
    let (t, fin) = (x.rows(), x.cols());
    if fin != p.in_features || p.weight.len() != p.out_features * p.in_features {
        return Err(Error::ShapeMismatch(format!(
            "linear: input ({t}, {fin}) vs weight ({}, {})",
            p.out_features, p.in_features
        )));
    }
    if let Some(b) = &p.bias {
        if b.len() != p.out_features {
            return Err(Error::ShapeMismatch("linear: bias length".into()));
        }
    }
    let mut out = vec![T::zero(); t * p.out_features];
    for i in 0..t {
        let xrow = &x.data()[i * fin..(i + 1) * fin];
        let dst = &mut out[i * p.out_features..(i + 1) * p.out_features];
        for o in 0..p.out_features {
            let wrow = &p.weight[o * fin..(o + 1) * fin];
            let mut acc = p.bias.as_ref().map_or(T::zero(), |b| b[o]);
            for (&xv, &wv) in xrow.iter().zip(wrow.iter()) {
                acc += xv * wv;
            }
            dst[o] = acc;
        }
    }
    Tensor::matrix(t, p.out_features, out)
}

pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::zero();
    for &v in x.data() {
        acc += v;
    }
    Tensor::scalar(acc)
}

// ---------------------------------------------------------------------------
// Token layout shuffles
// ---------------------------------------------------------------------------

/// (n, c, h, w) -> token matrix (n*h*w, c); token r = ((n*h + y)*w + x).
pub fn tokens_from_nchw<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let plane = s.h * s.w;
    let mut out = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let from = (n * s.c + c) * plane;
            for hw in 0..plane {
                out[(n * plane + hw) * s.c + c] = x.data()[from + hw];
            }
        }
    }
    Tensor::matrix(s.n * plane, s.c, out).expect("sizes agree by construction")
}

/// Inverse of `tokens_from_nchw`.
pub fn nchw_from_tokens<T: Scalar>(
    m: &Tensor<T>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    expect_mat(m, "nchw_from_tokens")?;
    if m.rows() != n * h * w || m.cols() != c {
        return Err(Error::ShapeMismatch(format!(
            "nchw_from_tokens: ({}, {}) vs n={n} c={c} h={h} w={w}",
            m.rows(),
            m.cols()
        )));
    }
    let plane = h * w;
    let mut out = vec![T::zero(); n * c * plane];
    for ni in 0..n {
        for hw in 0..plane {
            let row = &m.data()[(ni * plane + hw) * c..(ni * plane + hw + 1) * c];
            for (ci, &v) in row.iter().enumerate() {
                out[(ni * c + ci) * plane + hw] = v;
            }
        }
    }
    Tensor::from_vec(Shape::new(n, c, h, w), out)
}

/// Rectangular sub-matrix [r0, r0+rows) x [c0, c0+cols).
pub fn slice_mat<T: Scalar>(
    m: &Tensor<T>,
    r0: usize,
    rows: usize,
    c0: usize,
    cols: usize,
) -> Result<Tensor<T>> {
    expect_mat(m, "slice_mat")?;
    if r0 + rows > m.rows() || c0 + cols > m.cols() {
        return Err(Error::ShapeMismatch(format!(
            "slice_mat: [{r0}+{rows}, {c0}+{cols}) out of ({}, {})",
            m.rows(),
            m.cols()
        )));
    }
    let mc = m.cols();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let from = (r0 + i) * mc + c0;
        out.extend_from_slice(&m.data()[from..from + cols]);
    }
    Tensor::matrix(rows, cols, out)
}

pub fn concat_rows<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_mat(a, "concat_rows")?;
    expect_mat(b, "concat_rows")?;
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch(format!(
            "concat_rows: {} vs {} cols",
            a.cols(),
            b.cols()
        )));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::matrix(a.rows() + b.rows(), a.cols(), data)
}

pub fn concat_cols<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_mat(a, "concat_cols")?;
    expect_mat(b, "concat_cols")?;
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch(format!(
            "concat_cols: {} vs {} rows",
            a.rows(),
            b.rows()
        )));
    }
    let (r, ca, cb) = (a.rows(), a.cols(), b.cols());
    let mut data = Vec::with_capacity(r * (ca + cb));
    for i in 0..r {
        data.extend_from_slice(&a.data()[i * ca..(i + 1) * ca]);
        data.extend_from_slice(&b.data()[i * cb..(i + 1) * cb]);
    }
    Tensor::matrix(r, ca + cb, data)
}
