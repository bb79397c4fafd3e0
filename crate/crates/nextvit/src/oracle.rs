//! Independent reference implementations used to cross-check the optimized
//! kernels in [`crate::ops`].
//!
//! Everything here trades speed for obviousness: inputs are widened to f64,
//! convolution materializes an explicitly zero-padded buffer instead of doing
//! bounds arithmetic, attention is a literal double loop over token pairs.
//! These functions share no code with the production kernels, so agreement
//! between the two is meaningful evidence of correctness.

use crate::error::Result;
use crate::params::{BatchNormParams, ConvParams, LayerNormParams, LinearParams};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn widen<T: Scalar>(x: &Tensor<T>) -> Tensor<f64> {
    x.cast::<f64>()
}

fn narrow<T: Scalar>(x: Tensor<f64>) -> Tensor<T> {
    x.cast::<T>()
}

fn vec64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| (*x).to_f64()).collect()
}

/// Cross-correlation via an explicitly padded input copy.
pub fn conv2d_ref<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    p.validate()?;
    let xf = widen(x);
    let s = xf.shape();
    let (k, st, pad) = (p.kernel, p.stride, p.padding);
    let (hp, wp) = (s.h + 2 * pad, s.w + 2 * pad);
    let mut padded = Tensor::<f64>::zeros(Shape::new(s.n, s.c, hp, wp));
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..s.h {
                for w in 0..s.w {
                    padded.set(n, c, h + pad, w + pad, xf.at(n, c, h, w));
                }
            }
        }
    }
    let ho = (hp - k) / st + 1;
    let wo = (wp - k) / st + 1;
    let cig = p.in_channels / p.groups;
    let cog = p.out_channels / p.groups;
    let weight = vec64(&p.weight);
    let bias = p.bias.as_ref().map(|b| vec64(b));
    let mut out = Tensor::<f64>::zeros(Shape::new(s.n, p.out_channels, ho, wo));
    for n in 0..s.n {
        for oc in 0..p.out_channels {
            let g = oc / cog;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = bias.as_ref().map_or(0.0, |b| b[oc]);
                    for icg in 0..cig {
                        for kh in 0..k {
                            for kw in 0..k {
                                let wv = weight[((oc * cig + icg) * k + kh) * k + kw];
                                acc += wv * padded.at(n, g * cig + icg, oh * st + kh, ow * st + kw);
                            }
                        }
                    }
                    out.set(n, oc, oh, ow, acc);
                }
            }
        }
    }
    Ok(narrow(out))
}

pub fn avg_pool2d_ref<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let xf = widen(x);
    let s = xf.shape();
    let ho = (s.h - k) / stride + 1;
    let wo = (s.w - k) / stride + 1;
    let mut out = Tensor::<f64>::zeros(Shape::new(s.n, s.c, ho, wo));
    for n in 0..s.n {
        for c in 0..s.c {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = 0.0;
                    for dh in 0..k {
                        for dw in 0..k {
                            acc += xf.at(n, c, oh * stride + dh, ow * stride + dw);
                        }
                    }
                    out.set(n, c, oh, ow, acc / (k * k) as f64);
                }
            }
        }
    }
    Ok(narrow(out))
}

pub fn avg_pool2d_ceil_ref<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let xf = widen(x);
    let s = xf.shape();
    let ho = s.h.div_ceil(stride);
    let wo = s.w.div_ceil(stride);
    let mut out = Tensor::<f64>::zeros(Shape::new(s.n, s.c, ho, wo));
    for n in 0..s.n {
        for c in 0..s.c {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = 0.0;
                    let mut count = 0usize;
                    for ih in oh * stride..(oh * stride + k).min(s.h) {
                        for iw in ow * stride..(ow * stride + k).min(s.w) {
                            acc += xf.at(n, c, ih, iw);
                            count += 1;
                        }
                    }
                    out.set(n, c, oh, ow, acc / count as f64);
                }
            }
        }
    }
    Ok(narrow(out))
}

/// Channel-c batch norm by the textbook formula, one element at a time.
pub fn batch_norm_ref<T: Scalar>(x: &Tensor<T>, p: &BatchNormParams<T>) -> Result<Tensor<T>> {
    let xf = widen(x);
    let s = xf.shape();
    let gamma = vec64(&p.gamma);
    let beta = vec64(&p.beta);
    let mean = vec64(&p.running_mean);
    let var = vec64(&p.running_var);
    let eps = p.eps.to_f64();
    let mut out = Tensor::<f64>::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..s.h {
                for w in 0..s.w {
                    let y =
                        (xf.at(n, c, h, w) - mean[c]) / (var[c] + eps).sqrt() * gamma[c] + beta[c];
                    out.set(n, c, h, w, y);
                }
            }
        }
    }
    Ok(narrow(out))
}

pub fn layer_norm_ref<T: Scalar>(x: &Tensor<T>, p: &LayerNormParams<T>) -> Result<Tensor<T>> {
    let xf = widen(x);
    let s = xf.shape();
    let gamma = vec64(&p.gamma);
    let beta = vec64(&p.beta);
    let eps = p.eps.to_f64();
    let mut out = Tensor::<f64>::zeros(s);
    for n in 0..s.n {
        for h in 0..s.h {
            for w in 0..s.w {
                let mut mean = 0.0;
                for c in 0..s.c {
                    mean += xf.at(n, c, h, w);
                }
                mean /= s.c as f64;
                let mut var = 0.0;
                for c in 0..s.c {
                    var += (xf.at(n, c, h, w) - mean).powi(2);
                }
                var /= s.c as f64;
                for c in 0..s.c {
                    let y = (xf.at(n, c, h, w) - mean) / (var + eps).sqrt() * gamma[c] + beta[c];
                    out.set(n, c, h, w, y);
                }
            }
        }
    }
    Ok(narrow(out))
}

pub fn linear_ref<T: Scalar>(x: &Tensor<T>, p: &LinearParams<T>) -> Result<Tensor<T>> {
    let xf = widen(x);
    let weight = vec64(&p.weight);
    let bias = p.bias.as_ref().map(|b| vec64(b));
    let (t, fin, fout) = (xf.rows(), p.in_features, p.out_features);
    let mut out = vec![0.0f64; t * fout];
    for i in 0..t {
        for o in 0..fout {
            let mut acc = bias.as_ref().map_or(0.0, |b| b[o]);
            for j in 0..fin {
                acc += xf.data()[i * fin + j] * weight[o * fin + j];
            }
            out[i * fout + o] = acc;
        }
    }
    Ok(narrow(Tensor::matrix(t, fout, out)?))
}

pub fn matmul_ref<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (af, bf) = (widen(a), widen(b));
    let (m, k, n) = (af.rows(), af.cols(), bf.cols());
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for kk in 0..k {
                acc += af.data()[i * k + kk] * bf.data()[kk * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Ok(narrow(Tensor::matrix(m, n, out)?))
}

pub fn softmax_rows_ref<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let mf = widen(m);
    let (r, c) = (mf.rows(), mf.cols());
    let mut out = vec![0.0f64; r * c];
    for i in 0..r {
        let row = &mf.data()[i * c..(i + 1) * c];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - mx).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for j in 0..c {
            out[i * c + j] = exps[j] / denom;
        }
    }
    Ok(narrow(Tensor::matrix(r, c, out)?))
}

/// Single-head scaled dot-product attention as a literal double loop:
/// `out[i] = sum_j softmax_j(scale * q_i . k_j) v_j`.
pub fn attention_ref<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    scale: f64,
) -> Result<Tensor<T>> {
    let (qf, kf, vf) = (widen(q), widen(k), widen(v));
    let (t, d) = (qf.rows(), qf.cols());
    let tk = kf.rows();
    let dv = vf.cols();
    let mut out = vec![0.0f64; t * dv];
    for i in 0..t {
        let mut logits = vec![0.0f64; tk];
        for (j, lg) in logits.iter_mut().enumerate() {
            let mut dot = 0.0;
            for e in 0..d {
                dot += qf.data()[i * d + e] * kf.data()[j * d + e];
            }
            *lg = dot * scale;
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&v| (v - mx).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for (j, ex) in exps.iter().enumerate() {
            let w = ex / denom;
            for e in 0..dv {
                out[i * dv + e] += w * vf.data()[j * dv + e];
            }
        }
    }
    Ok(narrow(Tensor::matrix(t, dv, out)?))
}

pub fn gelu_ref<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let xf = widen(x);
    let out = xf.map(|v| {
        let inner = (2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3));
        0.5 * v * (1.0 + inner.tanh())
    });
    narrow(out)
}

pub fn global_avg_pool_ref<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let xf = widen(x);
    let s = xf.shape();
    let mut out = vec![0.0f64; s.n * s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let mut acc = 0.0;
            for h in 0..s.h {
                for w in 0..s.w {
                    acc += xf.at(n, c, h, w);
                }
            }
            out[n * s.c + c] = acc / (s.h * s.w) as f64;
        }
    }
    Ok(narrow(Tensor::matrix(s.n, s.c, out)?))
}
