//! Oracle-equivalence suites: every production op against its f64-widened
//! textbook reference, plus the two structural identities the architecture
//! leans on (E-MHSA at s=1 equals brute-force attention; single-head MHCA
//! equals a dense convolution).

use crate::backend::Eval;
use crate::blocks::{
    emhsa_arrays, emhsa_forward, mhca_arrays, mhca_forward, ActKind, AttnScale, EmhsaSpec,
    MhcaSpec, NormKind, NORM_EPS,
};
use crate::error::Result;
use crate::ops::{self, ConvAlgo};
use crate::oracle;
use crate::params::{
    ArraySpec, BatchNormParams, ConvParams, LayerNormParams, LinearParams, ParamArray, ParamKind,
    ParamSet,
};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug)]
pub struct SelftestCase {
    pub name: String,
    pub max_err: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn all_passed(cases: &[SelftestCase]) -> bool {
    cases.iter().all(|c| c.passed)
}

fn push(cases: &mut Vec<SelftestCase>, name: &str, max_err: f64, tol: f64) {
    cases.push(SelftestCase { name: name.to_string(), max_err, tol, passed: max_err <= tol });
}

fn diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(a.max_abs_diff(b)?.to_f64())
}

fn sh(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape { n, c, h, w }
}

#[allow(clippy::too_many_arguments)]
fn rand_conv<T: Scalar>(
    cout: usize,
    cin: usize,
    k: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    bias: bool,
    rng: &mut SplitMix64,
) -> ConvParams<T> {
    let mut weight = vec![T::zero(); cout * (cin / groups) * k * k];
    rng.fill_normal(&mut weight, 0.5);
    let bias = bias.then(|| {
        let mut b = vec![T::zero(); cout];
        rng.fill_normal(&mut b, 0.1);
        b
    });
    ConvParams {
        weight,
        out_channels: cout,
        in_channels: cin,
        kernel: k,
        stride,
        padding,
        groups,
        bias,
    }
}

fn rand_bn<T: Scalar>(c: usize, rng: &mut SplitMix64) -> BatchNormParams<T> {
    let mut gamma = vec![T::zero(); c];
    let mut beta = vec![T::zero(); c];
    let mut mean = vec![T::zero(); c];
    rng.fill_normal(&mut gamma, 0.2);
    rng.fill_normal(&mut beta, 0.1);
    rng.fill_normal(&mut mean, 0.2);
    let var: Vec<T> = (0..c).map(|_| T::from_f64(0.5 + rng.next_f64())).collect();
    BatchNormParams {
        gamma: gamma.into_iter().map(|g| T::one() + g).collect(),
        beta,
        running_mean: mean,
        running_var: var,
        eps: T::from_f64(NORM_EPS),
    }
}

fn random_params(arrays: &[ArraySpec], rng: &mut SplitMix64) -> ParamSet<f64> {
    let mut set = ParamSet::new();
    for a in arrays {
        let n = a.numel();
        let mut data = vec![0.0f64; n];
        match a.kind {
            ParamKind::ConvWeight { fan_in, gain } | ParamKind::LinearWeight { fan_in, gain } => {
                rng.fill_normal(&mut data, (gain / fan_in as f64).sqrt());
            }
            ParamKind::Bias | ParamKind::Beta | ParamKind::RunningMean => {
                rng.fill_normal(&mut data, 0.1);
            }
            ParamKind::Gamma => {
                for v in &mut data {
                    *v = 1.0 + 0.2 * rng.next_normal();
                }
            }
            ParamKind::RunningVar => {
                for v in &mut data {
                    *v = 0.5 + rng.next_f64();
                }
            }
        }
        set.insert(a.key.clone(), ParamArray::new(a.dims.clone(), data).expect("dims match"));
    }
    set
}

// ---------------------------------------------------------------------------
// Independent E-MHSA composition (s = 1, no pooling)
// ---------------------------------------------------------------------------

fn manual_tokens(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let mut data = vec![0.0; s.n * s.h * s.w * s.c];
    for ni in 0..s.n {
        for y in 0..s.h {
            for xc in 0..s.w {
                let row = (ni * s.h + y) * s.w + xc;
                for ch in 0..s.c {
                    data[row * s.c + ch] = x.at(ni, ch, y, xc);
                }
            }
        }
    }
    Tensor::matrix(s.n * s.h * s.w, s.c, data).expect("sized above")
}

fn manual_nchw(tokens: &Tensor<f64>, s: Shape) -> Tensor<f64> {
    let mut out = Tensor::zeros(s);
    for ni in 0..s.n {
        for y in 0..s.h {
            for xc in 0..s.w {
                let row = (ni * s.h + y) * s.w + xc;
                for ch in 0..s.c {
                    out.set(ni, ch, y, xc, tokens.mat_at(row, ch));
                }
            }
        }
    }
    out
}

fn slice(m: &Tensor<f64>, r0: usize, rows: usize, c0: usize, cols: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            data.push(m.mat_at(r0 + r, c0 + c));
        }
    }
    Tensor::matrix(rows, cols, data).expect("sized above")
}

/// Full-attention reference for s=1: per-channel norm on the tokens feeding
/// K/V, literal per-head softmax(QKᵀ·alpha)V, W^P projection.
fn emhsa_bruteforce(
    x: &Tensor<f64>,
    spec: &EmhsaSpec,
    params: &ParamSet<f64>,
    prefix: &str,
) -> Result<Tensor<f64>> {
    let s = x.shape();
    let c = spec.channels;
    let d = spec.head_dim;
    let heads = spec.heads();
    let t = s.h * s.w;
    let key = |name: &str| format!("{prefix}.{name}");

    let tokens = manual_tokens(x);
    let q = oracle::linear_ref(&tokens, &params.linear(&key("q"), c, c)?)?;

    let bn = params.batch_norm(&key("norm"), c, NORM_EPS)?;
    let mut kv = tokens.clone();
    for r in 0..kv.rows() {
        for ch in 0..c {
            let z = (kv.mat_at(r, ch) - bn.running_mean[ch]) / (bn.running_var[ch] + bn.eps).sqrt();
            let idx = r * c + ch;
            kv.data_mut()[idx] = z * bn.gamma[ch] + bn.beta[ch];
        }
    }
    let k = oracle::linear_ref(&kv, &params.linear(&key("k"), c, c)?)?;
    let v = oracle::linear_ref(&kv, &params.linear(&key("v"), c, c)?)?;

    let alpha = spec.scale.factor(d);
    let mut merged = Tensor::matrix(s.n * t, c, vec![0.0; s.n * t * c])?;
    for ni in 0..s.n {
        for head in 0..heads {
            let qh = slice(&q, ni * t, t, head * d, d);
            let kh = slice(&k, ni * t, t, head * d, d);
            let vh = slice(&v, ni * t, t, head * d, d);
            let oh = oracle::attention_ref(&qh, &kh, &vh, alpha)?;
            for r in 0..t {
                for e in 0..d {
                    let idx = (ni * t + r) * c + head * d + e;
                    merged.data_mut()[idx] = oh.mat_at(r, e);
                }
            }
        }
    }
    let out = oracle::linear_ref(&merged, &params.linear(&key("proj"), c, c)?)?;
    Ok(manual_nchw(&out, s))
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

fn conv_cases(cases: &mut Vec<SelftestCase>, rng: &mut SplitMix64) -> Result<()> {
    // (name, n, cin, h, w, cout, k, stride, pad, groups, bias)
    let grid = [
        ("conv_k3", 2usize, 5usize, 9usize, 7usize, 4usize, 3usize, 1usize, 1usize, 1usize, false),
        ("conv_k3_bias", 1, 4, 8, 8, 6, 3, 1, 1, 1, true),
        ("conv_strided", 1, 3, 11, 9, 5, 3, 2, 1, 1, false),
        ("conv_grouped", 1, 8, 8, 8, 8, 3, 1, 1, 4, false),
        ("conv_grouped_wide", 1, 12, 7, 7, 6, 3, 1, 1, 3, true),
        ("conv_1x1", 2, 7, 6, 6, 9, 1, 1, 0, 1, true),
        ("conv_nopad", 1, 4, 9, 9, 4, 3, 1, 0, 1, false),
    ];
    for (name, n, cin, h, w, cout, k, stride, pad, groups, bias) in grid {
        // f32 against the widened oracle: the AC5 single-precision bound.
        let x32: Tensor<f32> = Tensor::random_normal(sh(n, cin, h, w), rng, 1.0);
        let p32: ConvParams<f32> = rand_conv(cout, cin, k, stride, pad, groups, bias, rng);
        let re = oracle::conv2d_ref(&x32, &p32)?;
        let im = ops::conv2d_with(&x32, &p32, ConvAlgo::Im2col, 1)?;
        let di = ops::conv2d_with(&x32, &p32, ConvAlgo::Direct, 1)?;
        push(cases, &format!("{name}_im2col_f32"), diff(&im, &re)?, 1e-5);
        push(cases, &format!("{name}_direct_f32"), diff(&di, &re)?, 1e-5);
        // threaded im2col must be bit-identical to single-worker
        let mt = ops::conv2d_with(&x32, &p32, ConvAlgo::Im2col, 4)?;
        push(cases, &format!("{name}_workers_bitident"), diff(&mt, &im)?, 0.0);
        // f64 pass tightens the bound by the widened-accumulation margin
        let x64 = x32.cast::<f64>();
        let p64 = ConvParams::<f64> {
            weight: p32.weight.iter().map(|v| *v as f64).collect(),
            out_channels: p32.out_channels,
            in_channels: p32.in_channels,
            kernel: p32.kernel,
            stride: p32.stride,
            padding: p32.padding,
            groups: p32.groups,
            bias: p32.bias.as_ref().map(|b| b.iter().map(|v| *v as f64).collect()),
        };
        let re64 = oracle::conv2d_ref(&x64, &p64)?;
        let im64 = ops::conv2d_with(&x64, &p64, ConvAlgo::Im2col, 1)?;
        push(cases, &format!("{name}_im2col_f64"), diff(&im64, &re64)?, 1e-12);
    }
    Ok(())
}

pub fn run_selftest() -> Result<Vec<SelftestCase>> {
    let mut rng = SplitMix64::new(0x5e1f);
    let mut cases = Vec::new();

    conv_cases(&mut cases, &mut rng)?;

    // pooling
    let x: Tensor<f32> = Tensor::random_normal(sh(2, 4, 8, 8), &mut rng, 1.0);
    push(
        &mut cases,
        "avg_pool",
        diff(&ops::avg_pool2d(&x, 2, 2)?, &oracle::avg_pool2d_ref(&x, 2, 2)?)?,
        1e-6,
    );
    let x: Tensor<f32> = Tensor::random_normal(sh(1, 3, 7, 9), &mut rng, 1.0);
    push(
        &mut cases,
        "avg_pool_ceil",
        diff(&ops::avg_pool2d_ceil(&x, 2, 2)?, &oracle::avg_pool2d_ceil_ref(&x, 2, 2)?)?,
        1e-6,
    );
    push(
        &mut cases,
        "avg_pool_ceil_k4",
        diff(&ops::avg_pool2d_ceil(&x, 4, 4)?, &oracle::avg_pool2d_ceil_ref(&x, 4, 4)?)?,
        1e-6,
    );
    let x: Tensor<f32> = Tensor::random_normal(sh(2, 5, 6, 6), &mut rng, 1.0);
    push(
        &mut cases,
        "global_avg_pool",
        diff(&ops::global_avg_pool(&x)?, &oracle::global_avg_pool_ref(&x)?)?,
        1e-6,
    );

    // norms
    let x: Tensor<f32> = Tensor::random_normal(sh(2, 6, 5, 5), &mut rng, 1.0);
    let bn: BatchNormParams<f32> = rand_bn(6, &mut rng);
    push(
        &mut cases,
        "batch_norm",
        diff(&ops::batch_norm_infer(&x, &bn)?, &oracle::batch_norm_ref(&x, &bn)?)?,
        1e-5,
    );
    let ln = LayerNormParams::<f32> { gamma: bn.gamma.clone(), beta: bn.beta.clone(), eps: 1e-5 };
    push(
        &mut cases,
        "layer_norm",
        diff(&ops::layer_norm(&x, &ln)?, &oracle::layer_norm_ref(&x, &ln)?)?,
        1e-5,
    );

    // matrix ops
    let a: Tensor<f32> = {
        let mut v = vec![0.0f32; 12 * 9];
        rng.fill_normal(&mut v, 1.0);
        Tensor::matrix(12, 9, v)?
    };
    let b: Tensor<f32> = {
        let mut v = vec![0.0f32; 9 * 7];
        rng.fill_normal(&mut v, 1.0);
        Tensor::matrix(9, 7, v)?
    };
    push(&mut cases, "matmul", diff(&ops::matmul(&a, &b)?, &oracle::matmul_ref(&a, &b)?)?, 1e-5);
    let lp = LinearParams::<f32> {
        weight: {
            let mut v = vec![0.0f32; 5 * 9];
            rng.fill_normal(&mut v, 0.4);
            v
        },
        out_features: 5,
        in_features: 9,
        bias: Some({
            let mut v = vec![0.0f32; 5];
            rng.fill_normal(&mut v, 0.1);
            v
        }),
    };
    push(&mut cases, "linear", diff(&ops::linear(&a, &lp)?, &oracle::linear_ref(&a, &lp)?)?, 1e-5);
    push(
        &mut cases,
        "softmax_rows",
        diff(&ops::softmax_rows(&a)?, &oracle::softmax_rows_ref(&a)?)?,
        1e-6,
    );
    let x: Tensor<f32> = Tensor::random_normal(sh(1, 4, 6, 6), &mut rng, 2.0);
    push(&mut cases, "gelu", diff(&ops::gelu(&x), &oracle::gelu_ref(&x))?, 1e-6);

    // E-MHSA s=1 vs brute-force attention on token grids at and below 8x8
    for (name, h, w) in [("emhsa_s1_8x8", 8usize, 8usize), ("emhsa_s1_7x5", 7, 5)] {
        let spec = EmhsaSpec {
            channels: 32,
            head_dim: 8,
            sr_ratio: 1,
            norm: NormKind::Batch,
            scale: AttnScale::Sqrt,
        };
        let mut arrays = Vec::new();
        emhsa_arrays(&spec, "attn", &mut arrays);
        let params = random_params(&arrays, &mut rng);
        let x: Tensor<f64> = Tensor::random_normal(sh(2, 32, h, w), &mut rng, 1.0);
        let got = {
            let mut eval = Eval::default();
            emhsa_forward(&mut eval, &x, &spec, &params, "attn")?
        };
        let want = emhsa_bruteforce(&x, &spec, &params, "attn")?;
        push(&mut cases, name, diff(&got, &want)?, 1e-5);
    }

    // Single-head MHCA vs an independently composed dense conv chain.
    {
        let c = 12;
        let spec = MhcaSpec { channels: c, head_dim: c, norm: NormKind::Batch, act: ActKind::Relu };
        let mut arrays = Vec::new();
        mhca_arrays(&spec, "m", &mut arrays);
        let params = random_params(&arrays, &mut rng);
        let x: Tensor<f64> = Tensor::random_normal(sh(1, c, 8, 8), &mut rng, 1.0);
        let got = {
            let mut eval = Eval::default();
            mhca_forward(&mut eval, &x, &spec, &params, "m")?
        };
        let dense = params.conv("m.gconv", c, c, 3, 1, 1, 1)?;
        let y = oracle::conv2d_ref(&x, &dense)?;
        let y = oracle::batch_norm_ref(&y, &params.batch_norm("m.norm1", c, NORM_EPS)?)?;
        let y = y.map(|v| if v > 0.0 { v } else { 0.0 });
        let y = oracle::conv2d_ref(&y, &params.conv("m.proj", c, c, 1, 1, 0, 1)?)?;
        let want = oracle::batch_norm_ref(&y, &params.batch_norm("m.norm2", c, NORM_EPS)?)?;
        push(&mut cases, "mhca_h1_dense", diff(&got, &want)?, 1e-6);
    }

    Ok(cases)
}
