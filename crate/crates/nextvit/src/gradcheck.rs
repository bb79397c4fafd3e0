//! Finite-difference gradient suite: every tape op and both full blocks,
//! double precision, central differences. Analytic gradients come from the
//! reverse-mode tape; numeric ones from an independent two-point probe of the
//! same recorded function. Block cases use GELU so every composite stays
//! smooth; ReLU's kink is checked at op level on inputs bounded away from 0.

use crate::blocks::{
    emhsa_arrays, emhsa_forward, mhca_arrays, mhca_forward, ncb_arrays, ncb_forward, ntb_arrays,
    ntb_forward, ActKind, AttnScale, EmhsaSpec, MhcaSpec, NcbSpec, NormKind, NtbSpec,
};
use crate::error::Result;
use crate::params::{
    ArraySpec, BatchNormParams, ConvParams, LayerNormParams, LinearParams, ParamArray, ParamKind,
    ParamSet,
};
use crate::rng::SplitMix64;
use crate::tape::{compare_grads, finite_diff_grad, GradReport, Tape, ValueId};
use crate::tensor::{Shape, Tensor};

/// AC tolerances: eps 1e-4 central differences, rel err < 1e-3, floor 1e-6.
pub const FD_EPS: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCase {
    pub name: String,
    pub report: GradReport,
    pub passed: bool,
}

pub fn all_passed(cases: &[GradCase]) -> bool {
    cases.iter().all(|c| c.passed)
}

fn run_case<F>(name: &str, x: &Tensor<f64>, build: F, out: &mut Vec<GradCase>) -> Result<()>
where
    F: Fn(&mut Tape<f64>, ValueId) -> Result<ValueId>,
{
    let mut tape = Tape::new();
    let xid = tape.input(x.clone());
    let y = build(&mut tape, xid)?;
    let scalar = tape.sum_all(y)?;
    let grads = tape.backward(scalar)?;
    let analytic = grads.wrt(xid).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let numeric = finite_diff_grad(x, FD_EPS, |probe| {
        let mut t = Tape::new();
        let id = t.input(probe.clone());
        let y = build(&mut t, id)?;
        let s = t.sum_all(y)?;
        Ok(t.value(s)?.data()[0])
    })?;

    let report = compare_grads(&analytic, &numeric, REL_FLOOR)?;
    out.push(GradCase { name: name.to_string(), passed: report.passes(REL_TOL), report });
    Ok(())
}

fn normal(shape: Shape, rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::random_normal(shape, rng, 1.0)
}

/// Random values bounded away from ReLU's kink: |x| in [0.2, 1.2].
fn off_kink(shape: Shape, rng: &mut SplitMix64) -> Tensor<f64> {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
        *v = sign * (0.2 + rng.next_f64());
    }
    t
}

fn conv_params(
    cout: usize,
    cin: usize,
    k: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    rng: &mut SplitMix64,
) -> ConvParams<f64> {
    let mut weight = vec![0.0; cout * (cin / groups) * k * k];
    rng.fill_normal(&mut weight, 0.5);
    let mut bias = vec![0.0; cout];
    rng.fill_normal(&mut bias, 0.1);
    ConvParams {
        weight,
        out_channels: cout,
        in_channels: cin,
        kernel: k,
        stride,
        padding,
        groups,
        bias: Some(bias),
    }
}

/// Random parameters for a declared block layout. Gammas stay near 1 and
/// running variances strictly positive so norms are well-conditioned.
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

fn sh(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape { n, c, h, w }
}

fn rand_mat(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor<f64> {
    let mut v = vec![0.0; rows * cols];
    rng.fill_normal(&mut v, 1.0);
    Tensor::matrix(rows, cols, v).expect("dims match data length")
}

/// Run the whole suite. `max_hw` caps the block-case spatial extent
/// (default 8; the op cases stay at their small fixed shapes).
pub fn run_gradcheck(max_hw: usize) -> Result<Vec<GradCase>> {
    let hw = max_hw.clamp(4, 64);
    let mut rng = SplitMix64::new(0x9dc3);
    let mut cases = Vec::new();

    // -- element-wise and structural ops --------------------------------
    let x = off_kink(sh(1, 4, 5, 5), &mut rng);
    run_case("relu", &x, |t, x| t.relu(x), &mut cases)?;

    let x = normal(sh(1, 4, 5, 5), &mut rng);
    run_case("gelu", &x, |t, x| t.gelu(x), &mut cases)?;

    let x = normal(sh(1, 3, 4, 4), &mut rng);
    let other = normal(sh(1, 3, 4, 4), &mut rng);
    run_case(
        "add",
        &x,
        move |t, x| {
            let o = t.input(other.clone());
            t.add(x, o)
        },
        &mut cases,
    )?;

    let x = normal(sh(1, 3, 4, 4), &mut rng);
    let other = normal(sh(1, 2, 4, 4), &mut rng);
    run_case(
        "concat_channels",
        &x,
        move |t, x| {
            let o = t.input(other.clone());
            t.concat_channels(x, o)
        },
        &mut cases,
    )?;

    let x = normal(sh(1, 6, 4, 4), &mut rng);
    run_case("slice_channels", &x, |t, x| t.slice_channels(x, 2, 3), &mut cases)?;

    let x = normal(sh(2, 3, 4, 4), &mut rng);
    run_case("scale", &x, |t, x| t.scale(x, 0.37), &mut cases)?;

    // -- convolutions ----------------------------------------------------
    let x = normal(sh(1, 4, 6, 6), &mut rng);
    let p = conv_params(6, 4, 3, 1, 1, 1, &mut rng);
    run_case("conv2d_k3", &x, move |t, x| t.conv2d(x, &p), &mut cases)?;

    let x = normal(sh(1, 4, 6, 6), &mut rng);
    let p = conv_params(6, 4, 3, 1, 1, 2, &mut rng);
    run_case("conv2d_grouped", &x, move |t, x| t.conv2d(x, &p), &mut cases)?;

    let x = normal(sh(1, 3, 7, 7), &mut rng);
    let p = conv_params(5, 3, 3, 2, 1, 1, &mut rng);
    run_case("conv2d_strided", &x, move |t, x| t.conv2d(x, &p), &mut cases)?;

    let x = normal(sh(1, 6, 5, 5), &mut rng);
    let p = conv_params(4, 6, 1, 1, 0, 1, &mut rng);
    run_case("conv2d_1x1", &x, move |t, x| t.conv2d(x, &p), &mut cases)?;

    // -- pooling ----------------------------------------------------------
    let x = normal(sh(1, 3, 6, 6), &mut rng);
    run_case("avg_pool2d", &x, |t, x| t.avg_pool2d(x, 2, 2), &mut cases)?;

    let x = normal(sh(1, 3, 5, 5), &mut rng);
    run_case("avg_pool2d_ceil", &x, |t, x| t.avg_pool2d_ceil(x, 2, 2), &mut cases)?;

    let x = normal(sh(1, 5, 4, 4), &mut rng);
    run_case("global_avg_pool", &x, |t, x| t.global_avg_pool(x), &mut cases)?;

    // -- norms -------------------------------------------------------------
    let x = normal(sh(1, 6, 5, 5), &mut rng);
    let bn = {
        let c = 6;
        let mut gamma = vec![0.0; c];
        let mut beta = vec![0.0; c];
        let mut mean = vec![0.0; c];
        rng.fill_normal(&mut gamma, 0.2);
        rng.fill_normal(&mut beta, 0.1);
        rng.fill_normal(&mut mean, 0.1);
        let var: Vec<f64> = (0..c).map(|_| 0.5 + rng.next_f64()).collect();
        BatchNormParams {
            gamma: gamma.iter().map(|g| 1.0 + g).collect(),
            beta,
            running_mean: mean,
            running_var: var,
            eps: 1e-5,
        }
    };
    run_case("batch_norm", &x, move |t, x| t.batch_norm(x, &bn), &mut cases)?;

    let x = normal(sh(1, 6, 5, 5), &mut rng);
    let ln = {
        let c = 6;
        let mut gamma = vec![0.0; c];
        let mut beta = vec![0.0; c];
        rng.fill_normal(&mut gamma, 0.2);
        rng.fill_normal(&mut beta, 0.1);
        LayerNormParams { gamma: gamma.iter().map(|g| 1.0 + g).collect(), beta, eps: 1e-5 }
    };
    run_case("layer_norm", &x, move |t, x| t.layer_norm(x, &ln), &mut cases)?;

    // -- matrix ops ----------------------------------------------------------
    let x = rand_mat(6, 8, &mut rng);
    let lin = {
        let mut weight = vec![0.0; 5 * 8];
        rng.fill_normal(&mut weight, 0.4);
        let mut bias = vec![0.0; 5];
        rng.fill_normal(&mut bias, 0.1);
        LinearParams { weight, out_features: 5, in_features: 8, bias: Some(bias) }
    };
    run_case("linear", &x, move |t, x| t.linear(x, &lin), &mut cases)?;

    let a = rand_mat(4, 6, &mut rng);
    let b = rand_mat(6, 3, &mut rng);
    {
        let b2 = b.clone();
        run_case(
            "matmul_lhs",
            &a,
            move |t, x| {
                let o = t.input(b2.clone());
                t.matmul(x, o)
            },
            &mut cases,
        )?;
    }
    {
        let a2 = a.clone();
        run_case(
            "matmul_rhs",
            &b,
            move |t, x| {
                let o = t.input(a2.clone());
                t.matmul(o, x)
            },
            &mut cases,
        )?;
    }

    let x = rand_mat(5, 3, &mut rng);
    let w = rand_mat(5, 4, &mut rng);
    run_case(
        "transpose",
        &x,
        move |t, x| {
            let o = t.input(w.clone());
            let xt = t.transpose(x)?;
            t.matmul(xt, o)
        },
        &mut cases,
    )?;

    // Weight the softmax output through a constant matmul; a bare sum of a
    // softmax row is constant 1 and would have an identically-zero gradient.
    let x = rand_mat(5, 6, &mut rng);
    let w = rand_mat(6, 4, &mut rng);
    run_case(
        "softmax_rows",
        &x,
        move |t, x| {
            let o = t.input(w.clone());
            let s = t.softmax_rows(x)?;
            t.matmul(s, o)
        },
        &mut cases,
    )?;

    // -- layout ops -------------------------------------------------------
    let x = normal(sh(2, 5, 3, 4), &mut rng);
    let w = rand_mat(5, 3, &mut rng);
    run_case(
        "tokens_from_nchw",
        &x,
        move |t, x| {
            let o = t.input(w.clone());
            let tok = t.tokens_from_nchw(x)?;
            t.matmul(tok, o)
        },
        &mut cases,
    )?;

    let x = normal(sh(2, 5, 3, 4), &mut rng);
    run_case(
        "nchw_from_tokens",
        &x,
        |t, x| {
            let tok = t.tokens_from_nchw(x)?;
            let back = t.nchw_from_tokens(tok, 2, 5, 3, 4)?;
            t.gelu(back)
        },
        &mut cases,
    )?;

    let x = rand_mat(6, 8, &mut rng);
    run_case("slice_mat", &x, |t, x| t.slice_mat(x, 1, 4, 2, 5), &mut cases)?;

    let x = rand_mat(3, 4, &mut rng);
    let other = rand_mat(2, 4, &mut rng);
    run_case(
        "concat_rows",
        &x,
        move |t, x| {
            let o = t.input(other.clone());
            t.concat_rows(x, o)
        },
        &mut cases,
    )?;

    let x = rand_mat(3, 4, &mut rng);
    let other = rand_mat(3, 2, &mut rng);
    run_case(
        "concat_cols",
        &x,
        move |t, x| {
            let o = t.input(other.clone());
            t.concat_cols(x, o)
        },
        &mut cases,
    )?;

    // -- composite blocks (GELU keeps them smooth) -------------------------
    let mhca = MhcaSpec { channels: 16, head_dim: 8, norm: NormKind::Batch, act: ActKind::Gelu };
    let mut arrays = Vec::new();
    mhca_arrays(&mhca, "m", &mut arrays);
    let params = random_params(&arrays, &mut rng);
    let x = normal(sh(1, 16, 6, 6), &mut rng);
    run_case("mhca", &x, move |t, x| mhca_forward(t, &x, &mhca, &params, "m"), &mut cases)?;

    let emhsa = EmhsaSpec {
        channels: 16,
        head_dim: 8,
        sr_ratio: 2,
        norm: NormKind::Batch,
        scale: AttnScale::Sqrt,
    };
    let mut arrays = Vec::new();
    emhsa_arrays(&emhsa, "a", &mut arrays);
    let params = random_params(&arrays, &mut rng);
    let x = normal(sh(1, 16, 6, 6), &mut rng);
    run_case("emhsa", &x, move |t, x| emhsa_forward(t, &x, &emhsa, &params, "a"), &mut cases)?;

    let ncb = NcbSpec::new(16, 16, 8, 3.0, NormKind::Batch, ActKind::Gelu)?;
    let mut arrays = Vec::new();
    ncb_arrays(&ncb, "ncb", &mut arrays);
    let params = random_params(&arrays, &mut rng);
    let x = normal(sh(1, 16, 6, 6), &mut rng);
    run_case("ncb", &x, move |t, x| ncb_forward(t, &x, &ncb, &params, "ncb"), &mut cases)?;

    let ncb = NcbSpec::new(12, 16, 8, 3.0, NormKind::Batch, ActKind::Gelu)?;
    let mut arrays = Vec::new();
    ncb_arrays(&ncb, "ncb", &mut arrays);
    let params = random_params(&arrays, &mut rng);
    let x = normal(sh(1, 12, 6, 6), &mut rng);
    run_case("ncb_adapter", &x, move |t, x| ncb_forward(t, &x, &ncb, &params, "ncb"), &mut cases)?;

    // r=0.75 at 32 channels, head_dim 8 -> c_hi 24, c_lo 8: both branches and
    // both projections live.
    let ntb =
        NtbSpec::new(32, 32, 0.75, 8, 2, 2.0, NormKind::Batch, ActKind::Gelu, AttnScale::Sqrt)?;
    let mut arrays = Vec::new();
    ntb_arrays(&ntb, "ntb", &mut arrays);
    let params = random_params(&arrays, &mut rng);
    let x = normal(sh(1, 32, hw.min(8), hw.min(8)), &mut rng);
    run_case("ntb", &x, move |t, x| ntb_forward(t, &x, &ntb, &params, "ntb"), &mut cases)?;

    // Layer-norm flavor of the NCB to cover LN inside a composite.
    let ncb = NcbSpec::new(16, 16, 8, 3.0, NormKind::Layer, ActKind::Gelu)?;
    let mut arrays = Vec::new();
    ncb_arrays(&ncb, "ncb", &mut arrays);
    let params = random_params(&arrays, &mut rng);
    let x = normal(sh(1, 16, 6, 6), &mut rng);
    run_case(
        "ncb_layernorm",
        &x,
        move |t, x| ncb_forward(t, &x, &ncb, &params, "ncb"),
        &mut cases,
    )?;

    Ok(cases)
}
