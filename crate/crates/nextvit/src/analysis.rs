//! Cost accounting (exact parameter counts, MAC-convention FLOPs) and the
//! batch-norm folding deployment pass with its equivalence certification.
//!
//! Conventions: FLOPs = multiply-accumulates, counted once each. Convolution
//! costs (k²·Cin/g)·Cout·Hout·Wout, a linear costs in·out per token, attention
//! costs heads·tokens·keytokens·head_dim for QKᵀ and again for AV. Pooling,
//! norms, activations and bias adds count zero. Running statistics are
//! buffers, not parameters.

use crate::backend::Eval;
use crate::blocks::{join, mlp_hidden, EmhsaSpec, MhcaSpec, NcbSpec, NormKind, NtbSpec, NORM_EPS};
use crate::error::{Error, Result};
use crate::model::{forward_opts, model_arrays, Block, ModelSpec};
use crate::ops::bn_scale_shift;
use crate::params::{ParamArray, ParamSet};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Parameter / FLOP totals with an exact per-module breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub params_total: u64,
    pub flops_total: u64,
    /// (module path, params, flops); entries sum to the totals exactly.
    pub per_module: Vec<(String, u64, u64)>,
}

impl CostReport {
    pub fn params_m(&self) -> f64 {
        self.params_total as f64 / 1e6
    }

    pub fn flops_g(&self) -> f64 {
        self.flops_total as f64 / 1e9
    }
}

/// Module row an array key belongs to: `stem`, `head`, `stageN.embed` or
/// `stageN.blockM`.
fn module_of(key: &str) -> String {
    let mut it = key.split('.');
    let first = it.next().unwrap_or(key);
    if first == "stem" || first == "head" {
        return first.to_string();
    }
    match it.next() {
        Some(second) => format!("{first}.{second}"),
        None => first.to_string(),
    }
}

struct Rows {
    order: Vec<String>,
    params: Vec<u64>,
    flops: Vec<u64>,
}

impl Rows {
    fn new() -> Self {
        Rows { order: Vec::new(), params: Vec::new(), flops: Vec::new() }
    }

    fn index(&mut self, name: &str) -> usize {
        if let Some(i) = self.order.iter().position(|n| n == name) {
            return i;
        }
        self.order.push(name.to_string());
        self.params.push(0);
        self.flops.push(0);
        self.order.len() - 1
    }

    fn add_params(&mut self, name: &str, n: u64) {
        let i = self.index(name);
        self.params[i] += n;
    }

    fn add_flops(&mut self, name: &str, n: u64) {
        let i = self.index(name);
        self.flops[i] += n;
    }

    fn finish(self) -> CostReport {
        let params_total = self.params.iter().sum();
        let flops_total = self.flops.iter().sum();
        let per_module = self
            .order
            .into_iter()
            .zip(self.params)
            .zip(self.flops)
            .map(|((n, p), f)| (n, p, f))
            .collect();
        CostReport { params_total, flops_total, per_module }
    }
}

fn add_param_rows(spec: &ModelSpec, rows: &mut Rows) {
    for a in model_arrays(spec) {
        if a.kind.learnable() {
            rows.add_params(&module_of(&a.key), a.numel() as u64);
        }
    }
}

/// Exact count of learnable scalars (conv and linear weights and biases, norm
/// affine pairs); BN running statistics excluded.
pub fn count_params(spec: &ModelSpec) -> CostReport {
    let mut rows = Rows::new();
    add_param_rows(spec, &mut rows);
    rows.finish()
}

fn conv_macs(cin: usize, cout: usize, k: usize, groups: usize, h: usize, w: usize) -> u64 {
    (k as u64 * k as u64 * (cin / groups) as u64) * cout as u64 * h as u64 * w as u64
}

fn mhca_macs(spec: &MhcaSpec, h: usize, w: usize) -> u64 {
    let c = spec.channels;
    conv_macs(c, c, 3, spec.heads(), h, w) + conv_macs(c, c, 1, 1, h, w)
}

fn mlp_macs(channels: usize, ratio: f64, h: usize, w: usize) -> u64 {
    let hid = mlp_hidden(channels, ratio).expect("validated at spec construction");
    conv_macs(channels, hid, 1, 1, h, w) + conv_macs(hid, channels, 1, 1, h, w)
}

fn ncb_macs(spec: &NcbSpec, h: usize, w: usize) -> u64 {
    let mut t = 0;
    if spec.has_adapter() {
        t += conv_macs(spec.in_channels, spec.out_channels, 1, 1, h, w);
    }
    t + mhca_macs(&spec.mhca, h, w) + mlp_macs(spec.out_channels, spec.mlp_ratio, h, w)
}

fn emhsa_macs(spec: &EmhsaSpec, h: usize, w: usize) -> u64 {
    let c = spec.channels as u64;
    let toks = (h * w) as u64;
    let ktoks = (h.div_ceil(spec.sr_ratio) * w.div_ceil(spec.sr_ratio)) as u64;
    let heads = spec.heads() as u64;
    let d = spec.head_dim as u64;
    toks * c * c              // Q projection on the full grid
        + 2 * ktoks * c * c   // K and V projections on the pooled grid
        + 2 * heads * toks * ktoks * d // QK^T and AV
        + toks * c * c // output projection W^P
}

fn ntb_macs(spec: &NtbSpec, h: usize, w: usize) -> u64 {
    let mut t = 0;
    if spec.has_proj_hi() {
        t += conv_macs(spec.in_channels, spec.c_hi, 1, 1, h, w);
    }
    if spec.c_hi > 0 {
        t += emhsa_macs(&spec.emhsa, h, w);
    }
    if spec.has_proj_lo() {
        t += conv_macs(spec.proj_lo_in(), spec.c_lo, 1, 1, h, w);
    }
    if spec.c_lo > 0 {
        t += mhca_macs(&spec.mhca, h, w);
    }
    t + mlp_macs(spec.out_channels, spec.mlp_ratio, h, w)
}

/// MAC counts at the given input size; the report also carries the parameter
/// breakdown so one call serves the `describe` table.
pub fn count_flops(spec: &ModelSpec, input: (usize, usize)) -> Result<CostReport> {
    let (mut h, mut w) = input;
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "flops: spatial dims must be positive multiples of 32, got {h}x{w}"
        )));
    }
    let mut rows = Rows::new();
    add_param_rows(spec, &mut rows);

    for (cin, cout, stride) in spec.stem_layers() {
        h = (h + 2 - 3) / stride + 1;
        w = (w + 2 - 3) / stride + 1;
        rows.add_flops("stem", conv_macs(cin, cout, 3, 1, h, w));
    }
    for (si, stage) in spec.stages.iter().enumerate() {
        let sp = format!("stage{}", si + 1);
        if stage.embed.downsample {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        if stage.embed.has_proj() {
            rows.add_flops(
                &join(&sp, "embed"),
                conv_macs(stage.embed.in_channels, stage.embed.out_channels, 1, 1, h, w),
            );
        }
        for (bi, block) in stage.blocks.iter().enumerate() {
            let macs = match block {
                Block::Ncb(s) => ncb_macs(s, h, w),
                Block::Ntb(s) => ntb_macs(s, h, w),
            };
            rows.add_flops(&format!("{sp}.block{bi}"), macs);
        }
    }
    rows.add_flops("head", spec.head_in_channels() as u64 * spec.num_classes as u64);
    Ok(rows.finish())
}

// ---------------------------------------------------------------------------
// Batch-norm folding
// ---------------------------------------------------------------------------

/// Deep copy with every norm slot set to `norm`.
fn with_norm(spec: &ModelSpec, norm: NormKind) -> ModelSpec {
    let mut s = spec.clone();
    s.settings.norm = norm;
    for stage in &mut s.stages {
        for b in &mut stage.blocks {
            match b {
                Block::Ncb(n) => n.mhca.norm = norm,
                Block::Ntb(n) => {
                    n.emhsa.norm = norm;
                    n.mhca.norm = norm;
                }
            }
        }
    }
    s
}

/// Fold one conv–BN pair: w′ = w·γ/√(var+eps) per output channel and
/// b′ = (b−mean)·γ/√(var+eps)+β, written as conv weight + bias.
fn fold_conv<T: Scalar>(
    params: &ParamSet<T>,
    out: &mut ParamSet<T>,
    conv_prefix: &str,
    norm_prefix: &str,
    cout: usize,
) -> Result<()> {
    let wkey = join(conv_prefix, "weight");
    let w = params.get(&wkey)?;
    if w.dims.first() != Some(&cout) {
        return Err(Error::ParamDims(wkey, w.dims.clone()));
    }
    let bn = params.batch_norm(norm_prefix, cout, T::from_f64(NORM_EPS))?;
    let (scale, shift) = bn_scale_shift(&bn);
    let per = w.data.len() / cout;
    let mut data = Vec::with_capacity(w.data.len());
    for (c, &sc) in scale.iter().enumerate() {
        for i in 0..per {
            data.push(w.data[c * per + i] * sc);
        }
    }
    let bias_key = join(conv_prefix, "bias");
    let bias: Vec<T> = if params.contains(&bias_key) {
        let b = params.get(&bias_key)?;
        (0..cout).map(|c| b.data[c] * scale[c] + shift[c]).collect()
    } else {
        shift
    };
    out.insert(wkey, ParamArray::new(w.dims.clone(), data)?);
    out.insert(bias_key, ParamArray::vector(bias));
    Ok(())
}

/// Absorb a per-channel affine that precedes a linear layer into the layer:
/// y = W(a⊙x + c) + b = (W·diag(a))x + (Wc + b).
fn fold_linear_pre<T: Scalar>(
    params: &ParamSet<T>,
    out: &mut ParamSet<T>,
    lin_prefix: &str,
    scale: &[T],
    shift: &[T],
) -> Result<()> {
    let wkey = join(lin_prefix, "weight");
    let bkey = join(lin_prefix, "bias");
    let w = params.get(&wkey)?;
    let b = params.get(&bkey)?;
    let (of, inf) = match w.dims.as_slice() {
        [o, i] => (*o, *i),
        _ => return Err(Error::ParamDims(wkey, w.dims.clone())),
    };
    if inf != scale.len() {
        return Err(Error::ParamDims(wkey, w.dims.clone()));
    }
    let mut data = Vec::with_capacity(w.data.len());
    let mut bias = Vec::with_capacity(of);
    for o in 0..of {
        let row = &w.data[o * inf..(o + 1) * inf];
        let mut acc = b.data[o];
        for i in 0..inf {
            data.push(row[i] * scale[i]);
            acc += row[i] * shift[i];
        }
        bias.push(acc);
    }
    out.insert(wkey, ParamArray::new(w.dims.clone(), data)?);
    out.insert(bkey, ParamArray::vector(bias));
    Ok(())
}

fn copy_linear<T: Scalar>(params: &ParamSet<T>, out: &mut ParamSet<T>, prefix: &str) -> Result<()> {
    for name in ["weight", "bias"] {
        let key = join(prefix, name);
        out.insert(key.clone(), params.get(&key)?.clone());
    }
    Ok(())
}

fn fold_mhca<T: Scalar>(
    params: &ParamSet<T>,
    out: &mut ParamSet<T>,
    prefix: &str,
    spec: &MhcaSpec,
) -> Result<()> {
    fold_conv(params, out, &join(prefix, "gconv"), &join(prefix, "norm1"), spec.channels)?;
    fold_conv(params, out, &join(prefix, "proj"), &join(prefix, "norm2"), spec.channels)
}

fn fold_mlp<T: Scalar>(
    params: &ParamSet<T>,
    out: &mut ParamSet<T>,
    prefix: &str,
    channels: usize,
    ratio: f64,
) -> Result<()> {
    let hid = mlp_hidden(channels, ratio)?;
    fold_conv(params, out, &join(prefix, "conv1"), &join(prefix, "norm1"), hid)?;
    fold_conv(params, out, &join(prefix, "conv2"), &join(prefix, "norm2"), channels)
}

fn fold_emhsa<T: Scalar>(
    params: &ParamSet<T>,
    out: &mut ParamSet<T>,
    prefix: &str,
    spec: &EmhsaSpec,
) -> Result<()> {
    // The K/V-side BN sits between the (linear) pooling and the K/V
    // projections, so it folds into those two linears; Q and W^P see no norm.
    let bn = params.batch_norm(&join(prefix, "norm"), spec.channels, T::from_f64(NORM_EPS))?;
    let (scale, shift) = bn_scale_shift(&bn);
    copy_linear(params, out, &join(prefix, "q"))?;
    fold_linear_pre(params, out, &join(prefix, "k"), &scale, &shift)?;
    fold_linear_pre(params, out, &join(prefix, "v"), &scale, &shift)?;
    copy_linear(params, out, &join(prefix, "proj"))
}

/// Fold every batch norm into the preceding conv or the following linear.
/// The returned spec has no norm nodes; convs carry the absorbed biases.
pub fn fold_batchnorm<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamSet<T>,
) -> Result<(ModelSpec, ParamSet<T>)> {
    match spec.settings.norm {
        NormKind::Layer => {
            return Err(Error::NotFoldable(
                "stem.norm0: layer norm does not fold into a preceding conv".into(),
            ));
        }
        NormKind::None => {
            return Err(Error::NotFoldable("model carries no norm nodes (already folded)".into()));
        }
        NormKind::Batch => {}
    }
    let mut out = ParamSet::new();
    for (i, _) in spec.stem_layers().into_iter().enumerate() {
        fold_conv(
            params,
            &mut out,
            &format!("stem.conv{i}"),
            &format!("stem.norm{i}"),
            spec.stem_widths[i],
        )?;
    }
    for (si, stage) in spec.stages.iter().enumerate() {
        let sp = format!("stage{}", si + 1);
        if stage.embed.has_proj() {
            fold_conv(
                params,
                &mut out,
                &join(&sp, "embed.conv"),
                &join(&sp, "embed.norm"),
                stage.embed.out_channels,
            )?;
        }
        for (bi, block) in stage.blocks.iter().enumerate() {
            let bp = format!("{sp}.block{bi}");
            match block {
                Block::Ncb(b) => {
                    if b.has_adapter() {
                        fold_conv(
                            params,
                            &mut out,
                            &join(&bp, "adapter.conv"),
                            &join(&bp, "adapter.norm"),
                            b.out_channels,
                        )?;
                    }
                    fold_mhca(params, &mut out, &join(&bp, "mhca"), &b.mhca)?;
                    fold_mlp(params, &mut out, &join(&bp, "mlp"), b.out_channels, b.mlp_ratio)?;
                }
                Block::Ntb(b) => {
                    if b.has_proj_hi() {
                        fold_conv(
                            params,
                            &mut out,
                            &join(&bp, "proj_hi.conv"),
                            &join(&bp, "proj_hi.norm"),
                            b.c_hi,
                        )?;
                    }
                    if b.c_hi > 0 {
                        fold_emhsa(params, &mut out, &join(&bp, "attn"), &b.emhsa)?;
                    }
                    if b.has_proj_lo() {
                        fold_conv(
                            params,
                            &mut out,
                            &join(&bp, "proj_lo.conv"),
                            &join(&bp, "proj_lo.norm"),
                            b.c_lo,
                        )?;
                    }
                    if b.c_lo > 0 {
                        fold_mhca(params, &mut out, &join(&bp, "mhca"), &b.mhca)?;
                    }
                    fold_mlp(params, &mut out, &join(&bp, "mlp"), b.out_channels, b.mlp_ratio)?;
                }
            }
        }
    }
    copy_linear(params, &mut out, "head")?;
    Ok((with_norm(spec, NormKind::None), out))
}

// ---------------------------------------------------------------------------
// Equivalence certification
// ---------------------------------------------------------------------------

/// Numerical comparison of two models over seeded random inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Per sample: do both models pick the same top class?
    pub argmax_match: Vec<bool>,
    pub samples: usize,
    pub tol: f64,
}

impl EquivReport {
    pub fn passed(&self) -> bool {
        self.max_abs_err <= self.tol && self.argmax_match.iter().all(|&m| m)
    }
}

fn argmax_row<T: Scalar>(logits: &Tensor<T>, row: usize) -> usize {
    let cols = logits.cols();
    let mut best = 0;
    let mut best_v = logits.mat_at(row, 0);
    for j in 1..cols {
        let v = logits.mat_at(row, j);
        if v > best_v {
            best_v = v;
            best = j;
        }
    }
    best
}

/// Run both models on the same `n_samples` seeded inputs at `size` and
/// compare logits element-wise. Relative error uses a 1e-12 denominator floor.
#[allow(clippy::too_many_arguments)]
pub fn check_equivalence_at<T: Scalar>(
    spec_a: &ModelSpec,
    params_a: &ParamSet<T>,
    spec_b: &ModelSpec,
    params_b: &ParamSet<T>,
    n_samples: usize,
    seed: u64,
    tol: f64,
    size: (usize, usize),
) -> Result<EquivReport> {
    if spec_a.in_channels != spec_b.in_channels || spec_a.num_classes != spec_b.num_classes {
        return Err(Error::SignatureMismatch(format!(
            "({} ch -> {} classes) vs ({} ch -> {} classes)",
            spec_a.in_channels, spec_a.num_classes, spec_b.in_channels, spec_b.num_classes
        )));
    }
    let mut report = EquivReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        argmax_match: Vec::with_capacity(n_samples),
        samples: n_samples,
        tol,
    };
    if n_samples == 0 {
        return Ok(report);
    }
    let mut rng = SplitMix64::new(seed);
    let shape = Shape { n: n_samples, c: spec_a.in_channels, h: size.0, w: size.1 };
    let x: Tensor<T> = Tensor::random_normal(shape, &mut rng, 1.0);
    let mut eval = Eval::parallel();
    let la = forward_opts(spec_a, params_a, &x, &mut eval, false)?.logits;
    let lb = forward_opts(spec_b, params_b, &x, &mut eval, false)?.logits;
    if la.shape() != lb.shape() {
        return Err(Error::SignatureMismatch(format!(
            "logit shapes differ: {} vs {}",
            la.shape(),
            lb.shape()
        )));
    }
    for s in 0..n_samples {
        for j in 0..la.cols() {
            let a = la.mat_at(s, j).to_f64();
            let b = lb.mat_at(s, j).to_f64();
            let abs = (a - b).abs();
            let rel = abs / a.abs().max(b.abs()).max(1e-12);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
        }
        report.argmax_match.push(argmax_row(&la, s) == argmax_row(&lb, s));
    }
    Ok(report)
}

/// `check_equivalence_at` at the paper's 224x224 evaluation size.
#[allow(clippy::too_many_arguments)]
pub fn check_equivalence<T: Scalar>(
    spec_a: &ModelSpec,
    params_a: &ParamSet<T>,
    spec_b: &ModelSpec,
    params_b: &ParamSet<T>,
    n_samples: usize,
    seed: u64,
    tol: f64,
) -> Result<EquivReport> {
    check_equivalence_at(spec_a, params_a, spec_b, params_b, n_samples, seed, tol, (224, 224))
}
