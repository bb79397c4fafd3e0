//! The two building blocks — NCB (convolutional) and NTB (hybrid
//! transformer) — plus their mixers MHCA and E-MHSA.
//!
//! Forwards are generic over [`Backend`], so the identical block code runs
//! on plain tensors for inference and on a tape for gradient checking. Each
//! block also declares its parameter arrays (`*_arrays`), and initialization,
//! counting and weight-signature validation all consume that one declaration.
//!
//! Parameter key layout, relative to a block prefix:
//!
//! ```text
//! NCB:  adapter.{conv,norm}   (only when in_channels != out_channels)
//!       mhca.{gconv,norm1,proj,norm2}
//!       mlp.{conv1,norm1,conv2,norm2}
//! NTB:  proj_hi.{conv,norm}   (only when in_channels != c_hi)
//!       attn.{norm,q,k,v,proj}
//!       proj_lo.{conv,norm}   (only when c_hi != c_lo)
//!       mhca.{...}  mlp.{...}
//! ```
//!
//! Norm entries are `.gamma/.beta` (+ `.mean/.var` for batch norm). In folded
//! models norms disappear and each conv gains a `.bias`.

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::params::{ArraySpec, ParamKind, ParamSet};
use crate::scalar::Scalar;

/// Epsilon shared by every norm layer.
pub const NORM_EPS: f64 = 1e-5;

/// Init variance gain for the last projection of each residual branch; keeps
/// deep residual stacks from blowing up activations at random init.
pub const RESIDUAL_GAIN: f64 = 1.0 / 16.0;

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum NormKind {
    Batch,
    Layer,
    /// No norm node; produced by batch-norm folding (the conv carries a bias).
    None,
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum ActKind {
    Relu,
    Gelu,
}

/// Attention logit scaling: 1/sqrt(head_dim) (standard) or 1/head_dim (the
/// literal printed denominator); selectable, default sqrt.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Default)]
pub enum AttnScale {
    #[default]
    Sqrt,
    Linear,
}

impl AttnScale {
    pub fn factor(&self, head_dim: usize) -> f64 {
        match self {
            AttnScale::Sqrt => 1.0 / (head_dim as f64).sqrt(),
            AttnScale::Linear => 1.0 / head_dim as f64,
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// MLP hidden width: round(channels * ratio), at least 1.
pub fn mlp_hidden(channels: usize, ratio: f64) -> Result<usize> {
    let hid = (channels as f64 * ratio).round() as usize;
    if hid == 0 {
        return Err(Error::InvalidRatio(format!(
            "mlp ratio {ratio} on {channels} channels gives an empty hidden layer"
        )));
    }
    Ok(hid)
}

/// Channel split of an NTB output: c_hi (E-MHSA branch) is r * out_channels
/// rounded half-up, snapped to the nearest multiple of head_dim; c_lo is the
/// remainder.
pub fn split_channels(
    out_channels: usize,
    shrink_ratio: f64,
    head_dim: usize,
) -> Result<(usize, usize)> {
    if !shrink_ratio.is_finite() || !(0.0..=1.0).contains(&shrink_ratio) {
        return Err(Error::InvalidRatio(format!("shrink ratio {shrink_ratio} outside [0, 1]")));
    }
    if head_dim == 0 || out_channels == 0 {
        return Err(Error::InvalidRatio(format!(
            "out_channels {out_channels} / head_dim {head_dim} must be positive"
        )));
    }
    let raw = (shrink_ratio * out_channels as f64).round();
    let mut c_hi = ((raw / head_dim as f64).round() as usize) * head_dim;
    while c_hi > out_channels {
        c_hi -= head_dim;
    }
    let c_lo = out_channels - c_hi;
    if c_lo > 0 && !c_lo.is_multiple_of(head_dim) {
        return Err(Error::InvalidRatio(format!(
            "conv branch width {c_lo} (out {out_channels}, r {shrink_ratio}) not divisible by head_dim {head_dim}"
        )));
    }
    Ok((c_hi, c_lo))
}

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct MhcaSpec {
    pub channels: usize,
    pub head_dim: usize,
    pub norm: NormKind,
    pub act: ActKind,
}

impl MhcaSpec {
    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || self.channels == 0 || !self.channels.is_multiple_of(self.head_dim)
        {
            return Err(Error::HeadMismatch(format!(
                "MHCA channels {} not a multiple of head_dim {}",
                self.channels, self.head_dim
            )));
        }
        Ok(())
    }

    pub fn heads(&self) -> usize {
        self.channels / self.head_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NcbSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub mlp_ratio: f64,
    pub mhca: MhcaSpec,
}

impl NcbSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        head_dim: usize,
        mlp_ratio: f64,
        norm: NormKind,
        act: ActKind,
    ) -> Result<Self> {
        let spec = NcbSpec {
            in_channels,
            out_channels,
            mlp_ratio,
            mhca: MhcaSpec { channels: out_channels, head_dim, norm, act },
        };
        spec.mhca.validate()?;
        mlp_hidden(out_channels, mlp_ratio)?;
        Ok(spec)
    }

    pub fn has_adapter(&self) -> bool {
        self.in_channels != self.out_channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmhsaSpec {
    pub channels: usize,
    pub head_dim: usize,
    pub sr_ratio: usize,
    pub norm: NormKind,
    pub scale: AttnScale,
}

impl EmhsaSpec {
    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || self.channels == 0 || !self.channels.is_multiple_of(self.head_dim)
        {
            return Err(Error::HeadMismatch(format!(
                "E-MHSA channels {} not a multiple of head_dim {}",
                self.channels, self.head_dim
            )));
        }
        if self.sr_ratio == 0 {
            return Err(Error::InvalidRatio("sr_ratio must be >= 1".into()));
        }
        Ok(())
    }

    pub fn heads(&self) -> usize {
        self.channels / self.head_dim
    }
}

/// NTB: the mhca field also fixes the block-wide norm/act pair used by the
/// projections and the MLP, even when the conv branch is empty (r = 1 keeps
/// the field with c_lo = 0).
#[derive(Clone, Debug, PartialEq)]
pub struct NtbSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub shrink_ratio: f64,
    pub mlp_ratio: f64,
    pub c_hi: usize,
    pub c_lo: usize,
    pub emhsa: EmhsaSpec,
    pub mhca: MhcaSpec,
}

impl NtbSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        shrink_ratio: f64,
        head_dim: usize,
        sr_ratio: usize,
        mlp_ratio: f64,
        norm: NormKind,
        act: ActKind,
        scale: AttnScale,
    ) -> Result<Self> {
        let (c_hi, c_lo) = split_channels(out_channels, shrink_ratio, head_dim)?;
        let spec = NtbSpec {
            in_channels,
            out_channels,
            shrink_ratio,
            mlp_ratio,
            c_hi,
            c_lo,
            emhsa: EmhsaSpec { channels: c_hi, head_dim, sr_ratio, norm, scale },
            mhca: MhcaSpec { channels: c_lo, head_dim, norm, act },
        };
        if c_hi > 0 {
            spec.emhsa.validate()?;
        }
        if c_lo > 0 {
            spec.mhca.validate()?;
        }
        mlp_hidden(out_channels, mlp_ratio)?;
        Ok(spec)
    }

    /// Input width of the conv-branch projection: c_hi normally, in_channels
    /// when r = 0 removes the attention branch entirely.
    pub fn proj_lo_in(&self) -> usize {
        if self.c_hi > 0 {
            self.c_hi
        } else {
            self.in_channels
        }
    }

    pub fn has_proj_hi(&self) -> bool {
        self.c_hi > 0 && self.in_channels != self.c_hi
    }

    pub fn has_proj_lo(&self) -> bool {
        self.c_lo > 0 && self.proj_lo_in() != self.c_lo
    }
}

// ---------------------------------------------------------------------------
// Forward helpers
// ---------------------------------------------------------------------------

pub(crate) fn apply_norm<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Value,
    params: &ParamSet<T>,
    prefix: &str,
    kind: NormKind,
    channels: usize,
) -> Result<B::Value> {
    let eps = T::from_f64(NORM_EPS);
    match kind {
        NormKind::Batch => {
            let p = params.batch_norm(prefix, channels, eps)?;
            b.batch_norm(x, &p)
        }
        NormKind::Layer => {
            let p = params.layer_norm(prefix, channels, eps)?;
            b.layer_norm(x, &p)
        }
        NormKind::None => Ok(x.clone()),
    }
}

pub(crate) fn apply_act<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Value,
    act: ActKind,
) -> Result<B::Value> {
    match act {
        ActKind::Relu => b.relu(x),
        ActKind::Gelu => b.gelu(x),
    }
}

/// conv (bias present only in folded params) followed by the norm, if any.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_norm<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Value,
    params: &ParamSet<T>,
    conv_prefix: &str,
    norm_prefix: &str,
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    norm: NormKind,
) -> Result<B::Value> {
    let p = params.conv(conv_prefix, out_channels, in_channels, kernel, stride, padding, groups)?;
    let y = b.conv2d(x, &p)?;
    apply_norm(b, &y, params, norm_prefix, norm, out_channels)
}

/// Pointwise expand -> norm -> act -> pointwise project -> norm.
#[allow(clippy::too_many_arguments)]
fn mlp_forward<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Value,
    params: &ParamSet<T>,
    prefix: &str,
    channels: usize,
    ratio: f64,
    norm: NormKind,
    act: ActKind,
) -> Result<B::Value> {
    let hid = mlp_hidden(channels, ratio)?;
    let y = conv_norm(
        b,
        x,
        params,
        &join(prefix, "conv1"),
        &join(prefix, "norm1"),
        hid,
        channels,
        1,
        1,
        0,
        1,
        norm,
    )?;
    let y = apply_act(b, &y, act)?;
    conv_norm(
        b,
        &y,
        params,
        &join(prefix, "conv2"),
        &join(prefix, "norm2"),
        channels,
        hid,
        1,
        1,
        0,
        1,
        norm,
    )
}

// ---------------------------------------------------------------------------
// MHCA
// ---------------------------------------------------------------------------

/// Grouped 3x3 conv (group width = head_dim) -> norm -> act -> 1x1 W^P -> norm.
/// Pure mixer: the residual add lives in the enclosing block.
pub fn mhca_forward<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Value,
    spec: &MhcaSpec,
    params: &ParamSet<T>,
    prefix: &str,
) -> Result<B::Value> {
    spec.validate()?;
    let s = b.shape(x);
    if s.c != spec.channels {
        return Err(Error::ShapeMismatch(format!(
            "mhca: input has {} channels, spec expects {}",
            s.c, spec.channels
        )));
    }
    let c = spec.channels;
    let y = conv_norm(
        b,
        x,
        params,
        &join(prefix, "gconv"),
        &join(prefix, "norm1"),
        c,
        c,
        3,
        1,
        1,
        spec.heads(),
        spec.norm,
    )?;
    let y = apply_act(b, &y, spec.act)?;
    conv_norm(
        b,
        &y,
        params,
        &join(prefix, "proj"),
        &join(prefix, "norm2"),
        c,
        c,
        1,
        1,
        0,
        1,
        spec.norm,
    )
}

pub fn mhca_arrays(spec: &MhcaSpec, prefix: &str, out: &mut Vec<ArraySpec>) {
    let c = spec.channels;
    let d = spec.head_dim;
    conv_norm_arrays(
        &join(prefix, "gconv"),
        &join(prefix, "norm1"),
        vec![c, d, 3, 3],
        d * 9,
        1.0,
        spec.norm,
        out,
    );
    conv_norm_arrays(
        &join(prefix, "proj"),
        &join(prefix, "norm2"),
        vec![c, c, 1, 1],
        c,
        RESIDUAL_GAIN,
        spec.norm,
        out,
    );
}

// ---------------------------------------------------------------------------
// NCB
// ---------------------------------------------------------------------------

/// Eq-1 layout: optional pointwise adapter, then x + MHCA(x), then the
/// inverted-residual MLP. The adapted tensor is the residual base.
pub fn ncb_forward<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Value,
    spec: &NcbSpec,
    params: &ParamSet<T>,
    prefix: &str,
) -> Result<B::Value> {
    let s = b.shape(x);
    if s.c != spec.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "ncb: input has {} channels, spec expects {}",
            s.c, spec.in_channels
        )));
    }
    let norm = spec.mhca.norm;
    let act = spec.mhca.act;
    let base = if spec.has_adapter() {
        conv_norm(
            b,
            x,
            params,
            &join(prefix, "adapter.conv"),
            &join(prefix, "adapter.norm"),
            spec.out_channels,
            spec.in_channels,
            1,
            1,
            0,
            1,
            norm,
        )?
    } else {
        x.clone()
    };
    let mixed = mhca_forward(b, &base, &spec.mhca, params, &join(prefix, "mhca"))?;
    let z1 = b.add(&mixed, &base)?;
    let mlp = mlp_forward(
        b,
        &z1,
        params,
        &join(prefix, "mlp"),
        spec.out_channels,
        spec.mlp_ratio,
        norm,
        act,
    )?;
    b.add(&mlp, &z1)
}

pub fn ncb_arrays(spec: &NcbSpec, prefix: &str, out: &mut Vec<ArraySpec>) {
    let norm = spec.mhca.norm;
    if spec.has_adapter() {
        conv_norm_arrays(
            &join(prefix, "adapter.conv"),
            &join(prefix, "adapter.norm"),
            vec![spec.out_channels, spec.in_channels, 1, 1],
            spec.in_channels,
            1.0,
            norm,
            out,
        );
    }
    mhca_arrays(&spec.mhca, &join(prefix, "mhca"), out);
    mlp_arrays(&join(prefix, "mlp"), spec.out_channels, spec.mlp_ratio, norm, out);
}

// ---------------------------------------------------------------------------
// E-MHSA
// ---------------------------------------------------------------------------

/// Spatial-reduction multi-head self-attention. Queries come from the full
/// token grid; keys/values from the stride-s ceil-mode avg-pooled map passed
/// through a norm. Heads are concatenated and projected by W^P. Pure mixer:
/// no residual here.
pub fn emhsa_forward<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Value,
    spec: &EmhsaSpec,
    params: &ParamSet<T>,
    prefix: &str,
) -> Result<B::Value> {
    spec.validate()?;
    let s = b.shape(x);
    if s.c != spec.channels {
        return Err(Error::ShapeMismatch(format!(
            "emhsa: input has {} channels, spec expects {}",
            s.c, spec.channels
        )));
    }
    if s.h * s.w == 0 {
        return Err(Error::ShapeMismatch("emhsa: empty spatial extent".into()));
    }
    let c = spec.channels;
    let d = spec.head_dim;
    let heads = spec.heads();
    let t = s.h * s.w;

    let tokens = b.tokens_from_nchw(x)?;
    let q = b.linear(&tokens, &params.linear(&join(prefix, "q"), c, c)?)?;

    let pooled = if spec.sr_ratio > 1 {
        b.avg_pool2d_ceil(x, spec.sr_ratio, spec.sr_ratio)?
    } else {
        x.clone()
    };
    let pooled = apply_norm(b, &pooled, params, &join(prefix, "norm"), spec.norm, c)?;
    let ps = b.shape(&pooled);
    let tk = ps.h * ps.w;
    let kv_tokens = b.tokens_from_nchw(&pooled)?;
    let k = b.linear(&kv_tokens, &params.linear(&join(prefix, "k"), c, c)?)?;
    let v = b.linear(&kv_tokens, &params.linear(&join(prefix, "v"), c, c)?)?;

    let alpha = T::from_f64(spec.scale.factor(d));
    let mut batch: Option<B::Value> = None;
    for ni in 0..s.n {
        let mut merged: Option<B::Value> = None;
        for head in 0..heads {
            let qh = b.slice_mat(&q, ni * t, t, head * d, d)?;
            let kh = b.slice_mat(&k, ni * tk, tk, head * d, d)?;
            let vh = b.slice_mat(&v, ni * tk, tk, head * d, d)?;
            let kt = b.transpose(&kh)?;
            let logits = b.matmul(&qh, &kt)?;
            let scaled = b.scale(&logits, alpha)?;
            let attn = b.softmax_rows(&scaled)?;
            let oh = b.matmul(&attn, &vh)?;
            merged = Some(match merged {
                Some(m) => b.concat_cols(&m, &oh)?,
                None => oh,
            });
        }
        let sample = merged.expect("heads >= 1 after validate");
        batch = Some(match batch {
            Some(rows) => b.concat_rows(&rows, &sample)?,
            None => sample,
        });
    }
    let all = batch.expect("batch >= 1");
    let out = b.linear(&all, &params.linear(&join(prefix, "proj"), c, c)?)?;
    b.nchw_from_tokens(&out, s.n, c, s.h, s.w)
}

pub fn emhsa_arrays(spec: &EmhsaSpec, prefix: &str, out: &mut Vec<ArraySpec>) {
    let c = spec.channels;
    norm_arrays(&join(prefix, "norm"), c, spec.norm, out);
    linear_arrays(&join(prefix, "q"), c, c, 1.0, out);
    linear_arrays(&join(prefix, "k"), c, c, 1.0, out);
    linear_arrays(&join(prefix, "v"), c, c, 1.0, out);
    linear_arrays(&join(prefix, "proj"), c, c, RESIDUAL_GAIN, out);
}

// ---------------------------------------------------------------------------
// NTB
// ---------------------------------------------------------------------------

/// Eq-6 layout: project to c_hi, attention with residual, project to c_lo,
/// MHCA with residual, concat, MLP with residual. r = 0 drops the attention
/// branch (projection maps straight to c_lo); r = 1 drops the conv branch.
pub fn ntb_forward<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Value,
    spec: &NtbSpec,
    params: &ParamSet<T>,
    prefix: &str,
) -> Result<B::Value> {
    let s = b.shape(x);
    if s.c != spec.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "ntb: input has {} channels, spec expects {}",
            s.c, spec.in_channels
        )));
    }
    let norm = spec.mhca.norm;
    let act = spec.mhca.act;

    let hi = if spec.c_hi > 0 {
        let zdot = if spec.has_proj_hi() {
            conv_norm(
                b,
                x,
                params,
                &join(prefix, "proj_hi.conv"),
                &join(prefix, "proj_hi.norm"),
                spec.c_hi,
                spec.in_channels,
                1,
                1,
                0,
                1,
                norm,
            )?
        } else {
            x.clone()
        };
        let attn = emhsa_forward(b, &zdot, &spec.emhsa, params, &join(prefix, "attn"))?;
        Some(b.add(&attn, &zdot)?)
    } else {
        None
    };

    let lo = if spec.c_lo > 0 {
        let src = hi.as_ref().unwrap_or(x);
        let zddot = if spec.has_proj_lo() {
            conv_norm(
                b,
                src,
                params,
                &join(prefix, "proj_lo.conv"),
                &join(prefix, "proj_lo.norm"),
                spec.c_lo,
                spec.proj_lo_in(),
                1,
                1,
                0,
                1,
                norm,
            )?
        } else {
            src.clone()
        };
        let mixed = mhca_forward(b, &zddot, &spec.mhca, params, &join(prefix, "mhca"))?;
        Some(b.add(&mixed, &zddot)?)
    } else {
        None
    };

    let merged = match (hi, lo) {
        (Some(h), Some(l)) => b.concat_channels(&h, &l)?,
        (Some(h), None) => h,
        (None, Some(l)) => l,
        (None, None) => unreachable!("split_channels guarantees c_hi + c_lo > 0"),
    };
    let mlp = mlp_forward(
        b,
        &merged,
        params,
        &join(prefix, "mlp"),
        spec.out_channels,
        spec.mlp_ratio,
        norm,
        act,
    )?;
    b.add(&mlp, &merged)
}

pub fn ntb_arrays(spec: &NtbSpec, prefix: &str, out: &mut Vec<ArraySpec>) {
    let norm = spec.mhca.norm;
    if spec.has_proj_hi() {
        conv_norm_arrays(
            &join(prefix, "proj_hi.conv"),
            &join(prefix, "proj_hi.norm"),
            vec![spec.c_hi, spec.in_channels, 1, 1],
            spec.in_channels,
            1.0,
            norm,
            out,
        );
    }
    if spec.c_hi > 0 {
        emhsa_arrays(&spec.emhsa, &join(prefix, "attn"), out);
    }
    if spec.has_proj_lo() {
        conv_norm_arrays(
            &join(prefix, "proj_lo.conv"),
            &join(prefix, "proj_lo.norm"),
            vec![spec.c_lo, spec.proj_lo_in(), 1, 1],
            spec.proj_lo_in(),
            1.0,
            norm,
            out,
        );
    }
    if spec.c_lo > 0 {
        mhca_arrays(&spec.mhca, &join(prefix, "mhca"), out);
    }
    mlp_arrays(&join(prefix, "mlp"), spec.out_channels, spec.mlp_ratio, norm, out);
}

// ---------------------------------------------------------------------------
// Array declaration helpers
// ---------------------------------------------------------------------------

pub(crate) fn norm_arrays(prefix: &str, c: usize, kind: NormKind, out: &mut Vec<ArraySpec>) {
    match kind {
        NormKind::Batch => {
            out.push(ArraySpec::new(join(prefix, "gamma"), vec![c], ParamKind::Gamma));
            out.push(ArraySpec::new(join(prefix, "beta"), vec![c], ParamKind::Beta));
            out.push(ArraySpec::new(join(prefix, "mean"), vec![c], ParamKind::RunningMean));
            out.push(ArraySpec::new(join(prefix, "var"), vec![c], ParamKind::RunningVar));
        }
        NormKind::Layer => {
            out.push(ArraySpec::new(join(prefix, "gamma"), vec![c], ParamKind::Gamma));
            out.push(ArraySpec::new(join(prefix, "beta"), vec![c], ParamKind::Beta));
        }
        NormKind::None => {}
    }
}

/// A conv and its norm; in folded layouts (norm None) the conv carries the
/// bias the norm was absorbed into.
pub(crate) fn conv_norm_arrays(
    conv_prefix: &str,
    norm_prefix: &str,
    weight_dims: Vec<usize>,
    fan_in: usize,
    gain: f64,
    norm: NormKind,
    out: &mut Vec<ArraySpec>,
) {
    let cout = weight_dims[0];
    out.push(ArraySpec::new(
        join(conv_prefix, "weight"),
        weight_dims,
        ParamKind::ConvWeight { fan_in, gain },
    ));
    if norm == NormKind::None {
        out.push(ArraySpec::new(join(conv_prefix, "bias"), vec![cout], ParamKind::Bias));
    }
    norm_arrays(norm_prefix, cout, norm, out);
}

pub(crate) fn linear_arrays(
    prefix: &str,
    out_f: usize,
    in_f: usize,
    gain: f64,
    out: &mut Vec<ArraySpec>,
) {
    out.push(ArraySpec::new(
        join(prefix, "weight"),
        vec![out_f, in_f],
        ParamKind::LinearWeight { fan_in: in_f, gain },
    ));
    out.push(ArraySpec::new(join(prefix, "bias"), vec![out_f], ParamKind::Bias));
}

pub(crate) fn mlp_arrays(
    prefix: &str,
    channels: usize,
    ratio: f64,
    norm: NormKind,
    out: &mut Vec<ArraySpec>,
) {
    let hid = mlp_hidden(channels, ratio).expect("validated at spec construction");
    conv_norm_arrays(
        &join(prefix, "conv1"),
        &join(prefix, "norm1"),
        vec![hid, channels, 1, 1],
        channels,
        1.0,
        norm,
        out,
    );
    conv_norm_arrays(
        &join(prefix, "conv2"),
        &join(prefix, "norm2"),
        vec![channels, hid, 1, 1],
        hid,
        RESIDUAL_GAIN,
        norm,
        out,
    );
}
