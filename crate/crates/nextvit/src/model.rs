//! Model assembly: stem, patch embeddings, stacked stages, classification
//! head; the S/B/L presets and the generic lettered hybrid-pattern builder.
//!
//! A `ModelSpec` is fully declarative. `model_arrays` walks it into the flat
//! list of parameter declarations that `init_params`, the cost counters and
//! the weight-file signature check all share. `forward_opts` is the single
//! inference entry point (trace and per-block timing optional).

use std::time::Instant;

use crate::backend::{Backend, Eval};
use crate::blocks::{
    apply_act, conv_norm, conv_norm_arrays, join, linear_arrays, ncb_arrays, ncb_forward,
    ntb_arrays, ntb_forward, ActKind, AttnScale, NcbSpec, NormKind, NtbSpec,
};
use crate::error::{Error, Result};
use crate::params::{ArraySpec, ParamArray, ParamKind, ParamSet};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Published size presets.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Variant {
    S,
    B,
    L,
}

impl Variant {
    /// Stage-3 group multiplier L: (NCB*4 + NTB*1) * {2, 4, 6}.
    pub fn stage3_groups(&self) -> usize {
        match self {
            Variant::S => 2,
            Variant::B => 4,
            Variant::L => 6,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::S => "S",
            Variant::B => "B",
            Variant::L => "L",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" | "s" => Ok(Variant::S),
            "B" | "b" => Ok(Variant::B),
            "L" | "l" => Ok(Variant::L),
            other => Err(Error::BadConfig(format!("unknown variant `{other}` (S|B|L)"))),
        }
    }
}

/// Stage construction letter: C = convolution blocks only, T = transformer
/// blocks only, H = hybrid groups (NCB*n + NTB*1) * l.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum StageKind {
    Conv,
    Hybrid,
    Transformer,
}

impl StageKind {
    pub fn letter(&self) -> char {
        match self {
            StageKind::Conv => 'C',
            StageKind::Hybrid => 'H',
            StageKind::Transformer => 'T',
        }
    }

    pub fn from_letter(ch: char) -> Result<Self> {
        match ch {
            'C' | 'c' => Ok(StageKind::Conv),
            'H' | 'h' => Ok(StageKind::Hybrid),
            'T' | 't' => Ok(StageKind::Transformer),
            other => Err(Error::InvalidPattern(format!("unknown stage letter `{other}` (C|H|T)"))),
        }
    }
}

/// Lettered NHS strategy: one letter per stage plus the H-group shape.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct HybridPattern {
    pub letters: Vec<StageKind>,
    /// NCBs per hybrid group.
    pub n: usize,
    /// Hybrid groups per stage.
    pub l: usize,
}

impl HybridPattern {
    /// Parse "C H H H" or "CHHH"; n and l default to 4 and 1.
    pub fn parse(s: &str, n: usize, l: usize) -> Result<Self> {
        let tokens: Vec<&str> = s.split_whitespace().collect();
        let chars: Vec<char> = if tokens.len() > 1 {
            tokens
                .iter()
                .map(|t| {
                    let mut it = t.chars();
                    match (it.next(), it.next()) {
                        (Some(c), None) => Ok(c),
                        _ => Err(Error::InvalidPattern(format!(
                            "token `{t}` is not a single letter"
                        ))),
                    }
                })
                .collect::<Result<_>>()?
        } else {
            s.trim().chars().collect()
        };
        if chars.is_empty() {
            return Err(Error::InvalidPattern("empty pattern".into()));
        }
        let letters = chars.into_iter().map(StageKind::from_letter).collect::<Result<Vec<_>>>()?;
        if n == 0 || l == 0 {
            return Err(Error::InvalidPattern(format!(
                "pattern needs n >= 1 and l >= 1, got n={n} l={l}"
            )));
        }
        Ok(HybridPattern { letters, n, l })
    }

    pub fn render(&self) -> String {
        let letters: Vec<String> = self.letters.iter().map(|k| k.letter().to_string()).collect();
        letters.join(" ")
    }

    /// Block budget per stage implied by the group shape.
    pub fn default_depth(&self) -> usize {
        (self.n + 1) * self.l
    }
}

/// Doc-level description of one stage; kept on the built spec so configs
/// render back to their canonical form.
#[derive(Clone, PartialEq, Debug)]
pub struct StageDesc {
    pub kind: StageKind,
    /// NCB working width (and embedding output width).
    pub channels: usize,
    /// NTB output width; equal to `channels` unless the stage widens at each
    /// group end (the S/B/L stages do).
    pub ntb_channels: usize,
    /// NCBs per hybrid group (Hybrid only).
    pub n: usize,
    /// Hybrid groups (Hybrid only).
    pub l: usize,
    /// Total blocks (Conv/Transformer only; Hybrid derives (n+1)*l).
    pub depth: usize,
    pub downsample: bool,
}

impl StageDesc {
    pub fn conv(channels: usize, depth: usize, downsample: bool) -> Self {
        StageDesc {
            kind: StageKind::Conv,
            channels,
            ntb_channels: channels,
            n: 0,
            l: 0,
            depth,
            downsample,
        }
    }

    pub fn transformer(channels: usize, depth: usize, downsample: bool) -> Self {
        StageDesc {
            kind: StageKind::Transformer,
            channels,
            ntb_channels: channels,
            n: 0,
            l: 0,
            depth,
            downsample,
        }
    }

    pub fn hybrid(
        channels: usize,
        ntb_channels: usize,
        n: usize,
        l: usize,
        downsample: bool,
    ) -> Self {
        StageDesc {
            kind: StageKind::Hybrid,
            channels,
            ntb_channels,
            n,
            l,
            depth: (n + 1) * l,
            downsample,
        }
    }

    pub fn total_blocks(&self) -> usize {
        match self.kind {
            StageKind::Hybrid => (self.n + 1) * self.l,
            _ => self.depth,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            StageKind::Conv => self.channels,
            StageKind::Hybrid | StageKind::Transformer => self.ntb_channels,
        }
    }
}

/// Stage-entry embedding: optional ceil-mode 2x2 avg-pool halving, then a
/// pointwise conv + norm when the width changes (identity otherwise).
#[derive(Clone, PartialEq, Debug)]
pub struct PatchEmbed {
    pub downsample: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl PatchEmbed {
    pub fn has_proj(&self) -> bool {
        self.in_channels != self.out_channels
    }
}

#[derive(Clone, PartialEq, Debug)]
pub enum Block {
    Ncb(NcbSpec),
    Ntb(NtbSpec),
}

impl Block {
    pub fn in_channels(&self) -> usize {
        match self {
            Block::Ncb(s) => s.in_channels,
            Block::Ntb(s) => s.in_channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Block::Ncb(s) => s.out_channels,
            Block::Ntb(s) => s.out_channels,
        }
    }

    pub fn is_ntb(&self) -> bool {
        matches!(self, Block::Ntb(_))
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct StageSpec {
    pub desc: StageDesc,
    pub embed: PatchEmbed,
    pub blocks: Vec<Block>,
    pub sr_ratio: usize,
}

impl StageSpec {
    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(self.embed.out_channels, |b| b.out_channels())
    }
}

/// Shared hyper-parameters applied while expanding stage descriptions.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct BuildSettings {
    pub head_dim: usize,
    pub shrink_ratio: f64,
    pub mlp_ratio_ncb: f64,
    pub mlp_ratio_ntb: f64,
    pub norm: NormKind,
    pub act: ActKind,
    pub attn_scale: AttnScale,
}

impl Default for BuildSettings {
    fn default() -> Self {
        BuildSettings {
            head_dim: 32,
            shrink_ratio: 0.75,
            mlp_ratio_ncb: 3.0,
            mlp_ratio_ntb: 2.0,
            norm: NormKind::Batch,
            act: ActKind::Relu,
            attn_scale: AttnScale::Sqrt,
        }
    }
}

pub const STEM_WIDTHS: [usize; 4] = [64, 32, 64, 64];
pub const STEM_STRIDES: [usize; 4] = [2, 1, 1, 2];
pub const DEFAULT_SR_RATIOS: [usize; 4] = [8, 4, 2, 1];
pub const DEFAULT_STAGE_CHANNELS: [usize; 4] = [96, 192, 384, 768];

#[derive(Clone, PartialEq, Debug)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub stem_widths: Vec<usize>,
    pub stages: Vec<StageSpec>,
    pub num_classes: usize,
    pub settings: BuildSettings,
    pub sr_ratios: Vec<usize>,
}

impl ModelSpec {
    /// Folded models carry no norm nodes; convs own the absorbed biases.
    pub fn folded(&self) -> bool {
        self.settings.norm == NormKind::None
    }

    pub fn head_in_channels(&self) -> usize {
        self.stages.last().map_or(*self.stem_widths.last().unwrap(), |s| s.out_channels())
    }

    /// (in, out, stride) per stem conv.
    pub fn stem_layers(&self) -> Vec<(usize, usize, usize)> {
        let mut layers = Vec::with_capacity(self.stem_widths.len());
        let mut cin = self.in_channels;
        for (i, &w) in self.stem_widths.iter().enumerate() {
            layers.push((cin, w, STEM_STRIDES[i % STEM_STRIDES.len()]));
            cin = w;
        }
        layers
    }

    pub fn block_count(&self) -> usize {
        self.stages.iter().map(|s| s.blocks.len()).sum()
    }

    pub fn ntb_count(&self) -> usize {
        self.stages.iter().map(|s| s.blocks.iter().filter(|b| b.is_ntb()).count()).sum()
    }
}

fn expand_stage(
    desc: &StageDesc,
    in_channels: usize,
    sr_ratio: usize,
    st: &BuildSettings,
) -> Result<StageSpec> {
    let embed =
        PatchEmbed { downsample: desc.downsample, in_channels, out_channels: desc.channels };
    let mut blocks = Vec::new();
    let mut cur = desc.channels;
    match desc.kind {
        StageKind::Conv => {
            if desc.depth == 0 {
                return Err(Error::InvalidPattern("conv stage needs depth >= 1".into()));
            }
            for _ in 0..desc.depth {
                blocks.push(Block::Ncb(NcbSpec::new(
                    cur,
                    desc.channels,
                    st.head_dim,
                    st.mlp_ratio_ncb,
                    st.norm,
                    st.act,
                )?));
                cur = desc.channels;
            }
        }
        StageKind::Transformer => {
            if desc.depth == 0 {
                return Err(Error::InvalidPattern("transformer stage needs depth >= 1".into()));
            }
            for _ in 0..desc.depth {
                blocks.push(Block::Ntb(NtbSpec::new(
                    cur,
                    desc.channels,
                    st.shrink_ratio,
                    st.head_dim,
                    sr_ratio,
                    st.mlp_ratio_ntb,
                    st.norm,
                    st.act,
                    st.attn_scale,
                )?));
                cur = desc.channels;
            }
        }
        StageKind::Hybrid => {
            if desc.n == 0 || desc.l == 0 {
                return Err(Error::InvalidPattern(format!(
                    "hybrid stage needs n >= 1 and l >= 1, got n={} l={}",
                    desc.n, desc.l
                )));
            }
            for _ in 0..desc.l {
                for _ in 0..desc.n {
                    blocks.push(Block::Ncb(NcbSpec::new(
                        cur,
                        desc.channels,
                        st.head_dim,
                        st.mlp_ratio_ncb,
                        st.norm,
                        st.act,
                    )?));
                    cur = desc.channels;
                }
                blocks.push(Block::Ntb(NtbSpec::new(
                    cur,
                    desc.ntb_channels,
                    st.shrink_ratio,
                    st.head_dim,
                    sr_ratio,
                    st.mlp_ratio_ntb,
                    st.norm,
                    st.act,
                    st.attn_scale,
                )?));
                cur = desc.ntb_channels;
            }
        }
    }
    Ok(StageSpec { desc: desc.clone(), embed, blocks, sr_ratio })
}

/// Expand stage descriptions into a full model.
pub fn build_model(
    descs: &[StageDesc],
    sr_ratios: &[usize],
    settings: BuildSettings,
    num_classes: usize,
) -> Result<ModelSpec> {
    if descs.is_empty() {
        return Err(Error::InvalidPattern("model needs at least one stage".into()));
    }
    if sr_ratios.len() != descs.len() {
        return Err(Error::BadConfig(format!(
            "{} sr_ratios for {} stages",
            sr_ratios.len(),
            descs.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::BadConfig("num_classes must be >= 1".into()));
    }
    let mut stages = Vec::with_capacity(descs.len());
    let mut cin = *STEM_WIDTHS.last().unwrap();
    for (i, desc) in descs.iter().enumerate() {
        let stage = expand_stage(desc, cin, sr_ratios[i], &settings)?;
        cin = stage.out_channels();
        stages.push(stage);
    }
    Ok(ModelSpec {
        in_channels: 3,
        stem_widths: STEM_WIDTHS.to_vec(),
        stages,
        num_classes,
        settings,
        sr_ratios: sr_ratios.to_vec(),
    })
}

/// Stage descriptions of the published S/B/L configurations; the variants
/// differ only in the stage-3 group count.
pub fn variant_descs(variant: Variant) -> Vec<StageDesc> {
    vec![
        StageDesc::conv(96, 3, false),
        StageDesc::hybrid(192, 256, 3, 1, true),
        StageDesc::hybrid(384, 512, 4, variant.stage3_groups(), true),
        StageDesc::hybrid(768, 1024, 2, 1, true),
    ]
}

/// The published S/B/L configurations.
pub fn build_variant(variant: Variant, num_classes: usize) -> ModelSpec {
    build_variant_with(variant, num_classes, BuildSettings::default())
        .expect("preset configurations are valid by construction")
}

pub fn build_variant_with(
    variant: Variant,
    num_classes: usize,
    settings: BuildSettings,
) -> Result<ModelSpec> {
    build_model(&variant_descs(variant), &DEFAULT_SR_RATIOS, settings, num_classes)
}

/// Lettered NHS strategy over explicit per-stage channels and block budgets.
/// H stages must split their budget into whole (NCB*n + NTB) groups.
pub fn build_hybrid(
    pattern: &HybridPattern,
    channels: &[usize],
    depths: &[usize],
    num_classes: usize,
) -> Result<ModelSpec> {
    build_hybrid_with(pattern, channels, depths, num_classes, BuildSettings::default())
}

pub fn build_hybrid_with(
    pattern: &HybridPattern,
    channels: &[usize],
    depths: &[usize],
    num_classes: usize,
    settings: BuildSettings,
) -> Result<ModelSpec> {
    let descs = pattern_descs(pattern, channels, depths)?;
    let sr: Vec<usize> =
        (0..descs.len()).map(|i| DEFAULT_SR_RATIOS.get(i).copied().unwrap_or(1)).collect();
    build_model(&descs, &sr, settings, num_classes)
}

/// Expand a lettered pattern into stage descriptions. Stage 0 keeps the stem
/// resolution; every later stage downsamples.
pub fn pattern_descs(
    pattern: &HybridPattern,
    channels: &[usize],
    depths: &[usize],
) -> Result<Vec<StageDesc>> {
    let k = pattern.letters.len();
    if channels.len() != k || depths.len() != k {
        return Err(Error::InvalidPattern(format!(
            "pattern has {k} stages but {} channel and {} depth entries",
            channels.len(),
            depths.len()
        )));
    }
    let mut descs = Vec::with_capacity(k);
    for (i, letter) in pattern.letters.iter().enumerate() {
        let downsample = i > 0;
        let desc = match letter {
            StageKind::Conv => StageDesc::conv(channels[i], depths[i], downsample),
            StageKind::Transformer => StageDesc::transformer(channels[i], depths[i], downsample),
            StageKind::Hybrid => {
                let group = pattern.n + 1;
                if depths[i] == 0 || !depths[i].is_multiple_of(group) {
                    return Err(Error::InvalidPattern(format!(
                        "stage {i}: depth {} does not split into (NCB*{} + NTB) groups",
                        depths[i], pattern.n
                    )));
                }
                StageDesc::hybrid(
                    channels[i],
                    channels[i],
                    pattern.n,
                    depths[i] / group,
                    downsample,
                )
            }
        };
        descs.push(desc);
    }
    Ok(descs)
}

// ---------------------------------------------------------------------------
// Parameter layout walker
// ---------------------------------------------------------------------------

/// Every array the model's forward pass will look up, in walk order.
pub fn model_arrays(spec: &ModelSpec) -> Vec<ArraySpec> {
    let norm = spec.settings.norm;
    let mut out = Vec::new();
    for (i, (cin, cout, _)) in spec.stem_layers().into_iter().enumerate() {
        conv_norm_arrays(
            &format!("stem.conv{i}"),
            &format!("stem.norm{i}"),
            vec![cout, cin, 3, 3],
            cin * 9,
            1.0,
            norm,
            &mut out,
        );
    }
    for (si, stage) in spec.stages.iter().enumerate() {
        let sp = format!("stage{}", si + 1);
        if stage.embed.has_proj() {
            conv_norm_arrays(
                &join(&sp, "embed.conv"),
                &join(&sp, "embed.norm"),
                vec![stage.embed.out_channels, stage.embed.in_channels, 1, 1],
                stage.embed.in_channels,
                1.0,
                norm,
                &mut out,
            );
        }
        for (bi, block) in stage.blocks.iter().enumerate() {
            let bp = format!("{sp}.block{bi}");
            match block {
                Block::Ncb(s) => ncb_arrays(s, &bp, &mut out),
                Block::Ntb(s) => ntb_arrays(s, &bp, &mut out),
            }
        }
    }
    linear_arrays("head", spec.num_classes, spec.head_in_channels(), 1.0, &mut out);
    out
}

/// Verify a parameter set carries exactly the arrays the layout declares,
/// with the declared dims.
pub fn check_params<T: Scalar>(spec: &ModelSpec, params: &ParamSet<T>) -> Result<()> {
    let arrays = model_arrays(spec);
    for a in &arrays {
        let got = params.get(&a.key)?;
        if got.dims != a.dims {
            return Err(Error::ParamDims(a.key.clone(), got.dims.clone()));
        }
    }
    if params.len() != arrays.len() {
        let declared: std::collections::BTreeSet<&str> =
            arrays.iter().map(|a| a.key.as_str()).collect();
        for key in params.keys() {
            if !declared.contains(key.as_str()) {
                return Err(Error::UnknownKey(key.clone()));
            }
        }
    }
    Ok(())
}

/// Deterministic init: weights from a fan-in-scaled normal (residual-branch
/// output projections damped by RESIDUAL_GAIN), gamma = 1, beta/bias = 0,
/// running mean 0 / var 1. Same seed, same bytes.
pub fn init_params<T: Scalar>(spec: &ModelSpec, seed: u64) -> ParamSet<T> {
    let mut rng = SplitMix64::new(seed);
    let mut set = ParamSet::new();
    for a in model_arrays(spec) {
        let n = a.numel();
        let data: Vec<T> = match a.kind {
            ParamKind::ConvWeight { fan_in, gain } | ParamKind::LinearWeight { fan_in, gain } => {
                let std = (gain / fan_in as f64).sqrt();
                let mut v = vec![T::zero(); n];
                rng.fill_normal(&mut v, std);
                v
            }
            ParamKind::Bias | ParamKind::Beta | ParamKind::RunningMean => vec![T::zero(); n],
            ParamKind::Gamma | ParamKind::RunningVar => vec![T::one(); n],
        };
        set.insert(a.key, ParamArray::new(a.dims, data).expect("dims match by construction"));
    }
    set
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ForwardOutput<T: Scalar> {
    /// (n, num_classes) logits matrix.
    pub logits: Tensor<T>,
    /// Output shape of every stage, in order.
    pub stage_shapes: Vec<Shape>,
    /// Per-block wall-clock rows (stem + every block + head) when timing was
    /// requested; stage embeddings are attributed to their first block row.
    pub block_ms: Option<Vec<(String, f64)>>,
}

pub fn forward<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamSet<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    forward_opts(spec, params, x, &mut Eval::default(), false).map(|o| o.logits)
}

pub fn forward_opts<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamSet<T>,
    x: &Tensor<T>,
    eval: &mut Eval,
    time_blocks: bool,
) -> Result<ForwardOutput<T>> {
    let s = x.shape();
    if s.c != spec.in_channels || s.n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "forward: expected (n, {}, h, w), got {s}",
            spec.in_channels
        )));
    }
    if s.h == 0 || s.w == 0 || !s.h.is_multiple_of(32) || !s.w.is_multiple_of(32) {
        return Err(Error::ShapeMismatch(format!(
            "forward: spatial dims must be positive multiples of 32, got {}x{}",
            s.h, s.w
        )));
    }

    let norm = spec.settings.norm;
    let act = spec.settings.act;
    let mut rows: Vec<(String, f64)> = Vec::new();
    let mut mark = Instant::now();
    let mut lap = |rows: &mut Vec<(String, f64)>, name: String| {
        if time_blocks {
            let now = Instant::now();
            rows.push((name, now.duration_since(mark).as_secs_f64() * 1e3));
            mark = now;
        }
    };

    let mut cur = x.clone();
    for (i, (cin, cout, stride)) in spec.stem_layers().into_iter().enumerate() {
        cur = conv_norm(
            eval,
            &cur,
            params,
            &format!("stem.conv{i}"),
            &format!("stem.norm{i}"),
            cout,
            cin,
            3,
            stride,
            1,
            1,
            norm,
        )?;
        cur = apply_act(eval, &cur, act)?;
    }
    lap(&mut rows, "stem".to_string());

    let mut stage_shapes = Vec::with_capacity(spec.stages.len());
    for (si, stage) in spec.stages.iter().enumerate() {
        let sp = format!("stage{}", si + 1);
        if stage.embed.downsample {
            cur = eval.avg_pool2d_ceil(&cur, 2, 2)?;
        }
        if stage.embed.has_proj() {
            cur = conv_norm(
                eval,
                &cur,
                params,
                &join(&sp, "embed.conv"),
                &join(&sp, "embed.norm"),
                stage.embed.out_channels,
                stage.embed.in_channels,
                1,
                1,
                0,
                1,
                norm,
            )?;
        }
        for (bi, block) in stage.blocks.iter().enumerate() {
            let bp = format!("{sp}.block{bi}");
            cur = match block {
                Block::Ncb(b) => ncb_forward(eval, &cur, b, params, &bp)?,
                Block::Ntb(b) => ntb_forward(eval, &cur, b, params, &bp)?,
            };
            lap(&mut rows, bp);
        }
        stage_shapes.push(cur.shape());
    }

    let pooled = eval.global_avg_pool(&cur)?;
    let head = params.linear("head", spec.num_classes, spec.head_in_channels())?;
    let logits = eval.linear(&pooled, &head)?;
    lap(&mut rows, "head".to_string());

    Ok(ForwardOutput {
        logits,
        stage_shapes,
        block_ms: if time_blocks { Some(rows) } else { None },
    })
}
