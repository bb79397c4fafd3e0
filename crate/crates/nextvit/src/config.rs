//! JSON model configuration documents. A document names a model in exactly
//! one of three ways (`variant`, `pattern`, `stages`) plus shared
//! hyper-parameter keys; unknown keys are rejected. `render_config` emits a
//! canonical explicit-stages document, and `parse_config . render_config`
//! is the identity.

use serde_json::{json, Map, Value};

use crate::blocks::{ActKind, AttnScale, NormKind};
use crate::error::{Error, Result};
use crate::model::{
    build_model, pattern_descs, variant_descs, BuildSettings, HybridPattern, ModelSpec, StageDesc,
    StageKind, Variant, DEFAULT_SR_RATIOS, DEFAULT_STAGE_CHANNELS,
};

/// The four norm/activation families from the ablation grid.
pub fn norm_act_from_str(s: &str) -> Result<(NormKind, ActKind)> {
    match s {
        "bn_relu" => Ok((NormKind::Batch, ActKind::Relu)),
        "bn_gelu" => Ok((NormKind::Batch, ActKind::Gelu)),
        "ln_relu" => Ok((NormKind::Layer, ActKind::Relu)),
        "ln_gelu" => Ok((NormKind::Layer, ActKind::Gelu)),
        other => Err(Error::BadConfig(format!(
            "norm_act `{other}` (expected bn_relu | bn_gelu | ln_relu | ln_gelu)"
        ))),
    }
}

pub fn norm_act_to_str(norm: NormKind, act: ActKind) -> &'static str {
    // Folded specs (norm None) render as their only foldable origin, bn_*.
    match (norm, act) {
        (NormKind::Layer, ActKind::Relu) => "ln_relu",
        (NormKind::Layer, ActKind::Gelu) => "ln_gelu",
        (_, ActKind::Relu) => "bn_relu",
        (_, ActKind::Gelu) => "bn_gelu",
    }
}

fn scale_from_str(s: &str) -> Result<AttnScale> {
    match s {
        "sqrt" => Ok(AttnScale::Sqrt),
        "linear" => Ok(AttnScale::Linear),
        other => {
            Err(Error::BadConfig(format!("attn_scale_mode `{other}` (expected sqrt | linear)")))
        }
    }
}

fn scale_to_str(s: AttnScale) -> &'static str {
    match s {
        AttnScale::Sqrt => "sqrt",
        AttnScale::Linear => "linear",
    }
}

// --- Value extraction helpers -----------------------------------------------

fn bad(key: &str, want: &str, got: &Value) -> Error {
    Error::BadConfig(format!("key `{key}` expects {want}, got {got}"))
}

fn as_str<'v>(key: &str, v: &'v Value) -> Result<&'v str> {
    v.as_str().ok_or_else(|| bad(key, "a string", v))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64().map(|n| n as usize).ok_or_else(|| bad(key, "a non-negative integer", v))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| bad(key, "a number", v))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, "a boolean", v))
}

fn as_usize_list(key: &str, v: &Value) -> Result<Vec<usize>> {
    let arr = v.as_array().ok_or_else(|| bad(key, "an array of integers", v))?;
    arr.iter().map(|e| as_usize(key, e)).collect()
}

// --- Document model ----------------------------------------------------------

/// `pattern` key: a letter string with optional group shape and per-stage
/// widths/depths.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternDoc {
    pub letters: String,
    pub n: usize,
    pub l: usize,
    pub channels: Option<Vec<usize>>,
    pub depths: Option<Vec<usize>>,
}

/// `stages` key entry; mirrors `StageDesc`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageDoc {
    pub kind: StageKind,
    pub channels: usize,
    pub ntb_channels: Option<usize>,
    pub n: Option<usize>,
    pub l: Option<usize>,
    pub depth: Option<usize>,
    pub downsample: Option<bool>,
}

/// Parsed configuration document; `build` turns it into a `ModelSpec`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigDoc {
    pub variant: Option<Variant>,
    pub pattern: Option<PatternDoc>,
    pub stages: Option<Vec<StageDoc>>,
    pub num_classes: usize,
    pub norm: NormKind,
    pub act: ActKind,
    pub attn_scale: AttnScale,
    pub shrink_ratio: f64,
    pub sr_ratios: Option<Vec<usize>>,
    pub head_dim: usize,
    pub mlp_ratios: (f64, f64),
    pub folded: bool,
}

impl Default for ConfigDoc {
    fn default() -> Self {
        let st = BuildSettings::default();
        ConfigDoc {
            variant: None,
            pattern: None,
            stages: None,
            num_classes: 1000,
            norm: st.norm,
            act: st.act,
            attn_scale: st.attn_scale,
            shrink_ratio: st.shrink_ratio,
            sr_ratios: None,
            head_dim: st.head_dim,
            mlp_ratios: (st.mlp_ratio_ncb, st.mlp_ratio_ntb),
            folded: false,
        }
    }
}

fn parse_pattern_doc(v: &Value) -> Result<PatternDoc> {
    if let Some(s) = v.as_str() {
        return Ok(PatternDoc { letters: s.to_string(), n: 4, l: 1, channels: None, depths: None });
    }
    let obj = v.as_object().ok_or_else(|| bad("pattern", "a string or object", v))?;
    let mut doc = PatternDoc { letters: String::new(), n: 4, l: 1, channels: None, depths: None };
    for (k, val) in obj {
        match k.as_str() {
            "letters" => doc.letters = as_str("pattern.letters", val)?.to_string(),
            "n" => doc.n = as_usize("pattern.n", val)?,
            "l" => doc.l = as_usize("pattern.l", val)?,
            "channels" => doc.channels = Some(as_usize_list("pattern.channels", val)?),
            "depths" => doc.depths = Some(as_usize_list("pattern.depths", val)?),
            other => return Err(Error::UnknownKey(format!("pattern.{other}"))),
        }
    }
    if doc.letters.is_empty() {
        return Err(Error::BadConfig("pattern object needs a `letters` string".into()));
    }
    Ok(doc)
}

fn parse_stage_doc(i: usize, v: &Value) -> Result<StageDoc> {
    let obj = v.as_object().ok_or_else(|| bad(&format!("stages[{i}]"), "an object", v))?;
    let mut kind = None;
    let mut doc = StageDoc {
        kind: StageKind::Conv,
        channels: 0,
        ntb_channels: None,
        n: None,
        l: None,
        depth: None,
        downsample: None,
    };
    for (k, val) in obj {
        let path = format!("stages[{i}].{k}");
        match k.as_str() {
            "kind" => {
                let s = as_str(&path, val)?;
                let mut it = s.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => kind = Some(StageKind::from_letter(c)?),
                    _ => {
                        return Err(Error::BadConfig(format!(
                            "{path}: expected a single letter C | H | T"
                        )))
                    }
                }
            }
            "channels" => doc.channels = as_usize(&path, val)?,
            "ntb_channels" => doc.ntb_channels = Some(as_usize(&path, val)?),
            "n" => doc.n = Some(as_usize(&path, val)?),
            "l" => doc.l = Some(as_usize(&path, val)?),
            "depth" => doc.depth = Some(as_usize(&path, val)?),
            "downsample" => doc.downsample = Some(as_bool(&path, val)?),
            other => return Err(Error::UnknownKey(format!("stages[{i}].{other}"))),
        }
    }
    doc.kind = kind.ok_or_else(|| Error::BadConfig(format!("stages[{i}] needs a `kind`")))?;
    if doc.channels == 0 {
        return Err(Error::BadConfig(format!("stages[{i}] needs `channels` >= 1")));
    }
    Ok(doc)
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<ConfigDoc> {
        let root: Value =
            serde_json::from_str(text).map_err(|e| Error::ParseError(e.to_string()))?;
        let obj = root
            .as_object()
            .ok_or_else(|| Error::ParseError("top level must be an object".into()))?;
        let mut doc = ConfigDoc::default();
        for (k, v) in obj {
            match k.as_str() {
                "variant" => doc.variant = Some(as_str("variant", v)?.parse()?),
                "pattern" => doc.pattern = Some(parse_pattern_doc(v)?),
                "stages" => {
                    let arr = v.as_array().ok_or_else(|| bad("stages", "an array", v))?;
                    let stages = arr
                        .iter()
                        .enumerate()
                        .map(|(i, sv)| parse_stage_doc(i, sv))
                        .collect::<Result<Vec<_>>>()?;
                    doc.stages = Some(stages);
                }
                "num_classes" => doc.num_classes = as_usize("num_classes", v)?,
                "norm_act" => {
                    let (norm, act) = norm_act_from_str(as_str("norm_act", v)?)?;
                    doc.norm = norm;
                    doc.act = act;
                }
                "attn_scale_mode" => {
                    doc.attn_scale = scale_from_str(as_str("attn_scale_mode", v)?)?
                }
                "shrink_ratio" => doc.shrink_ratio = as_f64("shrink_ratio", v)?,
                "sr_ratios" => doc.sr_ratios = Some(as_usize_list("sr_ratios", v)?),
                "head_dim" => doc.head_dim = as_usize("head_dim", v)?,
                "mlp_ratios" => {
                    let arr =
                        v.as_array().ok_or_else(|| bad("mlp_ratios", "a two-element array", v))?;
                    if arr.len() != 2 {
                        return Err(bad("mlp_ratios", "a two-element array", v));
                    }
                    doc.mlp_ratios =
                        (as_f64("mlp_ratios[0]", &arr[0])?, as_f64("mlp_ratios[1]", &arr[1])?);
                }
                "folded" => doc.folded = as_bool("folded", v)?,
                other => return Err(Error::UnknownKey(other.to_string())),
            }
        }
        Ok(doc)
    }

    fn settings(&self) -> BuildSettings {
        BuildSettings {
            head_dim: self.head_dim,
            shrink_ratio: self.shrink_ratio,
            mlp_ratio_ncb: self.mlp_ratios.0,
            mlp_ratio_ntb: self.mlp_ratios.1,
            norm: if self.folded { NormKind::None } else { self.norm },
            act: self.act,
            attn_scale: self.attn_scale,
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let sources = self.variant.is_some() as usize
            + self.pattern.is_some() as usize
            + self.stages.is_some() as usize;
        if sources != 1 {
            return Err(Error::BadConfig(
                "exactly one of `variant`, `pattern`, `stages` must be set".into(),
            ));
        }
        let descs: Vec<StageDesc> = if let Some(v) = self.variant {
            variant_descs(v)
        } else if let Some(p) = &self.pattern {
            let pat = HybridPattern::parse(&p.letters, p.n, p.l)?;
            let k = pat.letters.len();
            let channels = p.channels.clone().unwrap_or_else(|| default_channels(k));
            let depths = p.depths.clone().unwrap_or_else(|| vec![pat.default_depth(); k]);
            return self.build_pattern(&pat, &channels, &depths);
        } else {
            let docs = self.stages.as_ref().unwrap();
            docs.iter()
                .enumerate()
                .map(|(i, d)| stage_desc_from_doc(i, d))
                .collect::<Result<Vec<_>>>()?
        };
        let sr = self.sr_list(descs.len());
        build_model(&descs, &sr, self.settings(), self.num_classes)
    }

    fn build_pattern(
        &self,
        pat: &HybridPattern,
        channels: &[usize],
        depths: &[usize],
    ) -> Result<ModelSpec> {
        let descs = pattern_descs(pat, channels, depths)?;
        let sr = self.sr_list(descs.len());
        build_model(&descs, &sr, self.settings(), self.num_classes)
    }

    fn sr_list(&self, k: usize) -> Vec<usize> {
        match &self.sr_ratios {
            Some(v) => v.clone(),
            None => (0..k).map(|i| DEFAULT_SR_RATIOS.get(i).copied().unwrap_or(1)).collect(),
        }
    }
}

fn default_channels(k: usize) -> Vec<usize> {
    (0..k)
        .map(|i| {
            DEFAULT_STAGE_CHANNELS
                .get(i)
                .copied()
                .unwrap_or_else(|| DEFAULT_STAGE_CHANNELS[3] << (i - 3))
        })
        .collect()
}

fn stage_desc_from_doc(i: usize, d: &StageDoc) -> Result<StageDesc> {
    let downsample = d.downsample.unwrap_or(i > 0);
    Ok(match d.kind {
        StageKind::Conv | StageKind::Transformer => {
            let depth = d.depth.ok_or_else(|| {
                Error::BadConfig(format!("stages[{i}] ({}) needs `depth`", d.kind.letter()))
            })?;
            if d.n.is_some() || d.l.is_some() || d.ntb_channels.is_some() {
                return Err(Error::BadConfig(format!(
                    "stages[{i}]: `n`, `l`, `ntb_channels` apply to H stages only"
                )));
            }
            if d.kind == StageKind::Conv {
                StageDesc::conv(d.channels, depth, downsample)
            } else {
                StageDesc::transformer(d.channels, depth, downsample)
            }
        }
        StageKind::Hybrid => {
            let n = d.n.ok_or_else(|| Error::BadConfig(format!("stages[{i}] (H) needs `n`")))?;
            let l = d.l.ok_or_else(|| Error::BadConfig(format!("stages[{i}] (H) needs `l`")))?;
            if d.depth.is_some() {
                return Err(Error::BadConfig(format!(
                    "stages[{i}]: H stages derive depth from n and l"
                )));
            }
            StageDesc::hybrid(d.channels, d.ntb_channels.unwrap_or(d.channels), n, l, downsample)
        }
    })
}

/// Parse a configuration document into a model.
pub fn parse_config(text: &str) -> Result<ModelSpec> {
    ConfigDoc::parse(text)?.build()
}

/// Canonical explicit-stages document for a spec. Keys render in sorted
/// order, so the output is stable and `parse_config` returns an equal spec.
pub fn render_config(spec: &ModelSpec) -> String {
    let stages: Vec<Value> = spec
        .stages
        .iter()
        .map(|s| {
            let d = &s.desc;
            let mut m = Map::new();
            m.insert("kind".into(), json!(d.kind.letter().to_string()));
            m.insert("channels".into(), json!(d.channels));
            m.insert("downsample".into(), json!(d.downsample));
            match d.kind {
                StageKind::Hybrid => {
                    m.insert("ntb_channels".into(), json!(d.ntb_channels));
                    m.insert("n".into(), json!(d.n));
                    m.insert("l".into(), json!(d.l));
                }
                _ => {
                    m.insert("depth".into(), json!(d.depth));
                }
            }
            Value::Object(m)
        })
        .collect();
    let st = &spec.settings;
    let mut root = Map::new();
    root.insert("stages".into(), Value::Array(stages));
    root.insert("num_classes".into(), json!(spec.num_classes));
    root.insert("norm_act".into(), json!(norm_act_to_str(st.norm, st.act)));
    root.insert("attn_scale_mode".into(), json!(scale_to_str(st.attn_scale)));
    root.insert("shrink_ratio".into(), json!(st.shrink_ratio));
    root.insert("sr_ratios".into(), json!(spec.sr_ratios));
    root.insert("head_dim".into(), json!(st.head_dim));
    root.insert("mlp_ratios".into(), json!([st.mlp_ratio_ncb, st.mlp_ratio_ntb]));
    if spec.folded() {
        root.insert("folded".into(), json!(true));
    }
    let mut text =
        serde_json::to_string_pretty(&Value::Object(root)).expect("json of plain values");
    text.push('\n');
    text
}
