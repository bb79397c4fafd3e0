//! Config document and weight container contracts: document forms, key
//! validation, canonical render round-trips, and byte-level NVTW framing.

use proptest::prelude::*;

use nextvit::model::{Block, StageKind};
use nextvit::weights::{read_weights, write_weights, DTYPE_F32, MAGIC, VERSION};
use nextvit::{
    build_model, build_variant, build_variant_with, fold_batchnorm, init_params, load_input_tensor,
    load_weights, parse_config, render_config, save_input_tensor, save_weights, BuildSettings,
    Error, ParamArray, ParamSet, Shape, SplitMix64, StageDesc, Tensor32, Variant,
};

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("nextvit-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn ntb_counts(spec: &nextvit::ModelSpec) -> Vec<usize> {
    spec.stages
        .iter()
        .map(|s| s.blocks.iter().filter(|b| matches!(b, Block::Ntb(_))).count())
        .collect()
}

// --- Config documents --------------------------------------------------------

#[test]
fn variant_documents_match_the_builder() {
    let s = parse_config(r#"{"variant": "S"}"#).unwrap();
    assert_eq!(s, build_variant(Variant::S, 1000));

    let b = parse_config(r#"{"variant": "B", "num_classes": 21}"#).unwrap();
    assert_eq!(b, build_variant(Variant::B, 21));
}

#[test]
fn shrink_ratio_override_reaches_every_ntb() {
    let spec = parse_config(r#"{"variant": "S", "shrink_ratio": 0.5}"#).unwrap();
    let want = build_variant_with(
        Variant::S,
        1000,
        BuildSettings { shrink_ratio: 0.5, ..BuildSettings::default() },
    )
    .unwrap();
    assert_eq!(spec, want);
    for ntb in spec.stages.iter().flat_map(|s| &s.blocks).filter_map(|b| match b {
        Block::Ntb(n) => Some(n),
        _ => None,
    }) {
        assert_eq!(ntb.c_hi, ntb.c_lo, "r = 0.5 splits channels evenly");
    }
}

#[test]
fn pattern_string_form_uses_grid_defaults() {
    let spec = parse_config(r#"{"pattern": "C H H H"}"#).unwrap();
    let kinds: Vec<StageKind> = spec.stages.iter().map(|s| s.desc.kind).collect();
    assert_eq!(kinds, [StageKind::Conv, StageKind::Hybrid, StageKind::Hybrid, StageKind::Hybrid]);
    let channels: Vec<usize> = spec.stages.iter().map(|s| s.desc.channels).collect();
    assert_eq!(channels, [96, 192, 384, 768]);
    // Default grid shape n = 4, l = 1: every stage runs (n + 1) * l = 5 blocks.
    let depths: Vec<usize> = spec.stages.iter().map(|s| s.blocks.len()).collect();
    assert_eq!(depths, [5, 5, 5, 5]);
    assert_eq!(ntb_counts(&spec), [0, 1, 1, 1]);
}

#[test]
fn pattern_object_form_controls_the_grid() {
    let text = r#"{
        "pattern": {"letters": "CHH", "n": 2, "l": 1, "channels": [32, 64, 96], "depths": [2, 3, 3]},
        "num_classes": 5
    }"#;
    let spec = parse_config(text).unwrap();
    assert_eq!(spec.num_classes, 5);
    assert_eq!(spec.stages.len(), 3);
    assert_eq!(ntb_counts(&spec), [0, 1, 1]);
    for stage in &spec.stages[1..] {
        // NTB closes each (NCB x n, NTB) group.
        assert!(matches!(stage.blocks.last(), Some(Block::Ntb(_))));
        assert_eq!(stage.blocks.len(), 3);
    }
}

#[test]
fn transformer_letter_makes_ntb_only_stages() {
    let text = r#"{"pattern": {"letters": "C T", "channels": [32, 64], "depths": [1, 2]}, "head_dim": 32}"#;
    let spec = parse_config(text).unwrap();
    assert_eq!(ntb_counts(&spec), [0, 2]);
    assert!(spec.stages[1].blocks.iter().all(|b| matches!(b, Block::Ntb(_))));
}

#[test]
fn unknown_keys_are_rejected_at_each_level() {
    let top = parse_config(r#"{"variant": "S", "weird": 1}"#);
    assert!(matches!(top, Err(Error::UnknownKey(k)) if k == "weird"));

    let pat = parse_config(r#"{"pattern": {"letters": "CH", "x": 1}}"#);
    assert!(matches!(pat, Err(Error::UnknownKey(k)) if k == "pattern.x"));

    let stage =
        parse_config(r#"{"stages": [{"kind": "C", "channels": 8, "depth": 1, "bogus": 1}]}"#);
    assert!(matches!(stage, Err(Error::UnknownKey(k)) if k == "stages[0].bogus"));
}

#[test]
fn exactly_one_model_source_is_required() {
    let both =
        parse_config(r#"{"variant": "S", "stages": [{"kind": "C", "channels": 8, "depth": 1}]}"#);
    assert!(matches!(both, Err(Error::BadConfig(_))));

    let none = parse_config(r#"{"num_classes": 10}"#);
    assert!(matches!(none, Err(Error::BadConfig(_))));
}

#[test]
fn malformed_documents_are_parse_errors() {
    for text in ["{", "[1, 2]", "42", ""] {
        assert!(
            matches!(parse_config(text), Err(Error::ParseError(_))),
            "document {text:?} should fail to parse"
        );
    }
}

#[test]
fn bad_values_are_bad_config() {
    let cases = [
        r#"{"variant": "S", "num_classes": "many"}"#,
        r#"{"variant": "S", "norm_act": "bn_silu"}"#,
        r#"{"variant": "S", "attn_scale_mode": "quadratic"}"#,
        r#"{"variant": "S", "mlp_ratios": [1.0]}"#,
        r#"{"stages": [{"channels": 8, "depth": 1}]}"#,
        r#"{"stages": [{"kind": "H", "channels": 32, "n": 1, "l": 1, "depth": 2}]}"#,
        r#"{"stages": [{"kind": "C", "channels": 32, "depth": 1, "n": 1}]}"#,
    ];
    for text in cases {
        assert!(matches!(parse_config(text), Err(Error::BadConfig(_))), "document {text}");
    }
}

#[test]
fn render_then_parse_is_the_identity() {
    for v in [Variant::S, Variant::B, Variant::L] {
        let spec = build_variant(v, 1000);
        let text = render_config(&spec);
        let back = parse_config(&text).unwrap();
        assert_eq!(back, spec, "{v:?} survives a render/parse cycle");
        assert_eq!(render_config(&back), text, "{v:?} render is canonical");
    }
}

#[test]
fn folded_specs_render_and_parse_as_folded() {
    let settings = BuildSettings { head_dim: 8, ..BuildSettings::default() };
    let spec = build_model(&[StageDesc::conv(16, 2, false)], &[1], settings, 4).unwrap();
    let params = init_params::<f32>(&spec, 11);
    let (folded_spec, _) = fold_batchnorm(&spec, &params).unwrap();
    assert!(folded_spec.folded());

    let text = render_config(&folded_spec);
    assert!(text.contains("\"folded\": true"));
    let back = parse_config(&text).unwrap();
    assert_eq!(back, folded_spec);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn random_small_specs_roundtrip_through_documents(
        stage_plans in prop::collection::vec((0..3usize, 1..=3usize, 1..=2usize), 1..=3),
        num_classes in 1..40usize,
        shrink in prop::sample::select(vec![0.0, 0.5, 0.75, 1.0]),
    ) {
        let descs: Vec<StageDesc> = stage_plans
            .iter()
            .enumerate()
            .map(|(i, &(kind, width, depth))| {
                let c = width * 8;
                match kind {
                    0 => StageDesc::conv(c, depth, i > 0),
                    1 => StageDesc::transformer(c, depth, i > 0),
                    _ => StageDesc::hybrid(c, c, depth, 1, i > 0),
                }
            })
            .collect();
        let sr = vec![1; descs.len()];
        let settings = BuildSettings { head_dim: 8, shrink_ratio: shrink, ..BuildSettings::default() };
        let spec = build_model(&descs, &sr, settings, num_classes).unwrap();

        let text = render_config(&spec);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &spec);
        prop_assert_eq!(render_config(&back), text);
    }
}

// --- NVTW weight container ----------------------------------------------------

#[test]
fn empty_set_serializes_to_nine_bytes() {
    let bytes = write_weights(&ParamSet::new());
    assert_eq!(bytes.len(), 9);
    assert_eq!(&bytes[..4], &MAGIC);
    assert_eq!(bytes[4], VERSION);
    assert_eq!(&bytes[5..], &[0, 0, 0, 0]);
    assert_eq!(read_weights(&bytes).unwrap().len(), 0);
}

#[test]
fn roundtrip_preserves_names_dims_and_bits() {
    let mut set = ParamSet::new();
    let odd = vec![
        0.0f32,
        -0.0,
        f32::MIN_POSITIVE,
        f32::from_bits(1), // smallest subnormal
        f32::MAX,
        f32::MIN,
        f32::from_bits(0x7fc0_0001), // NaN payload must survive
    ];
    set.insert("oddities", ParamArray::vector(odd.clone()));
    set.insert(
        "grid",
        ParamArray::new(vec![2, 1, 3], (0..6).map(|i| i as f32 * 0.1).collect()).unwrap(),
    );
    set.insert("empty", ParamArray::new(vec![0], vec![]).unwrap());

    let back = read_weights(&write_weights(&set)).unwrap();
    assert_eq!(back.len(), 3);
    for (name, arr) in set.iter() {
        let got = back.get(name).unwrap();
        assert_eq!(got.dims, arr.dims, "{name} dims");
        let want_bits: Vec<u32> = arr.data.iter().map(|v| v.to_bits()).collect();
        let got_bits: Vec<u32> = got.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(got_bits, want_bits, "{name} payload bits");
    }
}

fn one_entry_file() -> Vec<u8> {
    let mut set = ParamSet::new();
    set.insert("w", ParamArray::vector(vec![1.0f32, 2.0]));
    write_weights(&set)
}

#[test]
fn magic_and_version_are_enforced() {
    let mut bytes = one_entry_file();
    bytes[0] ^= 0xff;
    assert!(matches!(read_weights(&bytes), Err(Error::BadMagic)));

    let mut bytes = one_entry_file();
    bytes[4] = 2;
    assert!(matches!(read_weights(&bytes), Err(Error::BadVersion(2))));
}

#[test]
fn every_strict_prefix_is_truncated() {
    let mut set = ParamSet::new();
    set.insert("a", ParamArray::vector(vec![1.0f32]));
    set.insert("bb", ParamArray::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
    let bytes = write_weights(&set);
    assert!(read_weights(&bytes).is_ok());
    // Truncation never alters surviving bytes, so the first failing read is
    // always a take() past the end.
    for len in 0..bytes.len() {
        assert!(
            matches!(read_weights(&bytes[..len]), Err(Error::TruncatedFile)),
            "prefix of {len} bytes"
        );
    }
}

#[test]
fn trailing_bytes_are_rejected() {
    let mut bytes = one_entry_file();
    bytes.push(0);
    assert!(matches!(read_weights(&bytes), Err(Error::ParseError(_))));
}

#[test]
fn duplicate_names_are_rejected() {
    let entry = one_entry_file()[9..].to_vec();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&MAGIC);
    bytes.push(VERSION);
    bytes.extend_from_slice(&2u32.to_le_bytes());
    bytes.extend_from_slice(&entry);
    bytes.extend_from_slice(&entry);
    assert!(matches!(read_weights(&bytes), Err(Error::DuplicateName(n)) if n == "w"));
}

#[test]
fn unknown_dtype_is_rejected() {
    let mut bytes = one_entry_file();
    // Entry layout: name_len u16, name "w", dtype.
    let dtype_at = 9 + 2 + 1;
    assert_eq!(bytes[dtype_at], DTYPE_F32);
    bytes[dtype_at] = 7;
    assert!(matches!(read_weights(&bytes), Err(Error::DtypeUnsupported(7))));
}

#[test]
fn save_load_save_is_byte_identical() {
    let settings = BuildSettings { head_dim: 8, ..BuildSettings::default() };
    let spec = build_model(
        &[StageDesc::conv(16, 1, false), StageDesc::hybrid(16, 16, 1, 1, true)],
        &[2, 1],
        settings,
        6,
    )
    .unwrap();
    let params = init_params::<f32>(&spec, 3);

    let a = scratch("roundtrip_a.nvtw");
    let b = scratch("roundtrip_b.nvtw");
    save_weights(&params, &a).unwrap();
    let loaded = load_weights(&a).unwrap();
    save_weights(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn entries_are_written_in_key_order() {
    let mut set = ParamSet::new();
    set.insert("zz", ParamArray::vector(vec![1.0f32]));
    set.insert("aa", ParamArray::vector(vec![2.0f32]));
    let bytes = write_weights(&set);
    assert_eq!(bytes, write_weights(&set), "serialization is deterministic");
    let pos = |needle: &[u8]| bytes.windows(needle.len()).position(|w| w == needle).unwrap();
    assert!(pos(b"aa") < pos(b"zz"));
}

#[test]
fn input_container_roundtrips_and_validates() {
    let mut rng = SplitMix64::new(5);
    let x = Tensor32::random_normal(Shape::new(2, 3, 5, 4), &mut rng, 1.0);
    let path = scratch("input.nvtw");
    save_input_tensor(&x, &path).unwrap();
    let back = load_input_tensor(&path).unwrap();
    assert_eq!(back.shape(), x.shape());
    let same = x.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(same, "input payload is bit-exact");

    // A weights file without an "input" entry is not an input container.
    let mut other = ParamSet::new();
    other.insert("weight", ParamArray::vector(vec![1.0f32]));
    let wpath = scratch("not_input.nvtw");
    save_weights(&other, &wpath).unwrap();
    assert!(matches!(load_input_tensor(&wpath), Err(Error::MissingParam(_))));

    // An "input" entry must be rank 4.
    let mut flat = ParamSet::new();
    flat.insert("input", ParamArray::new(vec![2, 3], vec![0.0; 6]).unwrap());
    let fpath = scratch("flat_input.nvtw");
    save_weights(&flat, &fpath).unwrap();
    assert!(matches!(load_input_tensor(&fpath), Err(Error::ParamDims(_, _))));
}
