//! Builder and forward contracts: stem geometry, lettered patterns, the
//! group structure law, init determinism, input validation and batch
//! invariance.

use nextvit::params::ParamKind;
use nextvit::weights::write_weights;
use nextvit::{
    build_hybrid, build_model, build_variant, check_params, forward, forward_opts, init_params,
    model_arrays, Block, BuildSettings, Error, Eval, HybridPattern, ParamSet, Shape, SplitMix64,
    StageDesc, Tensor, Tensor32, Variant,
};

fn tiny_settings() -> BuildSettings {
    BuildSettings { head_dim: 8, ..BuildSettings::default() }
}

fn input(n: usize, hw: usize, seed: u64) -> Tensor32 {
    let mut rng = SplitMix64::new(seed);
    Tensor32::random_normal(Shape::new(n, 3, hw, hw), &mut rng, 1.0)
}

#[test]
fn variant_stem_and_projection_geometry() {
    let spec = build_variant(Variant::S, 1000);
    assert_eq!(spec.stem_layers(), vec![(3, 64, 2), (64, 32, 1), (32, 64, 1), (64, 64, 2)]);
    assert_eq!(spec.sr_ratios, vec![8, 4, 2, 1]);
    assert_eq!(spec.head_in_channels(), 1024);
    // Stage 1 needs a 1x1 embed (64 -> 96); later stages re-project too.
    assert!(spec.stages.iter().all(|s| s.embed.has_proj()));
    // Only stages 2..4 downsample; stage 1 keeps the stem's /4 resolution.
    let downs: Vec<bool> = spec.stages.iter().map(|s| s.desc.downsample).collect();
    assert_eq!(downs, vec![false, true, true, true]);
}

#[test]
fn group_structure_law_inside_hybrid_stages() {
    for v in [Variant::S, Variant::B, Variant::L] {
        let spec = build_variant(v, 1000);
        for stage in &spec.stages[1..] {
            let n = stage.desc.n;
            let group = n + 1;
            assert_eq!(stage.blocks.len() % group, 0);
            for (i, block) in stage.blocks.iter().enumerate() {
                let is_ntb = matches!(block, Block::Ntb(_));
                assert_eq!(is_ntb, i % group == n, "block {i} of group size {group}");
            }
        }
    }
}

#[test]
fn lettered_patterns_place_ntbs_as_written() {
    let ntbs_per_stage = |spec: &nextvit::ModelSpec| -> Vec<usize> {
        spec.stages
            .iter()
            .map(|s| s.blocks.iter().filter(|b| matches!(b, Block::Ntb(_))).count())
            .collect()
    };
    let channels = [32, 64, 96, 128];
    let depths = [5, 5, 5, 5];

    let all_conv = HybridPattern::parse("C C C C", 4, 1).unwrap();
    let spec = build_hybrid(&all_conv, &channels, &depths, 10).unwrap();
    assert_eq!(ntbs_per_stage(&spec), vec![0, 0, 0, 0]);

    let tail_hybrid = HybridPattern::parse("C H H H", 4, 1).unwrap();
    let spec = build_hybrid(&tail_hybrid, &channels, &depths, 10).unwrap();
    assert_eq!(ntbs_per_stage(&spec), vec![0, 1, 1, 1]);

    let all_hybrid = HybridPattern::parse("HHHH", 4, 1).unwrap();
    let spec = build_hybrid(&all_hybrid, &channels, &depths, 10).unwrap();
    assert_eq!(ntbs_per_stage(&spec), vec![1, 1, 1, 1]);

    // An H stage budget that does not split into whole (NCB*n + NTB) groups.
    let bad = build_hybrid(&tail_hybrid, &channels, &[5, 4, 5, 5], 10);
    assert!(matches!(bad, Err(Error::InvalidPattern(_))));

    assert!(matches!(HybridPattern::parse("C X", 4, 1), Err(Error::InvalidPattern(_))));
    assert!(matches!(HybridPattern::parse("", 4, 1), Err(Error::InvalidPattern(_))));
}

#[test]
fn init_is_seed_deterministic_with_unit_gammas() {
    let spec = build_model(
        &[StageDesc::conv(16, 1, false), StageDesc::hybrid(32, 32, 1, 1, true)],
        &[2, 1],
        tiny_settings(),
        10,
    )
    .unwrap();
    let a: ParamSet<f32> = init_params(&spec, 7);
    let b: ParamSet<f32> = init_params(&spec, 7);
    let c: ParamSet<f32> = init_params(&spec, 8);
    assert_eq!(write_weights(&a), write_weights(&b));
    assert_ne!(write_weights(&a), write_weights(&c));

    for arr in model_arrays(&spec) {
        let vals = &a.get(&arr.key).unwrap().data;
        match arr.kind {
            ParamKind::Gamma | ParamKind::RunningVar => {
                assert!(vals.iter().all(|&v| v == 1.0), "{} should be all ones", arr.key);
            }
            ParamKind::Beta | ParamKind::RunningMean | ParamKind::Bias => {
                assert!(vals.iter().all(|&v| v == 0.0), "{} should be all zeros", arr.key);
            }
            ParamKind::ConvWeight { .. } | ParamKind::LinearWeight { .. } => {
                assert!(vals.iter().any(|&v| v != 0.0), "{} should be random", arr.key);
            }
        }
    }
}

#[test]
fn forward_validates_inputs() {
    let spec = build_model(&[StageDesc::conv(16, 1, false)], &[1], tiny_settings(), 10).unwrap();
    let params = init_params::<f32>(&spec, 1);
    let mut rng = SplitMix64::new(2);
    // 48 is not a multiple of 32.
    let ragged = Tensor32::random_normal(Shape::new(1, 3, 48, 48), &mut rng, 1.0);
    assert!(matches!(forward(&spec, &params, &ragged), Err(Error::ShapeMismatch(_))));
    let wrong_c = Tensor32::random_normal(Shape::new(1, 4, 32, 32), &mut rng, 1.0);
    assert!(matches!(forward(&spec, &params, &wrong_c), Err(Error::ShapeMismatch(_))));
}

#[test]
fn four_downsampling_stages_reach_one_thirtysecond() {
    let descs = [
        StageDesc::conv(8, 1, false),
        StageDesc::conv(8, 1, true),
        StageDesc::conv(8, 1, true),
        StageDesc::conv(8, 1, true),
    ];
    let spec = build_model(&descs, &[1, 1, 1, 1], tiny_settings(), 10).unwrap();
    let params = init_params::<f32>(&spec, 3);
    let out = forward_opts(&spec, &params, &input(1, 256, 4), &mut Eval::default(), false).unwrap();
    assert_eq!(out.stage_shapes.last().unwrap(), &Shape::new(1, 8, 8, 8));
    assert_eq!(out.logits.shape(), Shape::mat(1, 10));
}

#[test]
fn forward_is_batch_invariant() {
    let descs = [StageDesc::conv(16, 1, false), StageDesc::hybrid(32, 32, 1, 1, true)];
    let spec = build_model(&descs, &[2, 1], tiny_settings(), 10).unwrap();
    let params = init_params::<f32>(&spec, 4);
    let both = input(2, 64, 5);
    let batched = forward(&spec, &params, &both).unwrap();

    for s in 0..2 {
        let mut one = Tensor::zeros(Shape::new(1, 3, 64, 64));
        let per = 3 * 64 * 64;
        one.data_mut().copy_from_slice(&both.data()[s * per..(s + 1) * per]);
        let single = forward(&spec, &params, &one).unwrap();
        for j in 0..10 {
            assert!(
                (batched.mat_at(s, j) - single.mat_at(0, j)).abs() < 1e-5,
                "sample {s} logit {j}"
            );
        }
    }
}

#[test]
fn check_params_reports_each_defect() {
    let spec = build_model(&[StageDesc::conv(8, 1, false)], &[1], tiny_settings(), 4).unwrap();
    let good = init_params::<f32>(&spec, 6);
    assert!(check_params(&spec, &good).is_ok());

    let mut missing = good.clone();
    missing.remove("head.weight");
    assert!(
        matches!(check_params(&spec, &missing), Err(Error::MissingParam(k)) if k == "head.weight")
    );

    let mut extra = good.clone();
    extra.insert("stage9.block0.mystery", nextvit::ParamArray::new(vec![1], vec![0.0]).unwrap());
    assert!(matches!(check_params(&spec, &extra), Err(Error::UnknownKey(_))));

    let mut bent = good.clone();
    bent.insert("head.bias", nextvit::ParamArray::new(vec![5], vec![0.0; 5]).unwrap());
    assert!(matches!(check_params(&spec, &bent), Err(Error::ParamDims(_, _))));
}

#[test]
fn stage_trace_has_one_entry_per_stage() {
    let spec = build_variant(Variant::S, 1000);
    assert_eq!(spec.stages.len(), 4);
    assert_eq!(spec.block_count(), 20);
    assert_eq!(spec.ntb_count(), 4);
}
