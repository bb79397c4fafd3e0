//! Block-level contracts: residual pass-through with zeroed mixers, the
//! channel-split table, head locality, degenerate attention, and the pinned
//! stage-2 shape law.

use nextvit::blocks::{mhca_forward, ntb_forward, split_channels, MhcaSpec};
use nextvit::ops::conv2d;
use nextvit::params::{ConvParams, ParamArray};
use nextvit::{
    build_model, build_variant, init_params, ActKind, Block, BuildSettings, Error, Eval, NormKind,
    ParamSet, Shape, SplitMix64, StageDesc, Tensor, Variant,
};

type T64 = Tensor<f64>;

fn rand(shape: Shape, seed: u64) -> T64 {
    let mut rng = SplitMix64::new(seed);
    T64::random_normal(shape, &mut rng, 1.0)
}

/// Zero every array under `prefix`, including norm gammas, so the wrapped
/// mixer contributes exactly nothing and only residual adds remain.
fn zero_under<T: nextvit::Scalar>(params: &mut ParamSet<T>, prefix: &str) {
    let keys: Vec<String> = params.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
    for k in keys {
        let dims = params.get(&k).unwrap().dims.clone();
        let n: usize = dims.iter().product();
        params.insert(k, ParamArray::new(dims, vec![T::zero(); n]).unwrap());
    }
}

#[test]
fn split_table_and_ratio_validation() {
    assert_eq!(split_channels(256, 0.75, 32).unwrap(), (192, 64));
    assert_eq!(split_channels(768, 0.75, 32).unwrap(), (576, 192));
    assert_eq!(split_channels(96, 0.5, 32).unwrap(), (64, 32));
    assert_eq!(split_channels(96, 0.0, 32).unwrap(), (0, 96));
    assert_eq!(split_channels(96, 1.0, 32).unwrap(), (96, 0));
    assert!(matches!(split_channels(96, -0.1, 32), Err(Error::InvalidRatio(_))));
    assert!(matches!(split_channels(96, 1.1, 32), Err(Error::InvalidRatio(_))));
}

#[test]
fn mhca_head_divisibility_is_enforced() {
    let bad = MhcaSpec { channels: 40, head_dim: 32, norm: NormKind::Batch, act: ActKind::Relu };
    assert!(matches!(bad.validate(), Err(Error::HeadMismatch(_))));
}

#[test]
fn mhca_zero_weights_yield_final_norm_beta() {
    // Single-NCB model gives canonical MHCA params under stage1.block0.mhca.
    let spec =
        build_model(&[StageDesc::conv(32, 1, false)], &[1], BuildSettings::default(), 10).unwrap();
    let mut params: ParamSet<f64> = init_params(&spec, 1);
    zero_under(&mut params, "stage1.block0.mhca");
    let beta = 0.375;
    let key = "stage1.block0.mhca.norm2.beta";
    let dims = params.get(key).unwrap().dims.clone();
    let n: usize = dims.iter().product();
    params.insert(key, ParamArray::new(dims, vec![beta; n]).unwrap());

    let mhca = match &spec.stages[0].blocks[0] {
        Block::Ncb(ncb) => ncb.mhca.clone(),
        _ => unreachable!(),
    };
    let x = rand(Shape::new(1, 32, 6, 6), 2);
    let y = mhca_forward(&mut Eval::default(), &x, &mhca, &params, "stage1.block0.mhca").unwrap();
    assert_eq!(y.shape(), x.shape());
    assert!(y.data().iter().all(|&v| v == beta));
}

#[test]
fn grouped_stage_is_local_to_heads() {
    // channels 64, head_dim 32 -> 2 groups; perturbing an input channel in
    // the second group leaves the first group's outputs untouched.
    let w = rand(Shape::new(64, 32, 3, 3), 3).into_data();
    let p = ConvParams {
        weight: w,
        out_channels: 64,
        in_channels: 64,
        kernel: 3,
        stride: 1,
        padding: 1,
        groups: 2,
        bias: None,
    };
    let x = rand(Shape::new(1, 64, 7, 7), 4);
    let base = conv2d(&x, &p).unwrap();
    let mut bumped = x.clone();
    for i in 0..7 {
        for j in 0..7 {
            bumped.set(0, 40, i, j, bumped.at(0, 40, i, j) + 5.0);
        }
    }
    let moved = conv2d(&bumped, &p).unwrap();
    for c in 0..32 {
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(base.at(0, c, i, j), moved.at(0, c, i, j));
            }
        }
    }
    // ...and the second group did move.
    assert!((0..7).any(|i| (0..7).any(|j| base.at(0, 40, i, j) != moved.at(0, 40, i, j))));
}

#[test]
fn ncb_zeroed_mixers_pass_through() {
    let spec =
        build_model(&[StageDesc::conv(32, 1, false)], &[1], BuildSettings::default(), 10).unwrap();
    let mut params: ParamSet<f64> = init_params(&spec, 5);
    zero_under(&mut params, "stage1.block0");
    let ncb = match &spec.stages[0].blocks[0] {
        Block::Ncb(ncb) => ncb.clone(),
        _ => unreachable!(),
    };
    let x = rand(Shape::new(1, 32, 5, 5), 6);
    let y = nextvit::blocks::ncb_forward(&mut Eval::default(), &x, &ncb, &params, "stage1.block0")
        .unwrap();
    assert!(y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn ntb_r1_zeroed_mixers_pass_through() {
    // Transformer stage, in == out == c_hi at r=1: the high-frequency proj is
    // the identity and both mixers are zeroed, so the block is a no-op.
    let settings = BuildSettings { shrink_ratio: 1.0, ..BuildSettings::default() };
    let spec = build_model(&[StageDesc::transformer(64, 1, false)], &[2], settings, 10).unwrap();
    let mut params: ParamSet<f64> = init_params(&spec, 7);
    zero_under(&mut params, "stage1.block0");
    let ntb = match &spec.stages[0].blocks[0] {
        Block::Ntb(ntb) => ntb.clone(),
        _ => unreachable!(),
    };
    assert_eq!((ntb.c_hi, ntb.c_lo), (64, 0));
    let x = rand(Shape::new(1, 64, 4, 4), 8);
    let y = ntb_forward(&mut Eval::default(), &x, &ntb, &params, "stage1.block0").unwrap();
    assert!(y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn ntb_stage2_split_and_shape_law() {
    let spec = build_variant(Variant::S, 1000);
    let params = init_params::<f32>(&spec, 9);
    let stage2 = &spec.stages[1];
    let ntb = match stage2.blocks.last().unwrap() {
        Block::Ntb(ntb) => ntb,
        _ => panic!("stage 2 must end in an NTB"),
    };
    assert_eq!((ntb.in_channels, ntb.out_channels), (192, 256));
    assert_eq!((ntb.c_hi, ntb.c_lo), (192, 64));
    assert_eq!(stage2.sr_ratio, 4);

    let x = Tensor::<f32>::random_normal(Shape::new(1, 192, 28, 28), &mut SplitMix64::new(10), 1.0);
    let y = ntb_forward(&mut Eval::default(), &x, ntb, &params, "stage2.block3").unwrap();
    assert_eq!(y.shape(), Shape::new(1, 256, 28, 28));
}

#[test]
fn emhsa_single_token_ignores_query_weights() {
    // One spatial position: the attention row is softmax over one key = [1],
    // so the output cannot depend on W^Q.
    let settings = BuildSettings { shrink_ratio: 1.0, ..BuildSettings::default() };
    let spec = build_model(&[StageDesc::transformer(64, 1, false)], &[4], settings, 10).unwrap();
    let params: ParamSet<f64> = init_params(&spec, 11);
    let ntb = match &spec.stages[0].blocks[0] {
        Block::Ntb(ntb) => ntb.clone(),
        _ => unreachable!(),
    };
    let x = rand(Shape::new(2, 64, 1, 1), 12);
    let base = nextvit::blocks::emhsa_forward(
        &mut Eval::default(),
        &x,
        &ntb.emhsa,
        &params,
        "stage1.block0.attn",
    )
    .unwrap();

    let mut scrambled = params.clone();
    let key = "stage1.block0.attn.q.weight";
    let dims = scrambled.get(key).unwrap().dims.clone();
    let n: usize = dims.iter().product();
    let noise = rand(Shape::new(1, 1, 1, n), 13).into_data();
    scrambled.insert(key, ParamArray::new(dims, noise).unwrap());
    let moved = nextvit::blocks::emhsa_forward(
        &mut Eval::default(),
        &x,
        &ntb.emhsa,
        &scrambled,
        "stage1.block0.attn",
    )
    .unwrap();
    assert!(base.data().iter().zip(moved.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}
