//! CPU inference and verification engine for Next-ViT style hybrid
//! CNN-Transformer backbones.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`], [`scalar`], [`rng`]: dense NCHW tensors over `f32`/`f64` and
//!   a deterministic SplitMix64 stream.
//! - [`ops`]: the production kernels (conv2d direct + im2col, pooling, norms,
//!   activations, linear/matmul/softmax, layout moves).
//! - [`oracle`]: independent f64-widened references for every kernel; shares
//!   no code with `ops`.
//! - [`tape`]: reverse-mode autodiff over recorded ops plus the central
//!   finite-difference prober.
//! - [`backend`]: one trait, two interpreters — eager [`backend::Eval`] and
//!   recording [`tape::Tape`] — so block code is written once.
//! - [`blocks`]: NCB, MHCA, NTB, E-MHSA forwards and their parameter layouts.
//! - [`model`]: S/B/L presets, lettered hybrid patterns, deterministic init,
//!   the traced forward pass.
//! - [`analysis`]: parameter/FLOP accounting, batch-norm folding, numerical
//!   equivalence certification.
//! - [`weights`], [`config`], [`mod@bench`]: NVTW weight container, JSON config
//!   documents, the latency microbenchmark harness.
//! - [`gradcheck`], [`selftest`]: the full finite-difference and
//!   oracle-equivalence suites, reused by the CLI.

pub mod analysis;
pub mod backend;
pub mod bench;
pub mod blocks;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod selftest;
pub mod tape;
pub mod tensor;
pub mod weights;

pub use analysis::{
    check_equivalence, check_equivalence_at, count_flops, count_params, fold_batchnorm, CostReport,
    EquivReport,
};
pub use backend::{Backend, Eval};
pub use bench::{bench_run, bench_run_opts, BenchReport, BenchRow};
pub use blocks::{ActKind, AttnScale, EmhsaSpec, MhcaSpec, NcbSpec, NormKind, NtbSpec};
pub use config::{parse_config, render_config, ConfigDoc};
pub use error::{Error, Result};
pub use model::{
    build_hybrid, build_hybrid_with, build_model, build_variant, build_variant_with, check_params,
    forward, forward_opts, init_params, model_arrays, Block, BuildSettings, ForwardOutput,
    HybridPattern, ModelSpec, PatchEmbed, StageDesc, StageKind, StageSpec, Variant,
};
pub use ops::ConvAlgo;
pub use params::{ParamArray, ParamSet};
pub use rng::SplitMix64;
pub use scalar::{Precision, Scalar};
pub use tape::{finite_diff_grad, Gradients, Tape, ValueId};
pub use tensor::{Shape, Tensor};
pub use weights::{load_input_tensor, load_weights, save_input_tensor, save_weights};

/// Single-precision tensor: the inference-path default.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor: the gradient-check and oracle default.
pub type Tensor64 = Tensor<f64>;
/// Single-precision parameter store.
pub type ParamSet32 = ParamSet<f32>;
/// Double-precision parameter store.
pub type ParamSet64 = ParamSet<f64>;
