//! Wall-clock microbenchmark harness: seeded input, warmup, per-iteration
//! timings, median / p95 (nearest rank) per target. Numbers are machine-local;
//! the only portable claim is ordering between models on one host.

use std::time::Instant;

use crate::backend::Eval;
use crate::error::{Error, Result};
use crate::model::{forward_opts, ModelSpec};
use crate::params::ParamSet;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_ITERS: usize = 50;
const BENCH_SEED: u64 = 0xb3ac;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    /// "model", "stem", "stageN.blockM" or "head".
    pub target: String,
    pub batch: usize,
    pub size: (usize, usize),
    pub warmup: usize,
    pub iters: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    /// Worker threads the forward ran with (1 = single-threaded).
    pub workers: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn model_row(&self) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.target == "model")
    }

    /// Fixed columns: target,batch,size,warmup,iters,median_ms,p95_ms.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# workers={}\n", self.workers);
        s.push_str("target,batch,size,warmup,iters,median_ms,p95_ms\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{}x{},{},{},{:.4},{:.4}\n",
                r.target, r.batch, r.size.0, r.size.1, r.warmup, r.iters, r.median_ms, r.p95_ms
            ));
        }
        s
    }
}

/// Median of unsorted samples; even counts average the two middle ranks.
pub fn median(samples: &[f64]) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest-rank 95th percentile; never below the median.
pub fn p95(samples: &[f64]) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    let n = v.len();
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    v[rank - 1].max(median(samples))
}

fn row(
    target: String,
    batch: usize,
    size: (usize, usize),
    warmup: usize,
    iters: usize,
    samples: &[f64],
) -> BenchRow {
    BenchRow {
        target,
        batch,
        size,
        warmup,
        iters,
        median_ms: median(samples),
        p95_ms: p95(samples),
    }
}

/// Time `iters` forwards after `warmup` discarded ones. With `per_block`, the
/// report carries one extra row per stem/block/head alongside the model row.
#[allow(clippy::too_many_arguments)]
pub fn bench_run_opts<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamSet<T>,
    batch: usize,
    size: (usize, usize),
    warmup: usize,
    iters: usize,
    eval: &mut Eval,
    per_block: bool,
) -> Result<BenchReport> {
    if iters == 0 {
        return Err(Error::BadConfig("bench needs iters >= 1".into()));
    }
    if batch == 0 {
        return Err(Error::BadConfig("bench needs batch >= 1".into()));
    }
    let mut rng = SplitMix64::new(BENCH_SEED);
    let x: Tensor<T> = Tensor::random_normal(
        Shape { n: batch, c: spec.in_channels, h: size.0, w: size.1 },
        &mut rng,
        1.0,
    );
    for _ in 0..warmup {
        forward_opts(spec, params, &x, eval, false)?;
    }
    let mut totals = Vec::with_capacity(iters);
    let mut block_names: Vec<String> = Vec::new();
    let mut block_samples: Vec<Vec<f64>> = Vec::new();
    for it in 0..iters {
        let start = Instant::now();
        let out = forward_opts(spec, params, &x, eval, per_block)?;
        totals.push(start.elapsed().as_secs_f64() * 1e3);
        if let Some(rows) = out.block_ms {
            if it == 0 {
                block_names = rows.iter().map(|(n, _)| n.clone()).collect();
                block_samples = vec![Vec::with_capacity(iters); rows.len()];
            }
            for (i, (_, ms)) in rows.into_iter().enumerate() {
                block_samples[i].push(ms);
            }
        }
    }
    let mut rows = vec![row("model".into(), batch, size, warmup, iters, &totals)];
    for (name, samples) in block_names.into_iter().zip(block_samples) {
        rows.push(row(name, batch, size, warmup, iters, &samples));
    }
    Ok(BenchReport { workers: eval.workers, rows })
}

/// Single-threaded model-level benchmark.
pub fn bench_run<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamSet<T>,
    batch: usize,
    size: (usize, usize),
    warmup: usize,
    iters: usize,
) -> Result<BenchReport> {
    bench_run_opts(spec, params, batch, size, warmup, iters, &mut Eval::default(), false)
}
