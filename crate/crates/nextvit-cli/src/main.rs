//! Command-line surface over the `nextvit` library: cost tables, inference,
//! latency benchmarking, batch-norm folding and the built-in check suites.
//!
//! Exit codes are a stable contract: 0 on success, 1 when a verification
//! check fails, 2 on usage errors (bad flags, unreadable files, invalid
//! configs or weight containers).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nextvit::bench::{bench_run_opts, BenchReport, DEFAULT_ITERS, DEFAULT_WARMUP};
use nextvit::gradcheck::{self, run_gradcheck};
use nextvit::selftest::{self, run_selftest};
use nextvit::{
    check_equivalence_at, check_params, count_flops, fold_batchnorm, forward_opts, init_params,
    load_input_tensor, load_weights, parse_config, render_config, save_weights, ConvAlgo, Eval,
    ModelSpec, Tensor32,
};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Seed for bench weights and for the fold equivalence inputs.
const CLI_SEED: u64 = 0;
const FOLD_TOL: f64 = 5e-3;

#[derive(Parser)]
#[command(
    name = "nextvit",
    version,
    about = "CPU inference and verification engine for hybrid CNN-Transformer backbones"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print a parameter and FLOPs table for a model configuration
    Describe {
        /// Model configuration document (JSON)
        config: PathBuf,
        /// Input size as HxW or one square extent, multiples of 32
        #[arg(long, default_value = "224x224", value_parser = parse_size)]
        size: (usize, usize),
    },
    /// Run a forward pass and print the logits
    Infer {
        /// Model configuration document (JSON)
        config: PathBuf,
        /// NVTW weight container matching the configuration
        weights: PathBuf,
        /// NVTW container with a single rank-4 entry named "input"
        input: PathBuf,
        /// Also print each stage's output shape
        #[arg(long)]
        trace: bool,
    },
    /// Measure forward latency over repeated runs
    Bench {
        /// Model configuration document (JSON)
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        /// Input size as HxW or one square extent, multiples of 32
        #[arg(long, default_value = "224x224", value_parser = parse_size)]
        size: (usize, usize),
        /// Discarded runs before timing starts
        #[arg(long, default_value_t = DEFAULT_WARMUP)]
        warmup: usize,
        /// Timed runs
        #[arg(long, default_value_t = DEFAULT_ITERS)]
        iters: usize,
        /// Also write the report as CSV to this path
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Add one timed row per stem / block / head
        #[arg(long)]
        per_block: bool,
        /// Worker threads for the forward (1 = single-threaded)
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Check analytic gradients against central finite differences
    Gradcheck {
        /// Cap on the spatial extent of the probe tensors
        #[arg(long, default_value_t = 8)]
        max_size: usize,
    },
    /// Fold batch norms away and verify the folded model is equivalent
    Fold {
        /// Model configuration document (JSON)
        config: PathBuf,
        /// NVTW weight container matching the configuration
        weights: PathBuf,
        /// Where to write the folded weights
        #[arg(long)]
        out: PathBuf,
        /// Where to write the folded configuration (default: `<out>.json`)
        #[arg(long)]
        config_out: Option<PathBuf>,
        /// Seeded inputs for the equivalence check
        #[arg(long, default_value_t = 8)]
        samples: usize,
        /// Input size for the equivalence check
        #[arg(long, default_value = "224x224", value_parser = parse_size)]
        size: (usize, usize),
    },
    /// Run the oracle-equivalence suites
    Selftest,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parse_one =
        |t: &str| t.parse::<usize>().map_err(|_| format!("`{t}` is not a positive integer"));
    match s.split_once('x') {
        Some((h, w)) => Ok((parse_one(h)?, parse_one(w)?)),
        None => parse_one(s).map(|e| (e, e)),
    }
}

fn size_str(size: (usize, usize)) -> String {
    format!("{}x{}", size.0, size.1)
}

fn read_text(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_spec(path: &Path) -> Result<ModelSpec, String> {
    parse_config(&read_text(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_params(spec: &ModelSpec, path: &Path) -> Result<nextvit::ParamSet32, String> {
    let params = load_weights(path).map_err(|e| format!("{}: {e}", path.display()))?;
    check_params(spec, &params).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(params)
}

fn cmd_describe(config: &Path, size: (usize, usize)) -> Result<u8, String> {
    let spec = load_spec(config)?;
    let report = count_flops(&spec, size).map_err(|e| e.to_string())?;
    let mut out = String::new();
    let _ = writeln!(out, "{:<18} {:>12} {:>14}", "target", "params", "flops");
    for (module, params, flops) in &report.per_module {
        let _ = writeln!(out, "{module:<18} {params:>12} {flops:>14}");
    }
    let _ = writeln!(out, "{:<18} {:>12} {:>14}", "total", report.params_total, report.flops_total);
    let _ = writeln!(
        out,
        "params {:.3} M   flops {:.3} G   @ {}",
        report.params_m(),
        report.flops_g(),
        size_str(size)
    );
    print!("{out}");
    Ok(0)
}

fn cmd_infer(config: &Path, weights: &Path, input: &Path, trace: bool) -> Result<u8, String> {
    let spec = load_spec(config)?;
    let params = load_params(&spec, weights)?;
    let x: Tensor32 = load_input_tensor(input).map_err(|e| format!("{}: {e}", input.display()))?;
    let out =
        forward_opts(&spec, &params, &x, &mut Eval::default(), false).map_err(|e| e.to_string())?;
    if trace {
        println!("input: {}", x.shape());
        for (i, shape) in out.stage_shapes.iter().enumerate() {
            println!("stage{}: {shape}", i + 1);
        }
    }
    let shape = out.logits.shape();
    let classes = spec.num_classes;
    println!("logits ({} x {classes}):", shape.n);
    let mut argmaxes = Vec::with_capacity(shape.n);
    for s in 0..shape.n {
        let row = &out.logits.data()[s * classes..(s + 1) * classes];
        let mut line = String::with_capacity(classes * 10);
        let mut best = 0usize;
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{v:.6}");
            if *v > row[best] {
                best = j;
            }
        }
        println!("{line}");
        argmaxes.push(best.to_string());
    }
    println!("argmax: {}", argmaxes.join(" "));
    Ok(0)
}

fn print_bench(report: &BenchReport) {
    println!("workers: {}", report.workers);
    println!(
        "{:<18} {:>5} {:>9} {:>6} {:>5} {:>11} {:>11}",
        "target", "batch", "size", "warmup", "iters", "median_ms", "p95_ms"
    );
    for row in &report.rows {
        println!(
            "{:<18} {:>5} {:>9} {:>6} {:>5} {:>11.4} {:>11.4}",
            row.target,
            row.batch,
            size_str(row.size),
            row.warmup,
            row.iters,
            row.median_ms,
            row.p95_ms
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    config: &Path,
    batch: usize,
    size: (usize, usize),
    warmup: usize,
    iters: usize,
    csv: Option<&Path>,
    per_block: bool,
    workers: usize,
) -> Result<u8, String> {
    let spec = load_spec(config)?;
    let params = init_params::<f32>(&spec, CLI_SEED);
    let mut eval = Eval::new(ConvAlgo::Im2col, workers);
    let report = bench_run_opts(&spec, &params, batch, size, warmup, iters, &mut eval, per_block)
        .map_err(|e| e.to_string())?;
    print_bench(&report);
    if let Some(path) = csv {
        std::fs::write(path, report.to_csv()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(0)
}

fn cmd_gradcheck(max_size: usize) -> Result<u8, String> {
    let cases = run_gradcheck(max_size).map_err(|e| e.to_string())?;
    for c in &cases {
        println!(
            "{:<22} max_rel {:>10.3e}  {}",
            c.name,
            c.report.max_rel,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    let ok = cases.iter().filter(|c| c.passed).count();
    println!("gradcheck: {ok}/{} cases passed (rel tol {:.0e})", cases.len(), gradcheck::REL_TOL);
    Ok(if gradcheck::all_passed(&cases) { 0 } else { EXIT_CHECK_FAILED })
}

fn cmd_fold(
    config: &Path,
    weights: &Path,
    out: &Path,
    config_out: Option<&Path>,
    samples: usize,
    size: (usize, usize),
) -> Result<u8, String> {
    let spec = load_spec(config)?;
    let params = load_params(&spec, weights)?;
    let (folded_spec, folded_params) = fold_batchnorm(&spec, &params).map_err(|e| e.to_string())?;

    save_weights(&folded_params, out).map_err(|e| format!("{}: {e}", out.display()))?;
    let default_config_out = out.with_extension("json");
    let config_path = match config_out {
        Some(p) => p.to_path_buf(),
        None if default_config_out == out => out.with_extension("config.json"),
        None => default_config_out,
    };
    std::fs::write(&config_path, render_config(&folded_spec))
        .map_err(|e| format!("{}: {e}", config_path.display()))?;

    let eq = check_equivalence_at(
        &spec,
        &params,
        &folded_spec,
        &folded_params,
        samples,
        CLI_SEED,
        FOLD_TOL,
        size,
    )
    .map_err(|e| e.to_string())?;
    let matched = eq.argmax_match.iter().filter(|&&m| m).count();
    println!("folded weights: {}", out.display());
    println!("folded config:  {}", config_path.display());
    println!(
        "equivalence over {} inputs @ {}: max_abs {:.3e}  max_rel {:.3e}  argmax {matched}/{}  tol {:.0e}  {}",
        eq.samples,
        size_str(size),
        eq.max_abs_err,
        eq.max_rel_err,
        eq.samples,
        eq.tol,
        if eq.passed() { "pass" } else { "FAIL" }
    );
    Ok(if eq.passed() { 0 } else { EXIT_CHECK_FAILED })
}

fn cmd_selftest() -> Result<u8, String> {
    let cases = run_selftest().map_err(|e| e.to_string())?;
    for c in &cases {
        println!(
            "{:<22} max_err {:>10.3e}  tol {:>7.1e}  {}",
            c.name,
            c.max_err,
            c.tol,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    let ok = cases.iter().filter(|c| c.passed).count();
    println!("selftest: {ok}/{} cases passed", cases.len());
    Ok(if selftest::all_passed(&cases) { 0 } else { EXIT_CHECK_FAILED })
}

fn run(cmd: Cmd) -> Result<u8, String> {
    match cmd {
        Cmd::Describe { config, size } => cmd_describe(&config, size),
        Cmd::Infer { config, weights, input, trace } => cmd_infer(&config, &weights, &input, trace),
        Cmd::Bench { config, batch, size, warmup, iters, csv, per_block, workers } => {
            cmd_bench(&config, batch, size, warmup, iters, csv.as_deref(), per_block, workers)
        }
        Cmd::Gradcheck { max_size } => cmd_gradcheck(max_size),
        Cmd::Fold { config, weights, out, config_out, samples, size } => {
            cmd_fold(&config, &weights, &out, config_out.as_deref(), samples, size)
        }
        Cmd::Selftest => cmd_selftest(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
