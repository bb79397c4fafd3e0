//! End-to-end process tests: drive the installed binary through files and
//! assert on stdout and the exit-code contract (0 ok, 1 check failed, 2 usage).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nextvit::{
    init_params, parse_config, save_input_tensor, save_weights, Shape, SplitMix64, Tensor32,
};

const TINY_CONFIG: &str = r#"{
    "stages": [
        {"kind": "C", "channels": 16, "depth": 1, "downsample": false},
        {"kind": "H", "channels": 16, "n": 1, "l": 1}
    ],
    "num_classes": 4,
    "head_dim": 8,
    "sr_ratios": [2, 1]
}"#;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nextvit-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn nextvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nextvit")).args(args).output().expect("spawn the CLI binary")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_tiny_config(name: &str) -> PathBuf {
    let path = scratch(name);
    std::fs::write(&path, TINY_CONFIG).unwrap();
    path
}

/// Seeded weights and a batch-2 input for the tiny config.
fn write_tiny_artifacts(prefix: &str) -> (PathBuf, PathBuf, PathBuf) {
    let config = write_tiny_config(&format!("{prefix}.json"));
    let spec = parse_config(TINY_CONFIG).unwrap();
    let weights = scratch(&format!("{prefix}.nvtw"));
    save_weights(&init_params::<f32>(&spec, 42), &weights).unwrap();
    let input = scratch(&format!("{prefix}_input.nvtw"));
    let mut rng = SplitMix64::new(9);
    let x = Tensor32::random_normal(Shape::new(2, 3, 32, 32), &mut rng, 1.0);
    save_input_tensor(&x, &input).unwrap();
    (config, weights, input)
}

fn argmax_line(text: &str) -> &str {
    text.lines().find(|l| l.starts_with("argmax:")).expect("an argmax line")
}

#[test]
fn describe_prints_the_cost_table() {
    let config = write_tiny_config("describe.json");
    let out = nextvit(&["describe", config.to_str().unwrap(), "--size", "32"]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("target"));
    assert!(text.lines().any(|l| l.starts_with("stem")));
    assert!(text.lines().any(|l| l.starts_with("total")));
    let tail = text.lines().last().unwrap();
    assert!(tail.starts_with("params ") && tail.contains(" flops ") && tail.ends_with("@ 32x32"));
}

#[test]
fn infer_prints_trace_logits_and_argmax() {
    let (config, weights, input) = write_tiny_artifacts("infer");
    let out = nextvit(&[
        "infer",
        config.to_str().unwrap(),
        weights.to_str().unwrap(),
        input.to_str().unwrap(),
        "--trace",
    ]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    assert!(text.contains("input: (2, 3, 32, 32)"));
    assert!(text.contains("stage1: "));
    assert!(text.contains("stage2: "));
    assert!(text.contains("logits (2 x 4):"));
    let rows: Vec<&str> = text
        .lines()
        .skip_while(|l| !l.starts_with("logits"))
        .skip(1)
        .take_while(|l| !l.starts_with("argmax"))
        .collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row.split_whitespace().count(), 4);
    }
    assert_eq!(argmax_line(&text).split_whitespace().count(), 3, "argmax: i j");
}

#[test]
fn infer_is_deterministic_across_runs() {
    let (config, weights, input) = write_tiny_artifacts("determinism");
    let args =
        ["infer", config.to_str().unwrap(), weights.to_str().unwrap(), input.to_str().unwrap()];
    let first = nextvit(&args);
    let second = nextvit(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn fold_then_infer_preserves_the_argmax() {
    let (config, weights, input) = write_tiny_artifacts("fold");
    let folded_w = scratch("folded.nvtw");
    let out = nextvit(&[
        "fold",
        config.to_str().unwrap(),
        weights.to_str().unwrap(),
        "--out",
        folded_w.to_str().unwrap(),
        "--samples",
        "4",
        "--size",
        "32",
    ]);
    assert!(out.status.success(), "fold: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout_of(&out);
    assert!(text.contains("equivalence over 4 inputs @ 32x32"));
    assert!(text.trim_end().ends_with("pass"));

    let folded_c = folded_w.with_extension("json");
    assert!(folded_c.exists(), "fold writes the rendered config next to the weights");
    assert!(std::fs::read_to_string(&folded_c).unwrap().contains("\"folded\": true"));

    let infer = |c: &Path, w: &Path| {
        let out =
            nextvit(&["infer", c.to_str().unwrap(), w.to_str().unwrap(), input.to_str().unwrap()]);
        assert!(out.status.success());
        argmax_line(&stdout_of(&out)).to_string()
    };
    assert_eq!(infer(&config, &weights), infer(&folded_c, &folded_w));
}

#[test]
fn bench_prints_rows_and_writes_csv() {
    let config = write_tiny_config("bench.json");
    let csv = scratch("bench.csv");
    let out = nextvit(&[
        "bench",
        config.to_str().unwrap(),
        "--size",
        "32",
        "--warmup",
        "0",
        "--iters",
        "2",
        "--per-block",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    assert_eq!(text.lines().next().unwrap(), "workers: 1");
    for target in ["model", "stem", "stage1.block0", "stage2.block0", "stage2.block1", "head"] {
        assert!(
            text.lines().any(|l| l.starts_with(target)),
            "stdout table misses the {target} row"
        );
    }

    let csv_text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = csv_text.lines().collect();
    assert_eq!(lines[0], "# workers=1");
    assert_eq!(lines[1], "target,batch,size,warmup,iters,median_ms,p95_ms");
    // model + stem + 3 blocks + head
    assert_eq!(lines.len(), 2 + 6);
    assert!(lines[2].starts_with("model,1,32x32,0,2,"));
}

#[test]
fn selftest_and_gradcheck_pass() {
    let self_out = nextvit(&["selftest"]);
    assert!(self_out.status.success());
    let text = stdout_of(&self_out);
    assert!(text.contains("selftest:") && text.contains("cases passed"));
    assert!(!text.contains("FAIL"));

    let grad_out = nextvit(&["gradcheck", "--max-size", "4"]);
    assert!(grad_out.status.success());
    let text = stdout_of(&grad_out);
    assert!(text.contains("gradcheck:") && text.contains("cases passed"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn usage_errors_exit_with_code_two() {
    let (config, weights, input) = write_tiny_artifacts("usage");

    // Unknown subcommand and malformed flag values are rejected by the parser.
    assert_eq!(nextvit(&["frobnicate"]).status.code(), Some(2));
    let bad_size = nextvit(&["describe", config.to_str().unwrap(), "--size", "abc"]);
    assert_eq!(bad_size.status.code(), Some(2));

    // Missing files.
    let gone = scratch("does_not_exist.json");
    let missing = nextvit(&["describe", gone.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error: "));

    // A weights file that is not an NVTW container.
    let garbage = scratch("garbage.nvtw");
    std::fs::write(&garbage, b"not a container").unwrap();
    let bad_magic = nextvit(&[
        "infer",
        config.to_str().unwrap(),
        garbage.to_str().unwrap(),
        input.to_str().unwrap(),
    ]);
    assert_eq!(bad_magic.status.code(), Some(2));

    // Structurally valid weights for a different model.
    let other = r#"{"stages": [{"kind": "C", "channels": 24, "depth": 1}], "num_classes": 4, "head_dim": 8}"#;
    let other_config = scratch("other.json");
    std::fs::write(&other_config, other).unwrap();
    let mismatched = nextvit(&[
        "infer",
        other_config.to_str().unwrap(),
        weights.to_str().unwrap(),
        input.to_str().unwrap(),
    ]);
    assert_eq!(mismatched.status.code(), Some(2));

    // Describe at a size the model cannot take.
    let bad_extent = nextvit(&["describe", config.to_str().unwrap(), "--size", "100"]);
    assert_eq!(bad_extent.status.code(), Some(2));
    let _ = weights;
}
