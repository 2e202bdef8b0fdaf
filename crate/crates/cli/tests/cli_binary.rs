//! Smoke tests driving the actual binary: exit codes, subcommand plumbing,
//! and artifact emission.

use std::path::Path;
use std::process::Command;

fn sadkit_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sadkit"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn run_geometry_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
recipe = "geometry_report"
master_seed = 3

[family]
kind = "mlp"
dim = 4
hidden_mult = 2

[sweep]
geometry_samples = 2000
"#,
    );
    let out = dir.path().join("out");
    let status = sadkit_bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("geometry_report/geometry.csv").exists());
    assert!(out.join("geometry_report/report.csv").exists());

    // SADs from the saved geometry.
    let sads_out = dir.path().join("sads");
    let status = sadkit_bin()
        .args(["sads", "--geometry"])
        .arg(out.join("geometry_report/geometry.csv"))
        .args(["--out"])
        .arg(&sads_out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(sads_out.join("eigenvalues.csv").exists());
    assert!(sads_out.join("sad_0000.pgm").exists());

    // Alignment of a dataset against that geometry needs a dataset; exercise
    // the config-error exit code instead.
    let status = sadkit_bin()
        .args(["align", "--config"])
        .arg(&cfg)
        .args(["--geometry"])
        .arg(out.join("geometry_report/geometry.csv"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn metrics_subcommand_reads_sample_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "0.0,0.0\n0.0,0.0\n").unwrap();
    std::fs::write(&b, "1.0,0.0\n1.0,0.0\n").unwrap();
    let output = sadkit_bin()
        .args(["metrics", "--a"])
        .arg(&a)
        .args(["--b"])
        .arg(&b)
        .args(["--l", "256", "--seed", "5"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("sw2,"));
    assert!(text.contains("msw2,"));
    // Point masses at distance 1: msw2 below but near 1.
    let msw: f64 = text
        .lines()
        .find(|l| l.starts_with("msw2"))
        .and_then(|l| l.split(',').nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert!(msw > 0.5 && msw < 1.0, "msw {}", msw);
}

#[test]
fn missing_config_exits_one() {
    let status = sadkit_bin()
        .args(["run", "--config", "/nonexistent/config.toml"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn diverging_run_exits_two_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
recipe = "sad_sweep"
master_seed = 3

[family]
kind = "mlp"
dim = 4
hidden_mult = 2

[dataset]
kind = "rank_one"
n = 100

[train]
batch_size = 4
iterations = 30
learning_rate = 1e9

[metric]
l_factor = 4
n_eval = 50

[sweep]
seeds = 1
n_select = 2
geometry_samples = 1000
"#,
    );
    let out = dir.path().join("out");
    let status = sadkit_bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // Partial report still written.
    let report = std::fs::read_to_string(out.join("sad_sweep/report.csv")).unwrap();
    assert!(report.contains("failed"));
}

#[test]
fn train_and_sample_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    // Tiny IDX file as the training dataset (4 images of 3x3).
    let idx = dir.path().join("train.idx");
    let mut bytes: Vec<u8> = Vec::new();
    bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    bytes.extend_from_slice(&4u32.to_be_bytes());
    bytes.extend_from_slice(&3u32.to_be_bytes());
    bytes.extend_from_slice(&3u32.to_be_bytes());
    bytes.extend_from_slice(&[100u8; 36]);
    std::fs::write(&idx, bytes).unwrap();

    let cfg = write_config(
        dir.path(),
        &format!(
            r#"
recipe = "geometry_report"
master_seed = 3

[family]
kind = "conv_unet_mini"
channels = 1
height = 3
width = 3
hidden_channels = 2

[schedule]
n_steps = 10

[dataset]
kind = "idx"
images = "{}"

[train]
batch_size = 2
iterations = 20
learning_rate = 1e-4
"#,
            idx.display()
        ),
    );
    let out = dir.path().join("out");
    let status = sadkit_bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("trace.csv").exists());
    let ckpt = out.join("params.bin");
    assert!(ckpt.exists());

    let status = sadkit_bin()
        .args(["sample", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .args(["--checkpoint"])
        .arg(&ckpt)
        .args(["--n", "8"])
        .status()
        .unwrap();
    assert!(status.success());
    let samples = std::fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 8);
}
