use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fb4_core::Tensor;

fn fb4(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fb4"))
        .args(args)
        .output()
        .expect("run fb4")
}

fn ok(args: &[&str]) -> String {
    let out = fb4(args);
    assert!(
        out.status.success(),
        "fb4 {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_tensor(path: &Path, t: &Tensor) {
    fs::write(path, t.to_fbt1()).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn formatbook_lists_32_dialects() {
    let out = ok(&["formatbook"]);
    assert_eq!(out.lines().count(), 33);
    assert!(out.lines().last().unwrap().starts_with("hash "));
}

#[test]
fn representable_roundtrip_has_zero_mse() {
    let dir = tempfile::tempdir().unwrap();
    let (a, q, b) = (
        dir.path().join("a.fbt1"),
        dir.path().join("a.fbq1"),
        dir.path().join("b.fbt1"),
    );
    // magnitudes of the range-15, p=1 dialect
    let data: Vec<f32> = (0..64).map(|i| [15.0, -9.0, 4.0, 0.0][i % 4]).collect();
    write_tensor(&a, &Tensor::new(vec![2, 32], data).unwrap());
    ok(&["quantize", p(&a), p(&q), "--mode", "exact"]);
    ok(&["dequantize", p(&q), p(&b)]);
    let csv = ok(&["compare", p(&a), p(&b)]);
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn quantize_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.fbt1");
    let data: Vec<f32> = (0..4 * 40)
        .map(|i| ((i * 7919) % 113) as f32 * 0.1 - 5.0)
        .collect();
    write_tensor(&a, &Tensor::new(vec![4, 40], data).unwrap());
    let (q1, q2) = (dir.path().join("1.fbq1"), dir.path().join("2.fbq1"));
    for q in [&q1, &q2] {
        ok(&[
            "quantize",
            p(&a),
            p(q),
            "--block",
            "16",
            "--decompose",
            "0,2-3",
        ]);
    }
    assert_eq!(fs::read(&q1).unwrap(), fs::read(&q2).unwrap());
    let back = dir.path().join("b.fbt1");
    ok(&["dequantize", p(&q1), p(&back)]);
    assert_eq!(
        Tensor::from_fbt1(&fs::read(&back).unwrap())
            .unwrap()
            .shape(),
        &[4, 40]
    );
}

#[test]
fn baseline_reports_both_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.fbt1");
    let data: Vec<f32> = (0..256).map(|i| ((i as f32) * 0.731).sin() * 3.0).collect();
    write_tensor(&a, &Tensor::new(vec![8, 32], data).unwrap());
    let mx = ok(&["baseline", p(&a), "--scheme", "mxfp4"]);
    assert!(mx.contains("\nfb4,32,4.3125,") && mx.contains("\nmxfp4,32,4.25,"));
    let nv = ok(&["baseline", p(&a), "--scheme", "nvfp4", "--block", "16"]);
    assert!(nv.contains("\nnvfp4-style,16,4.5,"));
    assert!(!fb4(&["baseline", p(&a), "--scheme", "int4"])
        .status
        .success());
}

#[test]
fn simulate_emits_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 3\nsteps = 12\n[scene]\nframes = 2\ndim = 32\n",
    )
    .unwrap();
    let (csv, sc) = (dir.path().join("r.csv"), dir.path().join("anchors.txt"));
    let summary = ok(&["simulate", p(&cfg), "--out", p(&csv), "--sidecar", p(&sc)]);
    assert!(summary.contains("steps: 12"));
    let report = fs::read_to_string(&csv).unwrap();
    assert_eq!(report.lines().count(), 13);
    assert!(fs::read_to_string(&sc).unwrap().starts_with("fb4-seda 1"));

    // the sidecar drives quantization of a matching tensor
    let a = dir.path().join("a.fbt1");
    let data: Vec<f32> = (0..2 * 128 * 32)
        .map(|i| ((i as f32) * 0.37).cos())
        .collect();
    write_tensor(&a, &Tensor::new(vec![256, 32], data).unwrap());
    ok(&[
        "quantize",
        p(&a),
        p(&dir.path().join("s.fbq1")),
        "--seda-sidecar",
        p(&sc),
    ]);

    let again = dir.path().join("r2.csv");
    ok(&["simulate", p(&cfg), "--out", p(&again)]);
    assert_eq!(report, fs::read_to_string(&again).unwrap());
}

#[test]
fn errors_exit_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "stepz = 3\n").unwrap();
    let out = fb4(&["simulate", p(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));

    let missing = dir.path().join("nope.fbt1");
    let out = fb4(&["dequantize", p(&missing), p(&dir.path().join("x"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.fbt1"));

    let junk = dir.path().join("junk.fbq1");
    fs::write(&junk, b"FBQ1junk").unwrap();
    assert!(!fb4(&["dequantize", p(&junk), p(&dir.path().join("y"))])
        .status
        .success());
    let a = dir.path().join("a.fbt1");
    write_tensor(&a, &Tensor::new(vec![4], vec![1.0; 4]).unwrap());
    assert!(!fb4(&["quantize", p(&a), p(&junk), "--block", "24"])
        .status
        .success());
}
