use std::path::Path;
use std::process::{Command, Output};

use fmamba::image_io::{read_image, write_image};
use fmamba::synthetic::scene_pair;
use fmamba::Tensor;

fn fmamba(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmamba"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn pair(dir: &Path, h: usize, w: usize, seed: u64) {
    let (a, b) = scene_pair(h, w, seed);
    write_image(&a, &dir.join("a.pgm")).unwrap();
    write_image(&b, &dir.join("b.pgm")).unwrap();
}

#[test]
fn train_then_fuse_with_state() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pair(d, 32, 32, 1);
    let out = fmamba(d, &["train-toy", "--a", "a.pgm", "--b", "b.pgm", "--steps", "2", "--out", "m.state"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("m.state").exists());

    let out = fmamba(d, &["fuse", "--a", "a.pgm", "--b", "b.pgm", "--state", "m.state", "--out", "f.pgm", "--report", "r.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_image(&d.join("f.pgm")).unwrap().shape(), &[32, 32]);
    let csv = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(csv.starts_with("pair,vif,scd,qabf,msssim,fmi"));

    let out = fmamba(d, &["fuse", "--a", "a.pgm", "--b", "b.pgm", "--state", "m.state", "--base-dim", "16", "--out", "g.pgm"]);
    assert_eq!(out.status.code(), Some(3));

    std::fs::write(d.join("junk.state"), b"nonsense").unwrap();
    let out = fmamba(d, &["fuse", "--a", "a.pgm", "--b", "b.pgm", "--state", "junk.state", "--out", "g.pgm"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pair(d, 32, 32, 2);
    write_image(&Tensor::zeros(&[32, 64]), &d.join("wide.pgm")).unwrap();
    let out = fmamba(d, &["fuse", "--a", "a.pgm", "--b", "wide.pgm", "--out", "f.pgm"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fmamba(d, &["fuse", "--a", "a.pgm", "--b", "missing.pgm", "--out", "f.pgm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.pgm"));
    let out = fmamba(d, &["train-toy", "--a", "a.pgm", "--b", "b.pgm", "--steps", "0", "--out", "m.state"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn metrics_over_directories() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for sub in ["A", "B", "F"] {
        std::fs::create_dir(d.join(sub)).unwrap();
    }
    for (k, stem) in ["x", "y"].iter().enumerate() {
        let (a, b) = scene_pair(48, 48, k as u64);
        let f = a.zip_map(&b, |p, q| 0.5 * (p + q)).unwrap();
        write_image(&a, &d.join("A").join(format!("{stem}.pgm"))).unwrap();
        write_image(&b, &d.join("B").join(format!("{stem}.pgm"))).unwrap();
        write_image(&f, &d.join("F").join(format!("{stem}.pgm"))).unwrap();
    }
    write_image(&Tensor::zeros(&[48, 48]), &d.join("A").join("lonely.pgm")).unwrap();
    let args = ["metrics", "--dir-a", "A", "--dir-b", "B", "--dir-f", "F", "--out", "m.csv", "--jsonl", "m.jsonl"];
    let out = fmamba(d, &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lonely"));
    let csv = std::fs::read_to_string(d.join("m.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("x,") && rows[2].starts_with("y,") && rows[3].starts_with("mean,"));
    let jsonl = std::fs::read_to_string(d.join("m.jsonl")).unwrap();
    for line in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["qabf"].is_number());
    }

    std::fs::create_dir(d.join("E")).unwrap();
    let out = fmamba(d, &["metrics", "--dir-a", "A", "--dir-b", "B", "--dir-f", "E", "--out", "e.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_suites_and_fault_injection() {
    let dir = tempfile::tempdir().unwrap();
    let out = fmamba(dir.path(), &["check", "--suite", "ssm", "--suite", "ldc", "--suite", "losses"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let out = fmamba(dir.path(), &["check", "--suite", "grad", "--inject-fault", "linear"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}
