use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mop_core::pooling::FeatureSet;

fn mop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mop"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn mop")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mop(dir, args);
    assert!(
        out.status.success(),
        "mop {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    mop(dir, args).status.code().expect("exit code")
}

/// 3 classes x 12 images, 11 per class for training: enough rank for 32-d
/// pooled PCA blocks.
fn dataset() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "d", "--per-class", "12", "--train-per-class", "11"]);
    let cfg = dir.path().join("d/config.json");
    (dir, cfg)
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn fit_encode_is_deterministic_with_expected_dims() {
    let (dir, cfg) = dataset();
    let d = dir.path();
    let cfg = cfg.to_str().unwrap();
    ok(d, &["--config", cfg, "fit"]);
    ok(d, &["--config", cfg, "--out", "again", "fit"]);
    let a = fs::read(d.join("d/run/model.mopm")).unwrap();
    let b = fs::read(d.join("again/model.mopm")).unwrap();
    assert_eq!(a, b, "refit with the same seed differs");

    let report = read_json(&d.join("d/run/fit_report.json"));
    assert_eq!(report["images"], 33);
    assert_eq!(report["descriptor_dim"], 64);

    let line = ok(d, &["--config", cfg, "encode"]);
    assert!(line.starts_with("encode:"), "{line}");
    let first = fs::read(d.join("d/run/features.mopd")).unwrap();
    ok(d, &["--config", cfg, "encode"]);
    assert_eq!(first, fs::read(d.join("d/run/features.mopd")).unwrap());

    let set = FeatureSet::load(&d.join("d/run/features.mopd")).unwrap();
    assert_eq!(set.len(), 36);
    assert_eq!(set.matrix.dim(), 64 + 2 * 32);
    let lengths: Vec<usize> = set.sidecar.layout.iter().map(|b| b.length).collect();
    assert_eq!(lengths, [64, 32, 32]);
    assert_eq!(set.sidecar.fingerprint, report["fingerprint"].as_str().unwrap());
    for row in set.rows_f64() {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 3f64.sqrt()).abs() < 1e-5, "row norm {norm}");
    }
}

#[test]
fn studies_write_their_tables() {
    let (dir, cfg_path) = dataset();
    let d = dir.path();
    // an exact duplicate whose only relevant item is its original
    fs::copy(d.join("d/images/class1_000.pgm"), d.join("d/images/dup.pgm")).unwrap();
    let labels_path = d.join("d/labels.json");
    let mut labels: BTreeMap<String, String> = serde_json::from_value(read_json(&labels_path)).unwrap();
    labels.insert("dup".into(), "class1".into());
    fs::write(&labels_path, serde_json::to_string(&labels).unwrap()).unwrap();
    fs::write(d.join("d/relevance.json"), r#"{"dup": ["class1_000"], "class1_000": ["dup"]}"#).unwrap();
    let mut cfg: serde_json::Value = read_json(&cfg_path);
    cfg["relevance"] = "relevance.json".into();
    cfg["sweep"] = serde_json::json!([
        {"kind": "scale", "parameter": 1.0},
        {"kind": "rotate", "parameter": 0.0},
        {"kind": "flip", "parameter": 0.0},
        {"kind": "translate_h", "parameter": 20.0}
    ]);
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let cfg = cfg_path.to_str().unwrap();

    ok(d, &["--config", cfg, "fit"]);
    ok(d, &["--config", cfg, "encode"]);

    let line = ok(d, &["--config", cfg, "classify"]);
    assert!(line.starts_with("classify:"), "{line}");
    let acc = fs::read_to_string(d.join("d/run/accuracy.csv")).unwrap();
    assert_eq!(acc.lines().next().unwrap(), "method,strategy,levels,dim,accuracy");
    assert_eq!(acc.lines().count(), 2);
    assert!(d.join("d/run/svm.json").exists());

    ok(d, &["--config", cfg, "retrieve"]);
    let ret = fs::read_to_string(d.join("d/run/retrieval.csv")).unwrap();
    let map: f64 = ret.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(map, 1.0);
    assert_eq!(fs::read_to_string(d.join("d/run/retrieval_ap.csv")).unwrap().lines().count(), 3);

    let line = ok(d, &["--config", cfg, "invariance"]);
    let inv = fs::read_to_string(d.join("d/run/invariance.csv")).unwrap();
    assert_eq!(inv.lines().count(), 1 + 4);
    let baseline: f64 = line
        .split("baseline accuracy ")
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    for row in inv.lines().skip(1).take(2) {
        let a: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!((a - baseline).abs() < 1e-4, "{row} vs {baseline}");
    }

    let line = ok(d, &["--config", cfg, "windows", "--image", "class2_000"]);
    assert!(line.contains("164 windows each"), "{line}");
    let win = fs::read_to_string(d.join("d/run/windows.csv")).unwrap();
    assert_eq!(win.lines().count(), 2);
    assert!(win.lines().nth(1).unwrap().starts_with("class2_000,class2,"));
}

#[test]
fn exit_codes() {
    let (dir, cfg_path) = dataset();
    let d = dir.path();
    let cfg = cfg_path.to_str().unwrap();
    ok(d, &["--config", cfg, "fit"]);
    assert_eq!(code(d, &["--config", cfg, "--seed", "5", "encode"]), 3, "seed change must not reuse the model");
    assert_eq!(code(d, &["--config", "nope.json", "fit"]), 2);
    assert_eq!(code(d, &["fit"]), 2);
    assert_eq!(code(d, &["frobnicate"]), 2);
    assert_eq!(code(d, &["--config", cfg, "windows", "--image", "nobody"]), 2);

    let mut v = read_json(&cfg_path);
    v["pipeline"]["codebok_size"] = 3.into();
    fs::write(d.join("d/typo.json"), v.to_string()).unwrap();
    assert_eq!(code(d, &["--config", "d/typo.json", "fit"]), 2);

    fs::create_dir(d.join("d/empty")).unwrap();
    let mut v = read_json(&cfg_path);
    v["source"]["toy"]["images_dir"] = "empty".into();
    fs::write(d.join("d/empty.json"), v.to_string()).unwrap();
    assert_eq!(code(d, &["--config", "d/empty.json", "fit"]), 2);

    let mut v = read_json(&cfg_path);
    v["pipeline"]["codebook_size"] = 5000.into();
    v["out_dir"] = "big".into();
    fs::write(d.join("d/big.json"), v.to_string()).unwrap();
    let out = mop(d, &["--config", "d/big.json", "fit"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k-means"));
}

#[test]
fn help_lists_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(dir.path(), &["--help"]);
    for key in ["source.toy.images_dir", "pipeline.codebook_size", "pipeline.strategy.levels", "sgd.lambda", "windows.stride"] {
        assert!(help.contains(key), "help misses {key}");
    }
    assert_eq!(code(dir.path(), &["synth"]), 2);
}
