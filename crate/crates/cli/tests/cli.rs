use std::path::Path;
use std::process::{Command, Output};

fn husformer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_husformer")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = husformer(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn params_prints_block_breakdown() {
    let out = ok(&["params", "--modalities", "6", "--layers", "5", "--heads", "3", "--dm", "30", "--ffn", "120"]);
    assert!(out.lines().any(|l| l == "per_block 11190"), "{out}");
    assert!(out.lines().any(|l| l == "blocks_subtotal 391650"), "{out}");
    let json = ok(&["params", "--modalities", "4", "--layers", "1", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    // (4 streams + 1 fusion stack) x 1 layer
    assert_eq!(v["blocks_subtotal"], 5 * 11190);
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck"]);
    let err: f64 = out.lines().next().unwrap().strip_prefix("max_relative_error ").unwrap().parse().unwrap();
    assert!(err < 1e-4);
}

#[test]
fn failures_print_one_classified_line() {
    let o = husformer(&["params", "--dm", "9", "--heads", "2"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert_eq!(e.lines().count(), 1);
    assert!(e.starts_with("error: config-error: "), "{e}");

    let o = husformer(&["split", "--n", "5", "--out", "/nonexistent-dir-for-test"]);
    assert!(stderr(&o).starts_with("error: too-few-samples: "), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let o = husformer(&["train", "--data", path(dir.path())]);
    assert!(stderr(&o).starts_with("error: format-error: "), "{}", stderr(&o));

    let o = husformer(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: usage-error: "));
}

#[test]
fn split_indices_wrap_around() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["split", "--n", "100", "--seed", "7", "--out", path(dir.path())]);
    let read = |i: usize| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("fold_{i}.json"))).unwrap()).unwrap()
    };
    let (f9, f0) = (read(9), read(0));
    assert_eq!(f9["test"], f0["val"]);
    assert_eq!(f9["val"].as_array().unwrap().len(), 10);
    assert_eq!(f9["train"].as_array().unwrap().len(), 80);

    let first = std::fs::read(dir.path().join("fold_3.json")).unwrap();
    ok(&["split", "--n", "100", "--seed", "7", "--out", path(dir.path())]);
    assert_eq!(std::fs::read(dir.path().join("fold_3.json")).unwrap(), first);
}

fn small_dataset(dir: &Path) {
    ok(&["gen-data", "--out", path(dir), "--samples", "60", "--timesteps", "6", "--seed", "2"]);
    ok(&["split", "--data", path(dir), "--seed", "2"]);
}

#[test]
fn gen_data_is_idempotent_and_train_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    small_dataset(&d);
    let blob = std::fs::read(d.join("modality_1.bin")).unwrap();
    let meta = std::fs::read(d.join("meta.json")).unwrap();
    small_dataset(&d);
    assert_eq!(std::fs::read(d.join("modality_1.bin")).unwrap(), blob);
    assert_eq!(std::fs::read(d.join("meta.json")).unwrap(), meta);

    let args = ["train", "--data", path(&d), "--layers", "1", "--heads", "1", "--dm", "6", "--ffn", "30", "--epochs", "2", "--max-folds", "2"];
    // drop the wall-time column before comparing
    let strip = |s: String| -> Vec<String> {
        s.lines().map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 5).map(|(_, c)| c).collect::<Vec<_>>().join(",")).collect()
    };
    let a = strip(ok(&args));
    assert_eq!(a.len(), 4);
    assert_eq!(a[0], "fold,loss,mae,accuracy,f1,peak_memory_mb,params");
    assert!(a[3].starts_with("mean,"));
    assert_eq!(a, strip(ok(&args)));
}

#[test]
fn sweep_ablate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    small_dataset(&d);
    let out = dir.path().join("sweep");
    let manifest = serde_json::json!({
        "format_version": 1,
        "data_dir": d,
        "output_dir": out,
        "base_model": {
            "num_modalities": 2,
            "modalities": [{"channels": 2, "timesteps": 6}, {"channels": 2, "timesteps": 6}],
            "cross_layers": 1, "cross_heads": 1, "self_layers": 1, "self_heads": 1,
            "d_model": 6, "ffn_nominal": 30, "num_classes": 3
        },
        "train": {"epochs": 1},
        "space": {
            "layers_set": [1, 2], "heads_set": [1, 2], "dm_set": [6], "ffn_set": [30],
            "defaults": {"layers": 1, "heads": 1, "d_model": 6, "ffn": 30},
            "local_opts": {"layers": 2, "heads": 2, "d_model": 6, "ffn": 30}
        },
        "seed": 5
    });
    let mpath = dir.path().join("manifest.json");
    std::fs::write(&mpath, manifest.to_string()).unwrap();

    let md = ok(&["sweep", "--manifest", path(&mpath), "--max-folds", "1"]);
    assert!(md.starts_with("| tag | L | H | d_m | FFN |"), "{md}");
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    // L: 1, 2; H: 1, 2; d_m: 6; FFN: 30
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(out.join("results.md").exists());
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(written["seed"], 5);

    let abl = dir.path().join("ablate");
    let mut m2 = manifest.clone();
    m2["output_dir"] = serde_json::json!(abl);
    std::fs::write(&mpath, m2.to_string()).unwrap();
    ok(&["ablate", "--manifest", path(&mpath), "--max-folds", "1", "--parallelism", "2"]);
    let rows: Vec<String> = std::fs::read_to_string(abl.join("results.csv")).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 1 + 12);
    assert!(rows[1].starts_with("Default,1,1,6,30,"));
    assert!(rows[12].starts_with("L + H + d_m + FFN,2,2,6,30,"));

    let merged = dir.path().join("merged.csv");
    let md = ok(&["report", path(&out.join("results.csv")), path(&abl.join("results.csv")), "--out", path(&merged)]);
    assert_eq!(std::fs::read_to_string(&merged).unwrap().lines().count(), 1 + 6 + 12);
    assert_eq!(md.lines().count(), 2 + 6 + 12);
    assert_eq!(md, std::fs::read_to_string(merged.with_extension("md")).unwrap());
}
