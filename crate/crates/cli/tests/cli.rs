use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn scvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scvae"))
        .args(args)
        .env_remove("SCVAE_OUT_DIR")
        .output()
        .unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    assert_eq!(scvae(&["frobnicate"]).status.code(), Some(1));
    let out = scvae(&["gen-data", "--count", "10", "--bogus", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(scvae(&["traverse", "--checkpoint", "c.json", "--slot", "3", "--out", "/tmp/x"]).status.code(), Some(1));
}

#[test]
fn help_succeeds() {
    let out = scvae(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["gen-data", "train", "eval", "traverse", "volume-report", "gradcheck"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = scvae(&["traverse", "--checkpoint", &s(&dir.path().join("none.json")), "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn gen_data_twice_gives_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = scvae(&["gen-data", "--count", "100", "--seed", "7", "--resolution", "12x10", "--out", &s(d)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ma = fs::read(a.join("manifest.csv")).unwrap();
    assert_eq!(ma, fs::read(b.join("manifest.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&ma).lines().count(), 101);
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_scvae"))
        .args(["gen-data", "--count", "10", "--resolution", "8x8"])
        .env("SCVAE_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("manifest.csv").exists());
}

#[test]
fn train_eval_pipeline_writes_parseable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("config.json");
    fs::write(
        &config,
        r#"{"epochs": 1, "model": {"channels": [4, 4, 4, 4], "latent_dim": 4, "spiral_length": 9, "dilation": 1, "pool_factors": [2.0, 2.0, 2.0, 2.0]}}"#,
    )
    .unwrap();
    let manifest = s(&root.join("data/manifest.csv"));
    assert!(scvae(&["gen-data", "--count", "100", "--resolution", "16x12", "--out", &s(&root.join("data"))]).status.success());
    let out = scvae(&["train", "--data", &manifest, "--config", &s(&config), "--lambda2", "0", "--out", &s(&root.join("run"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("run/config.json")).unwrap()).unwrap();
    assert_eq!(saved["loss"]["lambda2"], 0.0);

    let out = scvae(&[
        "eval", "--checkpoint", &s(&root.join("run/best.json")), "--data", &manifest, "--split", "val", "--nna-count", "6",
        "--cd-points", "16", "--emd-points", "8", "--out", &s(&root.join("eval")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("eval/eval.json")).unwrap()).unwrap();
    for key in [
        "sap_cls", "sap_reg", "sap_mean", "pcc", "pbc", "knn_acc", "knn_mse", "recon_err", "nna_cd", "nna_emd", "t_stat", "p_value",
    ] {
        assert!(report[key].is_f64(), "{key} missing");
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("sap_mean"));

    let out = scvae(&["volume-report", "--checkpoint", &s(&root.join("run/final.json")), "--bins", "3", "--per-bin", "2", "--out", &s(&root.join("vol"))]);
    assert!(out.status.success());
    let csv = fs::read_to_string(root.join("vol/volume_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let out = scvae(&["traverse", "--checkpoint", &s(&root.join("run/final.json")), "--slot", "2", "--steps", "3", "--out", &s(&root.join("trav"))]);
    assert!(out.status.success());
    let mut names: Vec<String> = fs::read_dir(root.join("trav")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["z2_step00.obj", "z2_step01.obj", "z2_step02.obj"]);
}

#[test]
fn invalid_config_value_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(scvae(&["gen-data", "--count", "20", "--resolution", "8x8", "--out", &s(dir.path())]).status.success());
    let out = scvae(&[
        "train", "--data", &s(&dir.path().join("manifest.csv")), "--temperature=-1", "--out", &s(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
