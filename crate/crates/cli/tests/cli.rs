use std::fs;
use std::path::Path;
use std::process::Command;

fn fvin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fvin")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

const SMALL: &str = r#"
system = "pendulum"
variant = "vv-fvin"
hidden = [16, 16]
[dataset]
count = 5
length = 50
[train]
epochs = 3
[predict]
test_length = 20
[cem]
samples = 40
iterations = 2
[mpc]
episode_len = 3
grid = 2
[energy_audit]
steps = 200
"#;

fn dir_bytes(dir: &Path, prefix: &str) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_writes_one_file_per_trajectory_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = fvin(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "4"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let fa = dir_bytes(&a, "traj_");
    assert_eq!(fa.len(), 5);
    for (_, bytes) in &fa {
        // Header plus 51 records.
        assert_eq!(String::from_utf8_lossy(bytes).lines().count(), 52);
    }
    assert_eq!(fa, dir_bytes(&b, "traj_"));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest-simulate.json")).unwrap()).unwrap();
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 5);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn train_predict_mpc_and_audit_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();

    let o = fvin(&["train", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = out.join("final.ckpt.json");
    assert!(ck.exists() && out.join("best.ckpt.json").exists());
    assert_eq!(fs::read_to_string(out.join("loss.csv")).unwrap().lines().count(), 4);
    let first = fs::read(&ck).unwrap();

    let o = fvin(&["train", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success());
    assert_eq!(fs::read(&ck).unwrap(), first, "training is reproducible");

    let ck_s = ck.to_str().unwrap();
    let o = fvin(&["predict", "--config", &cfg, "--out", out_s, "--checkpoint", ck_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["errors_forced.csv", "errors_zero_control.csv", "alpha_sweep.csv", "predicted_forced.jsonl"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let errors = fs::read_to_string(out.join("errors_forced.csv")).unwrap();
    assert!(errors.starts_with("step,l2_error\n"));
    assert_eq!(errors.lines().count(), 21);
    let sweep = fs::read_to_string(out.join("alpha_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 4 * 21);

    let o = fvin(&["mpc", "--config", &cfg, "--out", out_s, "--checkpoint", ck_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("episodes.jsonl")).unwrap().lines().count(), 4);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest-mpc.json")).unwrap()).unwrap();
    assert_eq!(manifest["checkpoint_sha256"].as_str().unwrap().len(), 64);

    let o = fvin(&["energy-audit", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let energy = fs::read_to_string(out.join("energy.csv")).unwrap();
    assert_eq!(energy.lines().count(), 202);
}

#[test]
fn resnn_and_sv_variants_train() {
    let tmp = tempfile::tempdir().unwrap();
    for (variant, obs) in [("resnn", "native"), ("sv-fvin", "position-only"), ("sv-fvin", "native")] {
        let body = SMALL.replace("variant = \"vv-fvin\"", &format!("variant = \"{variant}\"\nobservation = \"{obs}\""));
        let cfg = write_config(tmp.path(), &body);
        let out = tmp.path().join(format!("{variant}-{obs}"));
        let o = fvin(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{variant}: {}", String::from_utf8_lossy(&o.stderr));
        let ck = out.join("final.ckpt.json");
        let o = fvin(&["predict", "--config", &cfg, "--out", out.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()]);
        assert!(o.status.success(), "{variant}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "unknown_key = 3\n");
    assert_eq!(fvin(&["simulate", "--config", &bad]).status.code(), Some(1));
    assert_eq!(fvin(&["simulate", "--config", "/nonexistent/x.toml"]).status.code(), Some(1));
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("o");
    assert_eq!(fvin(&["predict", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(1));

    // A diverging learning rate is a runtime failure.
    let hot = SMALL.replace("epochs = 3", "epochs = 50\nlearning_rate = 1e6");
    let cfg = write_config(tmp.path(), &hot);
    let o = fvin(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn offline_qqs2_prediction_with_controls_cut() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("qqs2.jsonl");
    let mut text = String::from("{\"system\":\"qqs2-offline\",\"h\":0.04,\"seed\":0,\"format_version\":1}\n");
    for k in 0..=30 {
        let th = 0.01 * k as f64;
        let u = if k < 30 { "[0.5]" } else { "[]" };
        text.push_str(&format!(
            "{{\"k\":{k},\"obs\":[{},{},{},0.1,0.0],\"u\":{u}}}\n",
            th.cos(),
            th.sin(),
            0.002 * k as f64
        ));
    }
    fs::write(&data, text).unwrap();
    let d = data.to_str().unwrap();
    let body = format!(
        "system = \"qqs2-offline\"\nhidden = [8, 8]\n[dataset]\nfiles = [\"{d}\"]\n[train]\nepochs = 2\n[predict]\nfiles = [\"{d}\"]\nzero_controls_after = 10\n"
    );
    let cfg = write_config(tmp.path(), &body);
    let out = tmp.path().join("q");
    let o = fvin(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = out.join("final.ckpt.json");
    let o = fvin(&["predict", "--config", &cfg, "--out", out.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("errors_qqs2_0.csv").exists());
}
