use std::fs;
use std::process::{Command, Output};

fn rgns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgns")).args(args).output().unwrap()
}

#[test]
fn zero_threads_is_a_usage_error() {
    let out = rgns(&["--threads", "0", "selftest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--threads"));
}

#[test]
fn gen_writes_trajectories_and_rejects_zero_steps() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();
    let out = rgns(&["--seed", "1", "gen", "--out", data_s, "--count", "2", "--n-particles", "10", "--n-steps", "12"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "wrote 2 trajectories");
    let mut names: Vec<String> = fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["gen_manifest.json", "traj_0000.rgns", "traj_0001.rgns"]);

    let cfg = dir.path().join("t.toml");
    fs::write(&cfg, "latent = 16\nhidden = 8\nn_layers = 1\nhistory = 2\ntotal_steps = 2\neval_every = 1\n").unwrap();
    let ck = dir.path().join("ck.bin");
    let out = rgns(&[
        "train", "--config", cfg.to_str().unwrap(), "--data", data_s, "--out", ck.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["steps_run"], 2);

    let traj = data.join("traj_0000.rgns");
    let out = rgns(&[
        "rollout", "--checkpoint", ck.to_str().unwrap(), "--trajectory", traj.to_str().unwrap(), "--steps", "0",
        "--out", dir.path().join("r").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn missing_checkpoint_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().to_str().unwrap();
    assert!(rgns(&["gen", "--out", data, "--n-particles", "4", "--n-steps", "8"]).status.success());
    let out = rgns(&["eval", "--checkpoint", "/nonexistent/ck.bin", "--data", data]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/ck.bin"));
}
