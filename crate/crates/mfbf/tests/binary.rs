//! Exit-code and flag behavior of the `mfbf` binary itself.

use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfbf"))
}

fn tiny_toml(extra: &str) -> String {
    format!(
        "initial_episodes = 12\nepisode_steps = 30\nbarrier_horizon = 40\nepochs = 10\n\
         batch_size = 8\nhidden_layers = [8]\nmc_samples = 2\nbarrier_mc_samples = 2\n\
         eval_episodes = 4\niterations = 1\nepisodes_per_iteration = 10\n{extra}"
    )
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["generate", "train", "iterate", "evaluate", "grid", "scenario"] {
        assert!(text.contains(cmd), "help should list {cmd}");
    }
}

#[test]
fn invalid_lambda_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, tiny_toml("lambda = 1.5\n")).unwrap();
    let out = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("d.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "validation errors exit 2");
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "not_a_real_key = 1\n").unwrap();
    let out = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, tiny_toml("")).unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--dataset", "/nonexistent/data.csv"])
        .arg("--out")
        .arg(dir.path().join("t"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "runtime errors exit 1");
}

#[test]
fn unknown_scenario_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, tiny_toml("")).unwrap();
    let out = bin()
        .args(["scenario", "--name", "loop_the_loop", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("s"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn scenario_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, tiny_toml("")).unwrap();
    let out_dir = dir.path().join("s");
    let out = bin()
        .args(["scenario", "--name", "head_on", "--separation", "90", "--barrier", "turn"])
        .args(["--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let traj = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 31, "header plus steps+1 states");
    assert!(out_dir.join("summary.csv").exists());
    assert!(out_dir.join("meta.json").exists());
}

#[test]
fn flag_overrides_take_precedence_over_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, tiny_toml("seed = 1\n")).unwrap();
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");

    // File seed.
    let s1 = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_a)
        .output()
        .unwrap();
    assert!(s1.status.success());

    // Flag seed overrides; a different seed must change the bytes.
    let s2 = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .args(["--seed", "2", "--out"])
        .arg(&out_b)
        .output()
        .unwrap();
    assert!(s2.status.success());
    assert_ne!(fs::read(&out_a).unwrap(), fs::read(&out_b).unwrap());

    // Same flag seed reproduces the file-seed run.
    let out_c = dir.path().join("c.csv");
    let s3 = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .args(["--seed", "1", "--out"])
        .arg(&out_c)
        .output()
        .unwrap();
    assert!(s3.status.success());
    assert_eq!(fs::read(&out_a).unwrap(), fs::read(&out_c).unwrap());
}

#[test]
fn bad_barrier_spec_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, tiny_toml("")).unwrap();
    let out = bin()
        .args(["grid", "--barrier", "wiggly", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("g"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
