use std::fs;
use std::process::Command;

fn residual() -> Command {
    Command::new(env!("CARGO_BIN_EXE_residual"))
}

const TINY: &str = r#"
kind = "transfer"
seeds = [1, 2]
output_dir = "unused"

[train]
total_steps = 600
eval_interval = 300
eval_episodes = 2

[transfer]
source_steps = 600
target_steps = 300
"#;

#[test]
fn run_aggregate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");

    let run = residual()
        .args(["run", "transfer", "--config"])
        .arg(&cfg)
        .args(["--seeds", "3,4", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("sim_residual"));
    assert!(out.join("runs/source_residual/seed_3.jsonl").exists());
    assert!(!out.join("runs/source_residual/seed_1.jsonl").exists());

    let csv = dir.path().join("curve.csv");
    let agg = residual().args(["aggregate", "--in"]).arg(out.join("runs/source_residual")).arg("--out").arg(&csv).output().unwrap();
    assert!(agg.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("x,mean,ci_low,ci_high,n\n"));
    assert!(text.lines().nth(1).unwrap().ends_with(",2"));

    let env = dir.path().join("env.toml");
    fs::write(&env, "mode = \"residual\"\nseed = 9\n").unwrap();
    let eval = residual()
        .args(["evaluate", "--checkpoint"])
        .arg(out.join("checkpoints/residual_seed_3.ckpt"))
        .arg("--env-config")
        .arg(&env)
        .args(["--episodes", "3"])
        .output()
        .unwrap();
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("success_rate"));
}

#[test]
fn experiment_must_match_config_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let run = residual().args(["run", "bias_sweep", "--config"]).arg(&cfg).output().unwrap();
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("not bias_sweep"));
}
