use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rrpo_harness::output::{meta_path, read_meta_value, strip_timing};

const TINY: &str = "\
seeds = 0,1
pretrain_samples = 160
finetune_samples = 40
heldout_samples = 40
eval_samples = 40
oracle_samples = 80
pretrain_steps = 20
finetune_steps = 6
oracle_max_steps = 40
oracle_min_accuracy = 0
sft_steps = 4
rrpo_steps = 4
rollout_steps = 4
rollout_batch = 2
codebook_iters = 2
eval_rollouts = 4
log_every = 2
";

fn rrpo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrpo"))
        .current_dir(dir)
        .env("RRPO_LOG", "error")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = rrpo(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("tiny.conf"),
        format!("{TINY}out_dir = run\n"),
    )
    .unwrap();
    dir
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = setup();
    let d = dir.path();
    let c = ["--config", "tiny.conf"];
    ok(d, &[&c[..], &["gen-data"]].concat());
    ok(d, &[&c[..], &["train-oracle"]].concat());
    ok(d, &[&c[..], &["pretrain-rm"]].concat());
    ok(
        d,
        &[&c[..], &["finetune-rm", "--ls", "--eam", "--adv"]].concat(),
    );
    for seed in ["0", "1"] {
        for rm in ["vanilla", "full"] {
            ok(
                d,
                &[&c[..], &["--seed", seed, "train-policy", "--rm", rm]].concat(),
            );
        }
    }
    ok(d, &[&c[..], &["eval"]].concat());
    ok(d, &[&c[..], &["--jobs", "2", "ablate"]].concat());

    let run = d.join("run");
    for f in [
        "data/pretrain.corp",
        "data/eval-shifted.corp",
        "models/oracle.ckpt",
        "models/rm-vanilla.ckpt",
        "models/rm-full.ckpt",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
        assert!(meta_path(&run.join(f)).exists(), "{f}.meta missing");
    }
    assert!(run.join("models/policy-full-s1.sft.ckpt").exists());
    assert_eq!(
        read_meta_value(&run.join("models/rm-full.ckpt"), "train_eps")
            .unwrap()
            .as_deref(),
        Some("0.1")
    );
    assert_eq!(
        read_meta_value(&run.join("models/rm-vanilla.ckpt"), "train_eps")
            .unwrap()
            .as_deref(),
        Some("0")
    );

    let eval = fs::read_to_string(run.join("metrics/eval-raw.csv")).unwrap();
    assert!(eval.starts_with("# rrpo "));
    assert!(eval.contains("# seeds = 0,1"));
    let body = strip_timing(&eval).unwrap();
    assert_eq!(body.lines().count(), 1 + 2 * 2 * 2, "{body}");

    let ablate = fs::read_to_string(run.join("metrics/ablate.csv")).unwrap();
    let rows = strip_timing(&ablate).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4 * 2 * 2);
    assert!(!rows.contains("error"), "{rows}");
    let summary = fs::read_to_string(run.join("summary/ablate.txt")).unwrap();
    for name in ["baseline", "+ls", "+ls+eam", "+ls+eam+adv"] {
        assert!(summary.contains(name), "{summary}");
    }

    let policy = fs::read_to_string(run.join("metrics/train-policy-full-s0.csv")).unwrap();
    let header = policy.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(
        header,
        "phase,step,loss,reward,reward_ma50,oracle_accuracy,artifact_energy,grad_norm,elapsed_ms"
    );
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "tiny.conf", "gen-data"]);
    let again = rrpo(d, &["--config", "tiny.conf", "gen-data"]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(d, &["--config", "tiny.conf", "--force", "gen-data"]);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("bad.conf"), "no_such_key = 1\n").unwrap();
    assert_eq!(
        rrpo(d, &["--config", "bad.conf", "gen-data"]).status.code(),
        Some(2)
    );
    fs::write(d.join("bad.conf"), "eam = true\n").unwrap();
    assert_eq!(
        rrpo(d, &["--config", "bad.conf", "gen-data"]).status.code(),
        Some(2)
    );
    assert_eq!(
        rrpo(d, &["--config", "missing.conf", "gen-data"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        rrpo(d, &["--config", "tiny.conf", "finetune-rm", "--adv"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_inputs_fail_cleanly() {
    let dir = setup();
    let out = rrpo(dir.path(), &["--config", "tiny.conf", "pretrain-rm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-data"));
}

#[test]
fn numerical_blowup_exits_with_three() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "tiny.conf", "gen-data"]);
    fs::write(
        d.join("hot.conf"),
        format!("{TINY}out_dir = run\npretrain_lr = 1e300\nclip = 0\n"),
    )
    .unwrap();
    let out = rrpo(d, &["--config", "hot.conf", "pretrain-rm"]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
