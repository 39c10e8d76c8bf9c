use std::path::Path;
use std::process::{Command, Output};

fn victr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_victr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = victr(dir.path(), &[]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn gradcheck_passes_on_toy() {
    let dir = tempfile::tempdir().unwrap();
    let o = victr(dir.path(), &["gradcheck", "--preset", "toy"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["max_relative_error"].as_f64().unwrap() < 1e-4);
    assert!(dir.path().join("victr-gradcheck.manifest.json").exists());
}

#[test]
fn impossible_gradcheck_threshold_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = victr(dir.path(), &["gradcheck", "--preset", "toy", "--threshold", "0"]);
    assert_eq!(code(&o), 9);
}

#[test]
fn flops_rows_sum_to_total() {
    let dir = tempfile::tempdir().unwrap();
    let o = victr(dir.path(), &["flops", "--preset", "b16-charades"]);
    assert_eq!(code(&o), 0);
    let mut parts = 0u64;
    let mut total = 0u64;
    for line in stdout(&o).lines() {
        let mut it = line.split_whitespace();
        let (name, value) = (it.next().unwrap(), it.next().unwrap().parse::<u64>().unwrap());
        match name {
            "total" => total = value,
            "per_logit" => {}
            _ => parts += value,
        }
    }
    assert!(total > 0);
    assert_eq!(parts, total);
}

#[test]
fn unknown_config_key_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = victr(dir.path(), &["flops", "--set", "head.depth=2"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&victr(p, &["synth", "--preset", "toy", "--out", "d.vctr"])), 0);
    let o = victr(
        p,
        &["train", "--preset", "toy", "--data", "d.vctr", "--out", "c.vckp", "--metrics", "m.jsonl"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(p.join("m.jsonl")).unwrap();
    assert_eq!(metrics.lines().filter(|l| l.contains("\"kind\":\"step\"")).count(), 20);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("c.vckp.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert!(manifest["config_hash"].as_str().unwrap().len() == 8);

    let o = victr(p, &["eval", "--preset", "toy", "--checkpoint", "c.vckp", "--data", "d.vctr"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let top1 = v["top1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top1));
    assert_eq!(v["videos"], 6);
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for out in ["a.vckp", "b.vckp"] {
        assert_eq!(code(&victr(p, &["train", "--preset", "toy", "--seed", "5", "--out", out])), 0);
    }
    assert_eq!(std::fs::read(p.join("a.vckp")).unwrap(), std::fs::read(p.join("b.vckp")).unwrap());
    assert_eq!(code(&victr(p, &["train", "--preset", "toy", "--seed", "6", "--out", "c.vckp"])), 0);
    assert_ne!(std::fs::read(p.join("a.vckp")).unwrap(), std::fs::read(p.join("c.vckp")).unwrap());
}

#[test]
fn corrupted_files_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&victr(p, &["synth", "--preset", "toy", "--out", "d.vctr"])), 0);
    assert_eq!(code(&victr(p, &["train", "--preset", "toy", "--data", "d.vctr", "--out", "c.vckp"])), 0);

    let mut bytes = std::fs::read(p.join("d.vctr")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(p.join("flipped.vctr"), &bytes).unwrap();
    std::fs::write(p.join("short.vctr"), &bytes[..40]).unwrap();
    for bad in ["flipped.vctr", "short.vctr"] {
        let o = victr(p, &["eval", "--preset", "toy", "--checkpoint", "c.vckp", "--data", bad]);
        assert_eq!(code(&o), 5, "{bad}");
    }

    let mut ckpt = std::fs::read(p.join("c.vckp")).unwrap();
    ckpt[0] = b'X';
    std::fs::write(p.join("bad.vckp"), &ckpt).unwrap();
    let o = victr(p, &["eval", "--preset", "toy", "--checkpoint", "bad.vckp", "--data", "d.vctr"]);
    assert_eq!(code(&o), 5);
}

#[test]
fn ablate_selected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = victr(
        p,
        &["ablate", "--preset", "toy", "--rows", "full,joint_attention", "--metrics", "rows.jsonl"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
    assert_eq!(std::fs::read_to_string(p.join("rows.jsonl")).unwrap().lines().count(), 2);
    let o = victr(p, &["ablate", "--preset", "toy", "--rows", "no_gates"]);
    assert_eq!(code(&o), 3);
}
