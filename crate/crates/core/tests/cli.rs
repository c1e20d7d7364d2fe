//! The command-line front end: exit codes, config handling and outputs.

use std::path::Path;
use std::process::{Command, Output};

use metacomm::harness::{read_curve, ExperimentConfig, Metric, Profile};

fn metacomm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metacomm"))
        .args(args)
        .output()
        .unwrap()
}

fn small_demod(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::defaults(Profile::Demod);
    cfg.train.outer_iters = 20;
    cfg.n_meta_train_tasks = 10;
    cfg.n_meta_test_tasks = 3;
    cfg.n_eval_symbols_or_blocks = 200;
    cfg.pilot_counts = vec![2, 8];
    cfg.seeds = vec![0, 1];
    cfg.baseline_iters = 20;
    let path = dir.join("demod.conf");
    cfg.save(&path).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn sweep_pilots_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_demod(dir.path());
    let out = dir.path().join("p.csv");
    let o = metacomm(&[
        "sweep-pilots",
        "--config",
        &conf,
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = read_curve(&out).unwrap();
    assert_eq!(table.len(), 2 * 4);
    assert!(table.rows.iter().all(|r| r.n_seeds == 2 && r.metric == Metric::Ser));
}

#[test]
fn seed_override_and_first_order_flag() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_demod(dir.path());
    let o = metacomm(&["sweep-pilots", "--config", &conf, "--seed", "7", "--first-order"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",1")), "{text}");
    assert!(text.contains(",maml-fo,ser,"));
}

#[test]
fn meta_train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_demod(dir.path());
    let params = dir.path().join("theta.txt");
    let o = metacomm(&["meta-train", "--config", &conf, "--params", params.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 20);
    assert!(text.lines().nth(1).unwrap().starts_with("0,maml,meta_loss,"));
    let o = metacomm(&["eval", "--config", &conf, "--params", params.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1 + 2);
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "profile = demod\nlearning_rate = 0.1\n").unwrap();
    let o = metacomm(&["sweep-pilots", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("learning_rate") && err.contains('2'), "{err}");

    let o = metacomm(&[
        "sweep-pilots",
        "--config",
        dir.path().join("missing.conf").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("missing.conf"));

    let o = metacomm(&["sweep-pilots"]);
    assert_eq!(o.status.code(), Some(1));
    let o = metacomm(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));

    let conf = small_demod(dir.path());
    let o = metacomm(&["sweep-adapt", "--config", &conf]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("hot.conf");
    std::fs::write(
        &conf,
        "profile = demod\neta_inner = 1e9\nouter_iters = 5\nseeds = 0\nn_meta_test_tasks = 1\n",
    )
    .unwrap();
    let o = metacomm(&["sweep-pilots", "--config", conf.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_reports_numbers() {
    let o = metacomm(&["gradcheck", "--scale", "small"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text
        .lines()
        .filter(|l| l.starts_with("PASS"))
        .all(|l| l.contains("measured=")));
    assert!(text.contains("0 failed"));
}
