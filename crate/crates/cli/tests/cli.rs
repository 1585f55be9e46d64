use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/two_dialogues.json")
}

fn cedst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cedst"))
        .args(args)
        .env_remove("CEDST_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("run cedst")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn small_synth(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["synth", "--n-train", "6", "--n-dev", "2", "--n-test", "2", "--out", s(dir)];
    args.extend_from_slice(extra);
    cedst(&args)
}

fn train_fixture(out: &Path) -> Output {
    let f = fixture();
    cedst(&["train", "--corpus", s(&f), "--out", s(out), "--epochs", "2", "--d-rnn", "8", "--d-emb", "8", "--batch-size", "2"])
}

#[test]
fn mask_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let f = fixture();
    for dir in [&a, &b] {
        let o = cedst(&["mask", "--corpus", s(&f), "--ratio", "0.4", "--seed", "7", "--out", s(dir)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["corpus.json", "mask_report.json"] {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name}");
    }
    let report: serde_json::Value = serde_json::from_str(&read(&a.join("mask_report.json"))).unwrap();
    assert_eq!(report["seed"], 7);
}

#[test]
fn train_writes_artifacts_and_reruns_from_its_config() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let o = train_fixture(&first);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["checkpoint.json", "history.json", "metrics.json", "run_config.toml"] {
        assert!(first.join(name).exists(), "{name} missing");
    }
    let metrics: serde_json::Value = serde_json::from_str(&read(&first.join("metrics.json"))).unwrap();
    assert!(metrics["test"]["joint_goal"].is_number());
    assert!(metrics["train"]["turn_request"].is_number());

    let second = tmp.path().join("second");
    let config = first.join("run_config.toml");
    let o = cedst(&["train", "--config", s(&config), "--out", s(&second)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&first.join("checkpoint.json")), read(&second.join("checkpoint.json")));

    let o = cedst(&["inspect", "--checkpoint", s(&first.join("checkpoint.json"))]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("gates") && text.contains("price range") && text.contains("dec.query"), "{text}");
}

#[test]
fn eval_scores_and_refuses_foreign_vocabulary() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert!(train_fixture(&run).status.success());
    let ck = run.join("checkpoint.json");
    let f = fixture();
    let o = cedst(&["eval", "--checkpoint", s(&ck), "--corpus", s(&f), "--split", "test"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["joint_goal", "turn_request", "turn_goal", "per_slot"] {
        assert!(m.get(key).is_some(), "{key}");
    }
    assert!(m["unk"]["all"].is_number());

    let synth = tmp.path().join("synth");
    assert!(small_synth(&synth, &[]).status.success());
    let o = cedst(&["eval", "--checkpoint", s(&ck), "--corpus", s(&synth.join("corpus.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vocabulary"));
}

#[test]
fn usage_errors_exit_with_one() {
    let o = cedst(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.json");
    let o = cedst(&["train", "--corpus", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));

    let f = fixture();
    let o = cedst(&["mask", "--corpus", s(&f), "--ratio", "1.5", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "epochs = 3\nnot_a_key = 1\n").unwrap();
    let o = cedst(&["train", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));

    let o = cedst(&["train", "--corpus", s(&f), "--out", s(tmp.path()), "--decoder-init", "random"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(cedst(&["--help"]).status.success());
}

#[test]
fn seed_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let (flag, env, config) = (tmp.path().join("flag"), tmp.path().join("env"), tmp.path().join("config"));
    assert!(small_synth(&flag, &["--seed", "5"]).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_cedst"))
        .args(["synth", "--n-train", "6", "--n-dev", "2", "--n-test", "2", "--out", s(&env)])
        .env("CEDST_SEED", "5")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(read(&flag.join("corpus.json")), read(&env.join("corpus.json")));

    // the flag wins over the environment
    let other = tmp.path().join("other");
    let o = Command::new(env!("CARGO_BIN_EXE_cedst"))
        .args(["synth", "--n-train", "6", "--n-dev", "2", "--n-test", "2", "--seed", "6", "--out", s(&other)])
        .env("CEDST_SEED", "5")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_ne!(read(&flag.join("corpus.json")), read(&other.join("corpus.json")));

    let file = tmp.path().join("synth.toml");
    std::fs::write(&file, "n_train = 6\nn_dev = 2\nn_test = 2\nseed = 5\noov_slots = []\n").unwrap();
    assert!(cedst(&["synth", "--config", s(&file), "--out", s(&config)]).status.success());
    assert_eq!(read(&flag.join("corpus.json")), read(&config.join("corpus.json")));
}
