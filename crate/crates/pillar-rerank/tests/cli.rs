use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pillar-rerank")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_bundle(dir: &Path) {
    let out = run(&[
        "gen", "--out", s(dir), "--concepts", "6", "--images-per-concept", "2", "--texts-per-image", "3", "--dim", "8",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("b");
    tiny_bundle(&bundle);
    let out = tmp.path().join("o");

    let bad_key = run(&["train", "--bundle", s(&bundle), "--out", s(&out), "--set", "colour=blue"]);
    assert_eq!(bad_key.status.code(), Some(2));

    let missing = run(&["train", "--bundle", s(&tmp.path().join("nope")), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(3));

    let bad_value = run(&["train", "--bundle", s(&bundle), "--out", s(&out), "--set", "tau=-1"]);
    assert_eq!(bad_value.status.code(), Some(2));
}

#[test]
fn train_rerank_eval_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("b");
    tiny_bundle(&bundle);
    let train_out = tmp.path().join("train");
    let common = ["--set", "epochs=2", "--set", "k_i2t=4", "--set", "k_t2i=3", "--set", "l=4"];
    let mut args = vec!["train", "--bundle", s(&bundle), "--out", s(&train_out)];
    args.extend(common);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["train.log", "resolved.config", "checkpoint/checkpoint.manifest", "test_comparison.txt"] {
        assert!(train_out.join(f).exists(), "{f} missing");
    }
    assert_eq!(std::fs::read_to_string(train_out.join("train.log")).unwrap().lines().count(), 3);

    let ckpt = train_out.join("checkpoint");
    let rr = tmp.path().join("rerank");
    let out = run(&["rerank", "--bundle", s(&bundle), "--checkpoint", s(&ckpt), "--out", s(&rr)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let ev = tmp.path().join("eval");
    let out = run(&["eval", "--bundle", s(&bundle), "--checkpoint", s(&ckpt), "--out", s(&ev)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let sw = tmp.path().join("sweep");
    let out = run(&[
        "baseline", "--bundle", s(&bundle), "--out", s(&sw), "--method", "alphaqe", "--sweep", "0,1,2,4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(sw.join("sweep.txt")).unwrap();
    assert_eq!(table.lines().count(), 5);
}
