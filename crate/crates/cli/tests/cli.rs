use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deconf::records::{read_all, Record};

fn deconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deconf")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train_toy(out: &Path, extra: &[&str]) -> Output {
    let cfg = configs().join("toy.toml");
    let mut args = vec!["train", "--config", s(&cfg), "--out", s(out)];
    args.extend_from_slice(extra);
    deconf(&args)
}

#[test]
fn train_writes_checkpoint_log_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_toy(dir.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["checkpoint.bin", "train.jsonl", "config.resolved.toml"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let resolved = std::fs::read_to_string(dir.path().join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 0") && resolved.contains("intervention_n = 1"), "{resolved}");
    let log = read_all(&dir.path().join("train.jsonl")).unwrap();
    let epochs = log.iter().filter(|r| matches!(r, Record::Epoch { .. })).count();
    assert_eq!(epochs, 3);
}

#[test]
fn zero_lambda_logs_consistency_but_ignores_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_toy(dir.path(), &["--override", "lambda=0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut saw_cf = false;
    for r in read_all(&dir.path().join("train.jsonl")).unwrap() {
        if let Record::Step { l_kpt, l_cf, l_total, .. } = r {
            saw_cf |= l_cf > 0.0;
            assert_eq!(l_total, l_kpt);
        }
    }
    assert!(saw_cf);
}

#[test]
fn resumed_run_is_byte_identical() {
    let whole = tempfile::tempdir().unwrap();
    let parts = tempfile::tempdir().unwrap();
    assert!(train_toy(whole.path(), &[]).status.success());
    assert!(train_toy(parts.path(), &["--stop-after", "1"]).status.success());
    let o = train_toy(parts.path(), &["--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("resuming at epoch 1"));
    for f in ["checkpoint.bin", "train.jsonl"] {
        let a = std::fs::read(whole.path().join(f)).unwrap();
        let b = std::fs::read(parts.path().join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn config_errors_exit_2_with_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_toy(dir.path(), &["--override", "intervention_n=9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("intervention_n"), "{}", stderr(&o));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nlamda = 0.1\n").unwrap();
    let o = deconf(&["train", "--config", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lamda"));

    let o = deconf(&["train", "--out", s(dir.path()), "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_reports_and_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(train_toy(&run, &[]).status.success());
    let ckpt = run.join("checkpoint.bin");
    let cfg = configs().join("toy.toml");
    let metrics = dir.path().join("eval");
    let o = deconf(&[
        "eval", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--enrich", "2", "0.0", "--freq", "--out", s(&metrics),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = read_all(&metrics.join("metrics.jsonl")).unwrap();
    let enrich = recs.iter().find_map(|r| match r {
        Record::Enrichment { ci_low, ci_high, mean_delta, .. } => Some((*ci_low, *mean_delta, *ci_high)),
        _ => None,
    });
    let (lo, mean, hi) = enrich.expect("enrichment record");
    assert!(lo <= mean && mean <= hi);
    assert!(recs.iter().any(|r| matches!(r, Record::Frequency { .. })));
    assert!(metrics.join("eval.resolved.toml").exists());

    // the same command twice gives the same bytes
    let again = dir.path().join("eval2");
    deconf(&[
        "eval", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--enrich", "2", "0.0", "--freq", "--out", s(&again),
    ]);
    assert_eq!(
        std::fs::read(metrics.join("metrics.jsonl")).unwrap(),
        std::fs::read(again.join("metrics.jsonl")).unwrap()
    );

    let sk6 = dir.path().join("sk6.toml");
    std::fs::write(
        &sk6,
        "names = [\"a\", \"b\", \"c\", \"d\", \"e\", \"f\"]\nedges = [[0, 1], [1, 2], [2, 3], [3, 4], [4, 5]]\n\
         [[hyperedges]]\nname = \"all\"\nmembers = [0, 1, 2, 3, 4, 5]\n",
    )
    .unwrap();
    let c6 = dir.path().join("c6.toml");
    std::fs::write(&c6, "[data]\nskeleton = \"sk6.toml\"\n[bench]\nn_train = 10\nn_test = 10\n").unwrap();
    let data6 = dir.path().join("data6");
    assert!(deconf(&["gen", "--config", s(&c6), "--out", s(&data6)]).status.success());
    let o = deconf(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&data6.join("test.bin"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn train_split_scores_at_least_as_well_as_test_split() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = train_toy(&run, &["--override", "epochs=12", "--override", "n_train=1500"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = configs().join("toy.toml");
    let pck = |split: &str| {
        let out = dir.path().join(split);
        let o = deconf(&[
            "eval", "--checkpoint", s(&run.join("checkpoint.bin")), "--config", s(&cfg),
            "--override", "n_train=1500", "--split", split, "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        read_all(&out.join("metrics.jsonl"))
            .unwrap()
            .into_iter()
            .find_map(|r| match r {
                Record::Pck { overall, .. } => Some(overall),
                _ => None,
            })
            .unwrap()
    };
    let (train, test) = (pck("train"), pck("test"));
    assert!(train >= test, "train {train} test {test}");
}

#[test]
fn no_intervention_model_has_zero_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(train_toy(&run, &["--override", "intervention_n=0", "--override", "epochs=1"]).status.success());
    let out = dir.path().join("eval");
    let cfg = configs().join("toy.toml");
    let o = deconf(&["eval", "--checkpoint", s(&run.join("checkpoint.bin")), "--config", s(&cfg), "--freq", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = read_all(&out.join("metrics.jsonl")).unwrap();
    let Some(Record::Frequency { groups, .. }) = recs.iter().find(|r| matches!(r, Record::Frequency { .. })) else {
        panic!("no frequency record");
    };
    assert!(groups.iter().all(|g| g.rate == 0.0 && g.share == 0.0));
}

#[test]
fn gen_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = configs().join("toy.toml");
    for d in [&a, &b] {
        let o = deconf(&["gen", "--config", s(&cfg), "--out", s(d.path())]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["manifest.toml", "train.bin", "test.bin"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let manifest = std::fs::read_to_string(a.path().join("manifest.toml")).unwrap();
    let bytes = std::fs::read(a.path().join("train.bin")).unwrap();
    assert!(manifest.contains(&deconf::dataset::sha256_hex(&bytes)));
}

#[test]
fn dump_has_one_row_per_canonical_keypoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(train_toy(&run, &["--override", "epochs=1"]).status.success());
    let out = dir.path().join("emb.jsonl");
    let cfg = configs().join("toy.toml");
    let o = deconf(&[
        "dump-embeddings", "--checkpoint", s(&run.join("checkpoint.bin")), "--config", s(&cfg), "--samples", "10",
        "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = read_all(&out).unwrap();
    let canonical = recs.iter().filter(|r| matches!(r, Record::Canonical { .. })).count();
    let embedded = recs.iter().filter(|r| matches!(r, Record::Embedding { .. })).count();
    assert_eq!((canonical, embedded), (8, 80));
}

#[test]
fn scm_verify_contract() {
    let o = deconf(&["scm-verify", s(&configs().join("example_scm.toml"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).trim_end().ends_with("PASS"));

    let o = deconf(&["scm-verify", "--random", "1000", "--seed", "7"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("1000/1000 PASS"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "sizes = [2, 2, 2, 2]\nprior = [0.5, 0.5]\ncpt_x = [[0.5, 0.5], [0.5, 0.4]]\n\
         cpt_f = [[0.5, 0.5], [0.5, 0.5]]\ncpt_y = [[0.5, 0.5], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]\n",
    )
    .unwrap();
    let o = deconf(&["scm-verify", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 1"), "{}", stderr(&o));
}

#[test]
fn gradcheck_contract() {
    let o = deconf(&["gradcheck", "--op", "softmax"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.contains("max rel error")).count(), 1);
    assert!(out.starts_with("softmax"));

    let a = deconf(&["gradcheck", "--op", "matmul", "--seed", "3"]);
    let b = deconf(&["gradcheck", "--op", "matmul", "--seed", "3"]);
    assert_eq!(a.stdout, b.stdout);

    assert_eq!(deconf(&["gradcheck", "--op", "conv"]).status.code(), Some(2));
}
