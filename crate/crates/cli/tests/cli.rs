use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mecch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mecch"))
        .args(args)
        .env_remove("MECCH_CACHE_DIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small planted classification dataset with a short training budget.
fn nc_fixture(dir: &Path) -> std::path::PathBuf {
    let o = mecch(&["generate", "--kind", "nc", "--out", s(dir), "--size", "60", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.join("config.toml");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("[model]", "[model]\nhidden_dim = 16")
        .replace("[train]", "[train]\nmax_epochs = 8\npatience = 8");
    fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn bench_defaults_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.csv");
    let o = mecch(&["bench", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(&out).unwrap();
    assert_eq!(report.lines().count(), 7);
    assert!(report.lines().skip(1).all(|l| l.ends_with(",true")));

    let o = mecch(&["bench", "--n", "2", "--k", "2", "--out", s(&out)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&out).unwrap().lines().nth(1), Some("2,2,4,7,12,4,7,12,true"));

    let o = mecch(&["bench", "--k", "0", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: usage: "), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);

    let o = mecch(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: usage: "));
    let o = mecch(&["--threads", "0", "bench", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let o = mecch(&["bench", "--n", "40", "--k", "5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error: resource_guard: "));
}

#[test]
fn train_eval_export_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = nc_fixture(&dir.path().join("data"));
    let run = dir.path().join("run");
    let o = mecch(&["--threads", "2", "train", "--config", s(&cfg), "--out", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(run.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(summary["epochs_run"], 8);
    assert!(summary["context_store_bytes"].as_u64().unwrap() > 0);
    assert!(summary["metapaths"].as_array().unwrap().len() > 1);
    assert!(summary["seconds"].as_f64().is_some());

    let ckpt = run.join("model.ckpt");
    let o = mecch(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(eval["test"], summary["test"]);

    let emb = dir.path().join("emb.tsv");
    let o = mecch(&["export-embeddings", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&emb)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&emb).unwrap();
    assert_eq!(text.lines().count(), 60);
    let first: Vec<&str> = text.lines().next().unwrap().split('\t').collect();
    assert_eq!(first[1], "A");
    assert_eq!(first[2].split(',').count(), 3);

    let o = mecch(&[
        "export-embeddings", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&emb), "--node-type", "Nope",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: schema: "));
}

#[test]
fn seeded_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = nc_fixture(&dir.path().join("data"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mecch(&["train", "--config", s(&cfg), "--out", s(out), "--seed", "13"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    let without_seconds = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.join("history.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(without_seconds(&a), without_seconds(&b));
}

#[test]
fn error_categories_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = nc_fixture(&dir.path().join("data"));
    let run = dir.path().join("run");

    let capped = dir.path().join("data/capped.toml");
    let text = fs::read_to_string(&cfg).unwrap().replace("[model]", "[model]\nmetapath_length = 4\nmetapath_cap = 2");
    fs::write(&capped, text).unwrap();
    let o = mecch(&["train", "--config", s(&capped), "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error: metapath_cap_exceeded: "), "{}", stderr(&o));

    let typo = dir.path().join("data/typo.toml");
    fs::write(&typo, fs::read_to_string(&cfg).unwrap().replace("[train]", "[train]\nlearnig_rate = 0.1")).unwrap();
    let o = mecch(&["train", "--config", s(&typo), "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: config: "));

    let o = mecch(&["train", "--config", s(&cfg), "--out", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = run.join("model.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[..8].copy_from_slice(b"NOTMECCH");
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, bytes).unwrap();
    let o = mecch(&["eval", "--config", s(&cfg), "--checkpoint", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: checkpoint_format: "));

    let lp_dir = dir.path().join("lp");
    let o = mecch(&["generate", "--kind", "lp", "--out", s(&lp_dir), "--size", "8"]);
    assert!(o.status.success());
    let o = mecch(&["eval", "--config", s(&lp_dir.join("config.toml")), "--checkpoint", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: task_mismatch: "));

    fs::write(dir.path().join("data/labels.tsv"), "not-a-node\t0\n").unwrap();
    let o = mecch(&["train", "--config", s(&cfg), "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: integrity: "));
}

#[test]
fn context_cache_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = nc_fixture(&dir.path().join("data"));
    let cache = dir.path().join("cache");
    let train = |out: &str| {
        Command::new(env!("CARGO_BIN_EXE_mecch"))
            .args(["train", "--config", s(&cfg), "--out", out])
            .env("MECCH_CACHE_DIR", &cache)
            .output()
            .unwrap()
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(train(s(&a)).status.success());
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    assert!(train(s(&b)).status.success());
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
}
