use std::path::Path;
use std::process::{Command, Output};

const FAST: [&str; 4] = ["--set", "variant=miniature", "--set", "adapter.kind=identity"];

fn mfrn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfrn")).args(args).output().expect("binary runs")
}

fn fast(args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(FAST);
    mfrn(&all)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn only_subdir(dir: &Path) -> std::path::PathBuf {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(entries.len(), 1, "{entries:?}");
    entries.pop().unwrap()
}

#[test]
fn config_show_lists_keys_with_notes() {
    let o = mfrn(&["config", "show", "--set", "train.lr=0.01"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.starts_with("# fingerprint "), "{text}");
    let lr = text.lines().find(|l| l.starts_with("train.lr = ")).expect("train.lr listed");
    assert!(lr.starts_with("train.lr = 0.01 ") && lr.contains("  # "), "{lr}");
    let rho = text.lines().find(|l| l.starts_with("train.rho = 0.05 ")).expect("train.rho listed");
    assert!(rho.contains("# chosen"), "{rho}");
    for line in text.lines().skip(1) {
        let note = line.split("  # ").nth(1).expect("every key has a note");
        assert!(["published", "chosen", "plumbing"].iter().any(|k| note.starts_with(k)), "{line}");
    }
}

#[test]
fn config_show_is_stable_and_fingerprints_differ() {
    let a = stdout(&mfrn(&["config", "show"]));
    let b = stdout(&mfrn(&["config", "show"]));
    let c = stdout(&mfrn(&["config", "show", "--seed", "3"]));
    assert_eq!(a, b);
    assert_ne!(a.lines().next(), c.lines().next());
}

#[test]
fn bad_configuration_exits_2() {
    assert_eq!(code(&mfrn(&["config", "show", "--set", "train.nope=1"])), 2);
    assert_eq!(code(&mfrn(&["config", "show", "--set", "train.batch=0"])), 2);
    assert_eq!(code(&mfrn(&["config", "show", "--set", "crop.size=100"])), 2);
    assert_eq!(code(&mfrn(&["synth"])), 2);
}

#[test]
fn missing_inputs_exit_with_data_or_config_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = fast(&["synth", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "no face input is a configuration error");
    let o = fast(&["synth", "--toy", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let o = fast(&["synth", "--manifest", "/nonexistent/m.csv", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let o = fast(&[
        "eval",
        "--checkpoint",
        "/nonexistent/c.safetensors",
        "--manifest",
        "/nonexistent/m.csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn synth_is_repeatable_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&fast(&["synth", "--toy", "6", "--seed", "4", "--shard-size", "4", "--out", a.to_str().unwrap()])), 0);
    let o = fast(&["synth", "--toy", "6", "--seed", "4", "--shard-size", "4", "--workers", "3", "--out", b.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(a.join("shard_0001").is_dir());
    let summary = |d: &Path| std::fs::read(d.join("summary.json")).unwrap();
    assert_eq!(summary(&a), summary(&b));
    let sample = |d: &Path| std::fs::read(d.join("shard_0000/toy0000_0000.png")).unwrap();
    assert_eq!(sample(&a), sample(&b));
}

#[test]
fn corpus_manifest_train_eval_visualize() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let corpus_sets = ["--set", "corpus.videos=4", "--set", "corpus.split=[2, 1, 1]", "--set", "corpus.frames_per_video=6"];
    let mut args = vec!["toy-corpus", "--out"];
    let corpus = p("corpus");
    args.push(&corpus);
    args.extend(corpus_sets);
    assert_eq!(code(&fast(&args)), 0);

    let manifest = p("corpus/manifest.csv");
    let split = p("corpus/split.json");
    let o = fast(&["manifest", "--root", &corpus, "--split", &split, "--out", &manifest]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("from 8 videos"), "{}", stdout(&o));

    let train = p("train");
    let sets = ["--set", "train.batch=4", "--set", "train.epochs=1", "--set", "train.steps_per_epoch=2"];
    let mut args = vec!["train", "--manifest", &manifest, "--out", &train];
    args.extend(sets);
    let o = fast(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = dir.path().join("train/final.safetensors");
    assert!(ckpt.exists());
    assert_eq!(std::fs::read_to_string(dir.path().join("train/train_log.jsonl")).unwrap().lines().count(), 2);
    assert!(dir.path().join("train/config.resolved.toml").exists());

    // Resuming under another configuration needs --force.
    let mut args = vec!["train", "--manifest", &manifest, "--out", &train, "--resume", ckpt.to_str().unwrap(), "--seed", "9"];
    args.extend(sets);
    assert_eq!(code(&fast(&args)), 3);
    args.push("--force");
    assert_eq!(code(&fast(&args)), 0);

    let evals = p("eval");
    let o = fast(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        &manifest,
        "--out",
        &evals,
        "--protocol",
        "video",
        "--frames",
        "32",
    ]);
    assert!(matches!(code(&o), 0 | 5), "{}", String::from_utf8_lossy(&o.stderr));
    let run = only_subdir(Path::new(&evals));
    for f in ["report.json", "report.csv", "report.txt", "scores.png", "config.resolved.toml"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["protocol"], "video");
    assert_eq!(report["frames_per_video"], 32);

    let panels = p("panels");
    let o = fast(&["visualize", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", &manifest, "--limit", "3", "--out", &panels]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pngs = std::fs::read_dir(&panels).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count();
    assert_eq!(pngs, 3);
}

#[test]
fn train_with_zero_radius_and_toy_faces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = fast(&[
        "train",
        "--toy",
        "4",
        "--rho",
        "0",
        "--set",
        "train.batch=4",
        "--set",
        "train.epochs=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = std::fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("rho = 0.0"), "{resolved}");
    assert!(out.join("epoch_0001.safetensors").exists() || out.join("epoch_0000.safetensors").exists());
}
