use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BASE: &str = r#"
seed = 3
[gen]
n_sessions = 40
calibration_sessions = 20000
calibration_tolerance = 0.01
[train]
batch_size = 8
max_epochs = 4
patience = 10
learning_rate = 0.005
[model]
track_fc_dim = 6
interaction_fc_dim = 4
sessrep_hidden = 4
enc_fc_dim = 6
enc_hidden = 4
dec_final_hidden = 4
[split]
train = 0.6
validation = 0.2
test = 0.2
[evaluate]
split = "all"
"#;

fn skipnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skipnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = skipnet(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn workspace(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn generate(dir: &Path) {
    ok(
        dir,
        &["generate", "--config", "run.toml", "--out-dir", "data"],
    );
}

fn train(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec![
        "train",
        "--config",
        "run.toml",
        "--data-dir",
        "data",
        "--out-dir",
        out,
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Log lines without the wall-clock column.
fn log_without_seconds(dir: &Path, rel: &str) -> Vec<String> {
    String::from_utf8(read(dir, rel))
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once('\t').unwrap().0.to_string())
        .collect()
}

#[test]
fn generate_is_byte_reproducible() {
    let w = workspace(BASE);
    let d = w.path();
    ok(d, &["generate", "--config", "run.toml", "--out-dir", "a"]);
    ok(d, &["generate", "--config", "run.toml", "--out-dir", "b"]);
    for f in [
        "sessions.csv",
        "tracks.csv",
        "sessions_unlabeled.csv",
        "gen_report.txt",
    ] {
        assert_eq!(
            read(d, &format!("a/{f}")),
            read(d, &format!("b/{f}")),
            "{f}"
        );
    }
    ok(
        d,
        &[
            "generate",
            "--config",
            "run.toml",
            "--seed",
            "4",
            "--out-dir",
            "c",
        ],
    );
    assert_ne!(read(d, "a/sessions.csv"), read(d, "c/sessions.csv"));
}

#[test]
fn empty_generation_writes_valid_files() {
    let w = workspace("[gen]\nn_sessions = 0\n");
    let d = w.path();
    generate(d);
    let report = String::from_utf8(read(d, "data/gen_report.txt")).unwrap();
    assert!(report.contains("n_sessions=0") && report.contains("empty"));
    let schema = skipnet::data::FeatureSchema::default();
    let tracks = skipnet::data::load_tracks(&d.join("data/tracks.csv"), &schema).unwrap();
    assert!(tracks.is_empty());
    for (f, mode) in [
        ("sessions.csv", skipnet::data::LoadMode::Labeled),
        (
            "sessions_unlabeled.csv",
            skipnet::data::LoadMode::Prediction,
        ),
    ] {
        let s =
            skipnet::data::load_sessions(&d.join("data").join(f), &schema, &tracks, mode).unwrap();
        assert!(s.is_empty());
    }
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let w = workspace(
        &BASE
            .replace("n_sessions = 40", "n_sessions = 32")
            .replace("max_epochs = 4", "max_epochs = 5"),
    );
    let d = w.path();
    generate(d);
    train(d, "a", &[]);
    train(d, "b", &[]);
    for f in ["last.ckpt", "best.ckpt", "train.log"] {
        assert!(d.join("a").join(f).exists(), "{f}");
    }
    let log = log_without_seconds(d, "a/train.log");
    assert_eq!(log.len(), 1 + 5);
    assert_eq!(log, log_without_seconds(d, "b/train.log"));
    assert_eq!(read(d, "a/last.ckpt"), read(d, "b/last.ckpt"));
    assert_eq!(read(d, "a/best.ckpt"), read(d, "b/best.ckpt"));
}

#[test]
fn resumed_training_equals_uninterrupted() {
    let w = workspace(BASE);
    let d = w.path();
    generate(d);
    train(d, "full", &[]);
    fs::write(
        d.join("short.toml"),
        BASE.replace("max_epochs = 4", "max_epochs = 2"),
    )
    .unwrap();
    ok(
        d,
        &[
            "train",
            "--config",
            "short.toml",
            "--data-dir",
            "data",
            "--out-dir",
            "part",
        ],
    );
    train(d, "part", &["--checkpoint", "part/last.ckpt"]);
    assert_eq!(read(d, "full/last.ckpt"), read(d, "part/last.ckpt"));
    assert_eq!(read(d, "full/best.ckpt"), read(d, "part/best.ckpt"));
    assert_eq!(
        log_without_seconds(d, "full/train.log"),
        log_without_seconds(d, "part/train.log")
    );
}

#[test]
fn predict_and_score_reproduce_evaluate() {
    let w = workspace(BASE);
    let d = w.path();
    generate(d);
    train(d, "out", &[]);
    let common = [
        "--config",
        "run.toml",
        "--data-dir",
        "data",
        "--out-dir",
        "out",
    ];
    let run = |cmd: &str| {
        let mut args = vec![cmd];
        args.extend_from_slice(&common);
        ok(d, &args);
    };
    run("evaluate");
    let first = read(d, "out/eval_model.txt");
    run("evaluate");
    assert_eq!(first, read(d, "out/eval_model.txt"));
    run("predict");
    let preds = read(d, "out/predictions.txt");
    run("predict");
    assert_eq!(preds, read(d, "out/predictions.txt"));
    run("score");
    assert_eq!(read(d, "out/score.txt"), read(d, "out/eval_model.txt"));
    assert!(read(d, "out/eval_baseline.txt").starts_with(b"maa="));
}

#[test]
fn shortest_sessions_get_five_predictions() {
    let config = BASE.replace(
        "[gen]\n",
        "[gen]\nlength_probs = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]\n",
    );
    let w = workspace(&config);
    let d = w.path();
    generate(d);
    train(d, "out", &[]);
    ok(
        d,
        &[
            "predict",
            "--config",
            "run.toml",
            "--data-dir",
            "data",
            "--out-dir",
            "out",
        ],
    );
    let text = String::from_utf8(read(d, "out/predictions.txt")).unwrap();
    assert_eq!(text.lines().count(), 40);
    for line in text.lines() {
        let (_, bits) = line.split_once(',').unwrap();
        assert_eq!(bits.len(), 5, "{line}");
        assert!(bits.chars().all(|c| c == '0' || c == '1'));
    }
}

#[test]
fn prediction_refuses_second_half_interactions() {
    let w = workspace(BASE);
    let d = w.path();
    generate(d);
    train(d, "out", &[]);
    // Copy the labeled file over the unlabeled one: its second-half rows
    // carry skip_2.
    fs::copy(
        d.join("data/sessions.csv"),
        d.join("data/sessions_unlabeled.csv"),
    )
    .unwrap();
    let out = skipnet(
        d,
        &[
            "predict",
            "--config",
            "run.toml",
            "--data-dir",
            "data",
            "--out-dir",
            "out",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!d.join("out/predictions.txt").exists());
}

#[test]
fn exit_codes() {
    let w = workspace(BASE);
    let d = w.path();
    fs::write(d.join("bad.toml"), "[train]\nlearning_rat = 0.1\n").unwrap();
    assert_eq!(
        skipnet(d, &["train", "--config", "bad.toml"]).status.code(),
        Some(2)
    );
    assert_eq!(
        skipnet(d, &["train", "--config", "missing.toml"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        skipnet(
            d,
            &["train", "--config", "run.toml", "--data-dir", "nowhere"]
        )
        .status
        .code(),
        Some(3)
    );

    generate(d);
    train(d, "out", &[]);
    let mut bytes = read(d, "out/best.ckpt");
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    fs::write(d.join("out/corrupt.ckpt"), bytes).unwrap();
    let out = skipnet(
        d,
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--data-dir",
            "data",
            "--out-dir",
            "out",
            "--checkpoint",
            "out/corrupt.ckpt",
        ],
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));

    fs::write(
        d.join("wide.toml"),
        BASE.replace("enc_hidden = 4", "enc_hidden = 5"),
    )
    .unwrap();
    let out = skipnet(
        d,
        &[
            "train",
            "--config",
            "wide.toml",
            "--data-dir",
            "data",
            "--out-dir",
            "out",
            "--checkpoint",
            "out/last.ckpt",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn too_few_sessions_for_a_split() {
    let w = workspace(&BASE.replace("n_sessions = 40", "n_sessions = 2"));
    let d = w.path();
    generate(d);
    let out = skipnet(
        d,
        &[
            "train",
            "--config",
            "run.toml",
            "--data-dir",
            "data",
            "--out-dir",
            "out",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
