use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn weaksed(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weaksed"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const RUN_TOML: &str = r#"threshold = 0.5

[paths]
train_manifest = "corpus/weak.csv"
validation_manifest = "corpus/weak.csv"
validation_strong = "corpus/strong.csv"

[model]
conv_channels = 4
gru_units = 4
dense_units = 4

[train]
loss = "mmm"
epochs = 2
batch_size = 2

[synth]
positives = 2
negatives = 1
duration_seconds = 5.0
"#;

fn project() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), RUN_TOML).unwrap();
    let o = weaksed(dir.path(), &["--config", "run.toml", "--seed", "3", "synth", "--out", "corpus"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn synth_writes_wavs_and_manifest_with_empty_negative_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = weaksed(
        dir.path(),
        &["--seed", "7", "synth", "--out", "c", "--positives", "40", "--negatives", "40", "--duration", "5"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let wavs = fs::read_dir(dir.path().join("c/audio")).unwrap().count();
    assert_eq!(wavs, 80);
    let manifest = fs::read_to_string(dir.path().join("c/weak.csv")).unwrap();
    let empty = manifest.lines().skip(1).filter(|l| l.ends_with(',')).count();
    assert_eq!(empty, 40);
}

#[test]
fn features_skip_up_to_date_files() {
    let dir = project();
    let root = dir.path();
    let first = weaksed(root, &["--config", "run.toml", "features"]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert_eq!(stdout(&first).trim(), "features: 3 written, 0 up to date");
    assert_eq!(fs::read_dir(root.join("cache")).unwrap().count(), 3);
    let again = weaksed(root, &["--config", "run.toml", "features"]);
    assert_eq!(stdout(&again).trim(), "features: 0 written, 3 up to date");
    let forced = weaksed(root, &["--config", "run.toml", "--force", "features"]);
    assert_eq!(stdout(&forced).trim(), "features: 3 written, 0 up to date");
}

#[test]
fn corrupt_wav_names_the_recording() {
    let dir = project();
    fs::write(dir.path().join("corpus/audio/neg_000.wav"), b"not a wav").unwrap();
    let o = weaksed(dir.path(), &["--config", "run.toml", "features"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: data: "), "{err}");
    assert!(err.contains("neg_000"), "{err}");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = weaksed(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: usage: "));

    fs::write(dir.path().join("bad.toml"), "[train]\nloss = \"hinge\"\n").unwrap();
    let o = weaksed(dir.path(), &["--config", "bad.toml", "train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hinge"));

    let o = weaksed(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train_manifest"));
}

#[test]
fn train_predict_eval_from_one_config() {
    let dir = project();
    let root = dir.path();
    let o = weaksed(root, &["--config", "run.toml", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "final.wsck", "best.wsck", "config.toml"] {
        assert!(root.join("run").join(f).exists(), "{f}");
    }

    let o = weaksed(root, &["--config", "run.toml", "predict"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scores = fs::read_to_string(root.join("run/predictions/frames/pos_000.csv")).unwrap();
    let values: Vec<f64> = scores
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 1 + (220_500 - 1014) / 507);
    assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    let tr = fs::read_to_string(root.join("run/predictions/transcriptions.csv")).unwrap();
    assert_eq!(tr.lines().next(), Some("id,onset,offset"));

    let o = weaksed(
        root,
        &["--config", "run.toml", "eval", "--predictions", "run/predictions", "--report", "run/eval.csv"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("f1: "));
    let report = fs::read_to_string(root.join("run/eval.csv")).unwrap();
    assert!(report.lines().last().unwrap().starts_with("ALL,"));
    assert_eq!(report.lines().count(), 1 + 3 + 1);
}

#[test]
fn plot_two_logs_gives_two_series() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let header = "epoch,train_loss,val_precision,val_recall,val_f1\n";
    fs::write(root.join("a.csv"), format!("{header}1,0.5,0.5,0.5,0.5\n2,0.4,0.6,0.6,0.6\n")).unwrap();
    fs::write(root.join("b.csv"), format!("{header}1,0.5,0.2,0.2,0.2\n2,0.4,,,\n")).unwrap();
    let o = weaksed(root, &["plot", "--out", "fig/curves", "mmm=a.csv", "max_bce=b.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = fs::read_to_string(root.join("fig/curves.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    let csv = fs::read_to_string(root.join("fig/curves.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("mmm,")).count(), 2);
    assert_eq!(csv.lines().filter(|l| l.starts_with("max_bce,")).count(), 1);
}

#[test]
fn missing_metric_log_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = weaksed(dir.path(), &["plot", "--out", "x", "nope.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.csv"));
}
