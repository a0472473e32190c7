use std::fs;
use std::path::Path;
use std::process::Command;

use sgdcn_cli::{CliError, PipelineConfig, Run, StageStatus};

const SMALL: &str = "
synth_scenes = 10
synth_size = 64
tile_size = 64
n_init = 80
max_iters = 20
svm_epochs = 50
select_max_samples = 400
hidden = 8
layers = 2
epochs = 3
batch_size = 4
";

fn small_config() -> PipelineConfig {
    PipelineConfig::parse(SMALL).unwrap()
}

fn run_small(dir: &Path) -> Run {
    let mut run = Run::open(small_config(), dir).unwrap().quiet();
    run.run_all().unwrap();
    run
}

#[test]
fn smoke_run_writes_masks_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_small(dir.path());
    let root = &run.dir;
    assert!(root.join("model/best.ckpt").is_file());
    assert!(root.join("model/last.ckpt").is_file());
    assert!(root.join("model/history.csv").is_file());
    assert!(root.join("eval/metrics.csv").is_file());
    assert!(root.join("eval/otsu_metrics.csv").is_file());
    let masks = fs::read_dir(root.join("preds")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm")).count();
    // One prediction and one Otsu mask per scene.
    assert_eq!(masks, 20);
    let history = fs::read_to_string(root.join("model/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
}

#[test]
fn rerun_is_cached_and_eval_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    drop(run_small(dir.path()));
    let metrics = fs::read(dir.path().join("eval/metrics.csv")).unwrap();
    let mut again = Run::open(small_config(), dir.path()).unwrap().quiet();
    for status in [again.synth(), again.preprocess(), again.segment(), again.features(), again.select(), again.train(), again.predict()] {
        assert_eq!(status.unwrap(), StageStatus::Cached);
    }
    again.eval().unwrap();
    assert_eq!(fs::read(dir.path().join("eval/metrics.csv")).unwrap(), metrics);
}

#[test]
fn editing_an_upstream_file_triggers_recompute() {
    let dir = tempfile::tempdir().unwrap();
    drop(run_small(dir.path()));
    let tile = fs::read_dir(dir.path().join("tiles"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "f32"))
        .unwrap();
    let original = fs::read(&tile).unwrap();
    let mut edited = original.clone();
    // Low mantissa bit of the last sample.
    let at = edited.len() - 4;
    edited[at] ^= 1;
    fs::write(&tile, &edited).unwrap();

    let mut run = Run::open(small_config(), dir.path()).unwrap().quiet();
    assert_eq!(run.segment().unwrap(), StageStatus::Ran);
    // The damaged tile no longer matches the preprocess record, so it is rebuilt.
    assert_eq!(run.preprocess().unwrap(), StageStatus::Ran);
    assert_eq!(fs::read(&tile).unwrap(), original);
}

#[test]
fn different_config_in_existing_run_dir_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    drop(Run::open(small_config(), dir.path()).unwrap());
    let mut other = small_config();
    other.epochs = 4;
    let err = Run::open(other, dir.path()).err().unwrap();
    assert!(matches!(err, CliError::ConfigMismatch { .. }));
    assert_eq!(err.exit_code(), 2);
    // Worker count does not change results and may differ between invocations.
    let mut workers = small_config();
    workers.workers = 3;
    assert!(Run::open(workers, dir.path()).is_ok());
}

#[test]
fn negative_learning_rate_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "learning_rate = -0.01\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sgdcn"))
        .args(["--config", cfg.to_str().unwrap(), "--run-dir", dir.path().join("run").to_str().unwrap(), "train"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn stage_without_prerequisites_reports_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sgdcn"))
        .args(["--run-dir", dir.path().join("run").to_str().unwrap(), "train"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
