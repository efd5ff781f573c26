mod common;

use std::fs;

use common::{small_config, small_task};
use dualspace::experiment::{evaluate_checkpoint, read_metrics, run_experiment, run_in, ExperimentConfig, RunDir, RunOptions};
use dualspace::noisegen::write_dataset;
use dualspace::Error;

fn setup(dir: &std::path::Path, total: usize, every: usize) -> ExperimentConfig {
    let data = dir.join("data");
    write_dataset(&data, &small_task(21)).unwrap();
    let train = small_config(2, total);
    let mut cfg = ExperimentConfig::new(&data);
    cfg.output_dir = Some(dir.join("run"));
    cfg.checkpoint_every = every;
    cfg.seed = train.seed;
    cfg.hyper = train.hyper;
    cfg.net = train.net;
    cfg
}

#[test]
fn run_directory_contents() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), 5, 2);
    let summary = run_experiment(&cfg, RunOptions::default()).unwrap();
    let run = tmp.path().join("run");

    let echoed = ExperimentConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(echoed, cfg);
    let metrics = read_metrics(&run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.len(), 5);
    assert_eq!(summary.last, metrics[4]);
    assert_eq!(summary.epochs, 5);
    for name in ["epoch-0002", "epoch-0004", "final", "latest"] {
        assert!(run.join("checkpoints").join(format!("{name}.json")).exists(), "{name}");
    }
    // epoch 2 is the last warm-up epoch; epoch 4 and the final epoch are main-phase
    assert!(!run.join("identification/epoch-0002.jsonl").exists());
    let report = fs::read_to_string(run.join("identification/epoch-0004.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 120);
    assert!(report.lines().next().unwrap().contains("\"M_Neigh\""));
    assert!(run.join("identification/epoch-0005.jsonl").exists());
    assert!(run.join("summary.json").exists());
    assert!(!run.join("run.lock").exists());
}

#[test]
fn final_checkpoint_reproduces_last_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), 4, 0);
    let summary = run_experiment(&cfg, RunOptions::default()).unwrap();
    let ev = evaluate_checkpoint(&tmp.path().join("run/checkpoints/final.json"), &cfg.dataset).unwrap();
    assert_eq!(ev.epoch, 4);
    assert_eq!(ev.test, summary.last.test);
}

#[test]
fn interrupted_run_resumes_to_identical_log() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), 6, 2);
    run_experiment(&cfg, RunOptions::default()).unwrap();
    let run = tmp.path().join("run");
    let reference = fs::read(run.join("metrics.jsonl")).unwrap();

    // pretend the process died after epoch 4 was checkpointed and epoch 5 logged
    fs::copy(run.join("checkpoints/epoch-0004.json"), run.join("checkpoints/latest.json")).unwrap();
    fs::remove_file(run.join("checkpoints/final.json")).unwrap();
    fs::remove_file(run.join("summary.json")).unwrap();
    let text = String::from_utf8(reference.clone()).unwrap();
    let partial: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
    fs::write(run.join("metrics.jsonl"), partial).unwrap();

    run_experiment(&cfg, RunOptions { resume: true }).unwrap();
    assert_eq!(fs::read(run.join("metrics.jsonl")).unwrap(), reference);
}

#[test]
fn existing_run_is_not_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), 2, 0);
    run_experiment(&cfg, RunOptions::default()).unwrap();
    assert!(matches!(run_experiment(&cfg, RunOptions::default()), Err(Error::Config(_))));
}

#[test]
fn resume_with_changed_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = setup(tmp.path(), 3, 1);
    run_experiment(&cfg, RunOptions::default()).unwrap();
    cfg.hyper.lambda_con = 0.25;
    assert!(matches!(run_experiment(&cfg, RunOptions { resume: true }), Err(Error::Config(_))));
}

#[test]
fn locked_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), 2, 0);
    let _held = RunDir::open(tmp.path().join("run")).unwrap();
    let err = run_experiment(&cfg, RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("run.lock"), "{err}");
}

#[test]
fn divergence_leaves_a_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = setup(tmp.path(), 2, 0);
    cfg.hyper.lr = 1e200;
    cfg.hyper.momentum = 0.0;
    let dir = RunDir::open(tmp.path().join("run")).unwrap();
    let ds = dualspace::noisegen::read_dataset(&cfg.dataset).unwrap();
    let err = run_in(&dir, &cfg, &ds, RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }));
    let dump = fs::read_to_string(dir.nan_dump_path()).unwrap();
    assert!(dump.contains("non-finite"));
}

#[test]
fn missing_dataset_names_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(tmp.path().join("nowhere"));
    cfg.output_dir = Some(tmp.path().join("run"));
    let err = run_experiment(&cfg, RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("nowhere"), "{err}");
}
