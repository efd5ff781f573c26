//! Run directories.
//!
//! A run directory holds:
//!
//! * `config.toml`: the exact configuration the run was started with;
//! * `metrics.jsonl`: one [`MetricsReport`] per epoch;
//! * `checkpoints/epoch-NNNN.json` at every save interval, plus
//!   `checkpoints/latest.json` and `checkpoints/final.json`;
//! * `identification/epoch-NNNN.jsonl`: per-sample margins and subsets,
//!   written alongside each checkpoint of a main-phase epoch;
//! * `summary.json` once training has finished;
//! * `nan-dump.json` if training stopped on a non-finite loss;
//! * `run.lock` while a process owns the directory.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{MetricsReport, TestEvaluation};
use crate::hyper::HyperParams;
use crate::identify::write_identification_report;
use crate::noisegen::{read_dataset, LabeledDataset};
use crate::trainer::{Ablation, Checkpoint, Method, NetShape, TrainConfig, Trainer};

/// Root directory for run directories given by relative paths.
pub const OUTPUT_ROOT_ENV: &str = "DUALSPACE_OUTPUT_ROOT";

/// Flat key-value experiment description, stored as TOML.
///
/// Every [`HyperParams`] field, every [`NetShape`] field and the ablation
/// switches appear as top-level keys next to `dataset`, `output_dir`,
/// `checkpoint_every`, `method` and `seed`. Missing keys take their
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Dataset directory as written by [`crate::noisegen::write_dataset`].
    pub dataset: PathBuf,
    /// Run directory. Relative paths are resolved against
    /// `$DUALSPACE_OUTPUT_ROOT` when it is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Save a checkpoint every this many epochs; 0 saves only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub hyper: HyperParams,
    #[serde(flatten)]
    pub net: NetShape,
    #[serde(flatten)]
    pub ablation: Ablation,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            dataset: dataset.into(),
            output_dir: None,
            checkpoint_every: 0,
            method: Method::Joint,
            seed: 0,
            hyper: HyperParams::default(),
            net: NetShape::default(),
            ablation: Ablation::default(),
        }
    }

    /// Every key the TOML form accepts.
    pub fn known_keys() -> BTreeSet<String> {
        let mut probe = ExperimentConfig::new("");
        probe.output_dir = Some(PathBuf::new());
        match toml::Table::try_from(&probe) {
            Ok(t) => t.keys().cloned().collect(),
            Err(e) => unreachable!("config always serializes: {e}"),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::InvalidSpec(format!("config: {e}")))?;
        let known = Self::known_keys();
        let unknown: Vec<&String> = table.keys().filter(|k| !known.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(Error::InvalidSpec(format!("unknown config keys: {unknown:?}")));
        }
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e| Error::InvalidSpec(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidSpec(msg) => Error::InvalidSpec(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        match toml::to_string(self) {
            Ok(s) => s,
            Err(e) => unreachable!("config always serializes: {e}"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            method: self.method,
            seed: self.seed,
            hyper: self.hyper.clone(),
            net: self.net.clone(),
            ablation: self.ablation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::InvalidSpec("dataset path is empty".into()));
        }
        if self.net.hidden.is_empty() || self.net.hidden.contains(&0) {
            return Err(Error::InvalidSpec("hidden widths must be non-empty and positive".into()));
        }
        if self.net.proj_hidden == 0 || self.net.proj_dim == 0 {
            return Err(Error::InvalidSpec("projection widths must be positive".into()));
        }
        self.train_config().validate()
    }

    /// Run directory after applying `$DUALSPACE_OUTPUT_ROOT`.
    pub fn run_dir(&self) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
        let rel = self
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("run-seed{}", self.seed)));
        match root {
            Some(root) if rel.is_relative() => root.join(rel),
            _ => rel,
        }
    }
}

struct LockFile(PathBuf);

impl LockFile {
    fn acquire(path: PathBuf) -> Result<Self> {
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockFile(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} exists; another run owns this directory",
                path.display()
            ))),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// An opened, locked run directory.
pub struct RunDir {
    root: PathBuf,
    _lock: LockFile,
}

impl RunDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for d in [root.clone(), root.join("checkpoints"), root.join("identification")] {
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let lock = LockFile::acquire(root.join("run.lock"))?;
        Ok(RunDir { root, _lock: lock })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn nan_dump_path(&self) -> PathBuf {
        self.root.join("nan-dump.json")
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.json"))
    }

    pub fn identification_path(&self, epoch: usize) -> PathBuf {
        self.root.join("identification").join(format!("epoch-{epoch:04}.jsonl"))
    }
}

/// Written to `summary.json` when a run finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub dataset: PathBuf,
    pub known_classes: usize,
    pub total_classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: usize,
    #[serde(rename = "final")]
    pub last: MetricsReport,
}

/// Written to `nan-dump.json` when training hits a non-finite value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NanDump {
    pub error: String,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Continue from `checkpoints/latest.json` when present.
    pub resume: bool,
}

/// Reads every line of a metrics log.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsReport>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(r);
    }
    Ok(out)
}

fn keep_metric_lines(path: &Path, epochs: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let kept: String = text.lines().take(epochs).map(|l| format!("{l}\n")).collect();
    if kept.lines().count() < epochs {
        return Err(Error::format(path, format!("fewer than {epochs} lines to resume from")));
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

/// Trains according to `cfg`, writing everything into its run directory.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let dataset = read_dataset(&cfg.dataset)?;
    let dir = RunDir::open(cfg.run_dir())?;
    run_in(&dir, cfg, &dataset, opts)
}

/// As [`run_experiment`] with an already loaded dataset and opened directory.
pub fn run_in(dir: &RunDir, cfg: &ExperimentConfig, dataset: &LabeledDataset, opts: RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let latest = dir.checkpoint_path("latest");
    let metrics_path = dir.metrics_path();
    let mut trainer = if opts.resume && latest.exists() {
        let previous = ExperimentConfig::load(&dir.config_path())?;
        if previous.train_config() != cfg.train_config() {
            return Err(Error::Config(format!(
                "{} was produced by a different configuration",
                dir.path().display()
            )));
        }
        let ck = Checkpoint::load(&latest)?;
        keep_metric_lines(&metrics_path, ck.state.epoch)?;
        info!("resuming {} after epoch {}", dir.path().display(), ck.state.epoch);
        Trainer::from_checkpoint(ck, dataset)?
    } else {
        if metrics_path.exists() && fs::metadata(&metrics_path).map(|m| m.len() > 0).unwrap_or(false) {
            return Err(Error::Config(format!(
                "{} already holds a run; resume it or choose another directory",
                dir.path().display()
            )));
        }
        let t = Trainer::new(cfg.train_config(), dataset)?;
        fs::write(&metrics_path, "").map_err(|e| Error::io(&metrics_path, e))?;
        t
    };
    let config_path = dir.config_path();
    fs::write(&config_path, cfg.to_toml()).map_err(|e| Error::io(&config_path, e))?;

    let mut log = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    while !trainer.is_finished() {
        let report = match trainer.step_epoch() {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                let dump = NanDump {
                    error: e.to_string(),
                    checkpoint: trainer.checkpoint(),
                };
                let path = dir.nan_dump_path();
                match serde_json::to_string(&dump) {
                    Ok(text) => {
                        if let Err(io) = fs::write(&path, text) {
                            warn!("could not write {}: {io}", path.display());
                        }
                    }
                    Err(se) => warn!("could not serialize the failure state: {se}"),
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let line = serde_json::to_string(&report).map_err(|e| Error::format(&metrics_path, e))?;
        writeln!(log, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
        log.flush().map_err(|e| Error::io(&metrics_path, e))?;
        let epoch = trainer.state.epoch;
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && !trainer.is_finished() {
            save_checkpoint(dir, &trainer, &format!("epoch-{epoch:04}"))?;
        }
    }
    save_checkpoint(dir, &trainer, "final")?;

    let reports = read_metrics(&metrics_path)?;
    let last = reports
        .last()
        .cloned()
        .ok_or_else(|| Error::format(&metrics_path, "no epochs recorded"))?;
    let summary = RunSummary {
        method: cfg.method,
        seed: cfg.seed,
        dataset: cfg.dataset.clone(),
        known_classes: dataset.known_classes,
        total_classes: dataset.total_classes,
        train_samples: trainer.train.labels.len(),
        test_samples: trainer.test.true_labels.len(),
        epochs: reports.len(),
        last,
    };
    let path = dir.summary_path();
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::format(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

fn save_checkpoint(dir: &RunDir, trainer: &Trainer, name: &str) -> Result<()> {
    let ck = trainer.checkpoint();
    ck.save(&dir.checkpoint_path(name))?;
    ck.save(&dir.checkpoint_path("latest"))?;
    if let Some(p) = &trainer.partition {
        write_identification_report(&dir.identification_path(trainer.state.epoch), p, &trainer.train.tags)?;
    }
    Ok(())
}

/// Output of evaluating a stored checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub epoch: usize,
    pub method: Method,
    #[serde(flatten)]
    pub test: TestEvaluation,
}

pub fn evaluate_checkpoint(checkpoint: &Path, dataset: &Path) -> Result<EvalSummary> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = read_dataset(dataset)?;
    let epoch = ck.state.epoch;
    let method = ck.config.method;
    let trainer = Trainer::from_checkpoint(ck, &ds)?;
    Ok(EvalSummary {
        checkpoint: checkpoint.to_path_buf(),
        dataset: dataset.to_path_buf(),
        epoch,
        method,
        test: trainer.evaluate()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_is_flat() {
        let mut cfg = ExperimentConfig::new("data/lond");
        cfg.hyper.neighbors = 20;
        cfg.ablation.enable_con = false;
        cfg.net.hidden = vec![64, 64];
        let text = cfg.to_toml();
        assert!(text.contains("neighbors = 20"), "{text}");
        assert!(text.contains("enable_con = false"), "{text}");
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn missing_keys_take_defaults() {
        let cfg = ExperimentConfig::from_toml_str("dataset = \"d\"\nseed = 4\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.hyper, HyperParams::default());
        assert_eq!(cfg.ablation, Ablation::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str("dataset = \"d\"\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("dataset = \"d\"\nalpha_id = 0.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("dataset = \"d\"\nhidden = []\n").is_err());
        assert!(ExperimentConfig::from_toml_str("seed = 1\n").is_err());
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let tmp = tempfile::tempdir().unwrap();
        let a = RunDir::open(tmp.path().join("r")).unwrap();
        assert!(RunDir::open(tmp.path().join("r")).is_err());
        drop(a);
        RunDir::open(tmp.path().join("r")).unwrap();
    }

    #[test]
    fn missing_metrics_file_names_path() {
        let err = read_metrics(Path::new("/nonexistent/metrics.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/metrics.jsonl"));
    }
}
