//! Noisy task construction.
//!
//! A [`CleanSource`] is carved into known and open class pools, the known
//! pool gets closed-set label noise and the open pool is mixed in as
//! open-set noise (and appended to the test split for OOD evaluation).

mod format;

pub use format::{read_dataset, write_dataset, DatasetHeader, FEATURES_FILE, HEADER_FILE, RECORDS_FILE};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseTag {
    Clean,
    Closed,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseType {
    #[serde(alias = "sym")]
    Symmetric,
    #[serde(alias = "asym")]
    Asymmetric,
}

/// Labeled feature vectors with true labels only.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanSource {
    pub dim: usize,
    /// Total number of classes, known and open.
    pub num_classes: usize,
    /// Row-major `len() x dim`.
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
}

impl CleanSource {
    /// Loader hook for externally supplied data.
    pub fn new(
        dim: usize,
        num_classes: usize,
        features: Vec<f32>,
        labels: Vec<usize>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpec("feature dimension must be > 0".into()));
        }
        if features.len() != labels.len() * dim || labels.len() != splits.len() {
            return Err(Error::InvalidSpec(format!(
                "inconsistent source: {} features, {} labels, {} splits, dim {dim}",
                features.len(),
                labels.len(),
                splits.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::ClassIndex {
                index: bad,
                len: num_classes,
            });
        }
        Ok(CleanSource {
            dim,
            num_classes,
            features,
            labels,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn subset(&self, keep: impl Fn(usize) -> bool) -> CleanSource {
        let mut out = CleanSource {
            dim: self.dim,
            num_classes: self.num_classes,
            features: Vec::new(),
            labels: Vec::new(),
            splits: Vec::new(),
        };
        for i in (0..self.len()).filter(|&i| keep(i)) {
            out.features.extend_from_slice(self.row(i));
            out.labels.push(self.labels[i]);
            out.splits.push(self.splits[i]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub known_classes: usize,
    pub noise_type: NoiseType,
    /// Fraction of the known-class training samples whose label is flipped.
    pub noise_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::InvalidSpec(format!(
                "noise_rate {} outside [0, 1]",
                self.noise_rate
            )));
        }
        if self.known_classes < 2 && self.noise_rate > 0.0 {
            return Err(Error::InvalidSpec(
                "label flipping needs at least two known classes".into(),
            ));
        }
        Ok(())
    }

    /// Target of an asymmetric flip: the next class, circularly.
    pub fn asymmetric_target(class: usize, known_classes: usize) -> usize {
        (class + 1) % known_classes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    /// Observed label; `None` only for open-set test samples, which have no
    /// label in the known space.
    pub given_label: Option<usize>,
    /// Hidden ground truth; `>= known_classes` marks an open-set sample.
    pub true_label: usize,
    pub noise_tag: NoiseTag,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub dim: usize,
    pub known_classes: usize,
    pub total_classes: usize,
    pub features: Vec<f32>,
    pub samples: Vec<Sample>,
    pub spec: Option<NoiseSpec>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    /// Whether the test split holds open-set samples (LOND) or not (LCND).
    pub fn has_open_test(&self) -> bool {
        self.samples
            .iter()
            .any(|s| s.split == Split::Test && s.noise_tag == NoiseTag::Open)
    }

    pub fn count(&self, split: Split, tag: NoiseTag) -> usize {
        self.samples
            .iter()
            .filter(|s| s.split == split && s.noise_tag == tag)
            .count()
    }

    /// Checks tag/label consistency over every sample.
    pub fn check_invariants(&self) -> Result<()> {
        if self.features.len() != self.samples.len() * self.dim {
            return Err(Error::Contract("feature block size mismatch".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            let clean = s.given_label == Some(s.true_label);
            let open = s.true_label >= self.known_classes;
            let ok = match s.noise_tag {
                NoiseTag::Clean => clean && !open,
                NoiseTag::Closed => !clean && !open,
                NoiseTag::Open => open && !clean,
            };
            if !ok {
                return Err(Error::Contract(format!("sample {i} has inconsistent tag: {s:?}")));
            }
            match s.given_label {
                Some(y) if y >= self.known_classes => {
                    return Err(Error::Contract(format!(
                        "sample {i} carries label {y} outside the known classes"
                    )));
                }
                None if s.split == Split::Train || !open => {
                    return Err(Error::Contract(format!("sample {i} has no given label")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Splits `source` into the known pool (classes `0..known`) and the open
/// pool (classes `known..`).
pub fn carve_open_world(source: &CleanSource, known: usize) -> Result<(CleanSource, CleanSource)> {
    if known > source.num_classes || known == 0 {
        return Err(Error::InvalidSpec(format!(
            "known class count {known} must be in 1..={}",
            source.num_classes
        )));
    }
    let known_pool = source.subset(|i| source.labels[i] < known);
    let open_pool = source.subset(|i| source.labels[i] >= known);
    Ok((known_pool, open_pool))
}

/// Flips exactly `round(noise_rate * N_train)` labels of the known pool.
/// The test split is copied untouched.
pub fn inject_closed_noise(pool: &CleanSource, spec: &NoiseSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let c = spec.known_classes;
    if let Some(&bad) = pool.labels.iter().find(|&&l| l >= c) {
        return Err(Error::ClassIndex { index: bad, len: c });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train: Vec<usize> = (0..pool.len())
        .filter(|&i| pool.splits[i] == Split::Train)
        .collect();
    let flips = (spec.noise_rate * train.len() as f64).round() as usize;

    let mut samples: Vec<Sample> = (0..pool.len())
        .map(|i| Sample {
            given_label: Some(pool.labels[i]),
            true_label: pool.labels[i],
            noise_tag: NoiseTag::Clean,
            split: pool.splits[i],
        })
        .collect();
    for pick in index::sample(&mut rng, train.len(), flips) {
        let s = &mut samples[train[pick]];
        let noisy = match spec.noise_type {
            NoiseType::Symmetric => {
                // uniform over the other c - 1 classes
                let r = rng.random_range(0..c - 1);
                if r >= s.true_label {
                    r + 1
                } else {
                    r
                }
            }
            NoiseType::Asymmetric => NoiseSpec::asymmetric_target(s.true_label, c),
        };
        s.given_label = Some(noisy);
        s.noise_tag = NoiseTag::Closed;
    }

    Ok(LabeledDataset {
        dim: pool.dim,
        known_classes: c,
        total_classes: pool.num_classes,
        features: pool.features.clone(),
        samples,
        spec: Some(spec.clone()),
    })
}

/// Mixes open-pool training samples into `known` with uniformly random given
/// labels and appends every open-pool test sample to the test split.
///
/// `target_train_size` fixes the final training-set size; the difference to
/// the known training count is drawn from the open pool without replacement.
pub fn inject_open_noise(
    known: &LabeledDataset,
    open_pool: &CleanSource,
    target_train_size: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let c = known.known_classes;
    inject_open_noise_with(known, open_pool, target_train_size, seed, |_, rng| {
        rng.random_range(0..c)
    })
}

/// As [`inject_open_noise`], with a caller-chosen labeling rule for the
/// open-set training samples. The rule must return a label in
/// `0..known_classes`.
pub fn inject_open_noise_with<F>(
    known: &LabeledDataset,
    open_pool: &CleanSource,
    target_train_size: usize,
    seed: u64,
    mut label_open: F,
) -> Result<LabeledDataset>
where
    F: FnMut(&[f32], &mut ChaCha8Rng) -> usize,
{
    let known_train = known.indices(Split::Train).len();
    if open_pool.is_empty() {
        if target_train_size == known_train {
            return Ok(known.clone());
        }
        return Err(Error::Config(
            "open pool is empty but open-set noise was requested".into(),
        ));
    }
    if open_pool.dim != known.dim {
        return Err(Error::Config(format!(
            "open pool dim {} != dataset dim {}",
            open_pool.dim, known.dim
        )));
    }
    if target_train_size < known_train {
        return Err(Error::InvalidSpec(format!(
            "target train size {target_train_size} below known train count {known_train}"
        )));
    }
    let open_train: Vec<usize> = (0..open_pool.len())
        .filter(|&i| open_pool.splits[i] == Split::Train)
        .collect();
    let wanted = target_train_size - known_train;
    if wanted > open_train.len() {
        return Err(Error::Config(format!(
            "need {wanted} open-set training samples, open pool has {}",
            open_train.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = index::sample(&mut rng, open_train.len(), wanted)
        .into_iter()
        .map(|k| open_train[k])
        .collect();
    chosen.sort_unstable();

    let mut out = known.clone();
    for &i in &chosen {
        let given = label_open(open_pool.row(i), &mut rng);
        if given >= out.known_classes {
            return Err(Error::ClassIndex {
                index: given,
                len: out.known_classes,
            });
        }
        out.features.extend_from_slice(open_pool.row(i));
        out.samples.push(Sample {
            given_label: Some(given),
            true_label: open_pool.labels[i],
            noise_tag: NoiseTag::Open,
            split: Split::Train,
        });
    }
    for i in (0..open_pool.len()).filter(|&i| open_pool.splits[i] == Split::Test) {
        out.features.extend_from_slice(open_pool.row(i));
        out.samples.push(Sample {
            given_label: None,
            true_label: open_pool.labels[i],
            noise_tag: NoiseTag::Open,
            split: Split::Test,
        });
    }
    Ok(out)
}

/// Desk-scale stand-in for an image benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSourceSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Samples per class, train and test together.
    pub per_class: usize,
    /// Of `per_class`, how many go to the test split.
    pub test_per_class: usize,
    /// Distance between any two class means (exact when `dim >= num_classes`).
    pub separation: f64,
    pub seed: u64,
}

/// Isotropic unit-variance Gaussian clusters. When `dim >= num_classes` the
/// class means sit on scaled coordinate axes, so every pair of means is
/// exactly `separation` apart; otherwise the means are random directions
/// of the same norm.
pub fn synth_gaussian_source(spec: &GaussianSourceSpec) -> Result<CleanSource> {
    if spec.per_class < 2 {
        return Err(Error::InvalidSpec("per_class must be >= 2".into()));
    }
    if !(spec.separation > 0.0) {
        return Err(Error::InvalidSpec("separation must be > 0".into()));
    }
    if spec.test_per_class >= spec.per_class {
        return Err(Error::InvalidSpec(
            "test_per_class must leave at least one training sample".into(),
        ));
    }
    if spec.num_classes == 0 || spec.dim == 0 {
        return Err(Error::InvalidSpec("num_classes and dim must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let radius = spec.separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|c| {
            if spec.dim >= spec.num_classes {
                let mut m = vec![0.0; spec.dim];
                m[c] = radius;
                m
            } else {
                let v: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x * radius / norm).collect()
            }
        })
        .collect();

    let n = spec.num_classes * spec.per_class;
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    let train_per_class = spec.per_class - spec.test_per_class;
    for (c, mean) in means.iter().enumerate() {
        for k in 0..spec.per_class {
            for &m in mean {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push((m + noise) as f32);
            }
            labels.push(c);
            splits.push(if k < train_per_class { Split::Train } else { Split::Test });
        }
    }
    CleanSource::new(spec.dim, spec.num_classes, features, labels, splits)
}

/// Everything needed to build a noisy task from a Gaussian source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub source: GaussianSourceSpec,
    pub noise: NoiseSpec,
    /// Open-set training samples to mix in; `None` takes the whole open pool.
    pub open_train: Option<usize>,
}

/// Builds a LOND task (or LCND when every class is known).
pub fn build_task(task: &TaskSpec) -> Result<LabeledDataset> {
    let source = synth_gaussian_source(&task.source)?;
    build_task_from_source(&source, &task.noise, task.open_train)
}

pub fn build_task_from_source(
    source: &CleanSource,
    noise: &NoiseSpec,
    open_train: Option<usize>,
) -> Result<LabeledDataset> {
    let (known, open) = carve_open_world(source, noise.known_classes)?;
    let closed = inject_closed_noise(&known, noise)?;
    let known_train = closed.indices(Split::Train).len();
    let available = open.splits.iter().filter(|&&s| s == Split::Train).count();
    let target = known_train + open_train.unwrap_or(available);
    // distinct stream from the closed-noise draw
    inject_open_noise(&closed, &open, target, noise.seed ^ 0x5EED_0FE7)
}

/// Shuffled copy of `0..n`.
pub(crate) fn permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
