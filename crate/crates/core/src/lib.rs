//! Learning with mixed closed-set and open-set label noise by joint
//! training in a prototype space and a one-vs-all space.
//!
//! * [`noisegen`] builds noisy tasks and reads/writes the dataset format.
//! * [`nets`] holds the model, augmentations and mixup.
//! * [`losses`] implements every training objective with gradients.
//! * [`identify`] splits the training set into clean, closed-set and
//!   open-set samples from neighbor and negative margins.
//! * [`trainer`] runs warm-up and joint training.
//! * [`eval`] computes accuracy, OOD scores, AUROC and FPR95.
//! * [`experiment`] ties these into run directories with logs and
//!   checkpoints.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod hyper;
pub mod identify;
pub mod losses;
pub mod nets;
pub mod noisegen;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
pub use eval::{MetricsReport, SelectionAudit, TestEvaluation};
pub use hyper::HyperParams;
pub use identify::{EmbeddingBank, SamplePartition, Subset};
pub use losses::LossBreakdown;
pub use nets::{AugmentationPolicy, ModelBundle, ModelConfig};
pub use noisegen::{CleanSource, LabeledDataset, NoiseSpec, NoiseTag, NoiseType, Split};
pub use trainer::{Ablation, Checkpoint, Method, TrainConfig, Trainer};
