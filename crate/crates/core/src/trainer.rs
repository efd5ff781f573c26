//! The training loop: a warm-up phase on mixup-OVA plus bi-level
//! contrastive loss, then per-epoch identification and the joint objective
//! routed by subset. A plain cross-entropy method on the same network is
//! available as a reference.

use log::{debug, info};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, selection_audit, MetricsReport, PartitionCounts, Phase, ScoreKind, TestData};
use crate::hyper::HyperParams;
use crate::identify::{identify, init_prototypes, EmbeddingBank, SamplePartition, Subset};
use crate::losses::{
    backprop_proto_logits, bcl_loss_grad, bcl_per_sample, consistency_loss_logits, ova_loss_logits,
    proto_loss_logits, pu_loss_logits, sharpen, softmax, total_loss, LossBreakdown, SampleLosses,
};
use crate::nets::{make_views, mixup_batch, AugmentationPolicy, ModelBundle, ModelConfig, Weights};
use crate::noisegen::{permutation, LabeledDataset, NoiseTag, Split};
use crate::optim::{cosine_lr, Sgd};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The dual-space method.
    #[default]
    Joint,
    /// Softmax cross-entropy on every sample with its given label.
    CrossEntropy,
}

/// Switches for the main-phase losses. Warm-up is unaffected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub enable_pu: bool,
    pub enable_con: bool,
    pub enable_bcl: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            enable_pu: true,
            enable_con: true,
            enable_bcl: true,
        }
    }
}

impl Ablation {
    /// The ablation ladder: OVA + prototype loss on clean samples, then
    /// adding pseudo-labels, consistency and contrastive terms in turn.
    pub fn ladder() -> [(&'static str, Ablation); 4] {
        let off = Ablation {
            enable_pu: false,
            enable_con: false,
            enable_bcl: false,
        };
        [
            ("baseline", off),
            ("+pu", Ablation { enable_pu: true, ..off }),
            ("+pu+con", Ablation { enable_pu: true, enable_con: true, ..off }),
            ("full", Ablation::default()),
        ]
    }
}

/// Network widths; input and class counts come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetShape {
    pub hidden: Vec<usize>,
    pub proj_hidden: usize,
    pub proj_dim: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        let m = ModelConfig::default();
        NetShape {
            hidden: m.hidden,
            proj_hidden: m.proj_hidden,
            proj_dim: m.proj_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub seed: u64,
    pub hyper: HyperParams,
    pub net: NetShape,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Joint,
            seed: 0,
            hyper: HyperParams::default(),
            net: NetShape::default(),
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()
    }
}

/// Training split in model-ready form.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub tags: Vec<NoiseTag>,
}

fn rows_f64(ds: &LabeledDataset, idx: &[usize]) -> Array2<f64> {
    let mut x = Array2::zeros((idx.len(), ds.dim));
    for (r, &i) in idx.iter().enumerate() {
        for (dst, &src) in x.row_mut(r).iter_mut().zip(ds.row(i)) {
            *dst = src as f64;
        }
    }
    x
}

/// Splits a dataset into training and test arrays.
pub fn prepare(ds: &LabeledDataset) -> (TrainData, TestData) {
    let train_idx = ds.indices(Split::Train);
    let test_idx = ds.indices(Split::Test);
    let train = TrainData {
        x: rows_f64(ds, &train_idx),
        labels: train_idx
            .iter()
            .map(|&i| ds.samples[i].given_label.expect("training samples are labeled"))
            .collect(),
        tags: train_idx.iter().map(|&i| ds.samples[i].noise_tag).collect(),
    };
    let test = TestData {
        x: rows_f64(ds, &test_idx),
        true_labels: test_idx.iter().map(|&i| ds.samples[i].true_label).collect(),
        is_open: test_idx.iter().map(|&i| ds.samples[i].true_label >= ds.known_classes).collect(),
    };
    (train, test)
}

/// Mean over coordinates of the per-coordinate standard deviation.
fn feature_std(x: &Array2<f64>) -> f64 {
    if x.nrows() < 2 {
        return 1.0;
    }
    x.std_axis(Axis(0), 0.0).mean().unwrap_or(1.0)
}

/// Everything that evolves during training and goes into a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub model: ModelBundle,
    pub optimizer: Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    pub state: TrainState,
}

pub const CHECKPOINT_FORMAT: &str = "dualspace-checkpoint-v1";

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::format(path, e))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::format(path, format!("unknown checkpoint format {}", ck.format)));
        }
        Ok(ck)
    }
}

/// Which training samples fed which loss in one batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchRouting {
    pub ova_proto: Vec<usize>,
    pub pu: Vec<usize>,
    pub con: Vec<usize>,
    pub bcl: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub phase: Phase,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub batch_losses: Vec<f64>,
    pub partition: Option<SamplePartition>,
}

/// Splitmix-style mixing so neighbouring epochs get unrelated streams.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct Trainer {
    pub config: TrainConfig,
    pub train: TrainData,
    pub test: TestData,
    pub policy: AugmentationPolicy,
    pub state: TrainState,
    /// Latest identification result.
    pub partition: Option<SamplePartition>,
    /// When set, per-batch routing of the last epoch is kept in `routing`.
    pub record_routing: bool,
    pub routing: Vec<BatchRouting>,
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: &LabeledDataset) -> Result<Self> {
        config.validate()?;
        let model_cfg = ModelConfig {
            input_dim: dataset.dim,
            hidden: config.net.hidden.clone(),
            proj_hidden: config.net.proj_hidden,
            proj_dim: config.net.proj_dim,
            classes: dataset.known_classes,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(config.seed, usize::MAX));
        let model = ModelBundle::new(model_cfg, &mut rng)?;
        let optimizer = Sgd::new(&model, config.hyper.momentum, config.hyper.weight_decay);
        Self::with_state(config, dataset, TrainState { epoch: 0, model, optimizer })
    }

    pub fn from_checkpoint(ck: Checkpoint, dataset: &LabeledDataset) -> Result<Self> {
        ck.config.validate()?;
        Self::with_state(ck.config, dataset, ck.state)
    }

    fn with_state(config: TrainConfig, dataset: &LabeledDataset, state: TrainState) -> Result<Self> {
        let (train, test) = prepare(dataset);
        if train.x.nrows() < 2 {
            return Err(Error::Config("need at least two training samples".into()));
        }
        if state.model.config.input_dim != dataset.dim || state.model.classes() != dataset.known_classes {
            return Err(Error::Config("model does not match the dataset".into()));
        }
        let policy = AugmentationPolicy::for_feature_std(feature_std(&train.x));
        Ok(Trainer {
            config,
            train,
            test,
            policy,
            state,
            partition: None,
            record_routing: false,
            routing: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            state: self.state.clone(),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.hyper.total_epochs
    }

    fn lr_for(&self, epoch: usize) -> f64 {
        cosine_lr(self.config.hyper.lr, epoch - 1, self.config.hyper.total_epochs)
    }

    /// Runs the next epoch in its phase, then evaluates on the test split.
    pub fn step_epoch(&mut self) -> Result<MetricsReport> {
        let epoch = self.state.epoch + 1;
        let summary = match self.config.method {
            Method::CrossEntropy => self.cross_entropy_epoch()?,
            Method::Joint if epoch <= self.config.hyper.warmup_epochs => self.warmup_epoch()?,
            Method::Joint => self.main_epoch()?,
        };
        self.report(epoch, &summary)
    }

    /// Trains to `total_epochs`, calling `on_epoch` after every epoch.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&Trainer, &MetricsReport) -> Result<()>) -> Result<Vec<MetricsReport>> {
        let mut reports = Vec::new();
        while !self.is_finished() {
            let r = self.step_epoch()?;
            on_epoch(self, &r)?;
            reports.push(r);
        }
        Ok(reports)
    }

    pub fn score_kind(&self) -> ScoreKind {
        match self.config.method {
            Method::CrossEntropy => ScoreKind::Msp,
            Method::Joint if self.state.model.prototypes_ready => ScoreKind::Prototype,
            Method::Joint => ScoreKind::OvaArgmax,
        }
    }

    pub fn evaluate(&self) -> Result<crate::eval::TestEvaluation> {
        evaluate(&self.state.model, &self.test, self.score_kind(), self.config.hyper.tau)
    }

    fn report(&self, epoch: usize, summary: &EpochSummary) -> Result<MetricsReport> {
        let test = self.evaluate()?;
        let (partition, selection) = match &summary.partition {
            Some(p) => (
                Some(PartitionCounts {
                    clean: p.count(Subset::Clean),
                    close: p.count(Subset::Close),
                    open: p.count(Subset::Open),
                }),
                Some(selection_audit(&p.assignment, &self.train.tags)),
            ),
            None => (None, None),
        };
        info!(
            "epoch {epoch} ({:?}) loss {:.4} acc {:?} auroc {:?}",
            summary.phase, summary.losses.total, test.accuracy, test.auroc
        );
        Ok(MetricsReport {
            epoch,
            phase: summary.phase,
            lr: summary.lr,
            test,
            partition,
            selection,
            losses: summary.losses,
        })
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(epoch_seed(self.config.seed, epoch))
    }

    fn batches(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let order = permutation(self.train.labels.len(), rng);
        order.chunks(self.config.hyper.batch_size).map(|c| c.to_vec()).collect()
    }

    fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.train.x.select(Axis(0), idx)
    }

    /// Identification over the current model.
    pub fn identify_now(&self, epoch: usize) -> Result<(EmbeddingBank, SamplePartition)> {
        let bank = EmbeddingBank::build(&self.state.model, self.train.x.view(), self.train.labels.clone(), epoch)?;
        let partition = identify(&bank, &self.config.hyper);
        Ok((bank, partition))
    }

    /// One warm-up epoch: mixup OVA over every sample plus the contrastive
    /// loss with all weights 1. Prototypes are not updated.
    pub fn warmup_epoch(&mut self) -> Result<EpochSummary> {
        let n = self.train.labels.len();
        self.run_epoch(Phase::Warmup, SamplePartition::all_clean(n))
    }

    /// One main epoch: identification, prototype seeding on the first main
    /// epoch, then the joint objective.
    pub fn main_epoch(&mut self) -> Result<EpochSummary> {
        let epoch = self.state.epoch + 1;
        let (bank, partition) = self.identify_now(epoch)?;
        if !self.state.model.prototypes_ready {
            let clean = partition.indices(Subset::Clean);
            let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(self.config.seed ^ 0x9207, epoch));
            self.state.model.weights.prototypes = init_prototypes(&bank, &clean, &mut rng);
            self.state.model.prototypes_ready = true;
            debug!("prototypes initialized from {} clean samples", clean.len());
        }
        self.run_epoch(Phase::Main, partition)
    }

    fn run_epoch(&mut self, phase: Phase, partition: SamplePartition) -> Result<EpochSummary> {
        let epoch = self.state.epoch + 1;
        let lr = self.lr_for(epoch);
        let mut rng = self.epoch_rng(epoch);
        let batches = self.batches(&mut rng);
        self.routing.clear();
        let mut acc = LossBreakdown::default();
        let mut batch_losses = Vec::with_capacity(batches.len());
        for (bi, batch) in batches.iter().enumerate() {
            let (breakdown, grads, routing) = self.joint_batch(phase, batch, &partition, &mut rng)?;
            if !breakdown.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    detail: format!("{breakdown:?}"),
                });
            }
            self.state
                .optimizer
                .step(&mut self.state.model, &grads, lr, phase == Phase::Main);
            if !self.state.model.weights.all_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    detail: "weights became non-finite after the update".into(),
                });
            }
            if self.record_routing {
                self.routing.push(routing);
            }
            accumulate(&mut acc, &breakdown);
            batch_losses.push(breakdown.total);
        }
        scale_breakdown(&mut acc, 1.0 / batches.len() as f64);
        self.state.epoch = epoch;
        self.partition = (phase == Phase::Main).then_some(partition.clone());
        Ok(EpochSummary {
            phase,
            lr,
            losses: acc,
            batch_losses,
            partition: (phase == Phase::Main).then_some(partition),
        })
    }

    /// Loss and gradients for one minibatch.
    fn joint_batch(
        &self,
        phase: Phase,
        batch: &[usize],
        partition: &SamplePartition,
        rng: &mut ChaCha8Rng,
    ) -> Result<(LossBreakdown, Weights, BatchRouting)> {
        let hp = &self.config.hyper;
        let model = &self.state.model;
        let warm = phase == Phase::Warmup;
        let ab = if warm {
            Ablation {
                enable_pu: false,
                enable_con: false,
                enable_bcl: true,
            }
        } else {
            self.config.ablation
        };
        let b = batch.len();
        let labels: Vec<usize> = batch.iter().map(|&i| self.train.labels[i]).collect();
        let subsets: Vec<Subset> = batch.iter().map(|&i| partition.assignment[i]).collect();
        let weights: Vec<f64> = batch.iter().map(|&i| partition.weights[i]).collect();

        let x = self.rows(batch);
        let (weak, strong) = make_views(&self.policy, &x, rng);

        // positions within the batch
        let clean_pos: Vec<usize> = (0..b).filter(|&p| subsets[p] == Subset::Clean).collect();
        let close_pos: Vec<usize> = (0..b).filter(|&p| subsets[p] == Subset::Close).collect();
        let use_pu = ab.enable_pu && !close_pos.is_empty();

        let clean_mix = mixup_batch(&weak.select(Axis(0), &clean_pos), hp.mixup_alpha, rng);
        let close_mix = if use_pu {
            Some(mixup_batch(&weak.select(Axis(0), &close_pos), hp.mixup_alpha, rng))
        } else {
            None
        };

        // one forward pass over [weak; strong; clean mix; close mix]
        let n_clean = clean_pos.len();
        let n_close_mix = close_mix.as_ref().map_or(0, |m| m.mixed.nrows());
        let mut parts: Vec<ArrayView2<f64>> = vec![weak.view(), strong.view()];
        if n_clean > 0 {
            parts.push(clean_mix.mixed.view());
        }
        if let Some(m) = &close_mix {
            parts.push(m.mixed.view());
        }
        let input = ndarray::concatenate(Axis(0), &parts).expect("same width");
        let trace = model.trace(input.view())?;
        let rows_total = input.nrows();
        let clean_off = 2 * b;
        let close_off = clean_off + n_clean;

        let mut dz = Array2::<f64>::zeros((rows_total, trace.z.ncols()));
        let mut dlogits = Array2::<f64>::zeros((rows_total, model.classes()));
        let mut grads = model.weights.zeros_like();
        let mut per_sample = vec![SampleLosses::default(); b];
        for (p, s) in per_sample.iter_mut().enumerate() {
            s.subset = Some(subsets[p]);
        }
        let mut routing = BatchRouting::default();
        let protos = &model.weights.prototypes;
        let tau = hp.tau;
        let use_proto = !warm && model.prototypes_ready;

        // contrastive loss over both views of every sample
        if ab.enable_bcl && hp.lambda_bcl > 0.0 {
            let z2 = trace.z.slice(s![..2 * b, ..]).to_owned();
            let bcl = bcl_per_sample(&z2, &labels, &weights, tau);
            bcl_loss_grad(&z2, &labels, &weights, tau, dz.slice_mut(s![..2 * b, ..]), hp.lambda_bcl);
            for (p, v) in bcl.into_iter().enumerate() {
                per_sample[p].bcl = v;
            }
            routing.bcl = batch.to_vec();
        }

        // consistency between strong and weak OVA outputs, clean + closed
        if ab.enable_con && hp.lambda_con > 0.0 {
            let members: Vec<usize> = (0..b).filter(|&p| subsets[p] != Subset::Open).collect();
            let scale = hp.lambda_con / members.len().max(1) as f64;
            for &p in &members {
                let (mut d_weak, mut d_strong) = (Array1::zeros(model.classes()), Array1::zeros(model.classes()));
                per_sample[p].con = consistency_loss_logits(
                    trace.ova_logits.row(b + p),
                    trace.ova_logits.row(p),
                    d_strong.view_mut(),
                    d_weak.view_mut(),
                    scale,
                );
                dlogits.row_mut(p).scaled_add(1.0, &d_weak);
                dlogits.row_mut(b + p).scaled_add(1.0, &d_strong);
                routing.con.push(batch[p]);
            }
        }

        // mixup OVA + prototype loss on clean samples
        if n_clean > 0 {
            let lam = clean_mix.lambda;
            let scale = 1.0 / n_clean as f64;
            for r in 0..n_clean {
                let row = clean_off + r;
                let (pa, pb) = (clean_pos[r], clean_pos[clean_mix.partner[r]]);
                let (ya, yb) = (labels[pa], labels[pb]);
                let logits = trace.ova_logits.row(row).to_owned();
                let mut d = dlogits.row_mut(row);
                let la = ova_loss_logits(logits.view(), ya, d.view_mut(), scale * lam);
                let lb = ova_loss_logits(logits.view(), yb, d.view_mut(), scale * (1.0 - lam));
                per_sample[pa].ova_mix = lam * la + (1.0 - lam) * lb;

                if use_proto {
                    let z = trace.z.row(row);
                    let pl = protos.dot(&z) / tau;
                    let mut dpl = Array1::zeros(pl.len());
                    let la = proto_loss_logits(pl.view(), ya, dpl.view_mut(), scale * lam);
                    let lb = proto_loss_logits(pl.view(), yb, dpl.view_mut(), scale * (1.0 - lam));
                    per_sample[pa].proto_mix = lam * la + (1.0 - lam) * lb;
                    backprop_proto_logits(dpl.view(), z, protos, tau, dz.row_mut(row), &mut grads.prototypes);
                }
                routing.ova_proto.push(batch[pa]);
            }
        }

        // pseudo-label loss on mixed closed-set samples
        if let (Some(mix), true) = (&close_mix, use_proto) {
            let targets: Vec<Array1<f64>> = close_pos
                .iter()
                .map(|&p| {
                    let weak_p = softmax((protos.dot(&trace.z.row(p)) / tau).view());
                    let strong_p = softmax((protos.dot(&trace.z.row(b + p)) / tau).view());
                    let ybar = (weak_p + strong_p) / 2.0;
                    sharpen(ybar.view(), weights[p], hp.sharpen_t)
                })
                .collect();
            let lam = mix.lambda;
            let scale = 1.0 / n_close_mix as f64;
            for r in 0..n_close_mix {
                let row = close_off + r;
                let (ra, rb) = (r, mix.partner[r]);
                let z = trace.z.row(row);
                let pl = protos.dot(&z) / tau;
                let mut dpl = Array1::zeros(pl.len());
                let la = pu_loss_logits(pl.view(), targets[ra].view(), dpl.view_mut(), scale * lam);
                let lb = pu_loss_logits(pl.view(), targets[rb].view(), dpl.view_mut(), scale * (1.0 - lam));
                per_sample[close_pos[ra]].pu_mix = lam * la + (1.0 - lam) * lb;
                backprop_proto_logits(dpl.view(), z, protos, tau, dz.row_mut(row), &mut grads.prototypes);
                routing.pu.push(batch[close_pos[ra]]);
            }
        }

        let lambda_con = if ab.enable_con { hp.lambda_con } else { 0.0 };
        let lambda_bcl = if ab.enable_bcl { hp.lambda_bcl } else { 0.0 };
        let breakdown = total_loss(&per_sample, lambda_con, lambda_bcl)?;
        model.backward(&trace, &dz, &dlogits, &mut grads);
        Ok((breakdown, grads, routing))
    }

    /// Softmax cross-entropy on the weak view of every sample.
    fn cross_entropy_epoch(&mut self) -> Result<EpochSummary> {
        let epoch = self.state.epoch + 1;
        let lr = self.lr_for(epoch);
        let mut rng = self.epoch_rng(epoch);
        let batches = self.batches(&mut rng);
        let mut total = 0.0;
        let mut batch_losses = Vec::with_capacity(batches.len());
        for (bi, batch) in batches.iter().enumerate() {
            let model = &self.state.model;
            let x = self.rows(batch);
            let (weak, _) = make_views(&self.policy, &x, &mut rng);
            let trace = model.trace(weak.view())?;
            let mut dlogits = Array2::zeros(trace.ova_logits.raw_dim());
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for (r, &i) in batch.iter().enumerate() {
                loss += scale
                    * proto_loss_logits(trace.ova_logits.row(r), self.train.labels[i], dlogits.row_mut(r), scale);
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    detail: format!("cross-entropy {loss}"),
                });
            }
            let mut grads = model.weights.zeros_like();
            let dz = Array2::zeros(trace.z.raw_dim());
            model.backward(&trace, &dz, &dlogits, &mut grads);
            self.state.optimizer.step(&mut self.state.model, &grads, lr, false);
            total += loss;
            batch_losses.push(loss);
        }
        self.state.epoch = epoch;
        let mean = total / batches.len() as f64;
        Ok(EpochSummary {
            phase: Phase::Baseline,
            lr,
            losses: LossBreakdown {
                l_ova: mean,
                total: mean,
                ..Default::default()
            },
            batch_losses,
            partition: None,
        })
    }
}

fn accumulate(acc: &mut LossBreakdown, b: &LossBreakdown) {
    acc.l_proto += b.l_proto;
    acc.l_ova += b.l_ova;
    acc.l_pu += b.l_pu;
    acc.l_con += b.l_con;
    acc.l_bcl += b.l_bcl;
    acc.total += b.total;
}

fn scale_breakdown(acc: &mut LossBreakdown, k: f64) {
    acc.l_proto *= k;
    acc.l_ova *= k;
    acc.l_pu *= k;
    acc.l_con *= k;
    acc.l_bcl *= k;
    acc.total *= k;
}
