//! Classification accuracy, OOD scoring, AUROC / FPR95 and selection
//! audits against hidden noise tags.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identify::{argmax, Subset};
use crate::losses::{softmax, LossBreakdown};
use crate::nets::{proto_logits, sigmoid, ModelBundle};
use crate::noisegen::NoiseTag;

/// Open-set recall at which FPR is reported.
pub const FPR_RECALL: f64 = 0.95;

/// Predicted class: argmax of `p^c(z=1)`, smallest id on ties.
pub fn classify(ova_pos: ArrayView1<f64>) -> usize {
    argmax(ova_pos)
}

/// OOD score from one sample's prototype logits and OVA negative
/// probabilities: the negative probability of the prototype-predicted class.
pub fn ood_score_from(proto_logits: ArrayView1<f64>, ova_neg: ArrayView1<f64>) -> f64 {
    ova_neg[argmax(proto_logits)]
}

/// Prototype-routed OOD scores for every row of `x`. Higher means more
/// open-set-like.
pub fn ood_score(model: &ModelBundle, x: ArrayView2<f64>, tau: f64) -> Result<Array1<f64>> {
    if !model.prototypes_ready {
        return Err(Error::Contract("OOD score requested before prototype initialization".into()));
    }
    let (z, logits) = model.embed(x, 512)?;
    let pl = proto_logits(&z, &model.weights.prototypes, tau);
    Ok(Array1::from_iter((0..x.nrows()).map(|i| {
        let neg = logits.row(i).mapv(|a| sigmoid(-a));
        ood_score_from(pl.row(i), neg.view())
    })))
}

/// Area under the ROC curve with open-set samples as positives:
/// `P(open > known) + P(open == known) / 2`, via mid-ranks.
pub fn auroc(known: &[f64], open: &[f64]) -> Result<f64> {
    if known.is_empty() || open.is_empty() {
        return Err(Error::UndefinedMetric("AUROC needs known and open scores"));
    }
    let mut all: Vec<(f64, bool)> = known
        .iter()
        .map(|&s| (s, false))
        .chain(open.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        let positives = all[i..=j].iter().filter(|x| x.1).count();
        rank_sum += mid * positives as f64;
        i = j + 1;
    }
    let (np, nn) = (open.len() as f64, known.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// False-positive rate on known samples at the largest threshold that
/// still flags at least 95% of open samples (`score >= threshold`).
pub fn fpr95(known: &[f64], open: &[f64]) -> Result<f64> {
    if known.is_empty() || open.is_empty() {
        return Err(Error::UndefinedMetric("FPR95 needs known and open scores"));
    }
    let mut desc = open.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let needed = ((FPR_RECALL * desc.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let threshold = desc[needed - 1];
    Ok(known.iter().filter(|&&s| s >= threshold).count() as f64 / known.len() as f64)
}

/// Precision and recall of each identified subset against hidden tags.
/// `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionAudit {
    pub clean_precision: Option<f64>,
    pub clean_recall: Option<f64>,
    pub close_precision: Option<f64>,
    pub close_recall: Option<f64>,
    pub open_precision: Option<f64>,
    pub open_recall: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn selection_audit(assignment: &[Subset], tags: &[NoiseTag]) -> SelectionAudit {
    assert_eq!(assignment.len(), tags.len());
    let pr = |subset: Subset, tag: NoiseTag| {
        let selected = assignment.iter().filter(|&&s| s == subset).count();
        let actual = tags.iter().filter(|&&t| t == tag).count();
        let hit = assignment.iter().zip(tags).filter(|&(&s, &t)| s == subset && t == tag).count();
        (ratio(hit, selected), ratio(hit, actual))
    };
    let (clean_precision, clean_recall) = pr(Subset::Clean, NoiseTag::Clean);
    let (close_precision, close_recall) = pr(Subset::Close, NoiseTag::Closed);
    let (open_precision, open_recall) = pr(Subset::Open, NoiseTag::Open);
    SelectionAudit {
        clean_precision,
        clean_recall,
        close_precision,
        close_recall,
        open_precision,
        open_recall,
    }
}

/// Which OOD score a model is evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// Negative OVA probability of the prototype-predicted class.
    Prototype,
    /// Negative OVA probability of the OVA-predicted class; used before
    /// prototypes exist.
    OvaArgmax,
    /// One minus the maximum softmax probability of the classifier logits.
    Msp,
}

/// Test-split data in model-ready form.
#[derive(Debug, Clone)]
pub struct TestData {
    pub x: ndarray::Array2<f64>,
    pub true_labels: Vec<usize>,
    pub is_open: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub accuracy: Option<f64>,
    pub auroc: Option<f64>,
    pub fpr95: Option<f64>,
    pub mean_score_known: Option<f64>,
    pub mean_score_open: Option<f64>,
    pub score: ScoreKind,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Accuracy over known-class test samples plus OOD metrics when the test
/// split contains open-set samples.
pub fn evaluate(model: &ModelBundle, test: &TestData, score: ScoreKind, tau: f64) -> Result<TestEvaluation> {
    if test.x.nrows() == 0 {
        return Err(Error::UndefinedMetric("empty test split"));
    }
    if score == ScoreKind::Prototype && !model.prototypes_ready {
        return Err(Error::Contract("prototype score requested before prototype initialization".into()));
    }
    let (z, logits) = model.embed(test.x.view(), 512)?;
    let pl = proto_logits(&z, &model.weights.prototypes, tau);
    let mut known_scores = Vec::new();
    let mut open_scores = Vec::new();
    let (mut correct, mut known) = (0usize, 0usize);
    for i in 0..test.x.nrows() {
        let row = logits.row(i);
        let pos = row.mapv(sigmoid);
        let s = match score {
            ScoreKind::Prototype => ood_score_from(pl.row(i), row.mapv(|a| sigmoid(-a)).view()),
            ScoreKind::OvaArgmax => 1.0 - pos[classify(pos.view())],
            ScoreKind::Msp => 1.0 - softmax(row).fold(0.0, |a: f64, &b| a.max(b)),
        };
        if test.is_open[i] {
            open_scores.push(s);
        } else {
            known += 1;
            if classify(pos.view()) == test.true_labels[i] {
                correct += 1;
            }
            known_scores.push(s);
        }
    }
    let has_both = !known_scores.is_empty() && !open_scores.is_empty();
    Ok(TestEvaluation {
        accuracy: ratio(correct, known),
        auroc: if has_both { Some(auroc(&known_scores, &open_scores)?) } else { None },
        fpr95: if has_both { Some(fpr95(&known_scores, &open_scores)?) } else { None },
        mean_score_known: mean(&known_scores),
        mean_score_open: mean(&open_scores),
        score,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Main,
    Baseline,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub clean: usize,
    pub close: usize,
    pub open: usize,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    #[serde(flatten)]
    pub test: TestEvaluation,
    pub partition: Option<PartitionCounts>,
    pub selection: Option<SelectionAudit>,
    pub losses: LossBreakdown,
}
