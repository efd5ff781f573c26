//! Margin-based sample identification.
//!
//! Once per epoch the whole training set is embedded into an
//! [`EmbeddingBank`]. Neighbor labels aggregate the OVA positive
//! probabilities of the `k` nearest embeddings; the neighbor margin drives a
//! class-balanced clean selection and the closed-set weights, and the
//! negative margin filters open-set noise among the remaining samples.

use std::io::Write;
use std::path::Path;

use log::warn;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::nets::{normalize_rows, sigmoid, ModelBundle};
use crate::noisegen::NoiseTag;

/// Rows per block when computing pairwise similarities.
const SIM_BLOCK: usize = 256;
/// Slack for floating-point budgets such as `ceil(0.7 * 10)`.
const BUDGET_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Clean,
    Close,
    Open,
}

/// Per-epoch snapshot of the training set in embedding and OVA space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    /// `N x d`, unit rows.
    pub z: Array2<f64>,
    /// `N x C`, `p^c(z=1 | x_i)`.
    pub ova_pos: Array2<f64>,
    pub labels: Vec<usize>,
    pub epoch: usize,
}

impl EmbeddingBank {
    pub fn new(z: Array2<f64>, ova_pos: Array2<f64>, labels: Vec<usize>, epoch: usize) -> Result<Self> {
        if z.nrows() != ova_pos.nrows() || z.nrows() != labels.len() {
            return Err(Error::Contract(format!(
                "bank rows disagree: z {}, ova {}, labels {}",
                z.nrows(),
                ova_pos.nrows(),
                labels.len()
            )));
        }
        let c = ova_pos.ncols();
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::ClassIndex { index: bad, len: c });
        }
        Ok(EmbeddingBank { z, ova_pos, labels, epoch })
    }

    /// Embeds `x` with the model in evaluation mode (no augmentation).
    pub fn build(model: &ModelBundle, x: ArrayView2<f64>, labels: Vec<usize>, epoch: usize) -> Result<Self> {
        let (z, logits) = model.embed(x, 512)?;
        EmbeddingBank::new(z, logits.mapv(sigmoid), labels, epoch)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.ova_pos.ncols()
    }

    /// `p^c(z=0 | x_i)` for every class.
    pub fn ova_neg(&self, i: usize) -> Array1<f64> {
        self.ova_pos.row(i).mapv(|p| 1.0 - p)
    }

    fn clamp_k(&self, k: usize) -> usize {
        let max = self.len().saturating_sub(1);
        if k > max {
            warn!("k = {k} exceeds N - 1 = {max}; clamping");
        }
        k.min(max)
    }

    /// The `k` most cosine-similar other rows, most similar first; ties go
    /// to the smaller index.
    pub fn nearest(&self, i: usize, k: usize) -> Vec<usize> {
        let k = self.clamp_k(k);
        let sims = self.z.dot(&self.z.row(i));
        top_k(sims.view(), i, k)
    }

    /// Neighbor lists for every row.
    pub fn nearest_all(&self, k: usize) -> Vec<Vec<usize>> {
        let k = self.clamp_k(k);
        let n = self.len();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + SIM_BLOCK).min(n);
            let sims = self.z.slice(s![start..end, ..]).dot(&self.z.t());
            for (off, row) in sims.axis_iter(Axis(0)).enumerate() {
                out.push(top_k(row, start + off, k));
            }
            start = end;
        }
        out
    }
}

fn top_k(sims: ArrayView1<f64>, exclude: usize, k: usize) -> Vec<usize> {
    let order = |&a: &usize, &b: &usize| sims[b].total_cmp(&sims[a]).then(a.cmp(&b));
    let mut idx: Vec<usize> = (0..sims.len()).filter(|&j| j != exclude).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    idx
}

/// Neighbor label from an explicit neighbor list: softmax(z_i.z_j / tau)
/// weighted sum of the neighbors' positive OVA probabilities.
pub fn neighbor_label_from(bank: &EmbeddingBank, i: usize, neighbors: &[usize], tau: f64) -> Array1<f64> {
    let c = bank.classes();
    if neighbors.is_empty() {
        return Array1::zeros(c);
    }
    let logits: Vec<f64> = neighbors.iter().map(|&j| bank.z.row(i).dot(&bank.z.row(j)) / tau).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = e.iter().sum();
    let mut q = Array1::zeros(c);
    for (&j, w) in neighbors.iter().zip(&e) {
        q.scaled_add(w / total, &bank.ova_pos.row(j));
    }
    q
}

pub fn neighbor_label(bank: &EmbeddingBank, i: usize, k: usize, tau: f64) -> Array1<f64> {
    neighbor_label_from(bank, i, &bank.nearest(i, k), tau)
}

/// Neighbor labels for every sample, `N x C`.
pub fn neighbor_labels(bank: &EmbeddingBank, k: usize, tau: f64) -> Array2<f64> {
    let lists = bank.nearest_all(k);
    let mut q = Array2::zeros((bank.len(), bank.classes()));
    for (i, nb) in lists.iter().enumerate() {
        q.row_mut(i).assign(&neighbor_label_from(bank, i, nb, tau));
    }
    q
}

/// `q^y - mean of the K largest q^j, j != y`.
pub fn neighbor_margin(q: ArrayView1<f64>, y: usize, top: usize) -> f64 {
    let mut others: Vec<f64> = q.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, &v)| v).collect();
    if others.is_empty() {
        return q[y];
    }
    let k = top.clamp(1, others.len());
    others.sort_unstable_by(|a, b| b.total_cmp(a));
    q[y] - others[..k].iter().sum::<f64>() / k as f64
}

/// Index of the largest entry; ties go to the smaller index.
pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanSelection {
    /// Ascending sample indices.
    pub clean: Vec<usize>,
    /// Per class, the smallest selected margin.
    pub cutoffs: Vec<Option<f64>>,
    /// Per class, how many samples have a neighbor label equal to the given
    /// label.
    pub consistency: Vec<usize>,
}

/// Class-balanced clean selection. For each class `c` the budget is
/// `ceil(alpha_id * n_c)` where `n_c` counts samples of class `c` whose
/// neighbor-label argmax is `c`; the budget is filled with the class's
/// highest-margin samples. A class with `n_c = 0` still keeps its single
/// best sample.
pub fn select_clean(
    margins: &[f64],
    labels: &[usize],
    neighbor_argmax: &[usize],
    alpha_id: f64,
    classes: usize,
) -> CleanSelection {
    assert_eq!(margins.len(), labels.len());
    assert_eq!(neighbor_argmax.len(), labels.len());
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    let mut consistency = vec![0usize; classes];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
        if neighbor_argmax[i] == y {
            consistency[y] += 1;
        }
    }
    let mut clean = Vec::new();
    let mut cutoffs = vec![None; classes];
    for c in 0..classes {
        if members[c].is_empty() {
            continue;
        }
        let budget = if consistency[c] == 0 {
            warn!("class {c} has no label-consistent samples; keeping its best sample");
            1
        } else {
            ((alpha_id * consistency[c] as f64 - BUDGET_SLACK).ceil() as usize).max(1)
        };
        let ranked = &mut members[c];
        ranked.sort_by(|&a, &b| margins[b].total_cmp(&margins[a]).then(a.cmp(&b)));
        let take = budget.min(ranked.len());
        cutoffs[c] = Some(margins[ranked[take - 1]]);
        clean.extend_from_slice(&ranked[..take]);
    }
    clean.sort_unstable();
    CleanSelection {
        clean,
        cutoffs,
        consistency,
    }
}

/// `|p^y(z=0) - max_{j != y} p^j(z=0)|`.
pub fn negative_margin(neg: ArrayView1<f64>, y: usize) -> f64 {
    let max_other = neg
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_other == f64::NEG_INFINITY {
        return 1.0;
    }
    (neg[y] - max_other).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenSelection {
    /// Ascending sample indices.
    pub open: Vec<usize>,
    /// Largest selected negative margin.
    pub cutoff: Option<f64>,
}

/// Takes the `floor(alpha_ood * N)` non-clean samples with the smallest
/// negative margins (ties by index).
pub fn select_open(neg_margins: &[f64], is_clean: &[bool], alpha_ood: f64) -> OpenSelection {
    assert_eq!(neg_margins.len(), is_clean.len());
    let n = neg_margins.len();
    let quota = ((alpha_ood * n as f64 + BUDGET_SLACK).floor() as usize).min(n);
    let mut candidates: Vec<usize> = (0..n).filter(|&i| !is_clean[i]).collect();
    if quota > candidates.len() {
        warn!("open-set quota {quota} exceeds {} non-clean samples; taking all", candidates.len());
    }
    candidates.sort_by(|&a, &b| neg_margins[a].total_cmp(&neg_margins[b]).then(a.cmp(&b)));
    candidates.truncate(quota);
    let cutoff = candidates.last().map(|&i| neg_margins[i]);
    candidates.sort_unstable();
    OpenSelection {
        open: candidates,
        cutoff,
    }
}

/// 1 on clean, 0 on open, `(M_i + 1) / (M_max + 1)` on closed-set samples,
/// where `M_max` is taken over every sample.
pub fn assign_weights(assignment: &[Subset], margins: &[f64]) -> Vec<f64> {
    assert_eq!(assignment.len(), margins.len());
    let m_max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom = m_max + 1.0;
    let degenerate = !(denom > 0.0);
    if degenerate && assignment.contains(&Subset::Close) {
        warn!("maximum neighbor margin is -1; closed-set weights set to 0.5");
    }
    assignment
        .iter()
        .zip(margins)
        .map(|(s, &m)| match s {
            Subset::Clean => 1.0,
            Subset::Open => 0.0,
            Subset::Close if degenerate => 0.5,
            Subset::Close => ((m + 1.0) / denom).clamp(0.0, 1.0),
        })
        .collect()
}

/// Mean clean embedding per class, normalized. Classes without clean
/// samples or with a vanishing mean get a random unit vector.
pub fn init_prototypes(bank: &EmbeddingBank, clean: &[usize], rng: &mut impl Rng) -> Array2<f64> {
    let (c, d) = (bank.classes(), bank.z.ncols());
    let mut sums = Array2::<f64>::zeros((c, d));
    for &i in clean {
        sums.row_mut(bank.labels[i]).scaled_add(1.0, &bank.z.row(i));
    }
    for degenerate in normalize_rows(&mut sums) {
        warn!("class {degenerate}: clean embeddings cancel; using a random prototype");
        let mut v: Array1<f64> = Array1::from_shape_simple_fn(d, || StandardNormal.sample(rng));
        v /= v.dot(&v).sqrt();
        sums.row_mut(degenerate).assign(&v);
    }
    sums
}

/// Result of one identification pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePartition {
    pub assignment: Vec<Subset>,
    pub weights: Vec<f64>,
    pub neighbor_margins: Vec<f64>,
    pub negative_margins: Vec<f64>,
    pub class_cutoffs: Vec<Option<f64>>,
    pub negative_cutoff: Option<f64>,
}

impl SamplePartition {
    /// Warm-up state: every sample clean with weight 1.
    pub fn all_clean(n: usize) -> Self {
        SamplePartition {
            assignment: vec![Subset::Clean; n],
            weights: vec![1.0; n],
            neighbor_margins: vec![0.0; n],
            negative_margins: vec![0.0; n],
            class_cutoffs: Vec::new(),
            negative_cutoff: None,
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn indices(&self, subset: Subset) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == subset).collect()
    }

    pub fn count(&self, subset: Subset) -> usize {
        self.assignment.iter().filter(|&&s| s == subset).count()
    }
}

/// Full identification pass over a bank.
pub fn identify(bank: &EmbeddingBank, hp: &HyperParams) -> SamplePartition {
    let n = bank.len();
    let c = bank.classes();
    let q = neighbor_labels(bank, hp.neighbors, hp.tau);
    let neighbor_margins: Vec<f64> = (0..n).map(|i| neighbor_margin(q.row(i), bank.labels[i], hp.top_k)).collect();
    let argmaxes: Vec<usize> = (0..n).map(|i| argmax(q.row(i))).collect();
    let clean = select_clean(&neighbor_margins, &bank.labels, &argmaxes, hp.alpha_id, c);

    let negative_margins: Vec<f64> = (0..n).map(|i| negative_margin(bank.ova_neg(i).view(), bank.labels[i])).collect();
    let mut is_clean = vec![false; n];
    for &i in &clean.clean {
        is_clean[i] = true;
    }
    let open = select_open(&negative_margins, &is_clean, hp.alpha_ood);

    let mut assignment: Vec<Subset> = is_clean
        .iter()
        .map(|&c| if c { Subset::Clean } else { Subset::Close })
        .collect();
    for &i in &open.open {
        assignment[i] = Subset::Open;
    }
    let weights = assign_weights(&assignment, &neighbor_margins);
    SamplePartition {
        assignment,
        weights,
        neighbor_margins,
        negative_margins,
        class_cutoffs: clean.cutoffs,
        negative_cutoff: open.cutoff,
    }
}

/// One line of the identification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationRecord {
    pub index: usize,
    #[serde(rename = "M_Neigh")]
    pub neighbor_margin: f64,
    #[serde(rename = "M_Neg")]
    pub negative_margin: f64,
    pub partition: Subset,
    pub weight: f64,
    pub noise_tag: NoiseTag,
}

/// Writes one JSON object per training sample.
pub fn write_identification_report(path: &Path, partition: &SamplePartition, tags: &[NoiseTag]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for i in 0..partition.len() {
        let rec = IdentificationRecord {
            index: i,
            neighbor_margin: partition.neighbor_margins[i],
            negative_margin: partition.negative_margins[i],
            partition: partition.assignment[i],
            weight: partition.weights[i],
            noise_tag: tags[i],
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::format(path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    fn bank_from(z: Array2<f64>, pos: Array2<f64>, labels: Vec<usize>) -> EmbeddingBank {
        let mut z = z;
        normalize_rows(&mut z);
        EmbeddingBank::new(z, pos, labels, 0).unwrap()
    }

    #[test]
    fn neighbor_label_equal_neighbors() {
        // three neighbors at the same angle from row 0, all one-hot at class 2
        let z = arr2(&[[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 1.0, 0.0], [1.0, 0.0, 0.0, 1.0]]);
        let pos = arr2(&[[0.3, 0.3, 0.3], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]);
        let b = bank_from(z, pos, vec![0, 2, 2, 2]);
        let q = neighbor_label(&b, 0, 3, 0.1);
        close(q[0], 0.0);
        close(q[2], 1.0);
    }

    #[test]
    fn neighbor_label_k1_is_nearest_row() {
        let z = arr2(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]]);
        let pos = arr2(&[[0.5, 0.5], [0.7, 0.2], [0.1, 0.9]]);
        let b = bank_from(z, pos, vec![0, 0, 1]);
        let q = neighbor_label(&b, 0, 1, 0.1);
        assert_eq!(q, b.ova_pos.row(1).to_owned());
    }

    #[test]
    fn k_is_clamped() {
        let z = arr2(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]]);
        let pos = arr2(&[[0.5, 0.5], [0.7, 0.2], [0.1, 0.9]]);
        let b = bank_from(z, pos, vec![0, 0, 1]);
        assert_eq!(b.nearest(0, 10), vec![1, 2]);
        assert_eq!(b.nearest_all(10)[2], vec![1, 0]);
    }

    #[test]
    fn neighbor_margin_values() {
        close(neighbor_margin(arr1(&[0.0, 1.0, 0.0]).view(), 1, 2), 1.0);
        close(neighbor_margin(arr1(&[0.0, 1.0, 0.0]).view(), 0, 1), -1.0);
        close(neighbor_margin(arr1(&[0.5, 0.3, 0.2]).view(), 0, 2), 0.25);
    }

    #[test]
    fn select_clean_all_consistent_full_budget() {
        let margins = vec![0.5, 0.2, 0.9, 0.1];
        let labels = vec![0, 0, 1, 1];
        let sel = select_clean(&margins, &labels, &labels, 1.0, 2);
        assert_eq!(sel.clean, vec![0, 1, 2, 3]);
    }

    #[test]
    fn select_clean_tiny_alpha_keeps_one_per_class() {
        let margins = vec![0.5, 0.2, 0.9, 0.1, 0.3];
        let labels = vec![0, 0, 1, 1, 1];
        let sel = select_clean(&margins, &labels, &labels, 1e-9, 2);
        assert_eq!(sel.clean, vec![0, 2]);
        assert_eq!(sel.cutoffs, vec![Some(0.5), Some(0.9)]);
    }

    #[test]
    fn select_clean_floor_rule_for_inconsistent_class() {
        let margins = vec![-0.5, -0.2, 0.9];
        let labels = vec![0, 0, 1];
        let argmax = vec![1, 1, 1];
        let sel = select_clean(&margins, &labels, &argmax, 0.9, 2);
        assert_eq!(sel.clean, vec![1, 2]);
        assert_eq!(sel.consistency, vec![0, 1]);
    }

    #[test]
    fn negative_margin_values() {
        close(negative_margin(arr1(&[0.9, 0.9, 0.1]).view(), 0), 0.0);
        close(negative_margin(arr1(&[0.0, 1.0]).view(), 0), 1.0);
        close(negative_margin(arr1(&[0.7, 0.9, 0.4]).view(), 0), 0.2);
    }

    #[test]
    fn select_open_edge_cases() {
        let m = vec![0.1, 0.5, 0.05, 0.3];
        assert!(select_open(&m, &[false; 4], 0.0).open.is_empty());
        assert!(select_open(&m, &[true; 4], 0.5).open.is_empty());
        let sel = select_open(&m, &[false, false, true, false], 0.5);
        assert_eq!(sel.open, vec![0, 3]);
        assert_eq!(sel.cutoff, Some(0.3));
    }

    #[test]
    fn weights_follow_subsets() {
        let a = [Subset::Clean, Subset::Close, Subset::Close, Subset::Open];
        let w = assign_weights(&a, &[0.8, 0.2, -1.0, 0.0]);
        close(w[0], 1.0);
        close(w[1], 1.2 / 1.8);
        close(w[2], 0.0);
        close(w[3], 0.0);
        let top = assign_weights(&[Subset::Close], &[0.4]);
        close(top[0], 1.0);
        let degenerate = assign_weights(&[Subset::Close, Subset::Close], &[-1.0, -1.0]);
        assert_eq!(degenerate, vec![0.5, 0.5]);
    }

    #[test]
    fn prototypes_from_clean_means() {
        let z = arr2(&[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [1.0, 1.0]]);
        let pos = Array2::from_elem((4, 2), 0.5);
        let b = bank_from(z, pos, vec![0, 1, 1, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = init_prototypes(&b, &[0, 1], &mut rng);
        assert_eq!(p.row(0), b.z.row(0));
        assert_eq!(p.row(1), b.z.row(1));

        // mean of rows 1 and 2 of class 1, then normalized
        let p = init_prototypes(&b, &[0, 1, 2], &mut rng);
        let m = (&b.z.row(1) + &b.z.row(2)) / 2.0;
        let m = &m / m.dot(&m).sqrt();
        close(p[[1, 0]], m[0]);
        close(p[[1, 1]], m[1]);
    }

    #[test]
    fn antipodal_clean_embeddings_fall_back() {
        let z = arr2(&[[1.0, 0.0], [-1.0, 0.0]]);
        let pos = Array2::from_elem((2, 1), 0.5);
        let b = bank_from(z, pos, vec![0, 0]);
        let p = init_prototypes(&b, &[0, 1], &mut ChaCha8Rng::seed_from_u64(1));
        let norm = p.row(0).dot(&p.row(0)).sqrt();
        close(norm, 1.0);
    }
}
