//! Training objectives.
//!
//! Each loss has a value function on the quantities the model exposes
//! (probabilities, unit embeddings) and, where training needs it, a
//! gradient routine that accumulates `scale * dL` into caller-owned buffers.
//! Gradients are taken w.r.t. unit embeddings, OVA logits, prototype logits
//! and prototypes.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identify::Subset;
use crate::nets::sigmoid;

/// Floor applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

fn ln_clamped(p: f64) -> f64 {
    p.max(LOG_EPS).ln()
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = logits.mapv(|v| (v - m).exp());
    e /= e.sum();
    e
}

/// Prototype loss: `-P_y.z/tau + log sum_c exp(P_c.z/tau)`.
pub fn proto_loss(z: ArrayView1<f64>, y: usize, prototypes: &Array2<f64>, tau: f64) -> Result<f64> {
    let c = prototypes.nrows();
    if y >= c {
        return Err(Error::ClassIndex { index: y, len: c });
    }
    let logits = prototypes.dot(&z) / tau;
    Ok(log_sum_exp(logits.iter().copied()) - logits[y])
}

/// Cross-entropy of prototype logits against class `y`; returns the value
/// and accumulates `scale * dL/dlogits` into `dlogits`.
pub fn proto_loss_logits(logits: ArrayView1<f64>, y: usize, mut dlogits: ArrayViewMut1<f64>, scale: f64) -> f64 {
    let p = softmax(logits);
    for (c, d) in dlogits.iter_mut().enumerate() {
        *d += scale * (p[c] - if c == y { 1.0 } else { 0.0 });
    }
    log_sum_exp(logits.iter().copied()) - logits[y]
}

/// Chains gradients of prototype logits `P z / tau` into `dz` (one row) and
/// `dprototypes`.
pub fn backprop_proto_logits(
    dlogits: ArrayView1<f64>,
    z: ArrayView1<f64>,
    prototypes: &Array2<f64>,
    tau: f64,
    mut dz: ArrayViewMut1<f64>,
    dprototypes: &mut Array2<f64>,
) {
    for (c, &g) in dlogits.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        dz.scaled_add(g / tau, &prototypes.row(c));
        dprototypes.row_mut(c).scaled_add(g / tau, &z);
    }
}

/// One-vs-all loss from `(C, 2)` probability pairs `[p(z=0), p(z=1)]`:
/// `-log p^y(z=1) - sum_{j != y} log p^j(z=0)`.
pub fn ova_loss(probs: ArrayView2<f64>, y: usize) -> Result<f64> {
    let c = probs.nrows();
    if y >= c {
        return Err(Error::ClassIndex { index: y, len: c });
    }
    Ok((0..c)
        .map(|j| if j == y { -ln_clamped(probs[[j, 1]]) } else { -ln_clamped(probs[[j, 0]]) })
        .sum())
}

/// OVA loss from logits (`p(z=1) = sigmoid(a)`), accumulating the gradient.
pub fn ova_loss_logits(logits: ArrayView1<f64>, y: usize, mut dlogits: ArrayViewMut1<f64>, scale: f64) -> f64 {
    let mut loss = 0.0;
    for (j, &a) in logits.iter().enumerate() {
        // target probability and its derivative sign
        let (p, sign) = if j == y { (sigmoid(a), -1.0) } else { (sigmoid(-a), 1.0) };
        loss -= ln_clamped(p);
        if p > LOG_EPS {
            // d(-log sigmoid(+-a))/da = -+(1 - sigmoid(+-a))
            dlogits[j] += scale * sign * (1.0 - p);
        }
    }
    loss
}

/// Loss mixup: `lambda * L(y_a) + (1 - lambda) * L(y_b)`, where `loss`
/// evaluates the loss of the mixed input against a label.
pub fn mixup_loss<L>(mut loss: impl FnMut(L) -> f64, y_a: L, y_b: L, lambda: f64) -> f64 {
    lambda * loss(y_a) + (1.0 - lambda) * loss(y_b)
}

/// Layout helper for two-view batches: rows `0..B` are the weak views,
/// rows `B..2B` the strong views of the same samples.
#[derive(Debug, Clone, Copy)]
struct TwoView {
    b: usize,
}

impl TwoView {
    fn sample(self, row: usize) -> usize {
        row % self.b
    }

    fn other_view(self, row: usize) -> usize {
        (row + self.b) % (2 * self.b)
    }
}

/// Bi-level contrastive loss over a two-view batch.
///
/// `z` holds `2B` unit embeddings (weak views first). For every anchor the
/// instance term contrasts it with its other view; the class terms cover the
/// views of other samples sharing its given label and are multiplied by
/// `w_i * w_j`. Each anchor is normalized by `1 / (1 + |P(i)|)` and the result
/// is averaged over anchors. Returns the per-sample loss (mean of its two
/// anchors); `bcl_loss` is the mean of these values.
pub fn bcl_per_sample(z: &Array2<f64>, labels: &[usize], weights: &[f64], tau: f64) -> Vec<f64> {
    bcl_impl(z, labels, weights, tau, None)
}

pub fn bcl_loss(z: &Array2<f64>, labels: &[usize], weights: &[f64], tau: f64) -> f64 {
    let per = bcl_per_sample(z, labels, weights, tau);
    if per.is_empty() {
        0.0
    } else {
        per.iter().sum::<f64>() / per.len() as f64
    }
}

/// Value of [`bcl_loss`]; accumulates `scale * dL/dz` into `dz`.
pub fn bcl_loss_grad(
    z: &Array2<f64>,
    labels: &[usize],
    weights: &[f64],
    tau: f64,
    dz: ArrayViewMut2<f64>,
    scale: f64,
) -> f64 {
    let per = bcl_impl(z, labels, weights, tau, Some((dz, scale)));
    if per.is_empty() {
        0.0
    } else {
        per.iter().sum::<f64>() / per.len() as f64
    }
}

fn bcl_impl(
    z: &Array2<f64>,
    labels: &[usize],
    weights: &[f64],
    tau: f64,
    mut grad: Option<(ArrayViewMut2<f64>, f64)>,
) -> Vec<f64> {
    let b = labels.len();
    assert_eq!(z.nrows(), 2 * b, "expected two views per sample");
    assert_eq!(weights.len(), b);
    if b < 2 {
        return vec![0.0; b];
    }
    let layout = TwoView { b };
    let n = 2 * b;
    let sim = z.dot(&z.t()) / tau;
    let mut per_anchor = vec![0.0; n];
    let mut g_row = vec![0.0; n];

    for a in 0..n {
        let i = layout.sample(a);
        let log_denom = log_sum_exp((0..n).filter(|&r| r != a).map(|r| sim[[a, r]]));
        let mut loss = log_denom - sim[[a, layout.other_view(a)]];
        let mut positives = 0usize;
        let mut weight_sum = 1.0;
        g_row.iter_mut().for_each(|g| *g = 0.0);
        g_row[layout.other_view(a)] -= 1.0;
        for r in 0..n {
            let j = layout.sample(r);
            if j == i || labels[j] != labels[i] {
                continue;
            }
            positives += 1;
            let omega = weights[i] * weights[j];
            loss += omega * (log_denom - sim[[a, r]]);
            weight_sum += omega;
            g_row[r] -= omega;
        }
        let norm = 1.0 / (1.0 + positives as f64);
        per_anchor[a] = norm * loss;

        if let Some((dz, scale)) = grad.as_mut() {
            // anchors are averaged: 1 / n
            let k = *scale * norm / n as f64;
            for r in 0..n {
                if r == a {
                    continue;
                }
                let soft = (sim[[a, r]] - log_denom).exp();
                let g = k * (g_row[r] + weight_sum * soft) / tau;
                if g == 0.0 {
                    continue;
                }
                let (za, zr) = (z.row(a).to_owned(), z.row(r).to_owned());
                dz.row_mut(a).scaled_add(g, &zr);
                dz.row_mut(r).scaled_add(g, &za);
            }
        }
    }
    (0..b).map(|i| 0.5 * (per_anchor[i] + per_anchor[i + b])).collect()
}

/// Squared distance between strong- and weak-view OVA probability pairs,
/// summed over classes and both outcomes, averaged over the batch.
pub fn consistency_loss(strong: &Array3<f64>, weak: &Array3<f64>) -> Result<f64> {
    if strong.dim() != weak.dim() || strong.dim().2 != 2 {
        return Err(Error::Contract(format!(
            "consistency shapes differ: {:?} vs {:?}",
            strong.dim(),
            weak.dim()
        )));
    }
    let n = strong.dim().0;
    if n == 0 {
        return Ok(0.0);
    }
    Ok((strong - weak).mapv(|d| d * d).sum() / n as f64)
}

/// Per-sample consistency loss from OVA logits of both views, accumulating
/// gradients into both.
pub fn consistency_loss_logits(
    strong: ArrayView1<f64>,
    weak: ArrayView1<f64>,
    mut d_strong: ArrayViewMut1<f64>,
    mut d_weak: ArrayViewMut1<f64>,
    scale: f64,
) -> f64 {
    let mut loss = 0.0;
    for c in 0..strong.len() {
        let (ps, pw) = (sigmoid(strong[c]), sigmoid(weak[c]));
        let diff = ps - pw;
        // both the z=1 and z=0 components differ by `diff`
        loss += 2.0 * diff * diff;
        d_strong[c] += scale * 4.0 * diff * ps * (1.0 - ps);
        d_weak[c] -= scale * 4.0 * diff * pw * (1.0 - pw);
    }
    loss
}

/// `ybar^(w/T)` renormalized. `w = 0` yields the uniform vector.
pub fn sharpen(ybar: ArrayView1<f64>, w: f64, t: f64) -> Array1<f64> {
    let exponent = w / t;
    let mut out = ybar.mapv(|v| v.max(0.0).powf(exponent));
    let s = out.sum();
    if s > 0.0 && s.is_finite() {
        out /= s;
    } else {
        out.fill(1.0 / ybar.len() as f64);
    }
    out
}

/// Pseudo-label loss: `|softmax(proto_logits) - Sharpen(ybar, w, T)|^2`.
pub fn pu_loss(proto_logits: ArrayView1<f64>, ybar: ArrayView1<f64>, w: f64, t: f64) -> f64 {
    let target = sharpen(ybar, w, t);
    let p = softmax(proto_logits);
    (&p - &target).mapv(|d| d * d).sum()
}

/// `|softmax(logits) - target|^2` with gradient w.r.t. the logits.
pub fn pu_loss_logits(logits: ArrayView1<f64>, target: ArrayView1<f64>, mut dlogits: ArrayViewMut1<f64>, scale: f64) -> f64 {
    let p = softmax(logits);
    let gp = (&p - &target) * 2.0;
    let inner = p.dot(&gp);
    for c in 0..p.len() {
        dlogits[c] += scale * p[c] * (gp[c] - inner);
    }
    (&p - &target).mapv(|d| d * d).sum()
}

/// Per-sample loss values in one minibatch, with the sample's subset.
/// Components that do not apply to the sample are ignored by
/// [`total_loss`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleLosses {
    pub subset: Option<Subset>,
    pub ova_mix: f64,
    pub proto_mix: f64,
    pub pu_mix: f64,
    pub con: f64,
    pub bcl: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_proto: f64,
    pub l_ova: f64,
    pub l_pu: f64,
    pub l_con: f64,
    pub l_bcl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_proto, self.l_ova, self.l_pu, self.l_con, self.l_bcl, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn subset_mean<'a>(items: impl Iterator<Item = &'a SampleLosses>, keep: impl Fn(Subset) -> bool, value: impl Fn(&SampleLosses) -> f64) -> f64 {
    let (sum, n) = items
        .filter(|s| s.subset.is_some_and(&keep))
        .fold((0.0, 0usize), |(s, n), x| (s + value(x), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Combines per-sample losses: OVA and prototype terms over clean samples,
/// pseudo-label over closed-set samples, consistency over both, contrastive
/// over everything. Each term is a mean over its subset.
pub fn total_loss(batch: &[SampleLosses], lambda_con: f64, lambda_bcl: f64) -> Result<LossBreakdown> {
    if let Some(i) = batch.iter().position(|s| s.subset.is_none()) {
        return Err(Error::Contract(format!("batch sample {i} has no partition assignment")));
    }
    let clean = |s: Subset| s == Subset::Clean;
    let l_ova = subset_mean(batch.iter(), clean, |s| s.ova_mix);
    let l_proto = subset_mean(batch.iter(), clean, |s| s.proto_mix);
    let l_pu = subset_mean(batch.iter(), |s| s == Subset::Close, |s| s.pu_mix);
    let l_con = subset_mean(batch.iter(), |s| s != Subset::Open, |s| s.con);
    let l_bcl = subset_mean(batch.iter(), |_| true, |s| s.bcl);
    Ok(LossBreakdown {
        l_proto,
        l_ova,
        l_pu,
        l_con,
        l_bcl,
        total: l_ova + l_proto + l_pu + lambda_con * l_con + lambda_bcl * l_bcl,
    })
}
