//! Brute-force reference implementations on plain vectors. Written
//! directly from the definitions without sharing code with the library.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `-P_y.z/tau + log sum_c exp(P_c.z/tau)`.
pub fn proto(z: &[f64], y: usize, protos: &[Vec<f64>], tau: f64) -> f64 {
    let mut sum = 0.0;
    for p in protos {
        sum += (dot(p, z) / tau).exp();
    }
    -dot(&protos[y], z) / tau + sum.ln()
}

/// `probs[c] = (p(z=0), p(z=1))`.
pub fn ova(probs: &[(f64, f64)], y: usize) -> f64 {
    let mut loss = -probs[y].1.max(1e-12).ln();
    for (j, p) in probs.iter().enumerate() {
        if j != y {
            loss -= p.0.max(1e-12).ln();
        }
    }
    loss
}

pub fn ova_from_logits(logits: &[f64], y: usize) -> f64 {
    let probs: Vec<(f64, f64)> = logits.iter().map(|&a| (sig(-a), sig(a))).collect();
    ova(&probs, y)
}

/// Two-view contrastive loss. `z` has `2B` rows: row `r` is a view of
/// sample `r % B`. Class terms carry `w_i * w_j` as a factor.
pub fn bcl(z: &[Vec<f64>], labels: &[usize], w: &[f64], tau: f64) -> f64 {
    let b = labels.len();
    let n = 2 * b;
    if b < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..n {
        let i = a % b;
        let mut denom = 0.0;
        for r in 0..n {
            if r != a {
                denom += (dot(&z[a], &z[r]) / tau).exp();
            }
        }
        let twin = if a < b { a + b } else { a - b };
        let mut loss = -((dot(&z[a], &z[twin]) / tau).exp() / denom).ln();
        let mut count = 0;
        for r in 0..n {
            let j = r % b;
            if j == i || labels[j] != labels[i] {
                continue;
            }
            count += 1;
            loss -= w[i] * w[j] * ((dot(&z[a], &z[r]) / tau).exp() / denom).ln();
        }
        total += loss / (1.0 + count as f64);
    }
    total / n as f64
}

/// Mean over samples of `sum_c sum_j (p_s - p_w)^2`; `[sample][class] = (p0, p1)`.
pub fn consistency(strong: &[Vec<(f64, f64)>], weak: &[Vec<(f64, f64)>]) -> f64 {
    let mut total = 0.0;
    for i in 0..strong.len() {
        for c in 0..strong[i].len() {
            let d0 = strong[i][c].0 - weak[i][c].0;
            let d1 = strong[i][c].1 - weak[i][c].1;
            total += d0 * d0 + d1 * d1;
        }
    }
    total / strong.len() as f64
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn sharpen(ybar: &[f64], w: f64, t: f64) -> Vec<f64> {
    let p: Vec<f64> = ybar.iter().map(|y| y.powf(w / t)).collect();
    let s: f64 = p.iter().sum();
    p.iter().map(|x| x / s).collect()
}

pub fn pu(logits: &[f64], ybar: &[f64], w: f64, t: f64) -> f64 {
    let p = softmax(logits);
    let q = sharpen(ybar, w, t);
    let mut s = 0.0;
    for c in 0..p.len() {
        s += (p[c] - q[c]) * (p[c] - q[c]);
    }
    s
}

/// `(#open > known + #ties / 2) / (n_open * n_known)` by exhaustive pairs.
pub fn auroc_pairs(known: &[f64], open: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &o in open {
        for &k in known {
            if o > k {
                twice += 2;
            } else if o == k {
                twice += 1;
            }
        }
    }
    (twice as f64 / 2.0) / (open.len() as f64 * known.len() as f64)
}

/// Sweeps every observed score as a threshold and keeps the largest one
/// whose open-set recall (`score >= t`) is at least 95%.
pub fn fpr95_sweep(known: &[f64], open: &[f64]) -> f64 {
    let mut best: Option<f64> = None;
    for &t in known.iter().chain(open) {
        let hits = open.iter().filter(|&&o| o >= t).count();
        if hits as f64 >= 0.95 * open.len() as f64 - 1e-9 && best.is_none_or(|b| t > b) {
            best = Some(t);
        }
    }
    let t = best.expect("the smallest observed score always qualifies");
    known.iter().filter(|&&k| k >= t).count() as f64 / known.len() as f64
}

/// The `k` rows most cosine-similar to row `i`, most similar first, ties
/// by index, computed with an O(N^2) scan.
pub fn knn(z: &[Vec<f64>], i: usize, k: usize) -> Vec<usize> {
    let norm = |v: &[f64]| dot(v, v).sqrt();
    let mut cands: Vec<(f64, usize)> = Vec::new();
    for j in 0..z.len() {
        if j != i {
            cands.push((dot(&z[i], &z[j]) / (norm(&z[i]) * norm(&z[j])), j));
        }
    }
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    cands.into_iter().take(k).map(|c| c.1).collect()
}
