use ndarray::Array2;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::noisegen::permutation;

/// Weak and strong perturbations for vector data: additive Gaussian noise,
/// plus coordinate dropout for the strong view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    /// Probability of zeroing each coordinate in the strong view.
    pub strong_dropout: f64,
}

impl AugmentationPolicy {
    pub const NONE: AugmentationPolicy = AugmentationPolicy {
        weak_sigma: 0.0,
        strong_sigma: 0.0,
        strong_dropout: 0.0,
    };

    /// Noise scales proportional to the typical feature standard deviation.
    pub fn for_feature_std(std: f64) -> Self {
        AugmentationPolicy {
            weak_sigma: 0.05 * std,
            strong_sigma: 0.15 * std,
            strong_dropout: 0.2,
        }
    }
}

fn perturb(x: &Array2<f64>, sigma: f64, dropout: f64, rng: &mut impl Rng) -> Array2<f64> {
    let mut out = x.clone();
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("sigma > 0");
        out.mapv_inplace(|v| v + noise.sample(rng));
    }
    if dropout > 0.0 {
        out.mapv_inplace(|v| if rng.random::<f64>() < dropout { 0.0 } else { v });
    }
    out
}

/// Weak and strong views of `batch`, rows in the input order.
pub fn make_views(policy: &AugmentationPolicy, batch: &Array2<f64>, rng: &mut impl Rng) -> (Array2<f64>, Array2<f64>) {
    let weak = perturb(batch, policy.weak_sigma, 0.0, rng);
    let strong = perturb(batch, policy.strong_sigma, policy.strong_dropout, rng);
    (weak, strong)
}

#[derive(Debug, Clone)]
pub struct Mixup {
    pub mixed: Array2<f64>,
    pub lambda: f64,
    /// Row `i` of `mixed` is `lambda * x[i] + (1 - lambda) * x[partner[i]]`.
    pub partner: Vec<usize>,
}

/// Pairs rows by a random permutation and mixes them with one
/// `lambda ~ Beta(alpha, alpha)` for the whole batch.
pub fn mixup_batch(x: &Array2<f64>, alpha: f64, rng: &mut impl Rng) -> Mixup {
    let n = x.nrows();
    if n < 2 {
        return Mixup {
            mixed: x.clone(),
            lambda: 1.0,
            partner: (0..n).collect(),
        };
    }
    let lambda = Beta::new(alpha, alpha).expect("alpha > 0").sample(rng);
    let partner = permutation(n, rng);
    let mixed = mix_rows(x, &partner, lambda);
    Mixup { mixed, lambda, partner }
}

pub(crate) fn mix_rows(x: &Array2<f64>, partner: &[usize], lambda: f64) -> Array2<f64> {
    let mut mixed = x.clone();
    for (i, mut row) in mixed.rows_mut().into_iter().enumerate() {
        row.zip_mut_with(&x.row(partner[i]), |a, &b| *a = lambda * *a + (1.0 - lambda) * b);
    }
    mixed
}
