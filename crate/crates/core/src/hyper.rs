//! Training hyper-parameters.
//!
//! Defaults suit large training sets. Small runs override `neighbors`, the
//! epoch counts and usually the network width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Temperature for prototype logits, contrastive similarities and
    /// neighbor weights.
    pub tau: f64,
    /// Sharpening temperature of the pseudo-label target.
    pub sharpen_t: f64,
    /// Number of competing classes averaged in the neighbor margin.
    pub top_k: usize,
    /// Number of nearest neighbors aggregated into the neighbor label.
    pub neighbors: usize,
    /// Beta(alpha, alpha) parameter of mixup.
    pub mixup_alpha: f64,
    /// Fraction of the per-class consistency degree kept as clean.
    pub alpha_id: f64,
    /// Fraction of the training set filtered as open-set noise.
    pub alpha_ood: f64,
    pub lambda_con: f64,
    pub lambda_bcl: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            tau: 0.1,
            sharpen_t: 0.5,
            top_k: 3,
            neighbors: 200,
            mixup_alpha: 1.0,
            alpha_id: 0.9,
            alpha_ood: 0.1,
            lambda_con: 0.5,
            lambda_bcl: 0.3,
            warmup_epochs: 50,
            total_epochs: 300,
            batch_size: 128,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl HyperParams {
    /// `K = 1` is used for asymmetric noise, `K = 3` for symmetric.
    pub fn for_asymmetric_noise(mut self) -> Self {
        self.top_k = 1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidSpec(msg.to_string()));
        if !(self.tau > 0.0) {
            return fail("tau must be > 0");
        }
        if !(self.sharpen_t > 0.0) {
            return fail("sharpen_t must be > 0");
        }
        if !(self.alpha_id > 0.0 && self.alpha_id <= 1.0) {
            return fail("alpha_id must be in (0, 1]");
        }
        if !(self.alpha_ood >= 0.0 && self.alpha_ood < 1.0) {
            return fail("alpha_ood must be in [0, 1)");
        }
        if self.top_k < 1 {
            return fail("top_k must be >= 1");
        }
        if self.neighbors < 1 {
            return fail("neighbors must be >= 1");
        }
        if !(self.mixup_alpha > 0.0) {
            return fail("mixup_alpha must be > 0");
        }
        if self.warmup_epochs > self.total_epochs {
            return fail("warmup_epochs must not exceed total_epochs");
        }
        if self.total_epochs == 0 {
            return fail("total_epochs must be >= 1");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be >= 2");
        }
        if !(self.lr >= 0.0) || !(self.momentum >= 0.0) || !(self.weight_decay >= 0.0) {
            return fail("lr, momentum and weight_decay must be non-negative");
        }
        if !(self.lambda_con >= 0.0) || !(self.lambda_bcl >= 0.0) {
            return fail("loss weights must be non-negative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        HyperParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            HyperParams { tau: 0.0, ..Default::default() },
            HyperParams { alpha_id: 0.0, ..Default::default() },
            HyperParams { alpha_ood: 1.0, ..Default::default() },
            HyperParams { top_k: 0, ..Default::default() },
            HyperParams { warmup_epochs: 10, total_epochs: 5, ..Default::default() },
        ];
        for h in bad {
            assert!(h.validate().is_err(), "{h:?}");
        }
    }

    #[test]
    fn asymmetric_uses_single_competitor() {
        assert_eq!(HyperParams::default().for_asymmetric_noise().top_k, 1);
    }
}
