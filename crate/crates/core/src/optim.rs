use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::nets::{ModelBundle, Weights};

/// Cosine-annealed learning rate for zero-based epoch `e` of `total`.
pub fn cosine_lr(lr0: f64, e: usize, total: usize) -> f64 {
    lr0 * 0.5 * (1.0 + (PI * e as f64 / total as f64).cos())
}

/// SGD with heavy-ball momentum and L2 weight decay on the network
/// tensors. Prototypes get momentum but no decay and are renormalized
/// after every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Weights,
}

impl Sgd {
    pub fn new(model: &ModelBundle, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: model.weights.zeros_like(),
        }
    }

    pub fn step(&mut self, model: &mut ModelBundle, grads: &Weights, lr: f64, update_prototypes: bool) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        let params = model.weights.network_tensors_mut();
        let vel = self.velocity.network_tensors_mut();
        for ((p, v), g) in params.into_iter().zip(vel).zip(grads.network_tensors()) {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            }
        }
        if update_prototypes {
            let v = &mut self.velocity.prototypes;
            v.zip_mut_with(&grads.prototypes, |v, &g| *v = mu * *v + g);
            model.weights.prototypes.scaled_add(-lr, v);
            model.renormalize_prototypes();
        }
    }
}
