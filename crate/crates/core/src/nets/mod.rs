//! Model contract: shared feature extractor, projection head with
//! learnable unit-norm prototypes, and a one-vs-all head.
//!
//! All three parts are small dense networks with hand-written backward
//! passes. Loss code produces gradients with respect to the unit embeddings,
//! the OVA logits and the prototypes; [`ModelBundle::backward`] carries the
//! first two back through the heads and the extractor.

mod augment;

pub use augment::{make_views, mixup_batch, AugmentationPolicy, Mixup};

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm floor used when normalizing embeddings.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Widths of the extractor layers; the last one is the feature width.
    pub hidden: Vec<usize>,
    /// Hidden width of the two-layer projection head.
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 32,
            hidden: vec![128, 128],
            proj_hidden: 128,
            proj_dim: 128,
            classes: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.proj_hidden == 0 || self.proj_dim == 0 {
            return Err(Error::InvalidSpec("layer widths must be > 0".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidSpec("extractor needs at least one non-empty layer".into()));
        }
        if self.classes < 1 {
            return Err(Error::InvalidSpec("need at least one class".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().expect("validated")
    }
}

/// Dense layer `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Linear {
            weight: Array2::from_shape_simple_fn((inputs, outputs), || dist.sample(rng)),
            bias: Array1::from_shape_simple_fn(outputs, || dist.sample(rng)),
        }
    }

    fn zeros_like(&self) -> Self {
        Linear {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&self, x: ArrayView2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

fn relu(mut x: Array2<f64>) -> Array2<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

fn relu_backward(out: &Array2<f64>, mut dy: Array2<f64>) -> Array2<f64> {
    Zip::from(&mut dy).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dy
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Every trainable tensor. Also used as the gradient and momentum buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub backbone: Vec<Linear>,
    pub projection: Vec<Linear>,
    pub ova: Linear,
    /// `classes x proj_dim`, unit rows.
    pub prototypes: Array2<f64>,
}

impl Weights {
    pub fn zeros_like(&self) -> Self {
        Weights {
            backbone: self.backbone.iter().map(Linear::zeros_like).collect(),
            projection: self.projection.iter().map(Linear::zeros_like).collect(),
            ova: self.ova.zeros_like(),
            prototypes: Array2::zeros(self.prototypes.raw_dim()),
        }
    }

    /// Network tensors (everything except the prototypes) in a fixed order.
    pub fn network_tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in self.backbone.iter().chain(&self.projection).chain([&self.ova]) {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn network_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in self
            .backbone
            .iter_mut()
            .chain(self.projection.iter_mut())
            .chain([&mut self.ova])
        {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.network_tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.prototypes.iter().all(|v| v.is_finite())
    }
}

/// Normalizes every row of `m` to unit L2 norm in place. Returns the rows
/// whose norm was (numerically) zero; they are left untouched.
pub fn normalize_rows(m: &mut Array2<f64>) -> Vec<usize> {
    let mut degenerate = Vec::new();
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if n > NORM_EPS {
            row /= n;
        } else {
            degenerate.push(i);
        }
    }
    degenerate
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Array2<f64>,
    /// Post-ReLU output of every extractor layer.
    backbone_out: Vec<Array2<f64>>,
    /// Post-ReLU hidden layer of the projection head.
    proj_hidden: Array2<f64>,
    /// Projection output before normalization.
    proj_raw_norm: Array1<f64>,
    /// Unit embeddings, one row per sample.
    pub z: Array2<f64>,
    pub ova_logits: Array2<f64>,
}

impl Trace {
    pub fn features(&self) -> &Array2<f64> {
        self.backbone_out.last().expect("non-empty extractor")
    }

    pub fn ova_pos(&self) -> Array2<f64> {
        self.ova_logits.mapv(sigmoid)
    }

    pub fn ova_probs(&self) -> Array3<f64> {
        ova_pairs(&self.ova_logits)
    }
}

/// `(n, C, 2)` array of `[p(z=0), p(z=1)]` pairs from OVA logits.
pub fn ova_pairs(logits: &Array2<f64>) -> Array3<f64> {
    let (n, c) = logits.dim();
    let mut out = Array3::zeros((n, c, 2));
    for ((i, j), &a) in logits.indexed_iter() {
        out[[i, j, 0]] = sigmoid(-a);
        out[[i, j, 1]] = sigmoid(a);
    }
    out
}

/// `P_c . z_i / tau` for every row of `z`.
pub fn proto_logits(z: &Array2<f64>, prototypes: &Array2<f64>, tau: f64) -> Array2<f64> {
    z.dot(&prototypes.t()) / tau
}

#[derive(Debug, Clone)]
pub struct Output {
    pub z: Array2<f64>,
    /// `(batch, C, 2)`: `[p(z=0|x), p(z=1|x)]` per class.
    pub ova_probs: Array3<f64>,
    pub proto_logits: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub weights: Weights,
    /// Set once prototypes have been seeded from clean embeddings.
    pub prototypes_ready: bool,
}

impl ModelBundle {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut backbone = Vec::new();
        let mut width = config.input_dim;
        for &h in &config.hidden {
            backbone.push(Linear::init(width, h, rng));
            width = h;
        }
        let projection = vec![
            Linear::init(width, config.proj_hidden, rng),
            Linear::init(config.proj_hidden, config.proj_dim, rng),
        ];
        let ova = Linear::init(width, config.classes, rng);
        let mut prototypes =
            Array2::from_shape_simple_fn((config.classes, config.proj_dim), || StandardNormal.sample(rng));
        normalize_rows(&mut prototypes);
        Ok(ModelBundle {
            config,
            weights: Weights {
                backbone,
                projection,
                ova,
                prototypes,
            },
            prototypes_ready: false,
        })
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    fn check_shapes(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        if x.ncols() != self.config.input_dim {
            return Err(Error::Config(format!(
                "input dim {} != model input dim {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        let p = &self.weights.prototypes;
        let proj_out = self.weights.projection.last().map(|l| l.weight.ncols());
        if p.nrows() != self.config.classes || Some(p.ncols()) != proj_out {
            return Err(Error::Config(format!(
                "prototype matrix {:?} does not match projection output {:?} / {} classes",
                p.dim(),
                proj_out,
                self.config.classes
            )));
        }
        Ok(())
    }

    /// Forward pass keeping everything the backward pass needs.
    pub fn trace(&self, x: ArrayView2<f64>) -> Result<Trace> {
        self.check_shapes(&x)?;
        let mut backbone_out = Vec::with_capacity(self.weights.backbone.len());
        let mut h = x.to_owned();
        for layer in &self.weights.backbone {
            h = relu(layer.apply(h.view()));
            backbone_out.push(h.clone());
        }
        let [p1, p2] = &self.weights.projection[..] else {
            return Err(Error::Config("projection head must have two layers".into()));
        };
        let proj_hidden = relu(p1.apply(h.view()));
        let mut z = p2.apply(proj_hidden.view());
        let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(NORM_EPS));
        z /= &norms.view().insert_axis(Axis(1));
        let ova_logits = self.weights.ova.apply(h.view());
        Ok(Trace {
            input: x.to_owned(),
            backbone_out,
            proj_hidden,
            proj_raw_norm: norms,
            z,
            ova_logits,
        })
    }

    pub fn forward(&self, x: ArrayView2<f64>, tau: f64) -> Result<Output> {
        let t = self.trace(x)?;
        Ok(Output {
            proto_logits: proto_logits(&t.z, &self.weights.prototypes, tau),
            ova_probs: t.ova_probs(),
            z: t.z,
        })
    }

    /// Back-propagates gradients w.r.t. the unit embeddings `dz` and the OVA
    /// logits `d_logits` into `grads`. Prototype gradients are not touched.
    pub fn backward(&self, trace: &Trace, dz: &Array2<f64>, d_logits: &Array2<f64>, grads: &mut Weights) {
        let w = &self.weights;
        let feats = trace.features();

        // d/du of u/|u| is (I - z z^T)/|u|
        let radial = (dz * &trace.z).sum_axis(Axis(1));
        let mut du = dz - &(&trace.z * &radial.view().insert_axis(Axis(1)));
        du /= &trace.proj_raw_norm.view().insert_axis(Axis(1));

        let d_ph = w.projection[1].backward(trace.proj_hidden.view(), &du, &mut grads.projection[1]);
        let d_ph = relu_backward(&trace.proj_hidden, d_ph);
        let mut dh = w.projection[0].backward(feats.view(), &d_ph, &mut grads.projection[0]);
        dh += &w.ova.backward(feats.view(), d_logits, &mut grads.ova);

        for li in (0..w.backbone.len()).rev() {
            dh = relu_backward(&trace.backbone_out[li], dh);
            let input = if li == 0 {
                trace.input.view()
            } else {
                trace.backbone_out[li - 1].view()
            };
            dh = w.backbone[li].backward(input, &dh, &mut grads.backbone[li]);
        }
    }

    /// Restores unit-norm prototype rows after an optimizer step.
    pub fn renormalize_prototypes(&mut self) {
        normalize_rows(&mut self.weights.prototypes);
    }

    /// Runs the network over `x` in chunks, returning unit embeddings and
    /// OVA logits.
    pub fn embed(&self, x: ArrayView2<f64>, chunk: usize) -> Result<(Array2<f64>, Array2<f64>)> {
        let n = x.nrows();
        let mut z = Array2::zeros((n, self.config.proj_dim));
        let mut logits = Array2::zeros((n, self.config.classes));
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let t = self.trace(x.slice(s![start..end, ..]))?;
            z.slice_mut(s![start..end, ..]).assign(&t.z);
            logits.slice_mut(s![start..end, ..]).assign(&t.ova_logits);
            start = end;
        }
        Ok((z, logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(classes: usize) -> ModelBundle {
        let cfg = ModelConfig {
            input_dim: 5,
            hidden: vec![7, 6],
            proj_hidden: 6,
            proj_dim: 4,
            classes,
        };
        ModelBundle::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, 5), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn forward_invariants() {
        let m = model(3);
        let out = m.forward(batch(4, 1).view(), 0.1).unwrap();
        for row in out.z.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
        for i in 0..4 {
            for c in 0..3 {
                let (p0, p1) = (out.ova_probs[[i, c, 0]], out.ova_probs[[i, c, 1]]);
                assert!((p0 + p1 - 1.0).abs() < 1e-6);
                assert!((0.0..=1.0).contains(&p0) && (0.0..=1.0).contains(&p1));
            }
        }
        assert_eq!(out.proto_logits.dim(), (4, 3));
    }

    #[test]
    fn identical_embedding_and_prototype_gives_inverse_tau() {
        let mut m = model(3);
        let t = m.trace(batch(1, 2).view()).unwrap();
        m.weights.prototypes.row_mut(1).assign(&t.z.row(0));
        let out = m.forward(batch(1, 2).view(), 0.1).unwrap();
        assert!((out.proto_logits[[0, 1]] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = model(3);
        let a = m.forward(batch(6, 3).view(), 0.1).unwrap();
        let b = m.forward(batch(6, 3).view(), 0.1).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.ova_probs, b.ova_probs);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let mut m = model(3);
        assert!(matches!(m.forward(Array2::zeros((2, 4)).view(), 0.1), Err(Error::Config(_))));
        m.weights.prototypes = Array2::zeros((3, 5));
        assert!(matches!(m.forward(batch(2, 0).view(), 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.3) + sigmoid(-0.3) - 1.0).abs() < 1e-15);
    }

    /// Finite-difference check of the full backward pass against the scalar
    /// `sum(gz * z) + sum(ga * logits)` for fixed random `gz`, `ga`.
    #[test]
    fn backward_matches_finite_differences() {
        let m = model(3);
        let x = batch(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gz = Array2::from_shape_simple_fn((3, 4), || StandardNormal.sample(&mut rng));
        let ga = Array2::from_shape_simple_fn((3, 3), || StandardNormal.sample(&mut rng));
        let objective = |m: &ModelBundle| {
            let t = m.trace(x.view()).unwrap();
            (&t.z * &gz).sum() + (&t.ova_logits * &ga).sum()
        };
        let t = m.trace(x.view()).unwrap();
        let mut grads = m.weights.zeros_like();
        m.backward(&t, &gz, &ga, &mut grads);

        let analytic: Vec<f64> = grads.network_tensors().concat();
        let h = 1e-6;
        let mut idx = 0;
        let tensors = m.weights.network_tensors().len();
        for ti in 0..tensors {
            let len = m.weights.network_tensors()[ti].len();
            for k in 0..len {
                let mut plus = m.clone();
                plus.weights.network_tensors_mut()[ti][k] += h;
                let mut minus = m.clone();
                minus.weights.network_tensors_mut()[ti][k] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let a = analytic[idx];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "tensor {ti} entry {k}: analytic {a} vs numeric {numeric}"
                );
                idx += 1;
            }
        }
    }

    #[test]
    fn renormalization_restores_unit_rows() {
        let mut m = model(4);
        m.weights.prototypes *= 3.7;
        m.weights.prototypes[[0, 0]] += 0.5;
        m.renormalize_prototypes();
        for row in m.weights.prototypes.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
    }
}
