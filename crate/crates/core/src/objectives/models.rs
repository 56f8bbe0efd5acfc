//! Small MLPs over embeddings: the adversarial discriminator, the latent style
//! classifier, and a closed-form logistic classifier for analytic checks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{sigmoid, Graph, Module, Tensor, Var};
use crate::checkpoint::{parameter_hash, Section};
use crate::error::{Error, Result};
use crate::nn::{bind_tensor, Bind, BoundLinear, Linear};

/// A frozen probability model `c(z) ∈ (0, 1)` over `d`-dimensional
/// embeddings, differentiable with respect to `z`.
pub trait LatentClassifier {
    fn dim(&self) -> usize;

    /// `B × 1` probabilities of attribute 1 for a `B × d` input.
    fn prob_graph(&self, g: &mut Graph, z: Var) -> Result<Var>;

    fn probs(&self, z: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let p = self.prob_graph(&mut g, zv)?;
        Ok(g.value(p).data().to_vec())
    }
}

/// ReLU MLP with a single sigmoid output unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

pub struct BoundMlp {
    layers: Vec<BoundLinear>,
}

impl BoundMlp {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.vars()).collect()
    }
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            layers: sizes.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Linear::outputs)
            .collect()
    }

    pub fn bind(&self, g: &mut Graph, mode: Bind) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(g, mode)).collect(),
        }
    }

    /// Logits `B × 1`. `perturb` is applied to the input and every hidden
    /// activation (noise and dropout during classifier training).
    pub fn logits(
        &self,
        g: &mut Graph,
        b: &BoundMlp,
        z: Var,
        mut perturb: Option<&mut dyn FnMut(&mut Graph, Var, usize) -> Result<Var>>,
    ) -> Result<Var> {
        if g.shape(z).len() != 2 || g.shape(z)[1] != self.input_dim() {
            return Err(Error::shape(
                "classifier input",
                g.shape(z),
                &[g.value(z).rows(), self.input_dim()],
            ));
        }
        let mut h = z;
        let last = b.layers.len() - 1;
        for (i, l) in b.layers.iter().enumerate() {
            if let Some(p) = perturb.as_mut() {
                h = p(g, h, i)?;
            }
            h = l.forward(g, h)?;
            if i < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn prob(&self, g: &mut Graph, b: &BoundMlp, z: Var) -> Result<Var> {
        let logits = self.logits(g, b, z, None)?;
        Ok(g.sigmoid(logits))
    }
}

impl Module for Mlp {
    fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub lr: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            hidden: 300,
            hidden_layers: 2,
            lr: 1e-5,
        }
    }
}

/// Distinguishes real encodings from mapped ones; `D(z)` is the probability
/// that `z` is a real encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub net: Mlp,
}

impl Discriminator {
    pub fn init<R: Rng + ?Sized>(dim: usize, cfg: &DiscriminatorConfig, rng: &mut R) -> Self {
        Self {
            net: Mlp::init(dim, &vec![cfg.hidden; cfg.hidden_layers], rng),
        }
    }

    pub fn parameter_hash(&self) -> String {
        parameter_hash(&self.net)
    }

    pub fn to_section(&self) -> Section {
        let meta = json!({"input": self.net.input_dim(), "hidden": self.net.hidden_sizes()});
        Section::from_module("discriminator", meta, &self.net)
    }

    pub fn from_section(s: &Section) -> Result<Self> {
        let net = mlp_from_section(s)?;
        Ok(Self { net })
    }
}

fn mlp_from_section(s: &Section) -> Result<Mlp> {
    let input: usize = s.meta_field("input")?;
    let hidden: Vec<usize> = s.meta_field("hidden")?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut net = Mlp::init(input, &hidden, &mut rng);
    s.load_into(&mut net)?;
    Ok(net)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub noise_std: f64,
    pub dropout: f64,
    /// Fraction of the labeled data held out for the reported accuracy.
    pub heldout: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            lr: 1e-4,
            epochs: 20,
            batch_size: 64,
            noise_std: 0.5,
            dropout: 0.5,
            heldout: 0.1,
            seed: 0,
        }
    }
}

/// One-hidden-layer classifier over embeddings. Noise and dropout are only
/// used inside training; inference through [`LatentClassifier`] is
/// deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleClassifier {
    pub net: Mlp,
    frozen: bool,
    /// Held-out accuracy measured at the end of training.
    pub heldout_accuracy: Option<f64>,
}

impl StyleClassifier {
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::init(dim, &[hidden], rng),
            frozen: false,
            heldout_accuracy: None,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub(crate) fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn parameter_hash(&self) -> String {
        parameter_hash(&self.net)
    }

    /// Training-mode logits: Gaussian input noise, then dropout before every
    /// layer.
    pub(crate) fn train_logits<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        b: &BoundMlp,
        z: Var,
        cfg: &ClassifierConfig,
        rng: &mut R,
    ) -> Result<Var> {
        let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let keep = 1.0 - cfg.dropout;
        let mut perturb = |g: &mut Graph, x: Var, layer: usize| -> Result<Var> {
            let shape = g.shape(x).to_vec();
            let n: usize = shape.iter().product();
            let mut x = x;
            if layer == 0 && cfg.noise_std > 0.0 {
                let eps = Tensor::new(&shape, (0..n).map(|_| noise.sample(rng)).collect())?;
                let e = g.constant(eps);
                x = g.add(x, e)?;
            }
            if cfg.dropout > 0.0 {
                let mask: Vec<f64> = (0..n)
                    .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
                    .collect();
                let m = g.constant(Tensor::new(&shape, mask)?);
                x = g.mul(x, m)?;
            }
            Ok(x)
        };
        self.net.logits(g, b, z, Some(&mut perturb))
    }

    pub fn to_section(&self) -> Section {
        let meta = json!({
            "input": self.net.input_dim(),
            "hidden": self.net.hidden_sizes(),
            "frozen": self.frozen,
            "heldout_accuracy": self.heldout_accuracy,
        });
        Section::from_module("classifier", meta, &self.net)
    }

    pub fn from_section(s: &Section) -> Result<Self> {
        Ok(Self {
            net: mlp_from_section(s)?,
            frozen: s.meta_field("frozen")?,
            heldout_accuracy: s.meta_field("heldout_accuracy")?,
        })
    }
}

impl LatentClassifier for StyleClassifier {
    fn dim(&self) -> usize {
        self.net.input_dim()
    }

    fn prob_graph(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let b = self.net.bind(g, Bind::Frozen);
        self.net.prob(g, &b, z)
    }
}

/// `c(z) = sigmoid(z·w + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticClassifier {
    pub w: Tensor,
    pub b: f64,
}

impl LogisticClassifier {
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        Self {
            w: Tensor::vector(w),
            b,
        }
    }

    pub fn prob_of(&self, z: &[f64]) -> f64 {
        sigmoid(z.iter().zip(self.w.data()).map(|(a, b)| a * b).sum::<f64>() + self.b)
    }
}

impl LatentClassifier for LogisticClassifier {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn prob_graph(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let d = self.w.len();
        let w = bind_tensor(g, &self.w.clone().reshape(&[d, 1])?, Bind::Frozen);
        let zw = g.matmul(z, w)?;
        let logit = g.add_scalar(zw, self.b);
        Ok(g.sigmoid(logit))
    }
}
