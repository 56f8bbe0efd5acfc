//! Loss terms for training the mapping, the adversarial discriminator and
//! latent style classifier, negative sampling, and the training loops.

mod models;
mod train;

pub use models::{
    BoundMlp, ClassifierConfig, Discriminator, DiscriminatorConfig, LatentClassifier, LogisticClassifier, Mlp,
    StyleClassifier,
};
pub use train::{
    train_classifier_on_embeddings, train_emb2emb, train_style_classifier, write_epoch_log, DiscriminatorTrainer,
    Emb2EmbConfig, EpochLog, Task, TrainOutcome,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Clamp applied to probabilities inside logarithms.
pub const PROB_EPS: f64 = 1e-12;

pub const LAMBDA_ADV_GRID: [f64; 5] = [0.008, 0.016, 0.032, 0.064, 0.128];
pub const LAMBDA_STY_GRID: [f64; 5] = [0.1, 0.5, 0.9, 0.95, 0.99];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_sty: f64,
}

impl LossWeights {
    pub fn new(lambda_adv: f64, lambda_sty: f64) -> Result<Self> {
        if !(lambda_adv >= 0.0) || !lambda_adv.is_finite() {
            return Err(Error::Config(format!("lambda_adv must be >= 0, got {lambda_adv}")));
        }
        if !(0.0..=1.0).contains(&lambda_sty) {
            return Err(Error::Config(format!("lambda_sty must be in [0, 1], got {lambda_sty}")));
        }
        Ok(Self { lambda_adv, lambda_sty })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_adv: 0.0,
            lambda_sty: 0.5,
        }
    }
}

/// Mean row-wise cosine distance between predictions and gold target
/// embeddings.
pub fn supervised_task_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let rows = g.cosine_distance_rows(pred, target)?;
    Ok(g.mean(rows))
}

/// Mean cosine distance between predictions and the input embeddings.
pub fn content_loss(g: &mut Graph, pred: Var, input: Var) -> Result<Var> {
    supervised_task_loss(g, pred, input)
}

/// Mean `−log c(ẑ)` for target attribute 1.
pub fn style_loss(g: &mut Graph, pred: Var, clf: &dyn LatentClassifier) -> Result<Var> {
    let p = clf.prob_graph(g, pred)?;
    let nll = g.neg_log(p, PROB_EPS);
    Ok(g.mean(nll))
}

/// `λ_sty · style + (1 − λ_sty) · content`.
pub fn unsupervised_task_loss(
    g: &mut Graph,
    pred: Var,
    input: Var,
    lambda_sty: f64,
    clf: &dyn LatentClassifier,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda_sty) {
        return Err(Error::Config(format!("lambda_sty must be in [0, 1], got {lambda_sty}")));
    }
    let style = style_loss(g, pred, clf)?;
    let content = content_loss(g, pred, input)?;
    let a = g.scale(style, lambda_sty);
    let b = g.scale(content, 1.0 - lambda_sty);
    g.add(a, b)
}

/// Mean over pairs of `−log D(real) − log(1 − D(fake))`: the negated
/// discriminator objective, to be minimized.
pub fn discriminator_loss(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    let real = g.neg_log(d_real, PROB_EPS);
    let neg = g.scale(d_fake, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let fake = g.neg_log(one_minus, PROB_EPS);
    let per_pair = g.add(real, fake)?;
    Ok(g.mean(per_pair))
}

/// Mean `−log D(ẑ)`.
pub fn generator_loss(g: &mut Graph, d_pred: Var) -> Var {
    let nll = g.neg_log(d_pred, PROB_EPS);
    g.mean(nll)
}

/// `task + λ_adv · adv`; with `λ_adv = 0` the task node is returned as is.
pub fn total_loss(g: &mut Graph, task: Var, adv: Option<Var>, lambda_adv: f64) -> Result<Var> {
    match adv {
        Some(a) if lambda_adv != 0.0 => {
            let weighted = g.scale(a, lambda_adv);
            g.add(task, weighted)
        }
        _ => Ok(task),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Supervised,
    Unsupervised,
}

/// Real encodings shown to the discriminator. Supervised: the gold target
/// encodings of the batch rows. Unsupervised: rows drawn uniformly with
/// replacement from `pool`.
pub fn sample_negatives<R: Rng + ?Sized>(mode: Mode, batch: &[usize], pool: &Tensor, rng: &mut R) -> Result<Tensor> {
    if pool.rows() == 0 {
        return Err(Error::Empty("negative sample pool"));
    }
    match mode {
        Mode::Supervised => pool.select_rows(batch),
        Mode::Unsupervised => {
            let idx: Vec<usize> = (0..batch.len()).map(|_| rng.random_range(0..pool.rows())).collect();
            pool.select_rows(&idx)
        }
    }
}

#[cfg(test)]
mod tests;
