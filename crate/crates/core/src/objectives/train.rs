use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::models::{ClassifierConfig, Discriminator, DiscriminatorConfig, LatentClassifier, StyleClassifier};
use super::{
    discriminator_loss, generator_loss, sample_negatives, supervised_task_loss, total_loss, unsupervised_task_loss,
    LossWeights, Mode,
};
use crate::autodiff::{Adam, AdamConfig, Graph, Module, Tensor, Var};
use crate::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::eval::{bleu, self_bleu};
use crate::mapping::Mapping;
use crate::nn::Bind;
use crate::text::{batch_indices, LabeledCorpus, ParallelCorpus};

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Mean binary cross-entropy of `B × 1` probabilities against 0/1 labels.
fn bce(g: &mut Graph, p: Var, labels: &[u8]) -> Result<Var> {
    let n = labels.len();
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let yv = g.constant(Tensor::matrix(n, 1, y.clone())?);
    let nyv = g.constant(Tensor::matrix(n, 1, y.iter().map(|v| 1.0 - v).collect())?);
    let pos = g.neg_log(p, super::PROB_EPS);
    let neg_p = g.scale(p, -1.0);
    let q = g.add_scalar(neg_p, 1.0);
    let neg = g.neg_log(q, super::PROB_EPS);
    let a = g.mul(pos, yv)?;
    let b = g.mul(neg, nyv)?;
    let sum = g.add(a, b)?;
    Ok(g.mean(sum))
}

fn check_labels(labels: &[u8]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Empty("labeled data"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Config(format!("label {bad} is not binary")));
    }
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::SingleClass(first));
    }
    Ok(())
}

fn accuracy(probs: &[f64], labels: &[u8]) -> f64 {
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(p, &l)| (**p > 0.5) == (l == 1))
        .count();
    hits as f64 / labels.len() as f64
}

/// Trains a style classifier on fixed embeddings and returns it frozen,
/// with its held-out accuracy recorded.
pub fn train_classifier_on_embeddings(z: &Tensor, labels: &[u8], cfg: &ClassifierConfig) -> Result<StyleClassifier> {
    check_labels(labels)?;
    if z.rows() != labels.len() {
        return Err(Error::shape("classifier data", z.shape(), &[labels.len()]));
    }
    let mut rng = stream(cfg.seed, 0);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let n_held = ((labels.len() as f64) * cfg.heldout).round() as usize;
    let n_held = n_held.min(labels.len() - 1);
    let (held, train) = order.split_at(n_held);
    let train_labels: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
    check_labels(&train_labels)?;

    let mut clf = StyleClassifier::init(z.cols(), cfg.hidden, &mut rng);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    for epoch in 0..cfg.epochs {
        let mut erng = stream(cfg.seed, epoch as u64 + 1);
        for group in batch_indices(train.len(), cfg.batch_size, Some(&mut erng))? {
            let rows: Vec<usize> = group.iter().map(|&k| train[k]).collect();
            let y: Vec<u8> = rows.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let b = clf.net.bind(&mut g, Bind::Trainable);
            let x = g.constant(z.select_rows(&rows)?);
            let logits = clf.train_logits(&mut g, &b, x, cfg, &mut erng)?;
            let p = g.sigmoid(logits);
            let loss = bce(&mut g, p, &y)?;
            let grads = g.backward(loss)?;
            let grads: Vec<Tensor> = b.vars().into_iter().map(|v| grads.wrt(v)).collect();
            adam.step(clf.net.parameters_mut(), &grads)?;
        }
    }
    if !held.is_empty() {
        let y: Vec<u8> = held.iter().map(|&i| labels[i]).collect();
        let p = clf.probs(&z.select_rows(held)?)?;
        clf.heldout_accuracy = Some(accuracy(&p, &y));
    }
    clf.freeze();
    Ok(clf)
}

/// Style classifier over encodings of a labeled corpus.
pub fn train_style_classifier(
    ae: &Autoencoder,
    labeled: &LabeledCorpus,
    cfg: &ClassifierConfig,
) -> Result<StyleClassifier> {
    if !ae.is_frozen() {
        return Err(Error::Config("style classifier requires a frozen autoencoder".into()));
    }
    check_labels(&labeled.labels)?;
    let z = ae.encode_texts(&labeled.texts)?;
    let clf = train_classifier_on_embeddings(&z, &labeled.labels, cfg)?;
    info!("style classifier held-out accuracy {:?}", clf.heldout_accuracy);
    Ok(clf)
}

/// Discriminator with its own optimizer.
pub struct DiscriminatorTrainer {
    pub disc: Discriminator,
    adam: Adam,
}

impl DiscriminatorTrainer {
    pub fn new(disc: Discriminator, lr: f64) -> Result<Self> {
        Ok(Self {
            disc,
            adam: Adam::new(AdamConfig::with_lr(lr))?,
        })
    }

    /// One update on `−log D(real) − log(1 − D(fake))`; returns the loss
    /// before the update. Both inputs are constants, so nothing upstream of
    /// them receives gradient.
    pub fn step(&mut self, real: &Tensor, fake: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let net = &self.disc.net;
        let b = net.bind(&mut g, Bind::Trainable);
        let r = g.constant(real.clone());
        let f = g.constant(fake.clone());
        let pr = net.prob(&mut g, &b, r)?;
        let pf = net.prob(&mut g, &b, f)?;
        let loss = discriminator_loss(&mut g, pr, pf)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        let grads: Vec<Tensor> = b.vars().into_iter().map(|v| grads.wrt(v)).collect();
        self.adam.step(self.disc.net.parameters_mut(), &grads)?;
        Ok(value)
    }

    /// Fraction of real rows with `D > 0.5` and fake rows with `D ≤ 0.5`.
    pub fn accuracy(&self, real: &Tensor, fake: &Tensor) -> Result<f64> {
        let prob = |t: &Tensor| -> Result<Vec<f64>> {
            let mut g = Graph::new();
            let b = self.disc.net.bind(&mut g, Bind::Frozen);
            let x = g.constant(t.clone());
            let p = self.disc.net.prob(&mut g, &b, x)?;
            Ok(g.value(p).data().to_vec())
        };
        let pr = prob(real)?;
        let pf = prob(fake)?;
        let hits = pr.iter().filter(|&&p| p > 0.5).count() + pf.iter().filter(|&&p| p <= 0.5).count();
        Ok(hits as f64 / (pr.len() + pf.len()) as f64)
    }
}

/// Training data for the mapping.
pub enum Task<'a> {
    /// Parallel pairs; validation metric is corpus BLEU.
    Supervised {
        train: &'a ParallelCorpus,
        valid: &'a ParallelCorpus,
    },
    /// Source-style sentences to transfer towards attribute 1. `pool` is the
    /// text the discriminator's real samples are drawn from. Validation
    /// metric is self-BLEU plus the classifier's transfer rate on re-encoded
    /// outputs.
    Unsupervised {
        train: &'a [String],
        pool: &'a [String],
        valid: &'a [String],
        classifier: &'a StyleClassifier,
    },
}

impl Task<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            Task::Supervised { .. } => Mode::Supervised,
            Task::Unsupervised { .. } => Mode::Unsupervised,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emb2EmbConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub discriminator: DiscriminatorConfig,
    pub seed: u64,
}

impl Default for Emb2EmbConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            epochs: 10,
            batch_size: 64,
            lr: 1e-4,
            discriminator: DiscriminatorConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub task_loss: f64,
    pub adv_loss: f64,
    pub disc_loss: f64,
    pub valid_metric: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-validation mapping.
    pub mapping: Mapping,
    /// Mapping after the last epoch.
    pub last: Mapping,
    pub discriminator: Discriminator,
    pub log: Vec<EpochLog>,
    /// Task loss over the training set before any update.
    pub initial_task_loss: f64,
    /// Task loss over the training set with `last`.
    pub final_task_loss: f64,
    pub best_epoch: Option<usize>,
    pub best_metric: f64,
}

pub fn write_epoch_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Prepared<'a> {
    inputs: Tensor,
    /// Supervised: target encodings aligned with `inputs`. Unsupervised: pool.
    negatives: Tensor,
    valid_inputs: Tensor,
    valid_texts: &'a [String],
    valid_refs: Vec<Vec<&'a str>>,
    classifier: Option<&'a StyleClassifier>,
}

fn prepare<'a>(ae: &Autoencoder, task: &Task<'a>) -> Result<Prepared<'a>> {
    match *task {
        Task::Supervised { train, valid } => {
            if train.is_empty() || valid.is_empty() {
                return Err(Error::Empty("parallel corpus"));
            }
            Ok(Prepared {
                inputs: ae.encode_texts(&train.sources)?,
                negatives: ae.encode_texts(&train.targets)?,
                valid_inputs: ae.encode_texts(&valid.sources)?,
                valid_texts: &valid.sources,
                valid_refs: valid.targets.iter().map(|t| vec![t.as_str()]).collect(),
                classifier: None,
            })
        }
        Task::Unsupervised {
            train,
            pool,
            valid,
            classifier,
        } => {
            if train.is_empty() || pool.is_empty() || valid.is_empty() {
                return Err(Error::Empty("unsupervised corpus"));
            }
            if !classifier.is_frozen() {
                return Err(Error::Config(
                    "unsupervised training requires a frozen classifier".into(),
                ));
            }
            if classifier.dim() != ae.dim() {
                return Err(Error::Mismatch(format!(
                    "classifier dimension {} vs autoencoder {}",
                    classifier.dim(),
                    ae.dim()
                )));
            }
            Ok(Prepared {
                inputs: ae.encode_texts(train)?,
                negatives: ae.encode_texts(pool)?,
                valid_inputs: ae.encode_texts(valid)?,
                valid_texts: valid,
                valid_refs: Vec::new(),
                classifier: Some(classifier),
            })
        }
    }
}

/// Rate at which `clf` assigns attribute 1 to re-encoded outputs; empty
/// outputs count as failures.
pub(crate) fn latent_transfer_rate(ae: &Autoencoder, clf: &dyn LatentClassifier, outputs: &[String]) -> Result<f64> {
    let nonempty: Vec<&String> = outputs.iter().filter(|o| !o.trim().is_empty()).collect();
    if nonempty.is_empty() {
        return Ok(0.0);
    }
    let z = ae.encode_texts(&nonempty)?;
    let hits = clf.probs(&z)?.iter().filter(|&&p| p > 0.5).count();
    Ok(hits as f64 / outputs.len() as f64)
}

fn task_loss(
    g: &mut Graph,
    p: &Prepared<'_>,
    rows: &[usize],
    pred: Var,
    zx: Var,
    weights: &LossWeights,
) -> Result<Var> {
    match p.classifier {
        None => {
            let zy = g.constant(p.negatives.select_rows(rows)?);
            supervised_task_loss(g, pred, zy)
        }
        Some(clf) => unsupervised_task_loss(g, pred, zx, weights.lambda_sty, clf),
    }
}

/// Task loss of `mapping` over the whole training set.
fn full_task_loss(mapping: &Mapping, p: &Prepared<'_>, weights: &LossWeights) -> Result<f64> {
    let mut g = Graph::new();
    let b = mapping.bind(&mut g, Bind::Frozen);
    let all: Vec<usize> = (0..p.inputs.rows()).collect();
    let zx = g.constant(p.inputs.clone());
    let pred = mapping.forward(&mut g, &b, zx)?;
    let l = task_loss(&mut g, p, &all, pred, zx, weights)?;
    Ok(g.value(l).item())
}

fn validate(ae: &Autoencoder, mapping: &Mapping, p: &Prepared<'_>) -> Result<f64> {
    let outputs = ae.decode_texts(&mapping.apply(&p.valid_inputs)?)?;
    match p.classifier {
        None => bleu(&outputs, &p.valid_refs),
        Some(clf) => {
            let sb = self_bleu(p.valid_texts, &outputs)?;
            Ok(sb + latent_transfer_rate(ae, clf, &outputs)?)
        }
    }
}

/// Trains Φ against the frozen autoencoder, alternating one mapping update
/// and one discriminator update per batch. The discriminator is neither
/// created nor stepped when `λ_adv = 0`.
pub fn train_emb2emb(ae: &Autoencoder, mapping: Mapping, task: Task<'_>, cfg: &Emb2EmbConfig) -> Result<TrainOutcome> {
    if !ae.is_frozen() {
        return Err(Error::Config("mapping training requires a frozen autoencoder".into()));
    }
    if !mapping.is_trainable() {
        return Err(Error::Config(
            "the mean-offset mapping has no trainable parameters".into(),
        ));
    }
    if mapping.dim() != ae.dim() {
        return Err(Error::Mismatch(format!(
            "mapping dimension {} vs autoencoder {}",
            mapping.dim(),
            ae.dim()
        )));
    }
    let weights = LossWeights::new(cfg.weights.lambda_adv, cfg.weights.lambda_sty)?;
    let mode = task.mode();
    let p = prepare(ae, &task)?;
    let adversarial = weights.lambda_adv > 0.0;

    let mut init_rng = stream(cfg.seed, 0);
    let disc = Discriminator::init(ae.dim(), &cfg.discriminator, &mut init_rng);
    let mut dtrain = DiscriminatorTrainer::new(disc, cfg.discriminator.lr)?;
    let mut mapping = mapping;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr))?;

    let initial_task_loss = full_task_loss(&mapping, &p, &weights)?;

    let mut best = mapping.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = stream(cfg.seed, epoch as u64 + 1);
        let groups = batch_indices(p.inputs.rows(), cfg.batch_size, Some(&mut rng))?;
        let (mut task_sum, mut adv_sum, mut disc_sum) = (0.0, 0.0, 0.0);
        for rows in &groups {
            let mut g = Graph::new();
            let bm = mapping.bind(&mut g, Bind::Trainable);
            let zx = g.constant(p.inputs.select_rows(rows)?);
            let pred = mapping.forward(&mut g, &bm, zx)?;
            let task_l = task_loss(&mut g, &p, rows, pred, zx, &weights)?;
            let adv = if adversarial {
                let net = &dtrain.disc.net;
                let bd = net.bind(&mut g, Bind::Frozen);
                let d_pred = net.prob(&mut g, &bd, pred)?;
                Some(generator_loss(&mut g, d_pred))
            } else {
                None
            };
            let total = total_loss(&mut g, task_l, adv, weights.lambda_adv)?;
            let value = g.value(total).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "mapping loss {value} at epoch {epoch} (lambda_adv {}, lambda_sty {})",
                    weights.lambda_adv, weights.lambda_sty
                )));
            }
            task_sum += g.value(task_l).item();
            if let Some(a) = adv {
                adv_sum += g.value(a).item();
            }
            let grads = g.backward(total)?;
            let grads: Vec<Tensor> = bm.vars().iter().map(|&v| grads.wrt(v)).collect();
            adam.step(mapping.parameters_mut(), &grads).map_err(|e| {
                Error::NonFinite(format!(
                    "{e} (lambda_adv {}, lambda_sty {})",
                    weights.lambda_adv, weights.lambda_sty
                ))
            })?;

            if adversarial {
                let fake = g.value(pred).clone();
                let real = sample_negatives(mode, rows, &p.negatives, &mut rng)?;
                disc_sum += dtrain.step(&real, &fake)?;
            }
        }
        let nb = groups.len() as f64;
        let metric = validate(ae, &mapping, &p)?;
        if metric > best_metric {
            best_metric = metric;
            best = mapping.clone();
            best_epoch = Some(epoch);
        }
        let row = EpochLog {
            epoch,
            task_loss: task_sum / nb,
            adv_loss: adv_sum / nb,
            disc_loss: disc_sum / nb,
            valid_metric: metric,
        };
        info!(
            "emb2emb epoch {epoch} task {:.5} adv {:.5} disc {:.5} valid {:.4}",
            row.task_loss, row.adv_loss, row.disc_loss, row.valid_metric
        );
        log.push(row);
    }
    let final_task_loss = full_task_loss(&mapping, &p, &weights)?;
    Ok(TrainOutcome {
        mapping: best,
        last: mapping,
        final_task_loss,
        discriminator: dtrain.disc,
        log,
        initial_task_loss,
        best_epoch,
        best_metric,
    })
}
