use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AeConfig, Autoencoder, TeacherForcing};
use crate::autodiff::{Adam, AdamConfig, Graph, Module, Tensor};
use crate::checkpoint::{Container, Section};
use crate::error::{Error, Result};
use crate::nn::Bind;
use crate::text::{apply_noise, batch_indices, NoiseConfig, PaddedBatch, TokenSeq, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tf_prob: f64,
    pub noise: NoiseConfig,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Stop once validation accuracy reaches this value.
    pub target_accuracy: f64,
    pub seed: u64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            tf_prob: 0.5,
            noise: NoiseConfig::default(),
            patience: 0,
            target_accuracy: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaeEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_accuracy: f64,
}

/// Resumable denoising-autoencoder training loop. Every epoch draws from its
/// own RNG stream, so a run restored from [`DaeTrainer::save`] continues
/// exactly as the uninterrupted run would have.
pub struct DaeTrainer {
    pub config: DaeConfig,
    model: Autoencoder,
    best: Autoencoder,
    best_accuracy: f64,
    adam: Adam,
    epoch: usize,
    stale: usize,
    history: Vec<DaeEpoch>,
}

impl DaeTrainer {
    pub fn new(model: Autoencoder, config: DaeConfig) -> Result<Self> {
        if model.is_frozen() {
            return Err(Error::Config("cannot train a frozen autoencoder".into()));
        }
        if !(0.0..=1.0).contains(&config.tf_prob) {
            return Err(Error::Config(format!("tf_prob {} outside [0, 1]", config.tf_prob)));
        }
        let adam = Adam::new(AdamConfig::with_lr(config.lr))?;
        Ok(Self {
            best: model.clone(),
            model,
            best_accuracy: f64::NEG_INFINITY,
            adam,
            epoch: 0,
            stale: 0,
            history: Vec::new(),
            config,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[DaeEpoch] {
        &self.history
    }

    pub fn model(&self) -> &Autoencoder {
        &self.model
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
            || self.best_accuracy >= self.config.target_accuracy
            || (self.config.patience > 0 && self.stale >= self.config.patience)
    }

    pub fn run_epoch(&mut self, train: &[TokenSeq], valid: &[TokenSeq]) -> Result<DaeEpoch> {
        if train.is_empty() {
            return Err(Error::Empty("autoencoder training corpus"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let shared = self.model.config.shared_embeddings;
        let mut total = 0.0;
        let groups = batch_indices(train.len(), self.config.batch_size, Some(&mut rng))?;
        for idx in &groups {
            let clean: Vec<&TokenSeq> = idx.iter().map(|&i| &train[i]).collect();
            let noisy: Vec<TokenSeq> = clean
                .iter()
                .map(|s| apply_noise(s, &self.config.noise, &mut rng))
                .collect();
            let noisy_refs: Vec<&TokenSeq> = noisy.iter().collect();
            let inputs = PaddedBatch::new(idx.clone(), &noisy_refs);
            let targets = PaddedBatch::new(idx.clone(), &clean);

            let mut g = Graph::new();
            let b = self.model.bind(&mut g, Bind::Trainable);
            let z = self.model.encode_graph(&mut g, &b, &inputs)?;
            let tf = TeacherForcing {
                prob: self.config.tf_prob,
                rng: &mut rng,
            };
            let loss = self.model.teacher_forced_loss(&mut g, &b, z, &targets, tf)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "autoencoder loss {value} at epoch {}",
                    self.epoch
                )));
            }
            let grads = g.backward(loss)?;
            let grads: Vec<Tensor> = b.vars(shared).into_iter().map(|v| grads.wrt(v)).collect();
            self.adam.step(self.model.parameters_mut(), &grads)?;
            total += value;
        }
        let valid = if valid.is_empty() { train } else { valid };
        let accuracy = self.model.reconstruction_accuracy(valid)?;
        if accuracy > self.best_accuracy {
            self.best_accuracy = accuracy;
            self.best = self.model.clone();
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        let record = DaeEpoch {
            epoch: self.epoch,
            train_loss: total / groups.len() as f64,
            valid_accuracy: accuracy,
        };
        info!(
            "dae epoch {} loss {:.5} valid acc {:.4}",
            record.epoch, record.train_loss, record.valid_accuracy
        );
        self.epoch += 1;
        self.history.push(record.clone());
        Ok(record)
    }

    pub fn train(&mut self, train: &[TokenSeq], valid: &[TokenSeq]) -> Result<()> {
        while !self.is_done() {
            self.run_epoch(train, valid)?;
        }
        Ok(())
    }

    /// Best-validation model, frozen. Before any epoch this is the
    /// initialization.
    pub fn finish(self) -> Autoencoder {
        let mut best = self.best;
        best.freeze();
        best
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut best = self.best.to_section();
        best.name = "best".into();
        let (m, v) = self.adam.moments();
        let mut state = Section::new(
            "trainer",
            json!({
                "config": self.config,
                "epoch": self.epoch,
                "stale": self.stale,
                "best_accuracy": self.best_accuracy,
                "adam_config": self.adam.config,
                "adam_step": self.adam.steps(),
                "moments": m.len(),
                "history": self.history,
            }),
        );
        for (i, t) in m.iter().enumerate() {
            state.push(format!("m{i}"), t.clone());
        }
        for (i, t) in v.iter().enumerate() {
            state.push(format!("v{i}"), t.clone());
        }
        Container::new()
            .with(self.model.to_section())
            .with(best)
            .with(state)
            .save(path)
    }

    pub fn resume(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        let model = Autoencoder::from_section(c.section("autoencoder")?)?;
        let best = Autoencoder::from_section(c.section("best")?)?;
        let state = c.section("trainer")?;
        let n: usize = state.meta_field("moments")?;
        let m = (0..n)
            .map(|i| state.tensor(&format!("m{i}")).cloned())
            .collect::<Result<Vec<_>>>()?;
        let v = (0..n)
            .map(|i| state.tensor(&format!("v{i}")).cloned())
            .collect::<Result<Vec<_>>>()?;
        // −∞ (no epoch yet) is serialized as null
        let best_accuracy: Option<f64> = state.meta_field("best_accuracy")?;
        Ok(Self {
            config: state.meta_field("config")?,
            model,
            best,
            best_accuracy: best_accuracy.unwrap_or(f64::NEG_INFINITY),
            adam: Adam::from_parts(state.meta_field("adam_config")?, state.meta_field("adam_step")?, m, v),
            epoch: state.meta_field("epoch")?,
            stale: state.meta_field("stale")?,
            history: state.meta_field("history")?,
        })
    }
}

/// Builds and trains an autoencoder, returning the frozen best-validation
/// model and the per-epoch log.
pub fn pretrain_dae(
    vocab: Vocab,
    ae: AeConfig,
    train: &[TokenSeq],
    valid: &[TokenSeq],
    config: DaeConfig,
) -> Result<(Autoencoder, Vec<DaeEpoch>)> {
    if train.is_empty() {
        return Err(Error::Empty("autoencoder training corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = Autoencoder::init(ae, vocab, &mut rng)?;
    let mut trainer = DaeTrainer::new(model, config)?;
    trainer.train(train, valid)?;
    let history = trainer.history.clone();
    Ok((trainer.finish(), history))
}
