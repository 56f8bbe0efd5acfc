use std::path::Path;

use crate::autoencoder::Autoencoder;
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::objectives::{train_style_classifier, ClassifierConfig, LatentClassifier, StyleClassifier};
use crate::text::LabeledCorpus;

/// Held-out evaluation classifier: its own frozen autoencoder plus a frozen
/// classifier over that autoencoder's embeddings, trained on data disjoint
/// from the transfer model's classifier.
#[derive(Clone, Debug)]
pub struct Judge {
    ae: Autoencoder,
    clf: StyleClassifier,
}

impl Judge {
    pub fn new(ae: Autoencoder, clf: StyleClassifier) -> Result<Self> {
        if !ae.is_frozen() || !clf.is_frozen() {
            return Err(Error::UntrainedJudge);
        }
        if clf.dim() != ae.dim() {
            return Err(Error::Mismatch(format!(
                "judge classifier dimension {} vs autoencoder {}",
                clf.dim(),
                ae.dim()
            )));
        }
        Ok(Self { ae, clf })
    }

    pub fn train(ae: Autoencoder, labeled: &LabeledCorpus, cfg: &ClassifierConfig) -> Result<Self> {
        let clf = train_style_classifier(&ae, labeled, cfg)?;
        Self::new(ae, clf)
    }

    pub fn heldout_accuracy(&self) -> Option<f64> {
        self.clf.heldout_accuracy
    }

    pub fn autoencoder(&self) -> &Autoencoder {
        &self.ae
    }

    /// Predicted label per text; `None` for texts with no tokens.
    pub fn predict<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Option<u8>>> {
        let keep: Vec<usize> = (0..texts.len())
            .filter(|&i| !texts[i].as_ref().trim().is_empty())
            .collect();
        let mut out = vec![None; texts.len()];
        if keep.is_empty() {
            return Ok(out);
        }
        let kept: Vec<&str> = keep.iter().map(|&i| texts[i].as_ref()).collect();
        let probs = self.clf.probs(&self.ae.encode_texts(&kept)?)?;
        for (&i, p) in keep.iter().zip(probs) {
            out[i] = Some(u8::from(p > 0.5));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Container::new()
            .with(self.ae.to_section())
            .with(self.clf.to_section())
            .save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        let ae = Autoencoder::from_section(c.section("autoencoder")?)?;
        let clf = StyleClassifier::from_section(c.section("classifier")?)?;
        Self::new(ae, clf)
    }
}

/// Fraction of `outputs` the judge assigns to `target`. Empty outputs count
/// as misses.
pub fn transfer_accuracy<S: AsRef<str>>(outputs: &[S], target: u8, judge: &Judge) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::Empty("outputs for transfer accuracy"));
    }
    let hits = judge
        .predict(outputs)?
        .into_iter()
        .filter(|p| *p == Some(target))
        .count();
    Ok(hits as f64 / outputs.len() as f64)
}
