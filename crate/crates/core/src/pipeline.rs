//! Inference composition: encode, map, optionally refine, decode.

use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::fgim::{Fgim, Refined};
use crate::mapping::Mapping;

/// Seed of a named component under a root seed, so that adding or skipping
/// one component never shifts the randomness of another.
pub fn derive_seed(root: u64, component: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(component.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub struct Pipeline<'a> {
    ae: &'a Autoencoder,
    mapping: &'a Mapping,
    fgim: Option<Fgim<'a>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transferred {
    pub outputs: Vec<String>,
    /// Per nonempty input, when refinement is enabled.
    pub refined: Option<Vec<Refined>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(ae: &'a Autoencoder, mapping: &'a Mapping) -> Result<Self> {
        if mapping.dim() != ae.dim() {
            return Err(Error::Mismatch(format!(
                "mapping dimension {} vs autoencoder {}",
                mapping.dim(),
                ae.dim()
            )));
        }
        Ok(Self {
            ae,
            mapping,
            fgim: None,
        })
    }

    pub fn with_fgim(mut self, fgim: Fgim<'a>) -> Self {
        self.fgim = Some(fgim);
        self
    }

    /// Input encodings and their mapped predictions.
    pub fn embed<S: AsRef<str>>(&self, texts: &[S]) -> Result<(Tensor, Tensor)> {
        let z = self.ae.encode_texts(texts)?;
        let pred = self.mapping.apply(&z)?;
        Ok((z, pred))
    }

    /// Blank inputs give blank outputs.
    pub fn transfer<S: AsRef<str>>(&self, texts: &[S]) -> Result<Transferred> {
        let keep: Vec<usize> = (0..texts.len())
            .filter(|&i| !texts[i].as_ref().trim().is_empty())
            .collect();
        let mut outputs = vec![String::new(); texts.len()];
        if keep.is_empty() {
            return Ok(Transferred {
                outputs,
                refined: self.fgim.as_ref().map(|_| Vec::new()),
            });
        }
        let kept: Vec<&str> = keep.iter().map(|&i| texts[i].as_ref()).collect();
        let (z, mut pred) = self.embed(&kept)?;
        let mut refined = None;
        if let Some(f) = &self.fgim {
            let (p, info) = f.refine_batch(&pred, &z)?;
            pred = p;
            refined = Some(info);
        }
        for (&i, out) in keep.iter().zip(self.ae.decode_texts(&pred)?) {
            outputs[i] = out;
        }
        Ok(Transferred { outputs, refined })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::AeConfig;
    use crate::fgim::{FgimConfig, Variant};
    use crate::mapping::{MappingConfig, MappingKind};
    use crate::objectives::LogisticClassifier;
    use crate::text::Vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ae() -> Autoencoder {
        let vocab = Vocab::build(["a b c d e"], 20).unwrap();
        let cfg = AeConfig {
            emb_dim: 4,
            hidden: 5,
            shared_embeddings: true,
        };
        Autoencoder::init(cfg, vocab, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn seeds_differ_by_component_and_root() {
        assert_eq!(derive_seed(1, "mapping"), derive_seed(1, "mapping"));
        assert_ne!(derive_seed(1, "mapping"), derive_seed(1, "fgim"));
        assert_ne!(derive_seed(1, "mapping"), derive_seed(2, "mapping"));
    }

    #[test]
    fn identity_offsetnet_reproduces_reconstruction() {
        let ae = ae();
        let m = Mapping::init(
            MappingConfig::new(MappingKind::OffsetNet, 5),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let texts = ["a b c", "", "e d"];
        let out = Pipeline::new(&ae, &m).unwrap().transfer(&texts).unwrap();
        assert_eq!(out.outputs[1], "");
        assert_eq!(out.outputs[0], ae.reconstruct(&["a b c".to_string()]).unwrap()[0]);
        assert!(out.refined.is_none());
    }

    #[test]
    fn refinement_reports_each_nonempty_row() {
        let ae = ae();
        let m = Mapping::init(
            MappingConfig::new(MappingKind::OffsetNet, 5),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let clf = LogisticClassifier::new(vec![1.0, 0.0, 0.0, 0.0, 0.0], 0.0);
        let f = Fgim::new(FgimConfig::new(0.9, Variant::ClassifierOnly).unwrap(), &clf, None).unwrap();
        let out = Pipeline::new(&ae, &m)
            .unwrap()
            .with_fgim(f)
            .transfer(&["a b", " ", "c"])
            .unwrap();
        assert_eq!(out.refined.unwrap().len(), 2);
        assert_eq!(out.outputs[1], "");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let ae = ae();
        let m = Mapping::init(
            MappingConfig::new(MappingKind::Mlp, 3),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert!(matches!(Pipeline::new(&ae, &m), Err(Error::Mismatch(_))));
    }
}
