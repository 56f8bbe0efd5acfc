//! Fast gradient iterative modification: inference-time gradient descent on
//! a predicted embedding until a frozen style classifier is confident enough.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::nn::Bind;
use crate::objectives::{generator_loss, style_loss, unsupervised_task_loss, Discriminator, LatentClassifier};

pub const DEFAULT_SCHEDULE: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];
pub const DEFAULT_MAX_STEPS: usize = 30;
pub const THRESHOLD_SWEEP: [f64; 5] = [0.5, 0.9, 0.99, 0.999, 0.9999];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Descend `−log c(z)` only.
    ClassifierOnly,
    /// Descend the full mapping objective: interpolated content/style loss
    /// plus the weighted adversarial term.
    FullLoss,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::ClassifierOnly => "classifier-only",
            Variant::FullLoss => "full-loss",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classifier-only" | "classifier" => Ok(Variant::ClassifierOnly),
            "full-loss" | "full" => Ok(Variant::FullLoss),
            other => Err(Error::Config(format!("unknown fgim variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FgimConfig {
    pub schedule: Vec<f64>,
    pub max_steps: usize,
    pub threshold: f64,
    pub variant: Variant,
    /// Style weight inside the full-loss objective.
    pub lambda_sty: f64,
    /// Adversarial weight inside the full-loss objective; ignored without a
    /// discriminator.
    pub lambda_adv: f64,
}

impl Default for FgimConfig {
    fn default() -> Self {
        Self {
            schedule: DEFAULT_SCHEDULE.to_vec(),
            max_steps: DEFAULT_MAX_STEPS,
            threshold: 0.9,
            variant: Variant::ClassifierOnly,
            lambda_sty: 0.5,
            lambda_adv: 0.0,
        }
    }
}

impl FgimConfig {
    pub fn new(threshold: f64, variant: Variant) -> Result<Self> {
        let cfg = Self {
            threshold,
            variant,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "fgim threshold must be in [0, 1], got {}",
                self.threshold
            )));
        }
        if self.schedule.is_empty() {
            return Err(Error::Config("fgim schedule is empty".into()));
        }
        if self.schedule.iter().any(|w| !(*w > 0.0) || !w.is_finite()) || self.schedule.windows(2).any(|p| p[0] >= p[1])
        {
            return Err(Error::Config(format!(
                "fgim schedule must be positive and strictly ascending, got {:?}",
                self.schedule
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_sty) || !(self.lambda_adv >= 0.0) {
            return Err(Error::Config("fgim loss weights out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    /// `1 × d` refined embedding.
    pub embedding: Tensor,
    /// Gradient steps taken over all step sizes.
    pub steps: usize,
    /// Step size at which the threshold was crossed, if it was.
    pub omega: Option<f64>,
    pub reached: bool,
    /// A non-finite gradient stopped refinement; `embedding` is the input.
    pub aborted: bool,
}

/// Refines embeddings against a frozen classifier and, for the full-loss
/// variant, an optional discriminator.
pub struct Fgim<'a> {
    pub config: FgimConfig,
    classifier: &'a dyn LatentClassifier,
    discriminator: Option<&'a Discriminator>,
}

impl<'a> Fgim<'a> {
    pub fn new(
        config: FgimConfig,
        classifier: &'a dyn LatentClassifier,
        discriminator: Option<&'a Discriminator>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            classifier,
            discriminator,
        })
    }

    fn confidence(&self, z: &Tensor) -> Result<f64> {
        Ok(self.classifier.probs(z)?[0])
    }

    fn gradient(&self, z: &Tensor, z_x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let zv = g.param(z);
        let loss = match self.config.variant {
            Variant::ClassifierOnly => style_loss(&mut g, zv, self.classifier)?,
            Variant::FullLoss => {
                let x = g.constant(z_x.clone());
                let task = unsupervised_task_loss(&mut g, zv, x, self.config.lambda_sty, self.classifier)?;
                match self.discriminator {
                    Some(d) if self.config.lambda_adv > 0.0 => {
                        let b = d.net.bind(&mut g, Bind::Frozen);
                        let p = d.net.prob(&mut g, &b, zv)?;
                        let adv = generator_loss(&mut g, p);
                        let w = g.scale(adv, self.config.lambda_adv);
                        g.add(task, w)?
                    }
                    _ => task,
                }
            }
        };
        Ok(g.backward(loss)?.wrt(zv))
    }

    /// Refines one `1 × d` embedding; `z_x` is the input sentence's
    /// embedding, used by the content term of the full-loss variant.
    pub fn refine(&self, z_hat: &Tensor, z_x: &Tensor) -> Result<Refined> {
        if z_hat.shape() != [1, self.classifier.dim()] {
            return Err(Error::shape("fgim", z_hat.shape(), &[1, self.classifier.dim()]));
        }
        if z_x.shape() != z_hat.shape() {
            return Err(Error::shape("fgim", z_x.shape(), z_hat.shape()));
        }
        let t = self.config.threshold;
        let unchanged = |steps, aborted| Refined {
            embedding: z_hat.clone(),
            steps,
            omega: None,
            reached: false,
            aborted,
        };
        if self.confidence(z_hat)? > t {
            return Ok(Refined {
                reached: true,
                ..unchanged(0, false)
            });
        }
        let mut steps = 0;
        let mut last = z_hat.clone();
        for &omega in &self.config.schedule {
            let mut z = z_hat.clone();
            for _ in 0..self.config.max_steps {
                let grad = self.gradient(&z, z_x)?;
                if !grad.all_finite() {
                    log::warn!("fgim: non-finite gradient at step size {omega}, returning input");
                    return Ok(unchanged(steps, true));
                }
                for (a, g) in z.data_mut().iter_mut().zip(grad.data()) {
                    *a -= omega * g;
                }
                steps += 1;
                if self.confidence(&z)? > t {
                    return Ok(Refined {
                        embedding: z,
                        steps,
                        omega: Some(omega),
                        reached: true,
                        aborted: false,
                    });
                }
            }
            last = z;
        }
        Ok(Refined {
            embedding: last,
            steps,
            omega: None,
            reached: false,
            aborted: false,
        })
    }

    /// Row-wise refinement of a `B × d` batch.
    pub fn refine_batch(&self, z_hat: &Tensor, z_x: &Tensor) -> Result<(Tensor, Vec<Refined>)> {
        if z_hat.shape() != z_x.shape() {
            return Err(Error::shape("fgim", z_hat.shape(), z_x.shape()));
        }
        let d = z_hat.cols();
        let mut out = Vec::with_capacity(z_hat.len());
        let mut info = Vec::with_capacity(z_hat.rows());
        for i in 0..z_hat.rows() {
            let a = Tensor::matrix(1, d, z_hat.row(i).to_vec())?;
            let b = Tensor::matrix(1, d, z_x.row(i).to_vec())?;
            let r = self.refine(&a, &b)?;
            out.extend_from_slice(r.embedding.data());
            info.push(r);
        }
        Ok((Tensor::matrix(z_hat.rows(), d, out)?, info))
    }
}
