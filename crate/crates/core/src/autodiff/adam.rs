use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are created lazily on the first step
/// and must keep the shapes of the parameters they track.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                config.lr
            )));
        }
        Ok(Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub(crate) fn from_parts(config: AdamConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        Self { config, step, m, v }
    }

    /// One update of every parameter from its gradient. Nothing is modified
    /// if any gradient is non-finite or mis-shaped.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam", &[params.len()], &[grads.len()]));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
            if let Some(m) = self.m.get(i) {
                if m.shape() != p.shape() {
                    return Err(Error::shape("adam moments", m.shape(), p.shape()));
                }
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() {
            return Err(Error::shape("adam state", &[self.m.len()], &[params.len()]));
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                let mj = &mut m.data_mut()[j];
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                let vj = &mut v.data_mut()[j];
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let m_hat = m.data()[j] / bc1;
                let v_hat = v.data()[j] / bc2;
                pd[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
