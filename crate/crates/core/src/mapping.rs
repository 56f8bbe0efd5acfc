//! Mappings Φ from input embedding to output embedding. All maps act on row
//! vectors, `y·W + b`, and keep the dimension `d`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Graph, Module, Tensor, Var};
use crate::autoencoder::Autoencoder;
use crate::checkpoint::Section;
use crate::error::{Error, Result};
use crate::nn::{Bind, BoundLinear, Linear};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingKind {
    Mlp,
    OffsetNet,
    ResNet,
    MeanOffset,
}

impl fmt::Display for MappingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MappingKind::Mlp => "mlp",
            MappingKind::OffsetNet => "offsetnet",
            MappingKind::ResNet => "resnet",
            MappingKind::MeanOffset => "meanoffset",
        })
    }
}

impl FromStr for MappingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(MappingKind::Mlp),
            "offsetnet" => Ok(MappingKind::OffsetNet),
            "resnet" => Ok(MappingKind::ResNet),
            "meanoffset" | "mean-offset" => Ok(MappingKind::MeanOffset),
            other => Err(Error::Config(format!("unknown mapping kind {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingConfig {
    pub kind: MappingKind,
    pub dim: usize,
    pub layers: usize,
    /// OffsetNet starts at the identity map.
    pub zero_init_offsets: bool,
}

impl MappingConfig {
    pub fn new(kind: MappingKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            layers: 1,
            zero_init_offsets: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    /// `yʲ = σ(yʲ⁻¹Wʲ)`, then a linear output layer.
    Mlp { hidden: Vec<Linear>, output: Linear },
    /// `yʲ = yʲ⁻¹ + σ(yʲ⁻¹Wʲ)Vʲ`, no output layer.
    OffsetNet { w: Vec<Linear>, v: Vec<Linear> },
    /// `yʲ = σ(yʲ⁻¹ + σ(yʲ⁻¹Wʲ)Vʲ)`, then a linear output layer.
    ResNet {
        w: Vec<Linear>,
        v: Vec<Linear>,
        output: Linear,
    },
    /// `z + α(v2 − v1)`.
    MeanOffset { v1: Tensor, v2: Tensor, alpha: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mapping {
    pub config: MappingConfig,
    body: Body,
}

pub struct BoundMapping {
    kind: BoundBody,
    vars: Vec<Var>,
}

enum BoundBody {
    Mlp(Vec<BoundLinear>, BoundLinear),
    OffsetNet(Vec<BoundLinear>, Vec<BoundLinear>),
    ResNet(Vec<BoundLinear>, Vec<BoundLinear>, BoundLinear),
    MeanOffset(Var),
}

impl BoundMapping {
    /// Variables in [`Module::parameters`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn linears<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Linear> {
    (0..n).map(|_| Linear::init(d, d, rng)).collect()
}

impl Mapping {
    pub fn init<R: Rng + ?Sized>(config: MappingConfig, rng: &mut R) -> Result<Self> {
        let d = config.dim;
        if d == 0 {
            return Err(Error::Config("mapping dimension must be positive".into()));
        }
        if config.layers == 0 && config.kind != MappingKind::MeanOffset {
            return Err(Error::Config("mapping needs at least one layer".into()));
        }
        let k = config.layers;
        let body = match config.kind {
            MappingKind::Mlp => Body::Mlp {
                hidden: linears(k, d, rng),
                output: Linear::init(d, d, rng),
            },
            MappingKind::OffsetNet => {
                let w = linears(k, d, rng);
                let v = if config.zero_init_offsets {
                    (0..k).map(|_| Linear::zeros(d, d)).collect()
                } else {
                    linears(k, d, rng)
                };
                Body::OffsetNet { w, v }
            }
            MappingKind::ResNet => Body::ResNet {
                w: linears(k, d, rng),
                v: linears(k, d, rng),
                output: Linear::init(d, d, rng),
            },
            MappingKind::MeanOffset => Body::MeanOffset {
                v1: Tensor::zeros(&[d]),
                v2: Tensor::zeros(&[d]),
                alpha: 1.0,
            },
        };
        Ok(Self { config, body })
    }

    /// Mean-offset baseline from given class means.
    pub fn mean_offset(v1: Tensor, v2: Tensor, alpha: f64) -> Result<Self> {
        if v1.shape() != v2.shape() || v1.shape().len() != 1 {
            return Err(Error::shape("mean offset", v1.shape(), v2.shape()));
        }
        let d = v1.len();
        Ok(Self {
            config: MappingConfig {
                kind: MappingKind::MeanOffset,
                dim: d,
                layers: 0,
                zero_init_offsets: false,
            },
            body: Body::MeanOffset { v1, v2, alpha },
        })
    }

    pub fn kind(&self) -> MappingKind {
        self.config.kind
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn is_trainable(&self) -> bool {
        self.config.kind != MappingKind::MeanOffset
    }

    pub fn alpha(&self) -> Option<f64> {
        match &self.body {
            Body::MeanOffset { alpha, .. } => Some(*alpha),
            _ => None,
        }
    }

    pub fn set_alpha(&mut self, a: f64) -> Result<()> {
        match &mut self.body {
            Body::MeanOffset { alpha, .. } => {
                *alpha = a;
                Ok(())
            }
            _ => Err(Error::Config(
                "multiplier applies to the mean-offset mapping only".into(),
            )),
        }
    }

    pub fn bind(&self, g: &mut Graph, mode: Bind) -> BoundMapping {
        let bind_all =
            |g: &mut Graph, ls: &[Linear]| -> Vec<BoundLinear> { ls.iter().map(|l| l.bind(g, mode)).collect() };
        let kind = match &self.body {
            Body::Mlp { hidden, output } => {
                let h = bind_all(g, hidden);
                BoundBody::Mlp(h, output.bind(g, mode))
            }
            Body::OffsetNet { w, v } => {
                let w = bind_all(g, w);
                BoundBody::OffsetNet(w, bind_all(g, v))
            }
            Body::ResNet { w, v, output } => {
                let w = bind_all(g, w);
                let v = bind_all(g, v);
                BoundBody::ResNet(w, v, output.bind(g, mode))
            }
            Body::MeanOffset { v1, v2, alpha } => {
                let shift: Vec<f64> = v1.data().iter().zip(v2.data()).map(|(a, b)| alpha * (b - a)).collect();
                BoundBody::MeanOffset(g.constant(Tensor::vector(shift)))
            }
        };
        let vars = match &kind {
            BoundBody::Mlp(h, o) => h.iter().chain(std::iter::once(o)).flat_map(|l| l.vars()).collect(),
            BoundBody::OffsetNet(w, v) => w
                .iter()
                .zip(v)
                .flat_map(|(a, b)| [a.vars(), b.vars()].concat())
                .collect(),
            BoundBody::ResNet(w, v, o) => w
                .iter()
                .zip(v)
                .flat_map(|(a, b)| [a.vars(), b.vars()].concat())
                .chain(o.vars())
                .collect(),
            BoundBody::MeanOffset(_) => Vec::new(),
        };
        BoundMapping { kind, vars }
    }

    pub fn forward(&self, g: &mut Graph, b: &BoundMapping, z: Var) -> Result<Var> {
        let d = self.dim();
        if g.shape(z).len() != 2 || g.shape(z)[1] != d {
            return Err(Error::shape("mapping input", g.shape(z), &[g.value(z).rows(), d]));
        }
        match &b.kind {
            BoundBody::Mlp(hidden, output) => {
                let mut y = z;
                for l in hidden {
                    let pre = l.forward(g, y)?;
                    y = g.selu(pre);
                }
                output.forward(g, y)
            }
            BoundBody::OffsetNet(w, v) => {
                let mut y = z;
                for (wl, vl) in w.iter().zip(v) {
                    let offset = offset(g, wl, vl, y)?;
                    y = g.add(y, offset)?;
                }
                Ok(y)
            }
            BoundBody::ResNet(w, v, output) => {
                let mut y = z;
                for (wl, vl) in w.iter().zip(v) {
                    let offset = offset(g, wl, vl, y)?;
                    let sum = g.add(y, offset)?;
                    y = g.selu(sum);
                }
                output.forward(g, y)
            }
            BoundBody::MeanOffset(shift) => g.add(z, *shift),
        }
    }

    /// Eager `Φ(z)` for an `N × d` matrix.
    pub fn apply(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, Bind::Frozen);
        let zv = g.constant(z.clone());
        let y = self.forward(&mut g, &b, zv)?;
        Ok(g.value(y).clone())
    }

    pub fn to_section(&self) -> Section {
        let meta = json!({
            "config": self.config,
            "alpha": self.alpha(),
        });
        Section::from_module("mapping", meta, self)
    }

    pub fn from_section(section: &Section) -> Result<Self> {
        let config: MappingConfig = section.meta_field("config")?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut m = Self::init(config, &mut rng)?;
        section.load_into(&mut m)?;
        if let Some(a) = section.meta_field::<Option<f64>>("alpha")? {
            m.set_alpha(a)?;
        }
        Ok(m)
    }
}

fn offset(g: &mut Graph, w: &BoundLinear, v: &BoundLinear, y: Var) -> Result<Var> {
    let pre = w.forward(g, y)?;
    let act = g.selu(pre);
    v.forward(g, act)
}

impl Module for Mapping {
    fn parameters(&self) -> Vec<&Tensor> {
        match &self.body {
            Body::Mlp { hidden, output } => hidden
                .iter()
                .chain(std::iter::once(output))
                .flat_map(|l| l.parameters())
                .collect(),
            Body::OffsetNet { w, v } => w
                .iter()
                .zip(v)
                .flat_map(|(a, b)| [a.parameters(), b.parameters()].concat())
                .collect(),
            Body::ResNet { w, v, output } => w
                .iter()
                .zip(v)
                .flat_map(|(a, b)| [a.parameters(), b.parameters()].concat())
                .chain(output.parameters())
                .collect(),
            Body::MeanOffset { v1, v2, .. } => vec![v1, v2],
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.body {
            Body::Mlp { hidden, output } => hidden
                .iter_mut()
                .chain(std::iter::once(output))
                .flat_map(|l| l.parameters_mut())
                .collect(),
            Body::OffsetNet { w, v } => w
                .iter_mut()
                .zip(v.iter_mut())
                .flat_map(|(a, b)| {
                    let mut p = a.parameters_mut();
                    p.extend(b.parameters_mut());
                    p
                })
                .collect(),
            Body::ResNet { w, v, output } => {
                let mut p: Vec<&mut Tensor> = w
                    .iter_mut()
                    .zip(v.iter_mut())
                    .flat_map(|(a, b)| {
                        let mut p = a.parameters_mut();
                        p.extend(b.parameters_mut());
                        p
                    })
                    .collect();
                p.extend(output.parameters_mut());
                p
            }
            Body::MeanOffset { v1, v2, .. } => vec![v1, v2],
        }
    }
}

/// Row mean of an `N × d` matrix.
fn column_mean(z: &Tensor) -> Tensor {
    let n = z.rows() as f64;
    let mut mean = vec![0.0; z.cols()];
    for r in 0..z.rows() {
        for (m, x) in mean.iter_mut().zip(z.row(r)) {
            *m += x;
        }
    }
    Tensor::vector(mean.into_iter().map(|m| m / n).collect())
}

/// Mean-offset baseline: `v1` and `v2` are the mean encodings of the source
/// (style 0) and target (style 1) corpora.
pub fn fit_mean_offsets<S: AsRef<str>>(ae: &Autoencoder, corpus0: &[S], corpus1: &[S], alpha: f64) -> Result<Mapping> {
    if corpus0.is_empty() || corpus1.is_empty() {
        return Err(Error::Empty("class corpus for mean offsets"));
    }
    let v1 = column_mean(&ae.encode_texts(corpus0)?);
    let v2 = column_mean(&ae.encode_texts(corpus1)?);
    Mapping::mean_offset(v1, v2, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradient, numerical_gradient};
    use crate::autodiff::{SELU_ALPHA, SELU_SCALE};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn selu(x: f64) -> f64 {
        if x > 0.0 {
            SELU_SCALE * x
        } else {
            SELU_SCALE * SELU_ALPHA * (x.exp() - 1.0)
        }
    }

    /// `x·W + b` by explicit loops.
    fn affine(x: &[f64], l: &Linear) -> Vec<f64> {
        let (i, o) = (l.inputs(), l.outputs());
        (0..o)
            .map(|c| (0..i).map(|r| x[r] * l.weight.at(r, c)).sum::<f64>() + l.bias.data()[c])
            .collect()
    }

    fn random(kind: MappingKind, d: usize, seed: u64) -> Mapping {
        let mut cfg = MappingConfig::new(kind, d);
        cfg.zero_init_offsets = false;
        Mapping::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn input(d: usize, seed: u64) -> Tensor {
        Tensor::uniform(&[3, d], 1.5, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_weights_give_zero_mlp_output() {
        let mut m = random(MappingKind::Mlp, 4, 0);
        for p in m.parameters_mut() {
            *p = Tensor::zeros(p.shape());
        }
        assert!(m.apply(&input(4, 1)).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mlp_matches_manual_composition() {
        let m = random(MappingKind::Mlp, 4, 2);
        let z = input(4, 3);
        let out = m.apply(&z).unwrap();
        let Body::Mlp { hidden, output } = &m.body else {
            unreachable!()
        };
        for r in 0..3 {
            let h: Vec<f64> = affine(z.row(r), &hidden[0]).into_iter().map(selu).collect();
            let y = affine(&h, output);
            for (a, b) in out.row(r).iter().zip(&y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn offsetnet_matches_manual_composition() {
        let m = random(MappingKind::OffsetNet, 4, 4);
        let z = input(4, 5);
        let out = m.apply(&z).unwrap();
        let Body::OffsetNet { w, v } = &m.body else {
            unreachable!()
        };
        for r in 0..3 {
            let h: Vec<f64> = affine(z.row(r), &w[0]).into_iter().map(selu).collect();
            let off = affine(&h, &v[0]);
            for ((a, zi), o) in out.row(r).iter().zip(z.row(r)).zip(&off) {
                assert!((a - (zi + o)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resnet_matches_manual_composition() {
        let m = random(MappingKind::ResNet, 4, 6);
        let z = input(4, 7);
        let out = m.apply(&z).unwrap();
        let Body::ResNet { w, v, output } = &m.body else {
            unreachable!()
        };
        for r in 0..3 {
            let h: Vec<f64> = affine(z.row(r), &w[0]).into_iter().map(selu).collect();
            let off = affine(&h, &v[0]);
            let y: Vec<f64> = z.row(r).iter().zip(&off).map(|(a, b)| selu(a + b)).collect();
            let expect = affine(&y, output);
            for (a, b) in out.row(r).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn offsetnet_zero_offsets_is_identity() {
        let cfg = MappingConfig::new(MappingKind::OffsetNet, 5);
        let m = Mapping::init(cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let z = input(5, 9);
        assert_eq!(m.apply(&z).unwrap(), z);
    }

    #[test]
    fn resnet_with_zero_offsets_and_output_is_zero() {
        let mut m = random(MappingKind::ResNet, 4, 10);
        if let Body::ResNet { v, output, .. } = &mut m.body {
            v[0] = Linear::zeros(4, 4);
            *output = Linear::zeros(4, 4);
        }
        assert!(m.apply(&input(4, 11)).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn parameter_counts() {
        let d = 7;
        let mlp = random(MappingKind::Mlp, d, 0).num_parameters();
        let off = random(MappingKind::OffsetNet, d, 0).num_parameters();
        let res = random(MappingKind::ResNet, d, 0).num_parameters();
        assert_eq!(mlp, off);
        assert_eq!(2 * res, 3 * off);
    }

    #[test]
    fn output_dimension_is_preserved() {
        for kind in [
            MappingKind::Mlp,
            MappingKind::OffsetNet,
            MappingKind::ResNet,
            MappingKind::MeanOffset,
        ] {
            let m = random(kind, 6, 1);
            assert_eq!(m.apply(&input(6, 2)).unwrap().shape(), &[3, 6]);
        }
    }

    #[test]
    fn wrong_input_dimension_is_rejected() {
        let m = random(MappingKind::OffsetNet, 6, 1);
        assert!(m.apply(&input(5, 2)).is_err());
    }

    #[test]
    fn trainable_gradients_match_finite_differences() {
        let z = input(3, 12);
        let target = input(3, 13);
        for kind in [MappingKind::Mlp, MappingKind::OffsetNet, MappingKind::ResNet] {
            let m = random(kind, 3, 14);
            let loss_of = |m: &Mapping, mode: Bind| {
                let mut g = Graph::new();
                let b = m.bind(&mut g, mode);
                let zv = g.constant(z.clone());
                let tv = g.constant(target.clone());
                let y = m.forward(&mut g, &b, zv).unwrap();
                let l = g.cosine_distance(y, tv).unwrap();
                (g, b, l)
            };
            let (g, b, l) = loss_of(&m, Bind::Trainable);
            let grads = g.backward(l).unwrap();
            for (k, &var) in b.vars().iter().enumerate() {
                let numeric = numerical_gradient(m.parameters()[k], 1e-5, |t| {
                    let mut probe = m.clone();
                    *probe.parameters_mut()[k] = t.clone();
                    let (g, _, l) = loss_of(&probe, Bind::Frozen);
                    g.value(l).item()
                });
                check_gradient(&grads.wrt(var), &numeric, 1e-4).unwrap();
            }
        }
    }

    #[test]
    fn mean_offset_arithmetic() {
        let v1 = Tensor::vector(vec![1.0, 0.0]);
        let v2 = Tensor::vector(vec![0.0, 2.0]);
        let z = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let m = Mapping::mean_offset(v1.clone(), v2.clone(), 2.0).unwrap();
        // 0.5 + 2(0 − 1), 0.5 + 2(2 − 0)
        assert_eq!(m.apply(&z).unwrap().data(), &[-1.5, 4.5]);
        let zero = Mapping::mean_offset(v1.clone(), v2, 0.0).unwrap();
        assert_eq!(zero.apply(&z).unwrap(), z);
        let same = Mapping::mean_offset(v1.clone(), v1, 3.0).unwrap();
        assert_eq!(same.apply(&z).unwrap(), z);
    }

    #[test]
    fn checkpoint_section_round_trip() {
        for kind in [MappingKind::Mlp, MappingKind::OffsetNet, MappingKind::ResNet] {
            let m = random(kind, 4, 3);
            assert_eq!(Mapping::from_section(&m.to_section()).unwrap(), m);
        }
        let m = Mapping::mean_offset(Tensor::vector(vec![1.0, 2.0]), Tensor::vector(vec![3.0, 4.0]), 0.7).unwrap();
        assert_eq!(Mapping::from_section(&m.to_section()).unwrap(), m);
    }

    fn tiny_ae() -> Autoencoder {
        use crate::autoencoder::AeConfig;
        use crate::text::Vocab;
        let vocab = Vocab::build(["good bad food place nice awful"], 50).unwrap();
        let cfg = AeConfig {
            emb_dim: 4,
            hidden: 3,
            shared_embeddings: true,
        };
        Autoencoder::init(cfg, vocab, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn mean_offsets_are_class_averages() {
        let ae = tiny_ae();
        let neg = ["bad food", "awful place", "bad place nice"];
        let pos = ["good food", "nice place", "good"];
        let m = fit_mean_offsets(&ae, &neg, &pos, 1.0).unwrap();
        let Body::MeanOffset { v1, v2, .. } = &m.body else {
            unreachable!()
        };
        for (corpus, mean) in [(&neg, v1), (&pos, v2)] {
            let rows: Vec<Tensor> = corpus.iter().map(|s| ae.encode_texts(&[*s]).unwrap()).collect();
            for c in 0..3 {
                let hand = (rows[0].at(0, c) + rows[1].at(0, c) + rows[2].at(0, c)) / 3.0;
                assert!((mean.data()[c] - hand).abs() < 1e-12);
            }
        }
        let shuffled = ["awful place", "bad place nice", "bad food"];
        let m2 = fit_mean_offsets(&ae, &shuffled, &pos, 1.0).unwrap();
        let z = Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        assert!(m.apply(&z).unwrap().max_abs_diff(&m2.apply(&z).unwrap()) < 1e-12);
    }

    #[test]
    fn equal_class_corpora_give_identity() {
        let ae = tiny_ae();
        let c = ["good food", "bad place"];
        let m = fit_mean_offsets(&ae, &c, &c, 5.0).unwrap();
        let z = Tensor::from_rows(&[vec![0.1, -0.2, 0.3]]).unwrap();
        assert_eq!(m.apply(&z).unwrap(), z);
        let empty: [&str; 0] = [];
        assert!(fit_mean_offsets(&ae, &empty, &c, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn offset_is_bounded_by_v_norm(seed in 0u64..500) {
            let m = random(MappingKind::OffsetNet, 4, seed);
            let z = input(4, seed + 1);
            let out = m.apply(&z).unwrap();
            let Body::OffsetNet { w, v } = &m.body else { unreachable!() };
            // Frobenius norm of the augmented matrix [V; b] bounds ‖[h, 1]·[V; b]‖.
            let vnorm = (v[0].weight.norm().powi(2) + v[0].bias.norm().powi(2)).sqrt();
            for r in 0..3 {
                let h: Vec<f64> = affine(z.row(r), &w[0]).into_iter().map(selu).collect();
                let hnorm = (h.iter().map(|x| x * x).sum::<f64>() + 1.0).sqrt();
                let moved: f64 = out.row(r).iter().zip(z.row(r)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                prop_assert!(moved <= vnorm * hnorm + 1e-12);
            }
        }
    }
}
