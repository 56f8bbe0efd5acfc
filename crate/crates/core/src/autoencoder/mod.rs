//! Denoising sequence autoencoder: bidirectional LSTM encoder whose two final
//! states are averaged into a `d`-dimensional bottleneck, and an LSTM decoder
//! whose initial hidden state is that bottleneck.

mod train;

pub use train::{pretrain_dae, DaeConfig, DaeEpoch, DaeTrainer};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Graph, Module, Tensor, Var};
use crate::checkpoint::{parameter_hash, Container, Section};
use crate::error::{Error, Result};
use crate::nn::{bind_tensor, Bind, BoundLinear, BoundLstm, Linear, LstmCell};
use crate::text::{PaddedBatch, TokenSeq, Vocab, BOS, EOS, MAX_TOKENS, PAD};

const ENCODE_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    /// Token embedding size (LSTM input size).
    pub emb_dim: usize,
    /// Bottleneck size `d`, equal to each LSTM's hidden size.
    pub hidden: usize,
    /// Decoder reuses the encoder's token embedding.
    pub shared_embeddings: bool,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            emb_dim: 300,
            hidden: 64,
            shared_embeddings: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub embedding: Tensor,
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    /// `None` when the encoder embedding is shared.
    pub embedding: Option<Tensor>,
    pub lstm: LstmCell,
    pub output: Linear,
}

/// Pretrained autoencoder together with its vocabulary. Downstream code only
/// ever receives `&Autoencoder`, so a frozen model cannot be mutated there.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub config: AeConfig,
    pub vocab: Vocab,
    encoder: EncoderParams,
    decoder: DecoderParams,
    frozen: bool,
}

pub(crate) struct BoundAutoencoder {
    embedding: Var,
    forward: BoundLstm,
    backward: BoundLstm,
    dec_embedding: Var,
    lstm: BoundLstm,
    output: BoundLinear,
}

impl BoundAutoencoder {
    /// Variables in [`Module::parameters`] order.
    pub(crate) fn vars(&self, shared: bool) -> Vec<Var> {
        let mut v = vec![self.embedding];
        v.extend(self.forward.vars());
        v.extend(self.backward.vars());
        if !shared {
            v.push(self.dec_embedding);
        }
        v.extend(self.lstm.vars());
        v.extend(self.output.vars());
        v
    }
}

impl Module for Autoencoder {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = vec![&self.encoder.embedding];
        p.extend(self.encoder.forward.parameters());
        p.extend(self.encoder.backward.parameters());
        if let Some(e) = &self.decoder.embedding {
            p.push(e);
        }
        p.extend(self.decoder.lstm.parameters());
        p.extend(self.decoder.output.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![&mut self.encoder.embedding];
        p.extend(self.encoder.forward.parameters_mut());
        p.extend(self.encoder.backward.parameters_mut());
        if let Some(e) = &mut self.decoder.embedding {
            p.push(e);
        }
        p.extend(self.decoder.lstm.parameters_mut());
        p.extend(self.decoder.output.parameters_mut());
        p
    }
}

/// Teacher-forcing schedule for [`Autoencoder::teacher_forced_loss`].
pub struct TeacherForcing<'r, R: Rng + ?Sized> {
    pub prob: f64,
    pub rng: &'r mut R,
}

impl Autoencoder {
    pub fn init<R: Rng + ?Sized>(config: AeConfig, vocab: Vocab, rng: &mut R) -> Result<Self> {
        if config.hidden == 0 || config.emb_dim == 0 {
            return Err(Error::Config("autoencoder sizes must be positive".into()));
        }
        let v = vocab.len();
        let (e, h) = (config.emb_dim, config.hidden);
        let encoder = EncoderParams {
            embedding: Tensor::normal(&[v, e], 1.0, rng),
            forward: LstmCell::init(e, h, rng),
            backward: LstmCell::init(e, h, rng),
        };
        let decoder = DecoderParams {
            embedding: (!config.shared_embeddings).then(|| Tensor::normal(&[v, e], 1.0, rng)),
            lstm: LstmCell::init(e, h, rng),
            output: Linear::init(h, v, rng),
        };
        Ok(Self {
            config,
            vocab,
            encoder,
            decoder,
            frozen: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.hidden
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub(crate) fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn parameter_hash(&self) -> String {
        parameter_hash(self)
    }

    pub(crate) fn bind(&self, g: &mut Graph, mode: Bind) -> BoundAutoencoder {
        let embedding = bind_tensor(g, &self.encoder.embedding, mode);
        let forward = self.encoder.forward.bind(g, mode);
        let backward = self.encoder.backward.bind(g, mode);
        let dec_embedding = match &self.decoder.embedding {
            Some(t) => bind_tensor(g, t, mode),
            None => embedding,
        };
        BoundAutoencoder {
            embedding,
            forward,
            backward,
            dec_embedding,
            lstm: self.decoder.lstm.bind(g, mode),
            output: self.decoder.output.bind(g, mode),
        }
    }

    /// `z = ½(h_fwd + h_bwd)` where each direction's final state is taken at
    /// the sequence's true length.
    pub(crate) fn encode_graph(&self, g: &mut Graph, b: &BoundAutoencoder, batch: &PaddedBatch) -> Result<Var> {
        if batch.lengths.contains(&0) {
            return Err(Error::Empty("sequence in encoder batch"));
        }
        let n = batch.size();
        let h = self.config.hidden;
        let width = batch.width();
        let zeros = Tensor::zeros(&[n, h]);

        let run = |g: &mut Graph, cell: &BoundLstm, steps: &mut dyn Iterator<Item = usize>| {
            let mut hs = g.constant(zeros.clone());
            let mut cs = g.constant(zeros.clone());
            for t in steps {
                let x = g.gather_rows(b.embedding, &batch.column(t))?;
                let (h_new, c_new) = cell.step(g, x, hs, cs)?;
                if batch.lengths.iter().all(|&l| t < l) {
                    hs = h_new;
                    cs = c_new;
                } else {
                    let keep: Vec<f64> = batch.lengths.iter().map(|&l| if t < l { 1.0 } else { 0.0 }).collect();
                    let m = g.constant(Tensor::matrix(n, 1, keep.clone())?);
                    let inv = g.constant(Tensor::matrix(n, 1, keep.iter().map(|k| 1.0 - k).collect())?);
                    hs = select(g, m, inv, h_new, hs)?;
                    cs = select(g, m, inv, c_new, cs)?;
                }
            }
            Ok::<Var, Error>(hs)
        };
        let h_fwd = run(g, &b.forward, &mut (0..width))?;
        let h_bwd = run(g, &b.backward, &mut (0..width).rev())?;
        let sum = g.add(h_fwd, h_bwd)?;
        Ok(g.scale(sum, 0.5))
    }

    /// Mean cross-entropy over all target tokens plus EOS. At each step the
    /// next input is the gold token with probability `tf.prob`, otherwise the
    /// previous argmax. Padded positions are masked.
    pub(crate) fn teacher_forced_loss<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        b: &BoundAutoencoder,
        z: Var,
        targets: &PaddedBatch,
        tf: TeacherForcing<'_, R>,
    ) -> Result<Var> {
        let TeacherForcing { prob, rng } = tf;
        let n = targets.size();
        let h = self.config.hidden;
        if g.shape(z) != [n, h] {
            return Err(Error::shape("decoder init", g.shape(z), &[n, h]));
        }
        let total: usize = targets.lengths.iter().map(|l| l + 1).sum();
        let scale = 1.0 / total as f64;
        let steps = targets.width() + 1;

        let mut hs = z;
        let mut cs = g.constant(Tensor::zeros(&[n, h]));
        let mut inputs = vec![BOS; n];
        let mut loss: Option<Var> = None;
        for t in 0..steps {
            let x = g.gather_rows(b.dec_embedding, &inputs)?;
            let (h_new, c_new) = b.lstm.step(g, x, hs, cs)?;
            hs = h_new;
            cs = c_new;
            let logits = b.output.forward(g, hs)?;
            let gold: Vec<Option<usize>> = (0..n)
                .map(|i| {
                    let len = targets.lengths[i];
                    match t.cmp(&len) {
                        std::cmp::Ordering::Less => Some(targets.ids[i][t]),
                        std::cmp::Ordering::Equal => Some(EOS),
                        std::cmp::Ordering::Greater => None,
                    }
                })
                .collect();
            let step_loss = g.softmax_xent_masked(logits, &gold, scale)?;
            loss = Some(match loss {
                Some(acc) => g.add(acc, step_loss)?,
                None => step_loss,
            });
            if t + 1 < steps {
                let predicted = g.value(logits).argmax_rows();
                for i in 0..n {
                    let use_gold = if prob >= 1.0 {
                        true
                    } else if prob <= 0.0 {
                        false
                    } else {
                        rng.random_bool(prob)
                    };
                    inputs[i] = if use_gold { gold[i].unwrap_or(PAD) } else { predicted[i] };
                }
            }
        }
        Ok(loss.expect("at least one decoding step"))
    }

    fn greedy_graph(&self, g: &mut Graph, b: &BoundAutoencoder, z: Var, max_len: usize) -> Result<Vec<TokenSeq>> {
        let n = g.value(z).rows();
        let mut hs = z;
        let mut cs = g.constant(Tensor::zeros(&[n, self.config.hidden]));
        let mut inputs = vec![BOS; n];
        let mut out = vec![Vec::new(); n];
        let mut done = vec![false; n];
        for _ in 0..max_len {
            let x = g.gather_rows(b.dec_embedding, &inputs)?;
            let (h_new, c_new) = b.lstm.step(g, x, hs, cs)?;
            hs = h_new;
            cs = c_new;
            let logits = b.output.forward(g, hs)?;
            let next = g.value(logits).argmax_rows();
            for i in 0..n {
                if done[i] {
                    continue;
                }
                if next[i] == EOS {
                    done[i] = true;
                } else {
                    out[i].push(next[i]);
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
            inputs = next;
        }
        Ok(out.into_iter().map(TokenSeq).collect())
    }

    /// Encodes token sequences into an `N × d` matrix.
    pub fn encode(&self, seqs: &[TokenSeq]) -> Result<Tensor> {
        let d = self.dim();
        let mut data = Vec::with_capacity(seqs.len() * d);
        for chunk in seqs.chunks(ENCODE_CHUNK) {
            let mut g = Graph::new();
            let b = self.bind(&mut g, Bind::Frozen);
            let refs: Vec<&TokenSeq> = chunk.iter().collect();
            let batch = PaddedBatch::new((0..chunk.len()).collect(), &refs);
            let z = self.encode_graph(&mut g, &b, &batch)?;
            data.extend_from_slice(g.value(z).data());
        }
        Tensor::matrix(seqs.len(), d, data)
    }

    /// Encodes raw text lines.
    pub fn encode_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<Tensor> {
        let seqs: Vec<TokenSeq> = texts.iter().map(|t| self.vocab.encode(t.as_ref())).collect();
        self.encode(&seqs)
    }

    /// Greedy decoding from BOS until EOS or `max_len` tokens.
    pub fn decode_greedy(&self, z: &Tensor, max_len: usize) -> Result<Vec<TokenSeq>> {
        let d = self.dim();
        if z.cols() != d || z.shape().len() > 2 {
            return Err(Error::shape("decode_greedy", z.shape(), &[z.rows(), d]));
        }
        let mut out = Vec::with_capacity(z.rows());
        let rows: Vec<usize> = (0..z.rows()).collect();
        for chunk in rows.chunks(ENCODE_CHUNK) {
            let mut g = Graph::new();
            let b = self.bind(&mut g, Bind::Frozen);
            let zc = g.constant(z.select_rows(chunk)?);
            out.extend(self.greedy_graph(&mut g, &b, zc, max_len)?);
        }
        Ok(out)
    }

    pub fn decode_texts(&self, z: &Tensor) -> Result<Vec<String>> {
        Ok(self
            .decode_greedy(z, MAX_TOKENS)?
            .iter()
            .map(|s| self.vocab.decode(s.ids()))
            .collect())
    }

    /// `dec(enc(x))` for text lines.
    pub fn reconstruct(&self, texts: &[String]) -> Result<Vec<String>> {
        let z = self.encode_texts(texts)?;
        self.decode_texts(&z)
    }

    /// Mean teacher-forced loss of a batch with a frozen copy of the model.
    pub fn reconstruction_loss<R: Rng + ?Sized>(
        &self,
        inputs: &PaddedBatch,
        targets: &PaddedBatch,
        tf_prob: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, Bind::Frozen);
        let z = self.encode_graph(&mut g, &b, inputs)?;
        let loss = self.teacher_forced_loss(&mut g, &b, z, targets, TeacherForcing { prob: tf_prob, rng })?;
        Ok(g.value(loss).item())
    }

    /// Position-wise token accuracy of greedy reconstructions; extra or
    /// missing tokens count as errors.
    pub fn reconstruction_accuracy(&self, seqs: &[TokenSeq]) -> Result<f64> {
        if seqs.is_empty() {
            return Err(Error::Empty("reconstruction set"));
        }
        let z = self.encode(seqs)?;
        let outputs = self.decode_greedy(&z, MAX_TOKENS)?;
        Ok(token_accuracy(seqs, &outputs))
    }

    pub fn to_section(&self) -> Section {
        let meta = json!({
            "config": self.config,
            "vocab": self.vocab.tokens(),
            "frozen": self.frozen,
            "hash": self.parameter_hash(),
        });
        Section::from_module("autoencoder", meta, self)
    }

    pub fn from_section(section: &Section) -> Result<Self> {
        let config: AeConfig = section.meta_field("config")?;
        let vocab = Vocab::from_token_list(section.meta_field("vocab")?)?;
        let frozen: bool = section.meta_field("frozen")?;
        // Shapes come from the config; values are then checked against them.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut ae = Self::init(config, vocab, &mut rng)?;
        section.load_into(&mut ae)?;
        ae.frozen = frozen;
        Ok(ae)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Container::new().with(self.to_section()).save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_section(Container::load(path)?.section("autoencoder")?)
    }
}

/// `mask·new + inv·old`, exact for 0/1 masks.
fn select(g: &mut Graph, mask: Var, inv: Var, new: Var, old: Var) -> Result<Var> {
    let a = g.mul(new, mask)?;
    let b = g.mul(old, inv)?;
    g.add(a, b)
}

/// Correct positions over `max(len(ref), len(out))` summed across the set.
pub fn token_accuracy(references: &[TokenSeq], outputs: &[TokenSeq]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (r, o) in references.iter().zip(outputs) {
        correct += r.0.iter().zip(&o.0).filter(|(a, b)| a == b).count();
        total += r.len().max(o.len());
    }
    if total == 0 {
        1.0
    } else {
        correct as f64 / total as f64
    }
}
