//! Word-level vocabulary, corpus loading, the denoising noise function and
//! padded batch iteration.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

pub const DEFAULT_VOCAB_CAP: usize = 30_000;
pub const MAX_TOKENS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Keeps the `cap − 4` most frequent whitespace tokens; ties go to the
    /// token seen first.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>, cap: usize) -> Result<Self> {
        if cap < RESERVED.len() + 1 {
            return Err(Error::Config(format!("vocabulary cap {cap} is below 5")));
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for line in lines {
            for tok in line.split_whitespace() {
                let e = counts.entry(tok).or_insert((0, order));
                if e.0 == 0 {
                    order += 1;
                }
                e.0 += 1;
            }
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (c, o))| (t, c, o)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(
                ranked
                    .into_iter()
                    .filter(|(t, _, _)| !RESERVED.contains(t))
                    .take(cap - RESERVED.len())
                    .map(|(t, _, _)| t.to_string()),
            )
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Rebuilds from a full token list whose first entries are the reserved
    /// tokens.
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(t, r)| t != r) {
            return Err(Error::Checkpoint(
                "vocabulary does not start with the reserved tokens".into(),
            ));
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Checkpoint("vocabulary has duplicate tokens".into()));
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Whitespace tokenization, OOV → UNK, truncated to [`MAX_TOKENS`].
    pub fn encode(&self, text: &str) -> TokenSeq {
        TokenSeq(
            text.split_whitespace()
                .take(MAX_TOKENS)
                .map(|t| self.id(t).unwrap_or(UNK))
                .collect(),
        )
    }

    /// Joins tokens with single spaces, stopping before EOS and skipping
    /// PAD/BOS.
    pub fn decode(&self, seq: &[usize]) -> String {
        let mut out = Vec::new();
        for &id in seq {
            match id {
                EOS => break,
                PAD | BOS => continue,
                _ => out.push(self.token(id).unwrap_or(RESERVED[UNK])),
            }
        }
        out.join(" ")
    }

    /// One token per line; the line index is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_token_list(s.lines().map(str::to_string).collect())
    }
}

/// Encoded sentence without BOS/EOS/PAD.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<usize>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParallelCorpus {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
}

impl ParallelCorpus {
    pub fn new(sources: Vec<String>, targets: Vec<String>) -> Result<Self> {
        if sources.len() != targets.len() {
            return Err(Error::shape("parallel corpus", &[sources.len()], &[targets.len()]));
        }
        Ok(Self { sources, targets })
    }

    pub fn load(source: &Path, target: &Path) -> Result<Self> {
        Self::new(read_lines(source)?, read_lines(target)?)
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct LabeledCorpus {
    pub texts: Vec<String>,
    pub labels: Vec<u8>,
}

impl LabeledCorpus {
    pub fn new(texts: Vec<String>, labels: Vec<u8>) -> Result<Self> {
        if texts.len() != labels.len() {
            return Err(Error::shape("labeled corpus", &[texts.len()], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Config(format!("label {bad} is not binary")));
        }
        Ok(Self { texts, labels })
    }

    /// `label<TAB>text` lines with labels `0`/`1`.
    pub fn load_tsv(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut texts = Vec::new();
        let mut labels = Vec::new();
        for (n, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: msg.to_string(),
            };
            let (label, text) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected label<TAB>text"))?;
            let label = match label.trim() {
                "0" => 0,
                "1" => 1,
                _ => return Err(parse_err("label must be 0 or 1")),
            };
            texts.push(text.to_string());
            labels.push(label);
        }
        Self::new(texts, labels)
    }

    /// One file per class.
    pub fn load_class_files(negative: &Path, positive: &Path) -> Result<Self> {
        let neg = read_lines(negative)?;
        let pos = read_lines(positive)?;
        let labels = std::iter::repeat_n(0, neg.len())
            .chain(std::iter::repeat_n(1, pos.len()))
            .collect();
        Self::new(neg.into_iter().chain(pos).collect(), labels)
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn class(&self, label: u8) -> Vec<&str> {
        self.texts
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == label)
            .map(|(t, _)| t.as_str())
            .collect()
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let s: String = self
            .texts
            .iter()
            .zip(&self.labels)
            .map(|(t, l)| format!("{l}\t{t}\n"))
            .collect();
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Non-empty lines of a UTF-8 file.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut s = lines.join("\n");
    if !lines.is_empty() {
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub p_drop: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { p_drop: 0.1 }
    }
}

impl NoiseConfig {
    pub fn new(p_drop: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_drop) {
            return Err(Error::Config(format!("p_drop {p_drop} outside [0, 1]")));
        }
        Ok(Self { p_drop })
    }
}

/// Deletes each token independently with probability `p_drop`. If every token
/// would be deleted, one uniformly chosen token survives.
pub fn apply_noise<R: Rng + ?Sized>(seq: &TokenSeq, cfg: &NoiseConfig, rng: &mut R) -> TokenSeq {
    if seq.is_empty() || cfg.p_drop == 0.0 {
        return seq.clone();
    }
    let kept: Vec<usize> = seq.0.iter().copied().filter(|_| !rng.random_bool(cfg.p_drop)).collect();
    if kept.is_empty() {
        TokenSeq(vec![seq.0[rng.random_range(0..seq.len())]])
    } else {
        TokenSeq(kept)
    }
}

/// Right-padded batch of token sequences, time-major accessors included.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    /// Corpus positions of the rows.
    pub indices: Vec<usize>,
    pub ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    pub fn new(indices: Vec<usize>, seqs: &[&TokenSeq]) -> Self {
        let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        Self::with_width(indices, seqs, width)
    }

    /// Pads to at least `width` columns.
    pub fn with_width(indices: Vec<usize>, seqs: &[&TokenSeq], width: usize) -> Self {
        let width = width.max(seqs.iter().map(|s| s.len()).max().unwrap_or(0));
        let ids = seqs
            .iter()
            .map(|s| {
                let mut row = s.0.clone();
                row.resize(width, PAD);
                row
            })
            .collect();
        Self {
            indices,
            ids,
            lengths: seqs.iter().map(|s| s.len()).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn width(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    /// Column `t` of the id matrix.
    pub fn column(&self, t: usize) -> Vec<usize> {
        self.ids.iter().map(|row| row[t]).collect()
    }
}

/// Batch index groups over `0..n`, shuffled when `rng` is given.
pub fn batch_indices<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: Option<&mut R>) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Iterator of padded batches over a corpus of token sequences.
pub struct BatchIter<'a> {
    corpus: &'a [TokenSeq],
    groups: std::vec::IntoIter<Vec<usize>>,
}

impl<'a> BatchIter<'a> {
    pub fn new<R: Rng + ?Sized>(corpus: &'a [TokenSeq], batch_size: usize, rng: Option<&mut R>) -> Result<Self> {
        Ok(Self {
            corpus,
            groups: batch_indices(corpus.len(), batch_size, rng)?.into_iter(),
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = PaddedBatch;

    fn next(&mut self) -> Option<PaddedBatch> {
        let idx = self.groups.next()?;
        let seqs: Vec<&TokenSeq> = idx.iter().map(|&i| &self.corpus[i]).collect();
        Some(PaddedBatch::new(idx, &seqs))
    }
}
