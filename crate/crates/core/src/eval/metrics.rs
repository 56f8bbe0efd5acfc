//! BLEU, SARI and self-BLEU over whitespace-tokenized sentences.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;
/// Add-ε applied to zero clipped counts in sentence-level BLEU.
pub const SENTENCE_SMOOTHING: f64 = 1e-9;

type Counts<'a> = HashMap<&'a [&'a str], usize>;

fn ngrams<'a>(tokens: &'a [&'a str], n: usize) -> Counts<'a> {
    let mut c = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *c.entry(w).or_insert(0) += 1;
        }
    }
    c
}

fn tokenize(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Clipped n-gram matches and hypothesis n-gram total for one sentence.
fn clipped(hyp: &[&str], refs: &[Vec<&str>], n: usize) -> (usize, usize) {
    let h = ngrams(hyp, n);
    let mut max_ref: HashMap<&[&str], usize> = HashMap::new();
    for r in refs {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = h
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    let total: usize = h.values().sum();
    (matched, total)
}

/// Reference length closest to `hyp_len`, the shorter one on ties.
fn closest_ref_len(hyp_len: usize, refs: &[Vec<&str>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
        .unwrap_or(0)
}

struct Stats {
    matched: [usize; MAX_ORDER],
    total: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

fn stats(hyps: &[Vec<&str>], refs: &[Vec<Vec<&str>>]) -> Stats {
    let mut s = Stats {
        matched: [0; MAX_ORDER],
        total: [0; MAX_ORDER],
        hyp_len: 0,
        ref_len: 0,
    };
    for (h, r) in hyps.iter().zip(refs) {
        for n in 1..=MAX_ORDER {
            let (m, t) = clipped(h, r, n);
            s.matched[n - 1] += m;
            s.total[n - 1] += t;
        }
        s.hyp_len += h.len();
        s.ref_len += closest_ref_len(h.len(), r);
    }
    s
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

fn check_aligned(what: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(what, &[a], &[b]));
    }
    Ok(())
}

/// Corpus BLEU-4 with uniform weights, clipped counts summed over the corpus
/// and a brevity penalty against the closest reference length. Unsmoothed:
/// any order without a match gives 0.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(hypotheses: &[S], references: &[Vec<T>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Empty("hypothesis set"));
    }
    check_aligned("bleu references", hypotheses.len(), references.len())?;
    let hyps: Vec<Vec<&str>> = hypotheses.iter().map(|h| tokenize(h.as_ref())).collect();
    let refs: Vec<Vec<Vec<&str>>> = references
        .iter()
        .map(|rs| rs.iter().map(|r| tokenize(r.as_ref())).collect())
        .collect();
    let s = stats(&hyps, &refs);
    if s.matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..MAX_ORDER)
        .map(|i| (s.matched[i] as f64 / s.total[i] as f64).ln())
        .sum::<f64>()
        / MAX_ORDER as f64;
    Ok(brevity_penalty(s.hyp_len, s.ref_len) * log_p.exp())
}

/// Sentence BLEU with add-ε smoothing of zero matches.
pub fn sentence_bleu<T: AsRef<str>>(hypothesis: &str, references: &[T]) -> f64 {
    let h = tokenize(hypothesis);
    let r: Vec<Vec<&str>> = references.iter().map(|x| tokenize(x.as_ref())).collect();
    let s = stats(std::slice::from_ref(&h), std::slice::from_ref(&r));
    let log_p: f64 = (0..MAX_ORDER)
        .map(|i| {
            let m = if s.matched[i] == 0 {
                SENTENCE_SMOOTHING
            } else {
                s.matched[i] as f64
            };
            (m / s.total[i].max(1) as f64).ln()
        })
        .sum::<f64>()
        / MAX_ORDER as f64;
    brevity_penalty(s.hyp_len, s.ref_len) * log_p.exp()
}

/// BLEU of `outputs` against their own `inputs` as single references.
pub fn self_bleu<S: AsRef<str>, T: AsRef<str>>(inputs: &[S], outputs: &[T]) -> Result<f64> {
    let refs: Vec<Vec<&str>> = inputs.iter().map(|i| vec![i.as_ref()]).collect();
    bleu(outputs, &refs)
}

/// `a − b` on multisets, dropping non-positive counts.
fn counter_sub<'a>(a: &Counts<'a>, b: &Counts<'a>) -> Counts<'a> {
    a.iter()
        .filter_map(|(g, &c)| {
            let d = c.saturating_sub(b.get(g).copied().unwrap_or(0));
            (d > 0).then_some((*g, d))
        })
        .collect()
}

/// Elementwise minimum on multisets.
fn counter_and<'a>(a: &Counts<'a>, b: &Counts<'a>) -> Counts<'a> {
    a.iter()
        .filter_map(|(g, &c)| {
            let m = c.min(b.get(g).copied().unwrap_or(0));
            (m > 0).then_some((*g, m))
        })
        .collect()
}

fn get(c: &Counts<'_>, g: &[&str]) -> f64 {
    c.get(g).copied().unwrap_or(0) as f64
}

fn f1(p: f64, r: f64) -> f64 {
    if p > 0.0 || r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// (keep F1, deletion precision, addition F1) for one n-gram order. Source
/// and candidate counts are multiplied by the number of references so they
/// are comparable with the pooled reference counts.
fn sari_ngram(src: &[&str], cand: &[&str], refs: &[Vec<&str>], n: usize) -> (f64, f64, f64) {
    let numref = refs.len();
    let mut r: Counts = HashMap::new();
    for rs in refs {
        for (g, c) in ngrams(rs, n) {
            *r.entry(g).or_insert(0) += c;
        }
    }
    let s_plain = ngrams(src, n);
    let c_plain = ngrams(cand, n);
    let s: Counts = s_plain.iter().map(|(g, c)| (*g, c * numref)).collect();
    let c: Counts = c_plain.iter().map(|(g, k)| (*g, k * numref)).collect();

    let keep = counter_and(&s, &c);
    let keep_good = counter_and(&keep, &r);
    let keep_all = counter_and(&s, &r);
    let (mut k1, mut k2) = (0.0, 0.0);
    for g in keep_good.keys() {
        k1 += get(&keep_good, g) / get(&keep, g);
        k2 += get(&keep_good, g) / get(&keep_all, g);
    }
    let keep_p = if keep.is_empty() { 0.0 } else { k1 / keep.len() as f64 };
    let keep_r = if keep_all.is_empty() {
        0.0
    } else {
        k2 / keep_all.len() as f64
    };

    let del = counter_sub(&s, &c);
    let del_good = counter_sub(&del, &r);
    let mut d1 = 0.0;
    for g in del_good.keys() {
        d1 += get(&del_good, g) / get(&del, g);
    }
    let del_p = if del.is_empty() { 0.0 } else { d1 / del.len() as f64 };

    let s_set: HashSet<&[&str]> = s_plain.keys().copied().collect();
    let add: HashSet<&[&str]> = c_plain.keys().copied().filter(|g| !s_set.contains(g)).collect();
    let add_all: HashSet<&[&str]> = r.keys().copied().filter(|g| !s_set.contains(g)).collect();
    let hits = add.iter().filter(|g| r.contains_key(*g)).count() as f64;
    let add_p = if add.is_empty() { 0.0 } else { hits / add.len() as f64 };
    let add_r = if add_all.is_empty() {
        0.0
    } else {
        hits / add_all.len() as f64
    };

    (f1(keep_p, keep_r), del_p, f1(add_p, add_r))
}

/// Sentence SARI: mean over orders 1..4 of keep, delete and add components,
/// averaged with equal weight. Text is lowercased before tokenization.
pub fn sari_sentence<T: AsRef<str>>(source: &str, candidate: &str, references: &[T]) -> f64 {
    let (src, cand) = (source.to_lowercase(), candidate.to_lowercase());
    let refs_l: Vec<String> = references.iter().map(|r| r.as_ref().to_lowercase()).collect();
    let s = tokenize(&src);
    let c = tokenize(&cand);
    let r: Vec<Vec<&str>> = refs_l.iter().map(|x| tokenize(x)).collect();
    let (mut keep, mut del, mut add) = (0.0, 0.0, 0.0);
    for n in 1..=MAX_ORDER {
        let (k, d, a) = sari_ngram(&s, &c, &r, n);
        keep += k;
        del += d;
        add += a;
    }
    let m = MAX_ORDER as f64;
    (keep / m + del / m + add / m) / 3.0
}

/// Corpus SARI as the mean of sentence scores.
pub fn sari<S: AsRef<str>, H: AsRef<str>, T: AsRef<str>>(
    sources: &[S],
    hypotheses: &[H],
    references: &[Vec<T>],
) -> Result<f64> {
    check_aligned("sari hypotheses", sources.len(), hypotheses.len())?;
    check_aligned("sari references", sources.len(), references.len())?;
    if sources.is_empty() {
        return Err(Error::Empty("sari inputs"));
    }
    let total: f64 = sources
        .iter()
        .zip(hypotheses)
        .zip(references)
        .map(|((s, h), r)| sari_sentence(s.as_ref(), h.as_ref(), r))
        .sum();
    Ok(total / sources.len() as f64)
}
