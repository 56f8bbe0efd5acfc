//! Seeded toy corpora for desk-scale runs: a random-sentence corpus for
//! autoencoder memorization, a word-rewrite parallel task, and a two-style
//! language whose style is carried by a single marker word.

use std::ops::RangeInclusive;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;

use crate::text::{LabeledCorpus, ParallelCorpus};

/// Distinct pronounceable words `ba, be, ..., bazo, ...`, deterministic in `n`.
pub fn word_list(n: usize) -> Vec<String> {
    const C: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
    const V: &[char] = &['a', 'e', 'i', 'o', 'u'];
    let syllables: Vec<String> = C
        .iter()
        .flat_map(|c| V.iter().map(move |v| format!("{c}{v}")))
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut width = 1;
    while out.len() < n {
        let total = syllables.len().pow(width as u32);
        for mut k in 0..total {
            if out.len() == n {
                break;
            }
            let mut w = String::new();
            for _ in 0..width {
                w.push_str(&syllables[k % syllables.len()]);
                k /= syllables.len();
            }
            out.push(w);
        }
        width += 1;
    }
    out
}

fn sentence<R: Rng + ?Sized>(words: &[String], len: usize, rng: &mut R) -> Vec<String> {
    (0..len).map(|_| words.choose(rng).expect("nonempty").clone()).collect()
}

/// `n` distinct random sentences over a `vocab`-word lexicon with lengths in
/// `min_len..=max_len`.
pub fn memorization_corpus<R: Rng + ?Sized>(
    n: usize,
    vocab: usize,
    min_len: usize,
    max_len: usize,
    rng: &mut R,
) -> Vec<String> {
    let words = word_list(vocab);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(min_len..=max_len);
        let s = sentence(&words, len, rng).join(" ");
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

/// Parallel task where each "complex" word in the source has one fixed
/// "simple" replacement in the target; all other words are copied.
#[derive(Clone, Debug)]
pub struct RewriteTask {
    pub rules: Vec<(String, String)>,
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
}

impl RewriteTask {
    /// `plain` shared words, `rules` complex→simple pairs; each source has a
    /// number of complex words drawn from `rewrites` (capped by its length).
    pub fn generate<R: Rng + ?Sized>(
        n_train: usize,
        n_valid: usize,
        plain: usize,
        rules: usize,
        rewrites: RangeInclusive<usize>,
        rng: &mut R,
    ) -> Self {
        assert!(*rewrites.start() >= 1, "every source needs a complex word");
        let words = word_list(plain + 2 * rules);
        let plain_words = &words[..plain];
        let rule_pairs: Vec<(String, String)> = (0..rules)
            .map(|i| (words[plain + 2 * i].clone(), words[plain + 2 * i + 1].clone()))
            .collect();
        let mut make = |n: usize| {
            let mut src = Vec::with_capacity(n);
            let mut tgt = Vec::with_capacity(n);
            for _ in 0..n {
                let len = rng.random_range(4..=8);
                let mut s = sentence(plain_words, len, rng);
                let k = rng.random_range(rewrites.clone()).min(len);
                for pos in index::sample(rng, len, k) {
                    s[pos] = rule_pairs.choose(rng).expect("rules").0.clone();
                }
                let t: Vec<String> = s
                    .iter()
                    .map(|w| {
                        rule_pairs
                            .iter()
                            .find(|(c, _)| c == w)
                            .map_or_else(|| w.clone(), |(_, simple)| simple.clone())
                    })
                    .collect();
                src.push(s.join(" "));
                tgt.push(t.join(" "));
            }
            ParallelCorpus {
                sources: src,
                targets: tgt,
            }
        };
        let train = make(n_train);
        let valid = make(n_valid);
        Self {
            rules: rule_pairs,
            train,
            valid,
        }
    }

    /// Every source and target sentence, for autoencoder pretraining.
    pub fn all_text(&self) -> Vec<String> {
        [&self.train, &self.valid]
            .iter()
            .flat_map(|c| c.sources.iter().chain(&c.targets).cloned())
            .collect()
    }
}

/// Two-style language: a sentence of content words plus one marker from the
/// style's marker set. Label 1 is the positive style.
#[derive(Clone, Debug)]
pub struct MarkerLanguage {
    pub content: Vec<String>,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl MarkerLanguage {
    pub fn new(content: usize, markers: usize) -> Self {
        let words = word_list(content + 2 * markers);
        Self {
            content: words[..content].to_vec(),
            positive: words[content..content + markers].to_vec(),
            negative: words[content + markers..].to_vec(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, label: u8, rng: &mut R) -> String {
        let len = rng.random_range(3..=6);
        let mut s = sentence(&self.content, len, rng);
        let markers = if label == 1 { &self.positive } else { &self.negative };
        let pos = rng.random_range(0..=s.len());
        s.insert(pos, markers.choose(rng).expect("markers").clone());
        s.join(" ")
    }

    /// `n_per_class` sentences of each style, shuffled.
    pub fn corpus<R: Rng + ?Sized>(&self, n_per_class: usize, rng: &mut R) -> LabeledCorpus {
        let mut items: Vec<(String, u8)> = (0..2 * n_per_class)
            .map(|i| {
                let label = (i % 2) as u8;
                (self.sample(label, rng), label)
            })
            .collect();
        items.shuffle(rng);
        let (texts, labels) = items.into_iter().unzip();
        LabeledCorpus { texts, labels }
    }

    /// Rule-based style of a sentence: the label of the first marker found.
    pub fn style_of(&self, text: &str) -> Option<u8> {
        text.split_whitespace().find_map(|w| {
            if self.positive.iter().any(|m| m == w) {
                Some(1)
            } else if self.negative.iter().any(|m| m == w) {
                Some(0)
            } else {
                None
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn word_list_is_distinct() {
        let w = word_list(500);
        let set: std::collections::HashSet<_> = w.iter().collect();
        assert_eq!(set.len(), 500);
        assert_eq!(w[0], "ba");
    }

    #[test]
    fn memorization_corpus_respects_vocab() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = memorization_corpus(200, 150, 4, 9, &mut rng);
        assert_eq!(c.len(), 200);
        let v: std::collections::HashSet<_> = c.iter().flat_map(|s| s.split(' ')).collect();
        assert!(v.len() <= 150);
    }

    #[test]
    fn rewrite_targets_follow_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = RewriteTask::generate(20, 5, 30, 10, 1..=2, &mut rng);
        for (s, y) in t.train.sources.iter().zip(&t.train.targets) {
            assert_ne!(s, y);
            assert_eq!(s.split(' ').count(), y.split(' ').count());
            assert!(!t.rules.iter().any(|(c, _)| y.split(' ').any(|w| w == c)));
        }
    }

    #[test]
    fn marker_sentences_carry_their_style() {
        let lang = MarkerLanguage::new(40, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = lang.corpus(50, &mut rng);
        for (t, &l) in c.texts.iter().zip(&c.labels) {
            assert_eq!(lang.style_of(t), Some(l));
        }
    }
}
