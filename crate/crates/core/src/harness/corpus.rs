//! Synthetic reference source, noisy signals and generated vocabularies.
//!
//! The source is a word-level Markov chain over a random lexicon. Reference
//! utterances for evaluation and the language-model training corpus come
//! from the same chain with independent RNG streams.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::CorpusConfig;
use crate::vocab::{VocabError, Vocabulary};

const TRAIN_STREAM: u64 = 0x7472_6169_6e00;
const TEST_STREAM: u64 = 0x7465_7374_0000;
const NOISE_STREAM: u64 = 0x6e6f_6973_6500;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct Source {
    pub alphabet: Vec<u8>,
    pub lexicon: Vec<Vec<u8>>,
    start: Vec<(usize, f64)>,
    next: Vec<Vec<(usize, f64)>>,
    min_words: usize,
    max_words: usize,
}

fn sample(rng: &mut ChaCha8Rng, options: &[(usize, f64)]) -> usize {
    let total: f64 = options.iter().map(|o| o.1).sum();
    let mut x = rng.gen::<f64>() * total;
    for &(i, w) in options {
        if x < w {
            return i;
        }
        x -= w;
    }
    options.last().expect("non-empty options").0
}

fn weighted_successors(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<(usize, f64)> {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    ids.truncate(k.min(n).max(1));
    ids.sort_unstable();
    ids.into_iter().map(|i| (i, rng.gen_range(0.2..1.0))).collect()
}

impl Source {
    pub fn generate(cfg: &CorpusConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alphabet: Vec<u8> = cfg.alphabet.bytes().collect();
        let mut seen = BTreeSet::new();
        let mut lexicon = Vec::new();
        let mut attempts = 0;
        while lexicon.len() < cfg.lexicon_size && attempts < cfg.lexicon_size * 1000 {
            attempts += 1;
            let len = rng.gen_range(cfg.min_word_len..=cfg.max_word_len);
            let word: Vec<u8> = (0..len)
                .map(|_| *alphabet.choose(&mut rng).expect("alphabet"))
                .collect();
            if seen.insert(word.clone()) {
                lexicon.push(word);
            }
        }
        let n = lexicon.len();
        let start = weighted_successors(&mut rng, n, cfg.branching * 2);
        let next = (0..n)
            .map(|_| weighted_successors(&mut rng, n, cfg.branching))
            .collect();
        Source {
            alphabet,
            lexicon,
            start,
            next,
            min_words: cfg.min_words,
            max_words: cfg.max_words,
        }
    }

    pub fn utterance(&self, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let words = rng.gen_range(self.min_words..=self.max_words);
        let mut out = Vec::new();
        let mut w = sample(rng, &self.start);
        for i in 0..words {
            if i > 0 {
                out.push(b' ');
                w = sample(rng, &self.next[w]);
            }
            out.extend_from_slice(&self.lexicon[w]);
        }
        out
    }

    pub fn sample_corpus(&self, seed: u64, stream: u64, count: usize) -> Vec<Vec<u8>> {
        let mut rng = rng_for(seed, stream);
        (0..count).map(|_| self.utterance(&mut rng)).collect()
    }

    /// Language-model training text.
    pub fn train_corpus(&self, seed: u64, count: usize) -> Vec<Vec<u8>> {
        self.sample_corpus(seed, TRAIN_STREAM, count)
    }

    /// Evaluation references.
    pub fn test_corpus(&self, seed: u64, count: usize) -> Vec<Vec<u8>> {
        self.sample_corpus(seed, TEST_STREAM, count)
    }

    /// Disjoint byte pairs the simulated recognizer confuses.
    pub fn confusion_pairs(&self, seed: u64, count: usize) -> Vec<(u8, u8)> {
        let mut rng = rng_for(seed, NOISE_STREAM ^ 1);
        let mut letters = self.alphabet.clone();
        letters.shuffle(&mut rng);
        letters.chunks_exact(2).take(count).map(|p| (p[0], p[1])).collect()
    }

    /// Recognizer vocabulary: every single byte plus the `extra` most frequent
    /// in-word byte bigrams of the lexicon.
    pub fn recognizer_vocab(&self, extra: usize) -> Result<Vocabulary, VocabError> {
        let mut entries = self.singles();
        let mut freq: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
        for w in &self.lexicon {
            for pair in w.windows(2) {
                *freq.entry(pair.to_vec()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(Vec<u8>, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.extend(ranked.into_iter().take(extra).map(|(p, _)| p));
        Vocabulary::new(entries, true)
    }

    /// Language-model vocabulary: every single byte, every lexicon word and
    /// every word with a leading space.
    pub fn lm_vocab(&self) -> Result<Vocabulary, VocabError> {
        let mut entries = self.singles();
        let mut seen: BTreeSet<Vec<u8>> = entries.iter().cloned().collect();
        for w in &self.lexicon {
            let mut spaced = vec![b' '];
            spaced.extend_from_slice(w);
            for tok in [w.clone(), spaced] {
                if seen.insert(tok.clone()) {
                    entries.push(tok);
                }
            }
        }
        Vocabulary::new(entries, true)
    }

    fn singles(&self) -> Vec<Vec<u8>> {
        let mut bytes: BTreeSet<u8> = self.alphabet.iter().copied().collect();
        bytes.insert(b' ');
        bytes.into_iter().map(|b| vec![b]).collect()
    }
}

/// Replaces each confusable byte by its partner with probability `noise`.
pub fn corrupt(reference: &[u8], pairs: &[(u8, u8)], noise: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    reference
        .iter()
        .map(|&b| {
            let partner = pairs.iter().find_map(|&(x, y)| {
                if x == b {
                    Some(y)
                } else if y == b {
                    Some(x)
                } else {
                    None
                }
            });
            match partner {
                Some(p) if rng.gen::<f64>() < noise => p,
                _ => b,
            }
        })
        .collect()
}

/// Observed signals for a whole corpus at one noise level.
pub fn corrupt_corpus(refs: &[Vec<u8>], pairs: &[(u8, u8)], noise: f64, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = rng_for(seed, NOISE_STREAM ^ noise.to_bits());
    refs.iter().map(|r| corrupt(r, pairs, noise, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> CorpusConfig {
        CorpusConfig::default()
    }

    #[test]
    fn generation_is_seeded() {
        let a = Source::generate(&cfg(), 3);
        let b = Source::generate(&cfg(), 3);
        assert_eq!(a.lexicon, b.lexicon);
        assert_eq!(a.test_corpus(3, 5), b.test_corpus(3, 5));
        assert_ne!(a.test_corpus(3, 5), a.train_corpus(3, 5));
    }

    #[test]
    fn vocabularies_cover_the_corpus() {
        let s = Source::generate(&cfg(), 11);
        let tr = s.recognizer_vocab(8).unwrap();
        let lm = s.lm_vocab().unwrap();
        for u in s.test_corpus(11, 20) {
            assert!(tr.tokenize(&u).is_ok());
            assert!(lm.tokenize(&u).is_ok());
        }
    }

    #[test]
    fn zero_noise_keeps_reference() {
        let s = Source::generate(&cfg(), 5);
        let refs = s.test_corpus(5, 10);
        let pairs = s.confusion_pairs(5, 4);
        assert_eq!(corrupt_corpus(&refs, &pairs, 0.0, 5), refs);
        let noisy = corrupt_corpus(&refs, &pairs, 1.0, 5);
        assert_ne!(noisy, refs);
        assert_eq!(
            noisy.iter().map(Vec::len).sum::<usize>(),
            refs.iter().map(Vec::len).sum::<usize>()
        );
    }
}
