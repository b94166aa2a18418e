//! Random instance generators and brute-force oracles shared by the
//! integration tests. The oracles are deliberately naive and share no code
//! with the library beyond the model interface.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use fusedec::byte_transform::{next_byte_scores, refresh_cache};
use fusedec::models::{Context, TokenModel};
use fusedec::{TableModel, TokenId, Vocabulary};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every single byte of `alphabet` plus random multi-byte tokens, up to
/// `max_v` ids including EOS when `eos` is set.
pub fn random_vocab(r: &mut ChaCha8Rng, alphabet: &[u8], max_v: usize, max_len: usize, eos: bool) -> Vocabulary {
    let budget = max_v - usize::from(eos);
    assert!(budget >= alphabet.len());
    let target = r.gen_range(alphabet.len()..=budget);
    let mut seen: BTreeSet<Vec<u8>> = alphabet.iter().map(|&b| vec![b]).collect();
    let mut entries: Vec<Vec<u8>> = seen.iter().cloned().collect();
    let mut attempts = 0;
    while entries.len() < target && max_len >= 2 && attempts < 1000 {
        attempts += 1;
        let len = r.gen_range(2..=max_len);
        let tok: Vec<u8> = (0..len).map(|_| *alphabet.choose(r).unwrap()).collect();
        if seen.insert(tok.clone()) {
            entries.push(tok);
        }
    }
    entries.shuffle(r);
    Vocabulary::new(entries, eos).unwrap()
}

/// Vocabulary of single bytes only.
pub fn singleton_vocab(r: &mut ChaCha8Rng, alphabet: &[u8], eos: bool) -> Vocabulary {
    let mut entries: Vec<Vec<u8>> = alphabet.iter().map(|&b| vec![b]).collect();
    entries.shuffle(r);
    Vocabulary::new(entries, eos).unwrap()
}

/// A random probability vector over `n` outcomes. With `sparse`, some
/// entries are zero (at least one stays positive).
pub fn random_dist(r: &mut ChaCha8Rng, n: usize, sparse: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            if sparse && r.gen_bool(0.25) {
                0.0
            } else {
                r.gen_range(0.05..1.0)
            }
        })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[r.gen_range(0..n)] = 1.0;
    }
    let total: f64 = v.iter().sum();
    v.iter().map(|x| x / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Iid,
    Bigram,
}

pub fn random_table(r: &mut ChaCha8Rng, vocab: Arc<Vocabulary>, kind: TableKind, sparse: bool) -> TableModel {
    let n = vocab.len();
    match kind {
        TableKind::Iid => TableModel::iid(vocab, random_dist(r, n, sparse)).unwrap(),
        TableKind::Bigram => {
            let mut blocks = HashMap::new();
            blocks.insert(None, random_dist(r, n, sparse));
            for t in 0..n {
                if !vocab.is_eos(t) {
                    blocks.insert(Some(t), random_dist(r, n, sparse));
                }
            }
            TableModel::markov(vocab, blocks, None).unwrap()
        }
    }
}

pub fn random_kind(r: &mut ChaCha8Rng) -> TableKind {
    if r.gen_bool(0.5) {
        TableKind::Iid
    } else {
        TableKind::Bigram
    }
}

pub fn random_bytes(r: &mut ChaCha8Rng, alphabet: &[u8], len: usize) -> Vec<u8> {
    (0..len).map(|_| *alphabet.choose(r).unwrap()).collect()
}

/// Every byte string over `alphabet` of length at most `max_len`, shortest first.
pub fn all_strings(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &b in alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(b);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// The worked example: {a: 0.5, b: 0.3, ab: 0.2}, i.i.d., no EOS.
pub fn worked_example() -> TableModel {
    let vocab = Arc::new(Vocabulary::new([&b"a"[..], b"b", b"ab"], false).unwrap());
    TableModel::iid(vocab, vec![0.5, 0.3, 0.2]).unwrap()
}

/// Memoized recursive Levenshtein distance, straight from the definition.
pub fn edit_distance_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let key = (a.len(), b.len());
        if let Some(&d) = memo.get(&key) {
            return d;
        }
        let sub = go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
        let del = go(&a[1..], b, memo) + 1;
        let ins = go(a, &b[1..], memo) + 1;
        let d = sub.min(del).min(ins);
        memo.insert(key, d);
        d
    }
    go(a, b, &mut HashMap::new())
}

/// Sum over all token sequences whose bytes begin with `target`, each counted
/// once at the first token that reaches or passes the end. Plain recursion
/// over `next_token_dist`, independent of the library's enumerator.
pub fn brute_prefix_mass(model: &dyn TokenModel, target: &[u8], ctx: &Context) -> f64 {
    fn go(model: &dyn TokenModel, target: &[u8], ctx: &Context, prefix: &mut Vec<TokenId>, pos: usize) -> f64 {
        if pos >= target.len() {
            return 1.0;
        }
        let dist = model.next_token_dist(prefix, ctx).unwrap();
        let vocab = model.vocab();
        let mut total = 0.0;
        for (t, tb) in vocab.iter() {
            if tb.is_empty() || dist[t] == 0.0 {
                continue;
            }
            let rest = &target[pos..];
            let n = tb.len().min(rest.len());
            if tb[..n] != rest[..n] {
                continue;
            }
            prefix.push(t);
            total += dist[t] * go(model, target, ctx, prefix, pos + tb.len());
            prefix.pop();
        }
        total
    }
    if target.is_empty() {
        return 1.0;
    }
    go(model, target, ctx, &mut Vec::new(), 0)
}

/// Joint log-score of `bytes` as the decoder sees it: the next-byte score of
/// the last byte given the rest, computed on a fresh cache. Empty is 0.
pub fn decoder_log_score(model: &dyn TokenModel, bytes: &[u8], ctx: &Context) -> f64 {
    match bytes.split_last() {
        None => 0.0,
        Some((&last, head)) => {
            let cache = refresh_cache(model, head, ctx, None).unwrap();
            next_byte_scores(model, &cache, ctx).log_score(last)
        }
    }
}

pub fn decoder_log_terminal(model: &dyn TokenModel, bytes: &[u8], ctx: &Context) -> f64 {
    let cache = refresh_cache(model, bytes, ctx, None).unwrap();
    next_byte_scores(model, &cache, ctx).log_terminal()
}

/// Brute-force argmax of the fused objective over every byte string up to
/// `max_bytes`: strings that stop early score their terminal mass, strings of
/// length `max_bytes` their joint prefix score. Ties go to the smaller bytes.
pub fn brute_force_decode(
    models: &[(&dyn TokenModel, &Context)],
    weights: &[f64],
    alphabet: &[u8],
    max_bytes: usize,
) -> Option<(Vec<u8>, f64)> {
    let mut best: Option<(Vec<u8>, f64)> = None;
    for s in all_strings(alphabet, max_bytes) {
        if models
            .iter()
            .zip(weights)
            .any(|((m, _), &w)| w > 0.0 && m.vocab().tokenize(&s).is_err())
        {
            continue;
        }
        let mut score = 0.0;
        for ((m, ctx), &w) in models.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let part = if s.len() == max_bytes {
                decoder_log_score(*m, &s, ctx)
            } else {
                decoder_log_terminal(*m, &s, ctx)
            };
            score += w * part;
        }
        if score == f64::NEG_INFINITY || score.is_nan() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bb, bs)) => score > *bs || (score == *bs && s < *bb),
        };
        if better {
            best = Some((s, score));
        }
    }
    best
}
