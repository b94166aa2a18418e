mod common;

use std::sync::Arc;

use common::*;
use fusedec::models::{Context, CountingModel, Signal, TokenModel};
use fusedec::{NGramModel, NoisyChannel, TokenId, Vocabulary};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const ALPHABET: &[u8] = b"abc";

/// A labelled model with the context it expects.
struct Case {
    name: String,
    model: Arc<dyn TokenModel>,
    ctx: Context,
}

fn cases(seed: u64) -> Vec<Case> {
    let mut r = rng(seed);
    let vocab = Arc::new(random_vocab(&mut r, ALPHABET, 10, 3, true));
    let mut out = Vec::new();
    for kind in [TableKind::Iid, TableKind::Bigram] {
        out.push(Case {
            name: format!("table-{kind:?}"),
            model: Arc::new(random_table(&mut r, vocab.clone(), kind, true)),
            ctx: Context::Empty,
        });
    }
    let corpus: Vec<Vec<u8>> = (0..30)
        .map(|_| {
            let n = r.gen_range(1..8);
            random_bytes(&mut r, ALPHABET, n)
        })
        .collect();
    for order in 1..=3 {
        out.push(Case {
            name: format!("ngram-{order}"),
            model: Arc::new(NGramModel::train(vocab.clone(), order, 0.1, &corpus).unwrap()),
            ctx: Context::Prompt(b"ab".to_vec()),
        });
    }
    let signal = random_bytes(&mut r, ALPHABET, 6);
    for noise in [0.0, 0.3, 1.0] {
        out.push(Case {
            name: format!("channel-{noise}"),
            model: Arc::new(NoisyChannel::new(vocab.clone())),
            ctx: Context::Signal(
                Signal::new(signal.clone(), noise)
                    .unwrap()
                    .with_confusions([(b'a', b'b')]),
            ),
        });
    }
    out
}

fn sample(r: &mut ChaCha8Rng, dist: &[f64]) -> TokenId {
    let mut x = r.gen::<f64>();
    for (i, &p) in dist.iter().enumerate() {
        if x < p {
            return i;
        }
        x -= p;
    }
    dist.iter().rposition(|&p| p > 0.0).unwrap()
}

#[test]
fn distributions_are_normalized_and_deterministic() {
    for seed in 0..10 {
        for case in cases(seed) {
            let mut r = rng(seed + 100);
            let v = case.model.vocab().len();
            for _ in 0..20 {
                let len = r.gen_range(0..5);
                let prefix: Vec<TokenId> = (0..len)
                    .map(|_| loop {
                        let t = r.gen_range(0..v);
                        if !case.model.vocab().is_eos(t) {
                            break t;
                        }
                    })
                    .collect();
                let d = case.model.next_token_dist(&prefix, &case.ctx).unwrap();
                assert_eq!(d.len(), v, "{}", case.name);
                let total: f64 = d.iter().sum();
                assert!((total - 1.0).abs() < 1e-9, "{}: sums to {total}", case.name);
                assert!(d.iter().all(|&p| (0.0..=1.0).contains(&p)), "{}", case.name);
                let again = case.model.next_token_dist(&prefix, &case.ctx).unwrap();
                assert_eq!(d, again, "{}", case.name);
            }
        }
    }
}

/// 50 random walks per model: the incremental state path gives bit-identical
/// distributions to computing from the whole prefix.
#[test]
fn incremental_state_matches_full_prefix() {
    for case in cases(42) {
        let m = case.model.as_ref();
        let mut r = rng(7);
        for _walk in 0..50 {
            let mut state = m.initial_state(&case.ctx).unwrap();
            let mut prefix = Vec::new();
            for _ in 0..8 {
                let inc = m.dist_at(&state, &case.ctx);
                let full = m.next_token_dist(&prefix, &case.ctx).unwrap();
                assert_eq!(&*inc, &*full, "{} at {prefix:?}", case.name);
                let t = sample(&mut r, &inc);
                if m.vocab().is_eos(t) {
                    break;
                }
                state = m.advance_state(&state, t).unwrap();
                prefix.push(t);
                assert_eq!(state.token_count(), prefix.len());
                assert_eq!(state.byte_len(), m.vocab().detokenize(&prefix).unwrap().len());
            }
        }
    }
}

#[test]
fn sequence_log_prob_is_the_chain_rule() {
    for case in cases(3) {
        let m = case.model.as_ref();
        let seq = m.vocab().tokenize(b"abca").unwrap().token_ids;
        let mut expected = 0.0;
        for i in 0..seq.len() {
            expected += m.next_token_dist(&seq[..i], &case.ctx).unwrap()[seq[i]].ln();
        }
        let got = m.sequence_log_prob(&seq, &case.ctx).unwrap();
        assert!(got == expected || (got - expected).abs() < 1e-12, "{}", case.name);
    }
}

#[test]
fn invalid_tokens_are_rejected() {
    for case in cases(5) {
        let bad = case.model.vocab().len() + 3;
        assert!(case.model.next_token_dist(&[bad], &case.ctx).is_err(), "{}", case.name);
    }
}

#[test]
fn channel_requires_a_signal() {
    let vocab = Arc::new(Vocabulary::new([&b"a"[..], b"b"], true).unwrap());
    let ch = NoisyChannel::new(vocab);
    assert!(ch.next_token_dist(&[], &Context::Empty).is_err());
    assert!(Signal::new(b"a".to_vec(), 1.5).is_err());
}

#[test]
fn counting_model_counts_forwards() {
    let case = cases(9).remove(1);
    let counted = CountingModel::new(case.model.clone());
    for n in 0..5 {
        counted.next_token_dist(&vec![0; n], &case.ctx).unwrap();
    }
    assert_eq!(counted.forwards(), 5);
    counted.reset();
    assert_eq!(counted.forwards(), 0);
}

#[test]
fn table_and_ngram_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = Arc::new(Vocabulary::parse("a\nb\nab\n#eos\n").unwrap());
    let table = dir.path().join("t.txt");
    std::fs::write(&table, "iid\na 0.5\nb 0.3\nab 0.2\n").unwrap();
    let m = fusedec::models::load_model(&table, vocab.clone()).unwrap();
    assert_eq!(
        &*m.next_token_dist(&[], &Context::Empty).unwrap(),
        &[0.5, 0.3, 0.2, 0.0]
    );

    std::fs::write(dir.path().join("train.txt"), "ab\nab\nb\n").unwrap();
    let ng = dir.path().join("n.txt");
    std::fs::write(&ng, "ngram 2\nalpha 0.1\ncorpus train.txt\n").unwrap();
    let m = fusedec::models::load_model(&ng, vocab).unwrap();
    let d = m.next_token_dist(&[], &Context::Empty).unwrap();
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // "ab" starts two of three lines
    assert!(d[2] > d[1] && d[1] > d[0]);
}
