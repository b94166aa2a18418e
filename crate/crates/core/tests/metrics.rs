mod common;

use common::edit_distance_oracle;
use fusedec::metrics::{edit_distance, evaluate, score_corpus, Unit};
use proptest::prelude::*;

fn short() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(b'a'..=b'c', 0..=8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn matches_recursive_oracle(a in short(), b in short()) {
        let c = edit_distance(&a, &b);
        prop_assert_eq!(c.distance, edit_distance_oracle(&a, &b));
        prop_assert_eq!(c.distance, c.substitutions + c.insertions + c.deletions);
        // alignment accounts for every unit on both sides
        prop_assert_eq!(a.len() + c.insertions, b.len() + c.deletions);
    }

    #[test]
    fn is_a_metric(a in short(), b in short(), c in short()) {
        let d = |x: &[u8], y: &[u8]| edit_distance(x, y).distance;
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) <= a.len().max(b.len()));
    }
}

#[test]
fn hand_cases() {
    let r = evaluate(&["a b c"], &["a c"]).unwrap();
    assert_eq!(r.wer, 1.0 / 3.0);
    assert_eq!(r.word.counts.deletions, 1);
    let k = edit_distance(b"kitten", b"sitting");
    assert_eq!((k.distance, k.substitutions, k.insertions), (3, 2, 1));
}

#[test]
fn corpus_rates_are_micro_averaged() {
    let refs = ["ab", "abcd"];
    let hyps = ["xb", "abcd"];
    let r = score_corpus(&refs, &hyps, Unit::Byte).unwrap();
    assert_eq!(r.rate(), 1.0 / 6.0);
    assert_eq!(r.mean_rate, 0.25);
    // empty reference: denominator floors at one
    let r = score_corpus(&[""], &["xy"], Unit::Byte).unwrap();
    assert_eq!(r.rate(), 2.0);
}
