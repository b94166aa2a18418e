use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fusedec::harness::experiment::{DecoderKind, Setup};
use fusedec::harness::ExperimentConfig;
use fusedec::par::Parallelism;

fn setup(mode: Parallelism, utterances: usize) -> Setup {
    let mut cfg = ExperimentConfig::default();
    cfg.corpus.utterances = utterances;
    cfg.corpus.train_utterances = 500;
    cfg.fusion.parallelism = mode;
    Setup::build(&cfg).expect("bench config is valid")
}

/// Fused decoding of a small noisy corpus, utterances and beams fanned out
/// (or not) according to the parallelism mode.
fn fused_corpus(c: &mut Criterion) {
    let mut group = c.benchmark_group("fused_corpus");
    group.sample_size(10);
    for mode in [Parallelism::Sequential, Parallelism::Parallel] {
        let s = setup(mode, 24);
        let signals = s.signals(0.2);
        let (weights, beams) = s.decoder_params(DecoderKind::Fused);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, _| {
            b.iter(|| {
                let rep = s
                    .decode_corpus(DecoderKind::Fused, weights.clone(), beams, 0.2, &signals)
                    .expect("decode");
                black_box(rep.eval.cer)
            })
        });
    }
    group.finish();
}

/// Wide beam on two utterances, so most of the fan-out is inside each decoder step.
fn wide_beam(c: &mut Criterion) {
    let mut group = c.benchmark_group("wide_beam");
    group.sample_size(10);
    for mode in [Parallelism::Sequential, Parallelism::Parallel] {
        let s = setup(mode, 2);
        let signals = s.signals(0.3);
        let (weights, _) = s.decoder_params(DecoderKind::Fused);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, _| {
            b.iter(|| {
                let rep = s
                    .decode_corpus(DecoderKind::Fused, weights.clone(), 32, 0.3, &signals)
                    .expect("decode");
                black_box(rep.hypotheses.len())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, fused_corpus, wide_beam);
criterion_main!(benches);
