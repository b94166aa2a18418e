use std::sync::Arc;

use super::{uniform, Context, Distribution, ModelError, PrefixView, Signal, TokenModel};
use crate::vocab::Vocabulary;

/// Signal-conditioned recognizer surrogate.
///
/// At byte offset `o` (the byte length of the committed prefix) every token
/// is weighted by how well it matches the observed signal at `o`: an exact
/// byte contributes 1, a confusable byte contributes the noise level, any
/// other byte 0, and tokens running past the end of the signal weigh 0. Once
/// the signal is consumed only EOS matches. The distribution mixes the
/// normalized match weights with a uniform floor:
///
/// `p(t) = (1 - ε) · w(t) / Σw + ε / V`
///
/// and falls back to uniform when nothing matches.
#[derive(Debug, Clone)]
pub struct NoisyChannel {
    vocab: Arc<Vocabulary>,
}

impl NoisyChannel {
    pub fn new(vocab: Arc<Vocabulary>) -> Self {
        NoisyChannel { vocab }
    }

    fn signal<'a>(&self, ctx: &'a Context) -> Result<&'a Signal, ModelError> {
        match ctx {
            Context::Signal(s) => Ok(s),
            other => Err(ModelError::ContextMismatch(format!(
                "noisy channel needs a signal context, got {other:?}"
            ))),
        }
    }

    fn match_weight(&self, signal: &Signal, at: &[u8], token: &[u8]) -> f64 {
        if token.len() > at.len() {
            return 0.0;
        }
        let mut w = 1.0;
        for (&s, &t) in at.iter().zip(token) {
            if s == t {
                continue;
            }
            if signal.confusable(s, t) {
                w *= signal.noise();
            } else {
                return 0.0;
            }
        }
        w
    }
}

impl TokenModel for NoisyChannel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn history_len(&self) -> usize {
        0
    }

    fn check_context(&self, ctx: &Context) -> Result<(), ModelError> {
        let signal = self.signal(ctx)?;
        for &(a, b) in &signal.confusions {
            for byte in [a, b] {
                if self.vocab.id_of(&[byte]).is_none() {
                    return Err(ModelError::ContextMismatch(format!(
                        "confusion byte {byte:#04x} has no single-byte token"
                    )));
                }
            }
        }
        Ok(())
    }

    fn dist_for(&self, view: PrefixView<'_>, ctx: &Context) -> Distribution {
        let signal = self.signal(ctx).expect("context checked before forwarding");
        let v = self.vocab.len();
        let eps = signal.noise();
        let mut weights = vec![0.0; v];
        if view.byte_len >= signal.observed.len() {
            if let Some(eos) = self.vocab.eos() {
                weights[eos] = 1.0;
            }
        } else {
            let at = &signal.observed[view.byte_len..];
            for (id, bytes) in self.vocab.iter() {
                if !self.vocab.is_eos(id) {
                    weights[id] = self.match_weight(signal, at, bytes);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return uniform(v);
        }
        let floor = eps / v as f64;
        weights
            .into_iter()
            .map(|w| (1.0 - eps) * w / total + floor)
            .collect::<Vec<_>>()
            .into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(eos: bool) -> NoisyChannel {
        NoisyChannel::new(Arc::new(Vocabulary::new(["a", "b", "ab"], eos).unwrap()))
    }

    #[test]
    fn zero_noise_is_uniform_over_consistent_tokens() {
        let m = setup(false);
        let ctx = Context::signal("ab", 0.0).unwrap();
        assert_eq!(&*m.next_token_dist(&[], &ctx).unwrap(), &[0.5, 0.0, 0.5]);
        assert_eq!(&*m.next_token_dist(&[0], &ctx).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn full_noise_is_uniform() {
        let m = setup(true);
        let ctx = Context::signal("ab", 1.0).unwrap();
        for prefix in [&[][..], &[0], &[2]] {
            let d = m.next_token_dist(prefix, &ctx).unwrap();
            assert!(d.iter().all(|&p| (p - 0.25).abs() < 1e-15), "{d:?}");
        }
    }

    #[test]
    fn emits_eos_after_signal() {
        let m = setup(true);
        let ctx = Context::signal("ab", 0.2).unwrap();
        let d = m.next_token_dist(&[2], &ctx).unwrap();
        assert!((d[3] - (0.8 + 0.05)).abs() < 1e-15);
        assert!((d[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn confusions_weigh_by_noise() {
        let m = setup(false);
        let ctx = Context::Signal(Signal::new("a", 0.5).unwrap().with_confusions([(b'a', b'b')]));
        let d = m.next_token_dist(&[], &ctx).unwrap();
        // weights a=1, b=0.5, ab=0 (runs past the signal)
        assert!((d[0] - (0.5 / 1.5 + 0.5 / 3.0)).abs() < 1e-15);
        assert!((d[1] - (0.25 / 1.5 + 0.5 / 3.0)).abs() < 1e-15);
        assert!((d[2] - 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn requires_signal_context() {
        let m = setup(false);
        assert!(matches!(
            m.next_token_dist(&[], &Context::Empty),
            Err(ModelError::ContextMismatch(_))
        ));
        let bad = Context::Signal(Signal::new("a", 0.1).unwrap().with_confusions([(b'a', b'z')]));
        assert!(m.initial_state(&bad).is_err());
    }
}
