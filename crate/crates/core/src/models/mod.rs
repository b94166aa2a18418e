//! Autoregressive next-token models.
//!
//! Every model exposes the same capability: a probability vector over its
//! own vocabulary (EOS included) given a token prefix and a conditioning
//! [`Context`]. Models summarize a prefix as a [`PrefixView`]: the trailing
//! `history_len()` tokens, BOS-padded, plus the prefix's byte length.
//! [`IncrementalState`] maintains that summary one token at a time.

mod channel;
mod ngram;
mod table;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::vocab::{TokenId, VocabError, Vocabulary};

pub use channel::NoisyChannel;
pub use ngram::{NGramModel, DEFAULT_ALPHA};
pub use table::TableModel;

/// Shared, immutable next-token distribution.
pub type Distribution = Arc<[f64]>;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("token id {0} is not in the model vocabulary")]
    InvalidToken(TokenId),
    #[error("noise level {0} outside [0, 1]")]
    NoiseOutOfRange(f64),
    #[error("context does not fit this model: {0}")]
    ContextMismatch(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Conditioning information handed to a model alongside the token prefix.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Context {
    #[default]
    Empty,
    /// Prompt bytes, tokenized with the model's vocabulary and prepended.
    Prompt(Vec<u8>),
    /// Recognition signal for a [`NoisyChannel`].
    Signal(Signal),
}

/// Simulated recognition evidence: the observed byte string, a noise level
/// and byte pairs the recognizer may confuse.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub observed: Vec<u8>,
    noise: f64,
    pub confusions: Vec<(u8, u8)>,
}

impl Signal {
    pub fn new(observed: impl Into<Vec<u8>>, noise: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&noise) {
            return Err(ModelError::NoiseOutOfRange(noise));
        }
        Ok(Signal {
            observed: observed.into(),
            noise,
            confusions: Vec::new(),
        })
    }

    pub fn with_confusions(mut self, pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        self.confusions.extend(pairs);
        self
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn confusable(&self, a: u8, b: u8) -> bool {
        self.confusions
            .iter()
            .any(|&(x, y)| (x == a && y == b) || (x == b && y == a))
    }
}

impl Context {
    pub fn signal(observed: impl Into<Vec<u8>>, noise: f64) -> Result<Self, ModelError> {
        Ok(Context::Signal(Signal::new(observed, noise)?))
    }
}

/// Trailing-token summary of a prefix. `None` in the window stands for BOS.
#[derive(Debug, Clone, Copy)]
pub struct PrefixView<'a> {
    pub window: &'a [Option<TokenId>],
    pub byte_len: usize,
}

/// Per-model decoding state for a committed token prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncrementalState {
    window: Vec<Option<TokenId>>,
    tokens: usize,
    byte_len: usize,
}

impl IncrementalState {
    pub fn view(&self) -> PrefixView<'_> {
        PrefixView {
            window: &self.window,
            byte_len: self.byte_len,
        }
    }

    /// Number of committed tokens, prompt excluded.
    pub fn token_count(&self) -> usize {
        self.tokens
    }

    pub fn byte_len(&self) -> usize {
        self.byte_len
    }
}

fn window_of(history: usize, seq: impl DoubleEndedIterator<Item = TokenId>) -> Vec<Option<TokenId>> {
    let mut window: Vec<Option<TokenId>> = seq.rev().take(history).map(Some).collect();
    window.resize(history, None);
    window.reverse();
    window
}

pub trait TokenModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Number of trailing tokens the distribution depends on.
    fn history_len(&self) -> usize;

    fn check_context(&self, _ctx: &Context) -> Result<(), ModelError> {
        Ok(())
    }

    /// Distribution over all ids for a summarized prefix. This is one model forward.
    fn dist_for(&self, view: PrefixView<'_>, ctx: &Context) -> Distribution;

    /// Prompt tokens for `ctx` under this model's vocabulary.
    fn prompt_tokens(&self, ctx: &Context) -> Result<Vec<TokenId>, ModelError> {
        match ctx {
            Context::Prompt(p) => Ok(self.vocab().tokenize(p)?.token_ids),
            _ => Ok(Vec::new()),
        }
    }

    /// Next-token distribution computed directly from the full prefix.
    fn next_token_dist(&self, prefix: &[TokenId], ctx: &Context) -> Result<Distribution, ModelError> {
        self.check_context(ctx)?;
        let vocab = self.vocab();
        let mut byte_len = 0;
        for &t in prefix {
            byte_len += vocab.try_bytes(t).map_err(|_| ModelError::InvalidToken(t))?.len();
        }
        let prompt = self.prompt_tokens(ctx)?;
        let window = window_of(self.history_len(), prompt.iter().chain(prefix.iter()).copied());
        Ok(self.dist_for(
            PrefixView {
                window: &window,
                byte_len,
            },
            ctx,
        ))
    }

    fn initial_state(&self, ctx: &Context) -> Result<IncrementalState, ModelError> {
        self.check_context(ctx)?;
        let prompt = self.prompt_tokens(ctx)?;
        Ok(IncrementalState {
            window: window_of(self.history_len(), prompt.into_iter()),
            tokens: 0,
            byte_len: 0,
        })
    }

    fn advance_state(&self, state: &IncrementalState, token: TokenId) -> Result<IncrementalState, ModelError> {
        let bytes = self
            .vocab()
            .try_bytes(token)
            .map_err(|_| ModelError::InvalidToken(token))?;
        let mut window = state.window.clone();
        if !window.is_empty() {
            window.remove(0);
            window.push(Some(token));
        }
        Ok(IncrementalState {
            window,
            tokens: state.tokens + 1,
            byte_len: state.byte_len + bytes.len(),
        })
    }

    fn dist_at(&self, state: &IncrementalState, ctx: &Context) -> Distribution {
        self.dist_for(state.view(), ctx)
    }

    /// Chain-rule log-probability of a token sequence; `-inf` once any step
    /// has zero mass.
    fn sequence_log_prob(&self, tokens: &[TokenId], ctx: &Context) -> Result<f64, ModelError> {
        let mut state = self.initial_state(ctx)?;
        let mut total = 0.0;
        for &t in tokens {
            let dist = self.dist_at(&state, ctx);
            let p = *dist.get(t).ok_or(ModelError::InvalidToken(t))?;
            total += p.ln();
            state = self.advance_state(&state, t)?;
        }
        Ok(total)
    }
}

/// Wraps a model and counts forwards (`dist_for` calls).
pub struct CountingModel {
    inner: Arc<dyn TokenModel>,
    forwards: AtomicU64,
}

impl CountingModel {
    pub fn new(inner: Arc<dyn TokenModel>) -> Self {
        CountingModel {
            inner,
            forwards: AtomicU64::new(0),
        }
    }

    pub fn forwards(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.forwards.store(0, Ordering::Relaxed);
    }
}

impl TokenModel for CountingModel {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn history_len(&self) -> usize {
        self.inner.history_len()
    }

    fn check_context(&self, ctx: &Context) -> Result<(), ModelError> {
        self.inner.check_context(ctx)
    }

    fn dist_for(&self, view: PrefixView<'_>, ctx: &Context) -> Distribution {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        self.inner.dist_for(view, ctx)
    }
}

/// Loads a table or n-gram model file; the header line selects the kind.
pub fn load_model(path: &Path, vocab: Arc<Vocabulary>) -> Result<Arc<dyn TokenModel>, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let header = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with("//"))
        .unwrap_or("");
    if header.starts_with("ngram") {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Ok(Arc::new(NGramModel::parse(&text, vocab, base)?))
    } else {
        Ok(Arc::new(TableModel::parse(&text, vocab)?))
    }
}

/// Resolves a whitespace-separated field of a model file to a token id.
/// `#eos` names the EOS token.
pub(crate) fn parse_token_field(vocab: &Vocabulary, field: &str, line: usize) -> Result<TokenId, ModelError> {
    if field == "#eos" {
        return vocab.eos().ok_or_else(|| ModelError::Parse {
            line,
            message: "#eos used but vocabulary has no EOS".to_string(),
        });
    }
    let bytes = crate::vocab::unescape_bytes(field).map_err(|message| ModelError::Parse { line, message })?;
    vocab.id_of(&bytes).ok_or_else(|| ModelError::Parse {
        line,
        message: format!("unknown token {field:?}"),
    })
}

pub(crate) fn uniform(n: usize) -> Distribution {
    vec![1.0 / n as f64; n].into()
}
