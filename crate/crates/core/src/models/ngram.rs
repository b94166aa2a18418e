use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use super::{parse_token_field, uniform, Context, Distribution, ModelError, PrefixView, TokenModel};
use crate::vocab::{TokenId, Vocabulary};

pub const DEFAULT_ALPHA: f64 = 0.1;

type NGramContext = Vec<Option<TokenId>>;

/// Token n-gram language model with add-α smoothing over the full
/// vocabulary (EOS included). Contexts shorter than `order - 1` are padded
/// with BOS.
#[derive(Debug, Clone)]
pub struct NGramModel {
    vocab: Arc<Vocabulary>,
    order: usize,
    alpha: f64,
    counts: BTreeMap<NGramContext, BTreeMap<TokenId, u64>>,
    dists: HashMap<NGramContext, Distribution>,
    unseen: Distribution,
}

impl NGramModel {
    pub fn from_counts(
        vocab: Arc<Vocabulary>,
        order: usize,
        alpha: f64,
        counts: BTreeMap<NGramContext, BTreeMap<TokenId, u64>>,
    ) -> Result<Self, ModelError> {
        if order == 0 {
            return Err(ModelError::Invalid("n-gram order must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ModelError::Invalid(format!("smoothing alpha {alpha} must be positive")));
        }
        let v = vocab.len();
        let mut dists = HashMap::with_capacity(counts.len());
        for (ctx, next) in &counts {
            if ctx.len() != order - 1 {
                return Err(ModelError::Invalid(format!(
                    "context of length {} in an order-{order} model",
                    ctx.len()
                )));
            }
            let total: u64 = next.values().sum();
            let denom = total as f64 + alpha * v as f64;
            let mut probs = vec![alpha / denom; v];
            for (&t, &c) in next {
                if t >= v {
                    return Err(ModelError::InvalidToken(t));
                }
                probs[t] = (c as f64 + alpha) / denom;
            }
            dists.insert(ctx.clone(), probs.into());
        }
        Ok(NGramModel {
            unseen: uniform(v),
            vocab,
            order,
            alpha,
            counts,
            dists,
        })
    }

    /// Counts n-grams over greedily tokenized training lines. Each line is
    /// BOS-padded and, when the vocabulary has one, closed with EOS.
    pub fn train<I, B>(vocab: Arc<Vocabulary>, order: usize, alpha: f64, corpus: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = B>,
        B: AsRef<[u8]>,
    {
        let mut counts: BTreeMap<NGramContext, BTreeMap<TokenId, u64>> = BTreeMap::new();
        let hist = order.saturating_sub(1);
        for line in corpus {
            let mut tokens = vocab.tokenize(line.as_ref())?.token_ids;
            if let Some(eos) = vocab.eos() {
                tokens.push(eos);
            }
            let mut window: NGramContext = vec![None; hist];
            for t in tokens {
                *counts.entry(window.clone()).or_default().entry(t).or_insert(0) += 1;
                if hist > 0 {
                    window.remove(0);
                    window.push(Some(t));
                }
            }
        }
        NGramModel::from_counts(vocab, order, alpha, counts)
    }

    /// Parses `ngram <order>` followed by optional `alpha <a>`, any number of
    /// `corpus <path>` lines (relative to `base`) and `count <ctx..> <token> <n>`
    /// lines. `#bos` and `#eos` name the boundary symbols.
    pub fn parse(text: &str, vocab: Arc<Vocabulary>, base: &Path) -> Result<Self, ModelError> {
        let mut order = None;
        let mut alpha = DEFAULT_ALPHA;
        let mut corpus: Vec<Vec<u8>> = Vec::new();
        let mut explicit: Vec<(usize, Vec<String>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with("//") {
                continue;
            }
            let fields: Vec<&str> = l.split_whitespace().collect();
            let bad = |message: String| ModelError::Parse { line, message };
            match fields[0] {
                "ngram" if fields.len() == 2 => {
                    order = Some(fields[1].parse::<usize>().map_err(|_| bad("bad order".into()))?);
                }
                "alpha" if fields.len() == 2 => {
                    alpha = fields[1].parse().map_err(|_| bad("bad alpha".into()))?;
                }
                "corpus" if fields.len() == 2 => {
                    let path = base.join(fields[1]);
                    let text = std::fs::read(&path).map_err(|e| ModelError::Io {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?;
                    corpus.extend(
                        text.split(|&b| b == b'\n')
                            .map(|l| l.strip_suffix(b"\r").unwrap_or(l))
                            .filter(|l| !l.is_empty())
                            .map(<[u8]>::to_vec),
                    );
                }
                "count" => explicit.push((line, fields[1..].iter().map(|s| s.to_string()).collect())),
                _ => return Err(bad(format!("unrecognized line {l:?}"))),
            }
        }
        let order = order.ok_or(ModelError::Parse {
            line: 1,
            message: "missing `ngram <order>` header".into(),
        })?;
        let trained = NGramModel::train(vocab.clone(), order, alpha, &corpus)?;
        let mut counts = trained.counts;
        for (line, fields) in explicit {
            if fields.len() != order + 1 {
                return Err(ModelError::Parse {
                    line,
                    message: format!("count line needs {order} tokens and a count"),
                });
            }
            let mut ctx = Vec::with_capacity(order - 1);
            for f in &fields[..order - 1] {
                ctx.push(if f == "#bos" {
                    None
                } else {
                    Some(parse_token_field(&vocab, f, line)?)
                });
            }
            let t = parse_token_field(&vocab, &fields[order - 1], line)?;
            let n: u64 = fields[order].parse().map_err(|_| ModelError::Parse {
                line,
                message: "bad count".into(),
            })?;
            *counts.entry(ctx).or_default().entry(t).or_insert(0) += n;
        }
        NGramModel::from_counts(vocab, order, alpha, counts)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn count(&self, ctx: &[Option<TokenId>], token: TokenId) -> u64 {
        self.counts.get(ctx).and_then(|m| m.get(&token)).copied().unwrap_or(0)
    }
}

impl TokenModel for NGramModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn history_len(&self) -> usize {
        self.order - 1
    }

    fn dist_for(&self, view: PrefixView<'_>, _ctx: &Context) -> Distribution {
        self.dists.get(view.window).unwrap_or(&self.unseen).clone()
    }
}
