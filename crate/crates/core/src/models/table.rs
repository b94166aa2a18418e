use std::collections::HashMap;
use std::sync::Arc;

use super::{parse_token_field, Context, Distribution, ModelError, PrefixView, TokenModel};
use crate::vocab::{TokenId, Vocabulary};

const SUM_TOLERANCE: f64 = 1e-9;

/// Explicit probability table: either i.i.d. or conditioned on the previous
/// token (first-order Markov) with an optional fallback block.
#[derive(Debug, Clone)]
pub struct TableModel {
    vocab: Arc<Vocabulary>,
    kind: TableKind,
}

#[derive(Debug, Clone)]
enum TableKind {
    Iid(Distribution),
    Markov {
        /// Keyed by previous token; `None` is the start of the sequence.
        blocks: HashMap<Option<TokenId>, Distribution>,
        fallback: Option<Distribution>,
    },
}

fn check_dist(vocab: &Vocabulary, probs: &[f64], what: &str) -> Result<(), ModelError> {
    if probs.len() != vocab.len() {
        return Err(ModelError::Invalid(format!(
            "{what}: {} probabilities for {} tokens",
            probs.len(),
            vocab.len()
        )));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(ModelError::Invalid(format!("{what}: probability outside [0, 1]")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(ModelError::Invalid(format!("{what}: probabilities sum to {sum}")));
    }
    Ok(())
}

impl TableModel {
    pub fn iid(vocab: Arc<Vocabulary>, probs: Vec<f64>) -> Result<Self, ModelError> {
        check_dist(&vocab, &probs, "iid table")?;
        Ok(TableModel {
            vocab,
            kind: TableKind::Iid(probs.into()),
        })
    }

    /// First-order table. Every context reachable without `fallback` must have a block.
    pub fn markov(
        vocab: Arc<Vocabulary>,
        blocks: HashMap<Option<TokenId>, Vec<f64>>,
        fallback: Option<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        for (ctx, probs) in &blocks {
            check_dist(&vocab, probs, &format!("block {ctx:?}"))?;
        }
        if let Some(f) = &fallback {
            check_dist(&vocab, f, "fallback block")?;
        } else {
            let missing = std::iter::once(None)
                .chain((0..vocab.len()).filter(|&t| !vocab.is_eos(t)).map(Some))
                .find(|c| !blocks.contains_key(c));
            if let Some(c) = missing {
                return Err(ModelError::Invalid(format!(
                    "no block for context {c:?} and no fallback"
                )));
            }
        }
        Ok(TableModel {
            vocab,
            kind: TableKind::Markov {
                blocks: blocks.into_iter().map(|(k, v)| (k, v.into())).collect(),
                fallback: fallback.map(Into::into),
            },
        })
    }

    /// Parses the table format:
    ///
    /// ```text
    /// iid
    /// a 0.5
    /// ab 0.2
    /// ```
    ///
    /// or `conditional` followed by blocks opened with `ctx <token>`, where
    /// `ctx #bos` is the sequence start and `ctx *` the fallback. Unlisted
    /// tokens get probability zero.
    pub fn parse(text: &str, vocab: Arc<Vocabulary>) -> Result<Self, ModelError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with("//"));
        let (hline, header) = lines.next().ok_or(ModelError::Parse {
            line: 1,
            message: "empty model file".to_string(),
        })?;
        let conditional = match header {
            "iid" => false,
            "conditional" => true,
            other => {
                return Err(ModelError::Parse {
                    line: hline,
                    message: format!("expected `iid` or `conditional`, got {other:?}"),
                })
            }
        };

        enum Key {
            Ctx(Option<TokenId>),
            Fallback,
        }
        let mut blocks: Vec<(Key, Vec<f64>)> = Vec::new();
        if !conditional {
            blocks.push((Key::Fallback, vec![0.0; vocab.len()]));
        }
        for (line, l) in lines {
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() == 2 && fields[0] == "ctx" && conditional {
                let key = match fields[1] {
                    "*" => Key::Fallback,
                    "#bos" => Key::Ctx(None),
                    f => Key::Ctx(Some(parse_token_field(&vocab, f, line)?)),
                };
                blocks.push((key, vec![0.0; vocab.len()]));
                continue;
            }
            if fields.len() != 2 {
                return Err(ModelError::Parse {
                    line,
                    message: "expected `<token> <prob>`".to_string(),
                });
            }
            let token = parse_token_field(&vocab, fields[0], line)?;
            let p: f64 = fields[1].parse().map_err(|_| ModelError::Parse {
                line,
                message: format!("bad probability {:?}", fields[1]),
            })?;
            let (_, probs) = blocks.last_mut().ok_or(ModelError::Parse {
                line,
                message: "entry before any `ctx` line".to_string(),
            })?;
            probs[token] = p;
        }

        if !conditional {
            let (_, probs) = blocks.pop().expect("iid block");
            return TableModel::iid(vocab, probs);
        }
        let mut map = HashMap::new();
        let mut fallback = None;
        for (key, probs) in blocks {
            match key {
                Key::Ctx(c) => {
                    map.insert(c, probs);
                }
                Key::Fallback => fallback = Some(probs),
            }
        }
        TableModel::markov(vocab, map, fallback)
    }
}

impl TokenModel for TableModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn history_len(&self) -> usize {
        match self.kind {
            TableKind::Iid(_) => 0,
            TableKind::Markov { .. } => 1,
        }
    }

    fn dist_for(&self, view: PrefixView<'_>, _ctx: &Context) -> Distribution {
        match &self.kind {
            TableKind::Iid(d) => d.clone(),
            TableKind::Markov { blocks, fallback } => {
                let prev = view.window.last().copied().flatten();
                blocks
                    .get(&prev)
                    .or(fallback.as_ref())
                    .cloned()
                    .expect("constructor guarantees every context has a block")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::new(["a", "b", "ab"], false).unwrap())
    }

    #[test]
    fn iid_ignores_prefix() {
        let m = TableModel::iid(vocab(), vec![0.5, 0.3, 0.2]).unwrap();
        for prefix in [&[][..], &[0], &[2, 1, 0]] {
            assert_eq!(&*m.next_token_dist(prefix, &Context::Empty).unwrap(), &[0.5, 0.3, 0.2]);
        }
        let lp = m.sequence_log_prob(&[0, 1], &Context::Empty).unwrap();
        assert!((lp - 0.15f64.ln()).abs() < 1e-12);
        assert_eq!(m.sequence_log_prob(&[], &Context::Empty).unwrap(), 0.0);
    }

    #[test]
    fn zero_step_gives_neg_infinity() {
        let m = TableModel::iid(vocab(), vec![0.5, 0.5, 0.0]).unwrap();
        assert_eq!(
            m.sequence_log_prob(&[0, 2], &Context::Empty).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn rejects_unnormalized() {
        assert!(TableModel::iid(vocab(), vec![0.5, 0.3, 0.3]).is_err());
    }

    #[test]
    fn invalid_token_is_an_error() {
        let m = TableModel::iid(vocab(), vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(
            m.next_token_dist(&[7], &Context::Empty).unwrap_err(),
            ModelError::InvalidToken(7)
        );
    }

    #[test]
    fn parses_conditional_blocks() {
        let text = "conditional\nctx #bos\na 1.0\nctx a\nb 0.25\nab 0.75\nctx *\na 0.5\nb 0.5\n";
        let m = TableModel::parse(text, vocab()).unwrap();
        let ctx = Context::Empty;
        assert_eq!(&*m.next_token_dist(&[], &ctx).unwrap(), &[1.0, 0.0, 0.0]);
        assert_eq!(&*m.next_token_dist(&[0], &ctx).unwrap(), &[0.0, 0.25, 0.75]);
        assert_eq!(&*m.next_token_dist(&[0, 1], &ctx).unwrap(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn parses_iid_with_eos() {
        let v = Arc::new(Vocabulary::new(["a", "b"], true).unwrap());
        let m = TableModel::parse("iid\na 0.5\nb 0.25\n#eos 0.25\n", v).unwrap();
        assert_eq!(&*m.next_token_dist(&[], &Context::Empty).unwrap(), &[0.5, 0.25, 0.25]);
    }

    #[test]
    fn markov_without_fallback_must_cover_contexts() {
        let blocks = HashMap::from([(None, vec![1.0, 0.0, 0.0])]);
        assert!(TableModel::markov(vocab(), blocks, None).is_err());
    }
}
