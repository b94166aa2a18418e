//! Token-space to byte-space probability transform.
//!
//! A byte string `B` is scored through its main token sequence (the greedy
//! tokenization of `B`) and, at every token boundary, the alternative tokens
//! whose bytes cover the remaining suffix. [`ModelCache`] holds that
//! structure for one model and one byte string; [`next_byte_scores`] turns it
//! into joint scores `P({B, b})` for every next byte `b`.
//!
//! [`exact_byte_marginal`] enumerates every covering token sequence and is
//! only meant as a reference on tiny instances.

use std::sync::Arc;

use thiserror::Error;

use crate::models::{Context, Distribution, IncrementalState, ModelError, TokenModel};
use crate::vocab::{Alternative, MainSequence, NodeId, VocabError, Vocabulary};

pub const DEFAULT_ORACLE_BUDGET: usize = 2_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("enumeration budget of {budget} forwards exceeded")]
    BudgetExceeded { budget: usize },
}

/// Model forwards and per-depth byte mass from one [`next_byte_scores`] call.
#[derive(Debug, Clone)]
pub struct Evaluation {
    dists: Vec<Distribution>,
    /// Mass each depth routed to next bytes (and, at the final depth, to
    /// the terminal), all on the same relative scale.
    depth_mass: Vec<f64>,
}

impl Evaluation {
    /// Share of the total mass coming from the deepest depth; 0 when there
    /// is no mass at all.
    pub fn confidence(&self) -> f64 {
        let total: f64 = self.depth_mass.iter().sum();
        match self.depth_mass.last() {
            Some(&last) if total > 0.0 => last / total,
            _ => 0.0,
        }
    }

    pub fn depth_mass(&self) -> &[f64] {
        &self.depth_mass
    }
}

/// Per-model decoding cache for one committed byte string.
#[derive(Debug, Clone)]
pub struct ModelCache {
    main: MainSequence,
    /// Trie node of each depth's suffix; `None` when no token covers it.
    alt_nodes: Vec<Option<NodeId>>,
    prefix_lengths: Vec<usize>,
    log_rolling: Vec<f64>,
    states: Vec<IncrementalState>,
    evaluation: Option<Arc<Evaluation>>,
    prior: Option<Arc<Evaluation>>,
    refresh_forwards: usize,
}

impl ModelCache {
    pub fn bytes(&self) -> &[u8] {
        &self.main.source_bytes
    }

    pub fn main_sequence(&self) -> &MainSequence {
        &self.main
    }

    /// `S + 1`: one depth per token boundary, the empty final suffix included.
    pub fn depths(&self) -> usize {
        self.prefix_lengths.len()
    }

    pub fn prefix_lengths(&self) -> &[usize] {
        &self.prefix_lengths
    }

    pub fn alternatives(&self, vocab: &Vocabulary, depth: usize) -> Vec<Alternative> {
        let matched_len = self.prefix_lengths[depth];
        match self.alt_nodes[depth] {
            Some(node) => vocab
                .index()
                .tokens_at(node)
                .iter()
                .map(|&token| Alternative { token, matched_len })
                .collect(),
            None => Vec::new(),
        }
    }

    /// Product of main-token probabilities before `depth`.
    pub fn rolling(&self, depth: usize) -> f64 {
        self.log_rolling[depth].exp()
    }

    pub fn log_rolling(&self, depth: usize) -> f64 {
        self.log_rolling[depth]
    }

    pub fn state(&self, depth: usize) -> &IncrementalState {
        &self.states[depth]
    }

    /// Result of the last [`next_byte_scores`] on this cache, once recorded.
    pub fn evaluation(&self) -> Option<&Arc<Evaluation>> {
        self.evaluation.as_ref()
    }

    pub fn record(&mut self, score: &ByteScore) {
        self.evaluation = Some(score.evaluation.clone());
    }

    /// Forwards spent by the refresh that built this cache.
    pub fn refresh_forwards(&self) -> usize {
        self.refresh_forwards
    }
}

/// Rebuilds the cache for `bytes`, reusing states, rolling products and
/// recorded distributions from `old` for the longest shared token prefix.
pub fn refresh_cache(
    model: &dyn TokenModel,
    bytes: &[u8],
    ctx: &Context,
    old: Option<&ModelCache>,
) -> Result<ModelCache, TransformError> {
    let vocab = model.vocab();
    let main = vocab.tokenize(bytes)?;
    let s_len = main.len();
    let shared = old.map_or(0, |o| {
        o.main
            .token_ids
            .iter()
            .zip(&main.token_ids)
            .take_while(|(a, b)| a == b)
            .count()
    });
    let old_eval = old.and_then(|o| o.evaluation.as_ref());

    let mut states = Vec::with_capacity(s_len + 1);
    let mut log_rolling = Vec::with_capacity(s_len + 1);
    let mut refresh_forwards = 0;
    match old {
        Some(o) => states.push(o.states[0].clone()),
        None => states.push(model.initial_state(ctx)?),
    }
    log_rolling.push(0.0);
    for s in 1..=s_len {
        if s <= shared {
            let o = old.expect("shared > 0 implies old");
            states.push(o.states[s].clone());
            log_rolling.push(o.log_rolling[s]);
            continue;
        }
        let tok = main.token_ids[s - 1];
        let dist = match old_eval.and_then(|e| e.dists.get(s - 1)) {
            Some(d) if s - 1 <= shared => d.clone(),
            _ => {
                refresh_forwards += 1;
                model.dist_at(&states[s - 1], ctx)
            }
        };
        log_rolling.push(log_rolling[s - 1] + dist[tok].ln());
        let next = model.advance_state(&states[s - 1], tok)?;
        states.push(next);
    }

    let mut alt_nodes = Vec::with_capacity(s_len + 1);
    let mut prefix_lengths = Vec::with_capacity(s_len + 1);
    for depth in 0..=s_len {
        let suffix = main.suffix(depth);
        alt_nodes.push(vocab.index().find(suffix));
        prefix_lengths.push(suffix.len());
    }

    Ok(ModelCache {
        main,
        alt_nodes,
        prefix_lengths,
        log_rolling,
        states,
        evaluation: None,
        prior: old_eval.cloned(),
        refresh_forwards,
    })
}

/// Joint scores `P({B, b})` for every next byte, plus the terminal score of
/// `B` itself. Values are stored relative to `exp(log_scale)`.
#[derive(Debug, Clone)]
pub struct ByteScore {
    log_scale: f64,
    scores: Box<[f64; 256]>,
    terminal: f64,
    forwards: usize,
    evaluation: Arc<Evaluation>,
}

impl ByteScore {
    pub fn score(&self, byte: u8) -> f64 {
        self.scores[byte as usize] * self.log_scale.exp()
    }

    pub fn log_score(&self, byte: u8) -> f64 {
        self.scores[byte as usize].ln() + self.log_scale
    }

    pub fn terminal(&self) -> f64 {
        self.terminal * self.log_scale.exp()
    }

    pub fn log_terminal(&self) -> f64 {
        self.terminal.ln() + self.log_scale
    }

    /// Bytes with non-zero score, ascending.
    pub fn candidates(&self) -> impl Iterator<Item = u8> + '_ {
        (0..=255u8).filter(|&b| self.scores[b as usize] > 0.0)
    }

    /// Model forwards this call performed.
    pub fn forwards(&self) -> usize {
        self.forwards
    }

    pub fn evaluation(&self) -> &Arc<Evaluation> {
        &self.evaluation
    }

    pub fn confidence(&self) -> f64 {
        self.evaluation.confidence()
    }
}

/// Share of the last evaluation's mass at the deepest depth (0 if the cache
/// has not been scored).
pub fn speculative_confidence(cache: &ModelCache) -> f64 {
    cache.evaluation.as_ref().map_or(0.0, |e| e.confidence())
}

pub fn next_byte_scores(model: &dyn TokenModel, cache: &ModelCache, ctx: &Context) -> ByteScore {
    next_byte_scores_with(model, cache, ctx, None)
}

/// [`next_byte_scores`] with optional speculative skipping: when the parent
/// evaluation this cache was refreshed from had confidence at or above
/// `speculative`, non-final depths reuse the parent's distributions instead
/// of running a forward.
pub fn next_byte_scores_with(
    model: &dyn TokenModel,
    cache: &ModelCache,
    ctx: &Context,
    speculative: Option<f64>,
) -> ByteScore {
    let vocab = model.vocab();
    let last = cache.depths() - 1;
    let reuse = match (speculative, &cache.prior) {
        (Some(th), Some(prior)) if prior.confidence() >= th => Some(prior),
        _ => None,
    };

    let mut dists = Vec::with_capacity(cache.depths());
    let mut forwards = 0;
    // (byte, probability) per extending alternative, before rolling weights.
    let mut local: Vec<Vec<(u8, f64)>> = Vec::with_capacity(cache.depths());
    let mut local_terminal = 0.0;
    for depth in 0..=last {
        let dist = match reuse.and_then(|p| p.dists.get(depth)) {
            Some(d) if depth < last => d.clone(),
            _ => {
                forwards += 1;
                model.dist_at(&cache.states[depth], ctx)
            }
        };
        let matched = cache.prefix_lengths[depth];
        let mut entries = Vec::new();
        if let Some(node) = cache.alt_nodes[depth] {
            for &t in vocab.index().tokens_at(node) {
                let bytes = vocab.bytes(t);
                // tokens ending exactly at the suffix are off-main paths
                if bytes.len() > matched && dist[t] > 0.0 {
                    entries.push((bytes[matched], dist[t]));
                }
            }
        }
        if depth == last {
            if let Some(eos) = vocab.eos() {
                local_terminal = dist[eos];
            }
        }
        local.push(entries);
        dists.push(dist);
    }

    let contributes = |depth: usize| !local[depth].is_empty() || (depth == last && local_terminal > 0.0);
    let log_scale = (0..=last)
        .filter(|&d| contributes(d) && cache.log_rolling[d] > f64::NEG_INFINITY)
        .map(|d| cache.log_rolling[d])
        .fold(f64::NEG_INFINITY, f64::max);
    let log_scale = if log_scale.is_finite() { log_scale } else { 0.0 };

    let mut scores = Box::new([0.0f64; 256]);
    let mut depth_mass = vec![0.0; last + 1];
    let mut terminal = 0.0;
    for (depth, entries) in local.iter().enumerate() {
        let weight = (cache.log_rolling[depth] - log_scale).exp();
        for &(b, p) in entries {
            let v = weight * p;
            scores[b as usize] += v;
            depth_mass[depth] += v;
        }
        if depth == last {
            terminal = weight * local_terminal;
            depth_mass[depth] += terminal;
        }
    }

    ByteScore {
        log_scale,
        scores,
        terminal,
        forwards,
        evaluation: Arc::new(Evaluation { dists, depth_mass }),
    }
}

/// Main-sequence approximation of the byte-prefix probability `P({B})`:
/// `Σ_{s<S} rolling_s · Σ_{t covers suffix_s} P(t | T̂_<s)`, with the final
/// main token counted once. Uses `S` forwards. The empty string scores 1.
pub fn approx_byte_score(model: &dyn TokenModel, bytes: &[u8], ctx: &Context) -> Result<f64, TransformError> {
    Ok(approx_byte_log_score(model, bytes, ctx)?.exp())
}

pub fn approx_byte_log_score(model: &dyn TokenModel, bytes: &[u8], ctx: &Context) -> Result<f64, TransformError> {
    let vocab = model.vocab();
    let main = vocab.tokenize(bytes)?;
    if main.is_empty() {
        return Ok(0.0);
    }
    let mut state = model.initial_state(ctx)?;
    let mut log_rolling = 0.0;
    let mut terms = Vec::with_capacity(main.len());
    for (depth, &tok) in main.token_ids.iter().enumerate() {
        let dist = model.dist_at(&state, ctx);
        if let Some(node) = vocab.index().find(main.suffix(depth)) {
            let covered: f64 = vocab.index().tokens_at(node).iter().map(|&t| dist[t]).sum();
            if covered > 0.0 {
                terms.push(log_rolling + covered.ln());
            }
        }
        log_rolling += dist[tok].ln();
        state = model.advance_state(&state, tok)?;
    }
    Ok(log_sum_exp(&terms))
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

struct Enumerator<'a> {
    model: &'a dyn TokenModel,
    ctx: &'a Context,
    target: &'a [u8],
    max_tokens: usize,
    budget: usize,
    used: usize,
}

impl Enumerator<'_> {
    fn dist(&mut self, prefix: &[usize]) -> Result<Distribution, TransformError> {
        self.used += 1;
        if self.used > self.budget {
            return Err(TransformError::BudgetExceeded { budget: self.budget });
        }
        Ok(self.model.next_token_dist(prefix, self.ctx)?)
    }

    fn marginal(&mut self, prefix: &mut Vec<usize>, offset: usize, p: f64) -> Result<f64, TransformError> {
        let dist = self.dist(prefix)?;
        let vocab = self.model.vocab();
        let rest = &self.target[offset..];
        let mut total = 0.0;
        for (t, bytes) in vocab.iter() {
            if vocab.is_eos(t) || dist[t] == 0.0 {
                continue;
            }
            if bytes.starts_with(rest) {
                total += p * dist[t];
            } else if rest.starts_with(bytes) && prefix.len() + 1 < self.max_tokens {
                prefix.push(t);
                total += self.marginal(prefix, offset + bytes.len(), p * dist[t])?;
                prefix.pop();
            }
        }
        Ok(total)
    }

    fn terminal(&mut self, prefix: &mut Vec<usize>, offset: usize, p: f64) -> Result<f64, TransformError> {
        let dist = self.dist(prefix)?;
        let vocab = self.model.vocab();
        if offset == self.target.len() {
            return Ok(vocab.eos().map_or(0.0, |e| p * dist[e]));
        }
        let rest = &self.target[offset..];
        let mut total = 0.0;
        for (t, bytes) in vocab.iter() {
            if vocab.is_eos(t) || dist[t] == 0.0 || prefix.len() + 1 > self.max_tokens {
                continue;
            }
            if rest.starts_with(bytes) {
                prefix.push(t);
                total += self.terminal(prefix, offset + bytes.len(), p * dist[t])?;
                prefix.pop();
            }
        }
        Ok(total)
    }
}

/// Exact `P({B})`: total chain-rule probability of every minimal covering
/// token sequence (all but its last token lie strictly inside `B`, the last
/// reaches or passes the end). Sequences longer than `max_tokens` are not
/// explored. Exponential; fails once `DEFAULT_ORACLE_BUDGET` forwards are spent.
pub fn exact_byte_marginal(
    model: &dyn TokenModel,
    bytes: &[u8],
    ctx: &Context,
    max_tokens: usize,
) -> Result<f64, TransformError> {
    exact_byte_marginal_with_budget(model, bytes, ctx, max_tokens, DEFAULT_ORACLE_BUDGET)
}

pub fn exact_byte_marginal_with_budget(
    model: &dyn TokenModel,
    bytes: &[u8],
    ctx: &Context,
    max_tokens: usize,
    budget: usize,
) -> Result<f64, TransformError> {
    if bytes.is_empty() {
        return Ok(1.0);
    }
    model.check_context(ctx)?;
    let mut e = Enumerator {
        model,
        ctx,
        target: bytes,
        max_tokens,
        budget,
        used: 0,
    };
    e.marginal(&mut Vec::new(), 0, 1.0)
}

/// Exact probability of emitting exactly `B` and then EOS.
pub fn exact_terminal_mass(
    model: &dyn TokenModel,
    bytes: &[u8],
    ctx: &Context,
    max_tokens: usize,
) -> Result<f64, TransformError> {
    model.check_context(ctx)?;
    let mut e = Enumerator {
        model,
        ctx,
        target: bytes,
        max_tokens,
        budget: DEFAULT_ORACLE_BUDGET,
        used: 0,
    };
    e.terminal(&mut Vec::new(), 0, 1.0)
}
