//! Fused byte-level beam search over several token models.
//!
//! Each beam carries a committed byte string and one [`ModelCache`] per
//! model. At every step each model scores all next bytes in its own token
//! space (via [`next_byte_scores_with`]); the per-model joint log-scores are
//! combined log-linearly and the global top `num_beams` expansions survive.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::byte_transform::{next_byte_scores_with, refresh_cache, ByteScore, ModelCache, TransformError};
use crate::models::{Context, TokenModel};
use crate::par::{self, Parallelism};

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("decode needs at least one model")]
    NoModels,
    #[error("{weights} weights for {models} models")]
    WeightCount { weights: usize, models: usize },
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("every beam reached zero fused mass after {steps} steps")]
    AllBeamsDead { steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    #[default]
    Synchronous,
    /// Model 0 proposes bytes and is scored on the full prefix; every other
    /// model scores a prefix lagging behind by the configured lag.
    Delayed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LagPolicy {
    Fixed(usize),
    /// Byte length of model 0's final main-sequence token.
    #[default]
    LastTrTokenLength,
}

/// Penalizes appending a byte that completes an n-gram already present in the beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionPenalty {
    pub ngram: usize,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub weights: Vec<f64>,
    pub num_beams: usize,
    pub max_bytes: usize,
    pub feedback: FeedbackMode,
    pub lag: LagPolicy,
    /// Exponent α of the `len^α` divisor applied at final selection only.
    pub length_penalty: f64,
    pub repetition: Option<RepetitionPenalty>,
    /// Confidence threshold for speculative forward skipping; `None` disables it.
    pub speculative_threshold: Option<f64>,
    pub parallelism: Parallelism,
}

impl FusionConfig {
    pub fn new(weights: Vec<f64>, num_beams: usize, max_bytes: usize) -> Self {
        FusionConfig {
            weights,
            num_beams,
            max_bytes,
            feedback: FeedbackMode::Synchronous,
            lag: LagPolicy::default(),
            length_penalty: 0.0,
            repetition: None,
            speculative_threshold: None,
            parallelism: Parallelism::default(),
        }
    }

    /// Single model, weight 1.
    pub fn single(num_beams: usize, max_bytes: usize) -> Self {
        FusionConfig::new(vec![1.0], num_beams, max_bytes)
    }

    /// Recognizer + language model with `λ = (1 - r, r)`.
    pub fn two_model(r: f64, num_beams: usize, max_bytes: usize) -> Result<Self, DecodeError> {
        if !(0.0..=1.0).contains(&r) {
            return Err(DecodeError::InvalidConfig(format!("r = {r} outside [0, 1]")));
        }
        Ok(FusionConfig::new(vec![1.0 - r, r], num_beams, max_bytes))
    }

    pub fn validate(&self, models: usize) -> Result<(), DecodeError> {
        if models == 0 {
            return Err(DecodeError::NoModels);
        }
        if self.weights.len() != models {
            return Err(DecodeError::WeightCount {
                weights: self.weights.len(),
                models,
            });
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(DecodeError::InvalidConfig(
                "weights must be finite and non-negative".into(),
            ));
        }
        if self.weights.iter().all(|&w| w == 0.0) {
            return Err(DecodeError::InvalidConfig(
                "at least one weight must be positive".into(),
            ));
        }
        if self.num_beams == 0 {
            return Err(DecodeError::InvalidConfig("num_beams must be at least 1".into()));
        }
        if let Some(th) = self.speculative_threshold {
            if !(0.0..=1.0).contains(&th) {
                return Err(DecodeError::InvalidConfig(format!(
                    "speculative threshold {th} outside [0, 1]"
                )));
            }
        }
        if let Some(rep) = self.repetition {
            if rep.ngram == 0 || rep.penalty < 0.0 {
                return Err(DecodeError::InvalidConfig(
                    "repetition penalty needs ngram ≥ 1 and penalty ≥ 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Weighted log-linear fusion. `tracks[m][j]` is model `m`'s log-score of the
/// first `j` bytes; model `m` is read at `t - min(lags[m], t)` where
/// `t = tracks[m].len() - 1`. Zero weights drop out entirely, so a
/// zero-weighted `-inf` never poisons the sum.
pub fn fuse_scores(tracks: &[&[f64]], weights: &[f64], lags: &[usize]) -> f64 {
    let mut fused = 0.0;
    for ((track, &w), &lag) in tracks.iter().zip(weights).zip(lags) {
        if w == 0.0 {
            continue;
        }
        let t = track.len() - 1;
        fused += w * track[t - lag.min(t)];
    }
    fused
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finish {
    /// Selected through terminal (EOS) mass.
    Terminal,
    MaxBytes,
}

/// One hypothesis: committed bytes plus per-model caches and score history.
#[derive(Debug, Clone)]
pub struct Beam {
    pub bytes: Vec<u8>,
    /// `None` for models with zero weight, which are never evaluated.
    pub caches: Vec<Option<ModelCache>>,
    /// Per model, log-score of every prefix length `0..=bytes.len()`.
    pub tracks: Vec<Vec<f64>>,
    /// Current per-model log-scores (terminal scores once finished by EOS).
    pub per_model_scores: Vec<f64>,
    /// Prefix length each model was read at for `fused_score`.
    pub scored_lens: Vec<usize>,
    pub penalty: f64,
    pub fused_score: f64,
    pub finished: Option<Finish>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamSummary {
    pub bytes: Vec<u8>,
    pub fused_score: f64,
    pub per_model_scores: Vec<f64>,
    pub finished: Option<Finish>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeStats {
    /// `next_byte_scores` calls across all models.
    pub score_calls: u64,
    /// Calls that ran fewer forwards than the cache has depths.
    pub skipped_calls: u64,
    /// Calls whose forwards exceeded the depth count (must stay zero).
    pub over_budget_calls: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub best: Vec<u8>,
    pub best_score: f64,
    /// Final pool, best first.
    pub all_beams: Vec<BeamSummary>,
    pub step_count: usize,
    /// Model forwards per model, scoring and cache refresh combined.
    pub forward_count: Vec<u64>,
    pub stats: DecodeStats,
    /// Selected (bytes, fused score) after every step.
    pub trajectory: Vec<Vec<(Vec<u8>, f64)>>,
}

/// A model paired with its conditioning context.
#[derive(Clone, Copy)]
pub struct ModelInput<'a> {
    pub model: &'a dyn TokenModel,
    pub ctx: &'a Context,
}

impl<'a> ModelInput<'a> {
    pub fn new(model: &'a dyn TokenModel, ctx: &'a Context) -> Self {
        ModelInput { model, ctx }
    }
}

enum Source {
    Frozen(usize),
    Child { parent: usize, byte: u8 },
    Terminal { parent: usize },
}

struct Candidate {
    source: Source,
    bytes: Vec<u8>,
    fused: f64,
    per_model: Vec<f64>,
    scored_lens: Vec<usize>,
    penalty: f64,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.fused
        .partial_cmp(&a.fused)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.bytes.cmp(&b.bytes))
}

fn repeats(bytes: &[u8], n: usize) -> bool {
    if bytes.len() <= n {
        return false;
    }
    let tail = &bytes[bytes.len() - n..];
    bytes[..bytes.len() - 1].windows(n).any(|w| w == tail)
}

struct Decoder<'a, 'b> {
    models: &'b [ModelInput<'a>],
    cfg: &'b FusionConfig,
    active: Vec<bool>,
    has_eos: Vec<bool>,
    forwards: Vec<u64>,
    stats: DecodeStats,
}

impl Decoder<'_, '_> {
    fn lags(&self, new_bytes: &[u8]) -> Result<Vec<usize>, DecodeError> {
        let mut lags = vec![0; self.models.len()];
        if self.cfg.feedback == FeedbackMode::Delayed {
            let k = match self.cfg.lag {
                LagPolicy::Fixed(k) => k,
                LagPolicy::LastTrTokenLength => self.models[0]
                    .model
                    .vocab()
                    .tokenize(new_bytes)
                    .map_err(TransformError::from)?
                    .last_token_len(),
            };
            for lag in lags.iter_mut().skip(1) {
                *lag = k;
            }
        }
        Ok(lags)
    }

    fn fuse(&self, tracks: &[&[f64]], lags: &[usize]) -> f64 {
        fuse_scores(tracks, &self.cfg.weights, lags)
    }

    fn new_beam(&mut self, bytes: Vec<u8>, caches: Vec<Option<ModelCache>>, tracks: Vec<Vec<f64>>) -> Beam {
        let n = self.models.len();
        Beam {
            per_model_scores: tracks.iter().map(|t| *t.last().expect("non-empty track")).collect(),
            scored_lens: vec![bytes.len(); n],
            bytes,
            caches,
            tracks,
            penalty: 0.0,
            fused_score: 0.0,
            finished: None,
        }
    }

    /// Scores at a beam's end with every model caught up to the full prefix.
    fn full_fused(&self, beam: &Beam) -> f64 {
        let tracks: Vec<&[f64]> = beam.tracks.iter().map(Vec::as_slice).collect();
        self.fuse(&tracks, &vec![0; self.models.len()]) - beam.penalty
    }

    fn root(&mut self) -> Result<Beam, DecodeError> {
        let caches = par::map_slice(self.cfg.parallelism, self.models, |m| {
            refresh_cache(m.model, &[], m.ctx, None)
        });
        let mut out = Vec::with_capacity(caches.len());
        for (i, c) in caches.into_iter().enumerate() {
            let c = c?;
            self.forwards[i] += c.refresh_forwards() as u64;
            out.push(if self.active[i] { Some(c) } else { None });
        }
        let tracks = vec![vec![0.0]; self.models.len()];
        let mut beam = self.new_beam(Vec::new(), out, tracks);
        if self.cfg.max_bytes == 0 {
            beam.finished = Some(Finish::MaxBytes);
        }
        Ok(beam)
    }

    fn score_beams(&mut self, live: &mut [Beam]) -> Vec<Vec<Option<ByteScore>>> {
        let models = self.models;
        let skip_at = self.cfg.speculative_threshold;
        let n = models.len();
        let jobs: Vec<(usize, usize)> = (0..live.len())
            .flat_map(|b| (0..n).filter(|&m| self.active[m]).map(move |m| (b, m)))
            .collect();
        let beams: &[Beam] = live;
        let results = par::map_slice(self.cfg.parallelism, &jobs, |&(b, m)| {
            let cache = beams[b].caches[m].as_ref().expect("active model has a cache");
            next_byte_scores_with(models[m].model, cache, models[m].ctx, skip_at)
        });
        let mut out: Vec<Vec<Option<ByteScore>>> = (0..live.len()).map(|_| vec![None; n]).collect();
        for ((b, m), score) in jobs.into_iter().zip(results) {
            let depths = live[b].caches[m].as_ref().expect("active").depths();
            self.stats.score_calls += 1;
            if score.forwards() < depths {
                self.stats.skipped_calls += 1;
            }
            if score.forwards() > depths {
                self.stats.over_budget_calls += 1;
            }
            self.forwards[m] += score.forwards() as u64;
            live[b].caches[m].as_mut().expect("active").record(&score);
            out[b][m] = Some(score);
        }
        out
    }

    fn expand(&self, parent: usize, beam: &Beam, scores: &[Option<ByteScore>]) -> Result<Vec<Candidate>, DecodeError> {
        let n = self.models.len();
        let w = &self.cfg.weights;
        let mut candidates = Vec::new();

        let mut bytes_union = [false; 256];
        for (m, s) in scores.iter().enumerate() {
            if w[m] > 0.0 {
                for b in s.as_ref().expect("positive weight is active").candidates() {
                    bytes_union[b as usize] = true;
                }
            }
        }
        let t = beam.bytes.len() + 1;
        for byte in (0..=255u8).filter(|&b| bytes_union[b as usize]) {
            let mut new_bytes = beam.bytes.clone();
            new_bytes.push(byte);
            let per_model: Vec<f64> = (0..n)
                .map(|m| scores[m].as_ref().map_or(0.0, |s| s.log_score(byte)))
                .collect();
            if (0..n).any(|m| {
                w[m] > 0.0 && per_model[m] == f64::NEG_INFINITY && self.cfg.feedback == FeedbackMode::Synchronous
            }) {
                continue;
            }
            // every positive-weight model must be able to tokenize the extension
            if (0..n).any(|m| w[m] > 0.0 && self.models[m].model.vocab().tokenize(&new_bytes).is_err()) {
                continue;
            }
            let lags = self.lags(&new_bytes)?;
            let extended: Vec<Vec<f64>> = beam
                .tracks
                .iter()
                .zip(&per_model)
                .map(|(tr, &s)| {
                    let mut v = tr.clone();
                    v.push(s);
                    v
                })
                .collect();
            let views: Vec<&[f64]> = extended.iter().map(Vec::as_slice).collect();
            let penalty = beam.penalty
                + match self.cfg.repetition {
                    Some(rep) if repeats(&new_bytes, rep.ngram) => rep.penalty,
                    _ => 0.0,
                };
            let fused = self.fuse(&views, &lags) - penalty;
            if fused == f64::NEG_INFINITY || fused.is_nan() {
                continue;
            }
            candidates.push(Candidate {
                source: Source::Child { parent, byte },
                bytes: new_bytes,
                fused,
                per_model,
                scored_lens: lags.iter().map(|&k| t - k.min(t)).collect(),
                penalty,
            });
        }

        // a model without EOS does not vote on termination
        if (0..n).any(|m| w[m] > 0.0 && self.has_eos[m]) {
            let per_model: Vec<f64> = (0..n)
                .map(|m| match &scores[m] {
                    Some(s) if self.has_eos[m] => s.log_terminal(),
                    _ => beam.per_model_scores[m],
                })
                .collect();
            let fused: f64 = (0..n).filter(|&m| w[m] > 0.0).map(|m| w[m] * per_model[m]).sum::<f64>() - beam.penalty;
            if fused > f64::NEG_INFINITY {
                candidates.push(Candidate {
                    source: Source::Terminal { parent },
                    bytes: beam.bytes.clone(),
                    fused,
                    per_model,
                    scored_lens: vec![beam.bytes.len(); n],
                    penalty: beam.penalty,
                });
            }
        }
        Ok(candidates)
    }

    fn run(&mut self) -> Result<DecodeResult, DecodeError> {
        let root = self.root()?;
        let (mut live, mut finished) = if root.finished.is_some() {
            (Vec::new(), vec![root])
        } else {
            (vec![root], Vec::new())
        };
        let mut steps = 0;
        let mut trajectory = Vec::new();

        while !live.is_empty() {
            steps += 1;
            let scores = self.score_beams(&mut live);
            let expansions = par::map_range(self.cfg.parallelism, live.len(), |i| {
                self.expand(i, &live[i], &scores[i])
            });
            let mut pool: Vec<Candidate> = finished
                .iter()
                .enumerate()
                .map(|(i, b)| Candidate {
                    source: Source::Frozen(i),
                    bytes: b.bytes.clone(),
                    fused: b.fused_score,
                    per_model: Vec::new(),
                    scored_lens: Vec::new(),
                    penalty: b.penalty,
                })
                .collect();
            for e in expansions {
                pool.extend(e?);
            }
            if pool.is_empty() {
                return Err(DecodeError::AllBeamsDead { steps });
            }
            pool.sort_by(rank);
            pool.truncate(self.cfg.num_beams);

            let mut next_finished = Vec::new();
            let mut children = Vec::new();
            for c in pool {
                match c.source {
                    Source::Frozen(i) => next_finished.push(finished[i].clone()),
                    Source::Terminal { parent } => {
                        let p = &live[parent];
                        let mut b = p.clone();
                        b.per_model_scores = c.per_model;
                        b.scored_lens = c.scored_lens;
                        b.fused_score = c.fused;
                        b.finished = Some(Finish::Terminal);
                        next_finished.push(b);
                    }
                    Source::Child { parent, byte } => children.push((parent, byte, c)),
                }
            }

            let refreshed = par::map_slice(self.cfg.parallelism, &children, |(parent, _, c)| {
                let p = &live[*parent];
                (0..self.models.len())
                    .map(|m| match &p.caches[m] {
                        Some(old) => {
                            refresh_cache(self.models[m].model, &c.bytes, self.models[m].ctx, Some(old)).map(Some)
                        }
                        None => Ok(None),
                    })
                    .collect::<Result<Vec<_>, _>>()
            });
            let mut next_live = Vec::new();
            for ((parent, _byte, c), caches) in children.into_iter().zip(refreshed) {
                let caches = caches?;
                for (m, cache) in caches.iter().enumerate() {
                    if let Some(cache) = cache {
                        self.forwards[m] += cache.refresh_forwards() as u64;
                    }
                }
                let p = &live[parent];
                let tracks: Vec<Vec<f64>> = p
                    .tracks
                    .iter()
                    .zip(&c.per_model)
                    .map(|(tr, &s)| {
                        let mut v = tr.clone();
                        v.push(s);
                        v
                    })
                    .collect();
                let mut beam = self.new_beam(c.bytes, caches, tracks);
                beam.penalty = c.penalty;
                beam.scored_lens = c.scored_lens;
                beam.fused_score = c.fused;
                if beam.bytes.len() >= self.cfg.max_bytes {
                    beam.finished = Some(Finish::MaxBytes);
                    beam.fused_score = self.full_fused(&beam);
                    beam.scored_lens = vec![beam.bytes.len(); self.models.len()];
                    next_finished.push(beam);
                } else {
                    next_live.push(beam);
                }
            }

            trajectory.push(
                next_finished
                    .iter()
                    .chain(&next_live)
                    .map(|b| (b.bytes.clone(), b.fused_score))
                    .collect(),
            );
            live = next_live;
            finished = next_finished;
        }

        let alpha = self.cfg.length_penalty;
        let normalized = |b: &Beam| {
            if alpha == 0.0 {
                b.fused_score
            } else {
                b.fused_score / (b.bytes.len().max(1) as f64).powf(alpha)
            }
        };
        finished.sort_by(|a, b| {
            normalized(b)
                .partial_cmp(&normalized(a))
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.bytes.cmp(&b.bytes))
        });
        let best = finished.first().ok_or(DecodeError::AllBeamsDead { steps })?;
        Ok(DecodeResult {
            best: best.bytes.clone(),
            best_score: best.fused_score,
            all_beams: finished
                .iter()
                .map(|b| BeamSummary {
                    bytes: b.bytes.clone(),
                    fused_score: b.fused_score,
                    per_model_scores: b.per_model_scores.clone(),
                    finished: b.finished,
                })
                .collect(),
            step_count: steps,
            forward_count: self.forwards.clone(),
            stats: self.stats.clone(),
            trajectory,
        })
    }
}

/// Fused beam search. Models with zero weight are never evaluated.
pub fn decode(models: &[ModelInput<'_>], cfg: &FusionConfig) -> Result<DecodeResult, DecodeError> {
    cfg.validate(models.len())?;
    for m in models {
        m.model.check_context(m.ctx).map_err(TransformError::from)?;
    }
    let mut decoder = Decoder {
        models,
        cfg,
        active: cfg.weights.iter().map(|&w| w > 0.0).collect(),
        has_eos: models.iter().map(|m| m.model.vocab().eos().is_some()).collect(),
        forwards: vec![0; models.len()],
        stats: DecodeStats::default(),
    };
    decoder.run()
}

/// Single-model, single-beam decode.
pub fn decode_greedy(model: &dyn TokenModel, ctx: &Context, max_bytes: usize) -> Result<Vec<u8>, DecodeError> {
    let cfg = FusionConfig::single(1, max_bytes);
    Ok(decode(&[ModelInput::new(model, ctx)], &cfg)?.best)
}
