//! Noise-sweep experiment: greedy, beam and fused decoding of a synthetic
//! noisy-channel corpus.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::config::ExperimentConfig;
use super::corpus::{corrupt_corpus, Source};
use super::{parse_lines, read_text, HarnessError};
use crate::fusion::{decode, DecodeResult, DecodeStats, ModelInput};
use crate::metrics::{evaluate, EvalReport};
use crate::models::{load_model, Context, CountingModel, NGramModel, NoisyChannel, Signal, TokenModel};
use crate::par::map_range;
use crate::vocab::Vocabulary;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    /// Recognizer alone, one beam.
    Greedy,
    /// Recognizer alone, configured beam width.
    Beam,
    /// Recognizer fused with the language model.
    Fused,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 3] = [DecoderKind::Greedy, DecoderKind::Beam, DecoderKind::Fused];

    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Greedy => "greedy",
            DecoderKind::Beam => "beam",
            DecoderKind::Fused => "fused",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        DecoderKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One decoder over one condition's corpus.
#[derive(Debug, Clone)]
pub struct DecoderReport {
    pub decoder: DecoderKind,
    pub weights: Vec<f64>,
    pub eval: EvalReport,
    pub hypotheses: Vec<Vec<u8>>,
    /// `(utterance index, error)` for utterances whose decode failed; their
    /// hypothesis is the empty string.
    pub failures: Vec<(usize, String)>,
    /// Instrumented forwards per model (recognizer, language model).
    pub forwards: [u64; 2],
    /// The same counts summed from the decoder's own accounting.
    pub decoder_forwards: [u64; 2],
    pub stats: DecodeStats,
}

#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub noise: f64,
    pub signals: Vec<Vec<u8>>,
    pub decoders: Vec<DecoderReport>,
}

impl ConditionReport {
    pub fn name(&self) -> String {
        condition_name(self.noise)
    }

    pub fn decoder(&self, kind: DecoderKind) -> Option<&DecoderReport> {
        self.decoders.iter().find(|d| d.decoder == kind)
    }
}

pub fn condition_name(noise: f64) -> String {
    format!("noise-{noise}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    /// More than half of all decodes failed.
    Failed,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub references: Vec<Vec<u8>>,
    pub conditions: Vec<ConditionReport>,
    pub status: RunStatus,
    /// Not serialized into the report, which must stay reproducible.
    pub wall_time: Duration,
}

impl RunReport {
    pub fn condition(&self, noise: f64) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.noise == noise)
    }

    pub fn failed_decodes(&self) -> usize {
        self.conditions
            .iter()
            .flat_map(|c| &c.decoders)
            .map(|d| d.failures.len())
            .sum()
    }

    pub fn total_decodes(&self) -> usize {
        self.conditions
            .iter()
            .map(|c| c.decoders.len() * self.references.len())
            .sum()
    }
}

/// Models, vocabularies and references shared by every condition.
pub struct Setup {
    pub config: ExperimentConfig,
    pub references: Vec<Vec<u8>>,
    pub confusions: Vec<(u8, u8)>,
    pub recognizer: Arc<dyn TokenModel>,
    pub lm: Arc<dyn TokenModel>,
    pub lm_context: Context,
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let source = Source::generate(&cfg.corpus, cfg.seed);
        let references = match &cfg.corpus.reference {
            Some(p) => parse_lines(&read_text(&cfg.resolve(p))?)?,
            None => source.test_corpus(cfg.seed, cfg.corpus.utterances),
        };
        if references.is_empty() {
            return Err(HarnessError::Config("reference corpus is empty".into()));
        }
        let confusions = source.confusion_pairs(cfg.seed, cfg.tr.confusion_pairs);

        let tr_vocab = Arc::new(match &cfg.tr.vocab {
            Some(p) => Vocabulary::load(&cfg.resolve(p))?,
            None => source.recognizer_vocab(cfg.tr.extra_tokens)?,
        });
        let lm_vocab = Arc::new(match &cfg.lm.vocab {
            Some(p) => Vocabulary::load(&cfg.resolve(p))?,
            None => source.lm_vocab()?,
        });
        let lm: Arc<dyn TokenModel> = match &cfg.lm.model {
            Some(p) => load_model(&cfg.resolve(p), lm_vocab)?,
            None => {
                let train = match &cfg.corpus.train {
                    Some(p) => parse_lines(&read_text(&cfg.resolve(p))?)?,
                    None => source.train_corpus(cfg.seed, cfg.corpus.train_utterances),
                };
                Arc::new(NGramModel::train(lm_vocab, cfg.lm.order, cfg.lm.alpha, &train)?)
            }
        };
        let lm_context = match &cfg.lm.prompt {
            Some(p) => Context::Prompt(p.as_bytes().to_vec()),
            None => Context::Empty,
        };
        lm.check_context(&lm_context)?;
        Ok(Setup {
            config: cfg.clone(),
            references,
            confusions,
            recognizer: Arc::new(NoisyChannel::new(tr_vocab)),
            lm,
            lm_context,
        })
    }

    pub fn signals(&self, noise: f64) -> Vec<Vec<u8>> {
        corrupt_corpus(&self.references, &self.confusions, noise, self.config.seed)
    }

    pub fn signal_context(&self, observed: &[u8], noise: f64) -> Result<Context, HarnessError> {
        Ok(Context::Signal(
            Signal::new(observed, noise)?.with_confusions(self.confusions.iter().copied()),
        ))
    }

    /// Weights and beam width for a decoder variant.
    pub fn decoder_params(&self, kind: DecoderKind) -> (Vec<f64>, usize) {
        let f = &self.config.fusion;
        match kind {
            DecoderKind::Greedy => (vec![1.0], 1),
            DecoderKind::Beam => (vec![1.0], f.beams),
            DecoderKind::Fused => (vec![1.0 - f.r, f.r], f.beams),
        }
    }

    /// Decodes every signal with the given weights and beam width. One weight
    /// runs the recognizer alone; two add the language model.
    pub fn decode_corpus(
        &self,
        kind: DecoderKind,
        weights: Vec<f64>,
        beams: usize,
        noise: f64,
        signals: &[Vec<u8>],
    ) -> Result<DecoderReport, HarnessError> {
        let f = &self.config.fusion;
        let tr = CountingModel::new(self.recognizer.clone());
        let lm = CountingModel::new(self.lm.clone());
        let contexts = signals
            .iter()
            .map(|s| self.signal_context(s, noise))
            .collect::<Result<Vec<_>, _>>()?;
        // Surface configuration errors once instead of once per utterance.
        if !(1..=2).contains(&weights.len()) {
            return Err(HarnessError::Invalid(format!(
                "{} weights for at most 2 models",
                weights.len()
            )));
        }
        f.build(weights.clone(), beams, 1).validate(weights.len())?;

        let results: Vec<Result<DecodeResult, String>> = map_range(f.parallelism, signals.len(), |i| {
            let cfg = f.build(weights.clone(), beams, signals[i].len() + f.max_bytes_slack);
            let inputs = [
                ModelInput::new(&tr, &contexts[i]),
                ModelInput::new(&lm, &self.lm_context),
            ];
            decode(&inputs[..weights.len()], &cfg).map_err(|e| e.to_string())
        });

        let mut hypotheses = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        let mut decoder_forwards = [0u64; 2];
        let mut stats = DecodeStats::default();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(res) => {
                    for (total, n) in decoder_forwards.iter_mut().zip(&res.forward_count) {
                        *total += n;
                    }
                    stats.score_calls += res.stats.score_calls;
                    stats.skipped_calls += res.stats.skipped_calls;
                    stats.over_budget_calls += res.stats.over_budget_calls;
                    hypotheses.push(res.best);
                }
                Err(e) => {
                    failures.push((i, e));
                    hypotheses.push(Vec::new());
                }
            }
        }
        let eval = evaluate(&self.references, &hypotheses)?;
        Ok(DecoderReport {
            decoder: kind,
            weights,
            eval,
            hypotheses,
            failures,
            forwards: [tr.forwards(), lm.forwards()],
            decoder_forwards,
            stats,
        })
    }

    pub fn run_condition(&self, noise: f64) -> Result<ConditionReport, HarnessError> {
        let signals = self.signals(noise);
        let mut decoders = Vec::with_capacity(3);
        for kind in DecoderKind::ALL {
            let (weights, beams) = self.decoder_params(kind);
            decoders.push(self.decode_corpus(kind, weights, beams, noise, &signals)?);
        }
        Ok(ConditionReport {
            noise,
            signals,
            decoders,
        })
    }
}

/// Runs every noise condition with all three decoders.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    let start = Instant::now();
    let setup = Setup::build(cfg)?;
    let conditions = cfg
        .experiment
        .noise
        .iter()
        .map(|&e| setup.run_condition(e))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        references: setup.references,
        conditions,
        status: RunStatus::Ok,
        wall_time: Duration::ZERO,
    };
    if report.failed_decodes() * 2 > report.total_decodes() {
        report.status = RunStatus::Failed;
    }
    report.wall_time = start.elapsed();
    Ok(report)
}
