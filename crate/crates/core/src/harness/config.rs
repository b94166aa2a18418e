//! Experiment configuration: flat TOML sections, every key optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::fusion::{FeedbackMode, FusionConfig, LagPolicy, RepetitionPenalty};
use crate::par::Parallelism;

pub const SEED_ENV: &str = "FUSEDEC_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub tr: RecognizerConfig,
    pub lm: LanguageModelConfig,
    pub fusion: FusionSection,
    pub experiment: GridConfig,
    /// Directory relative paths resolve against; set by [`ExperimentConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            output: None,
            corpus: CorpusConfig::default(),
            tr: RecognizerConfig::default(),
            lm: LanguageModelConfig::default(),
            fusion: FusionSection::default(),
            experiment: GridConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub alphabet: String,
    pub lexicon_size: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    /// Successors per word in the source chain.
    pub branching: usize,
    pub utterances: usize,
    pub train_utterances: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Reference utterances, one per line (escaped); replaces generation.
    pub reference: Option<PathBuf>,
    /// Language-model training lines; replaces the generated training corpus.
    pub train: Option<PathBuf>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            alphabet: "abdegiklmnoprstu".to_string(),
            lexicon_size: 24,
            min_word_len: 2,
            max_word_len: 5,
            branching: 3,
            utterances: 60,
            train_utterances: 2000,
            min_words: 3,
            max_words: 6,
            reference: None,
            train: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerConfig {
    pub vocab: Option<PathBuf>,
    /// Frequent in-word bigrams added to the generated vocabulary.
    pub extra_tokens: usize,
    pub confusion_pairs: usize,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig {
            vocab: None,
            extra_tokens: 64,
            confusion_pairs: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageModelConfig {
    pub vocab: Option<PathBuf>,
    /// Model file (table or n-gram); replaces training on the corpus.
    pub model: Option<PathBuf>,
    pub order: usize,
    pub alpha: f64,
    /// Prompt bytes prepended as LM context.
    pub prompt: Option<String>,
}

impl Default for LanguageModelConfig {
    fn default() -> Self {
        LanguageModelConfig {
            vocab: None,
            model: None,
            order: 2,
            alpha: crate::models::DEFAULT_ALPHA,
            prompt: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LagSetting {
    Fixed(usize),
    Named(LagName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LagName {
    #[serde(rename = "last-token")]
    LastToken,
}

impl From<LagSetting> for LagPolicy {
    fn from(s: LagSetting) -> Self {
        match s {
            LagSetting::Fixed(k) => LagPolicy::Fixed(k),
            LagSetting::Named(LagName::LastToken) => LagPolicy::LastTrTokenLength,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub r: f64,
    pub beams: usize,
    /// Bytes allowed beyond the observed signal length.
    pub max_bytes_slack: usize,
    pub feedback: FeedbackMode,
    pub lag: LagSetting,
    pub length_penalty: f64,
    pub repetition_ngram: Option<usize>,
    pub repetition_penalty: f64,
    pub speculative_threshold: Option<f64>,
    pub parallelism: Parallelism,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            r: 0.2,
            beams: 5,
            max_bytes_slack: 8,
            feedback: FeedbackMode::Synchronous,
            lag: LagSetting::Named(LagName::LastToken),
            length_penalty: 0.0,
            repetition_ngram: None,
            repetition_penalty: 0.0,
            speculative_threshold: None,
            parallelism: Parallelism::Parallel,
        }
    }
}

impl FusionSection {
    /// Decoder settings for `weights`, `beams` and a byte limit.
    pub fn build(&self, weights: Vec<f64>, beams: usize, max_bytes: usize) -> FusionConfig {
        let mut cfg = FusionConfig::new(weights, beams, max_bytes);
        cfg.feedback = self.feedback;
        cfg.lag = self.lag.into();
        cfg.length_penalty = self.length_penalty;
        cfg.repetition = self.repetition_ngram.map(|ngram| RepetitionPenalty {
            ngram,
            penalty: self.repetition_penalty,
        });
        cfg.speculative_threshold = self.speculative_threshold;
        cfg.parallelism = self.parallelism;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Noise levels, one condition each.
    pub noise: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            noise: vec![0.0, 0.1, 0.2, 0.4],
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; `FUSEDEC_SEED` overrides the seed.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = ExperimentConfig::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<(), HarnessError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v:?} is not an integer")))?;
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        let c = &self.corpus;
        if c.alphabet.is_empty() || !c.alphabet.is_ascii() || c.alphabet.contains(' ') {
            return bad("corpus.alphabet must be non-empty ASCII without spaces");
        }
        if c.min_word_len == 0 || c.min_word_len > c.max_word_len {
            return bad("corpus word length range is empty");
        }
        if c.min_words == 0 || c.min_words > c.max_words {
            return bad("corpus words-per-utterance range is empty");
        }
        if c.lexicon_size == 0 || c.branching == 0 {
            return bad("corpus.lexicon_size and corpus.branching must be positive");
        }
        if self.experiment.noise.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return bad("noise levels must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.fusion.r) {
            return bad("fusion.r must lie in [0, 1]");
        }
        if self.fusion.beams == 0 {
            return bad("fusion.beams must be at least 1");
        }
        if self.lm.order == 0 {
            return bad("lm.order must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg.fusion.r, 0.2);
        assert_eq!(cfg.fusion.beams, 5);
        assert_eq!(cfg.experiment.noise, vec![0.0, 0.1, 0.2, 0.4]);
    }

    #[test]
    fn sections_and_lag_forms() {
        let text = "seed = 3\n[fusion]\nr = 0.5\nfeedback = \"delayed\"\nlag = 2\n[experiment]\nnoise = [0.2]\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.fusion.feedback, FeedbackMode::Delayed);
        assert_eq!(LagPolicy::from(cfg.fusion.lag), LagPolicy::Fixed(2));
        let cfg = ExperimentConfig::parse("[fusion]\nlag = \"last-token\"\n").unwrap();
        assert_eq!(LagPolicy::from(cfg.fusion.lag), LagPolicy::LastTrTokenLength);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::parse("[experiment]\nnoise = [1.5]\n").is_err());
        assert!(ExperimentConfig::parse("[fusion]\nbeams = 0\n").is_err());
        assert!(ExperimentConfig::parse("bogus = 1\n").is_err());
    }
}
