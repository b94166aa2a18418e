//! Edit-distance based error rates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{refs} references but {hyps} hypotheses")]
    LengthMismatch { refs: usize, hyps: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    fn add(&mut self, other: &EditCounts) {
        self.distance += other.distance;
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
    }
}

/// Unit-cost Levenshtein distance with an S/I/D breakdown. The backtrace
/// prefers the diagonal (match or substitution), then deletion, then insertion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in dp[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }

    let mut counts = EditCounts {
        distance: dp[n][m],
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if dp[i][j] == dp[i - 1][j - 1] + usize::from(!same) {
                if !same {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Word,
    Byte,
}

fn units(text: &[u8], unit: Unit) -> Vec<&[u8]> {
    match unit {
        Unit::Word => text
            .split(|b| b.is_ascii_whitespace())
            .filter(|w| !w.is_empty())
            .collect(),
        Unit::Byte => text.chunks(1).collect(),
    }
}

/// Corpus-level (micro-averaged) error counts for one unit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitReport {
    pub counts: EditCounts,
    pub reference_len: usize,
    /// Mean of per-utterance error rates.
    pub mean_rate: f64,
}

impl UnitReport {
    /// Total errors over total reference units (denominator floored at 1).
    pub fn rate(&self) -> f64 {
        self.counts.distance as f64 / self.reference_len.max(1) as f64
    }
}

pub fn score_corpus<R: AsRef<[u8]>, H: AsRef<[u8]>>(
    refs: &[R],
    hyps: &[H],
    unit: Unit,
) -> Result<UnitReport, MetricsError> {
    if refs.len() != hyps.len() {
        return Err(MetricsError::LengthMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    let mut report = UnitReport::default();
    let mut rate_sum = 0.0;
    for (r, h) in refs.iter().zip(hyps) {
        let ru = units(r.as_ref(), unit);
        let hu = units(h.as_ref(), unit);
        let c = edit_distance(&ru, &hu);
        rate_sum += c.distance as f64 / ru.len().max(1) as f64;
        report.counts.add(&c);
        report.reference_len += ru.len();
    }
    if !refs.is_empty() {
        report.mean_rate = rate_sum / refs.len() as f64;
    }
    Ok(report)
}

/// Word and byte error rates plus exact match for a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wer: f64,
    pub cer: f64,
    /// Mean per-utterance byte error rate.
    pub cer_mean: f64,
    pub exact_match: f64,
    pub word: UnitReport,
    pub byte: UnitReport,
    pub utterances: usize,
}

pub fn evaluate<R: AsRef<[u8]>, H: AsRef<[u8]>>(refs: &[R], hyps: &[H]) -> Result<EvalReport, MetricsError> {
    let word = score_corpus(refs, hyps, Unit::Word)?;
    let byte = score_corpus(refs, hyps, Unit::Byte)?;
    let exact = refs.iter().zip(hyps).filter(|(r, h)| r.as_ref() == h.as_ref()).count();
    Ok(EvalReport {
        wer: word.rate(),
        cer: byte.rate(),
        cer_mean: byte.mean_rate,
        exact_match: if refs.is_empty() {
            1.0
        } else {
            exact as f64 / refs.len() as f64
        },
        word,
        byte,
        utterances: refs.len(),
    })
}
