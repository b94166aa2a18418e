//! Line-oriented report text and the run's artifact directory.
//!
//! Every line is a record of space-separated `key=value` fields. Metric lines
//! read `condition=noise-0.2 decoder=fused metric=cer value=0.0125`; values use
//! the shortest round-trip float form, so parsing them back is exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::experiment::{DecoderReport, RunReport, RunStatus, REPORT_VERSION};
use super::{lines_text, write_text, HarnessError};

pub const REPORT_FILE: &str = "report.txt";
pub const TIMING_FILE: &str = "timing.txt";
pub const REFERENCES_FILE: &str = "references.txt";
pub const SIGNALS_FILE: &str = "signals.txt";

/// One parsed metric line.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub condition: String,
    pub decoder: String,
    pub metric: String,
    pub value: f64,
}

fn metrics_of(d: &DecoderReport) -> Vec<(&'static str, f64)> {
    let e = &d.eval;
    vec![
        ("wer", e.wer),
        ("cer", e.cer),
        ("cer_mean", e.cer_mean),
        ("wer_mean", e.word.mean_rate),
        ("exact_match", e.exact_match),
        ("word_errors", e.word.counts.distance as f64),
        ("word_ref_len", e.word.reference_len as f64),
        ("byte_errors", e.byte.counts.distance as f64),
        ("byte_ref_len", e.byte.reference_len as f64),
        ("utterances", e.utterances as f64),
        ("failures", d.failures.len() as f64),
        ("forwards_tr", d.forwards[0] as f64),
        ("forwards_lm", d.forwards[1] as f64),
        ("score_calls", d.stats.score_calls as f64),
        ("skipped_calls", d.stats.skipped_calls as f64),
    ]
}

/// Flattens a TOML table into dotted `key=value` pairs, sorted by key.
fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

pub fn config_echo(report: &RunReport) -> Vec<(String, String)> {
    let mut flat = BTreeMap::new();
    if let Ok(v) = toml::Value::try_from(&report.config) {
        flatten("", &v, &mut flat);
    }
    flat.into_iter().collect()
}

pub fn render(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "artifact=fusedec version={} format={REPORT_VERSION}",
        report.version
    );
    for (k, v) in config_echo(report) {
        // Values are TOML literals; spaces inside them are kept verbatim.
        let _ = writeln!(out, "config key={k} value={v}");
    }
    for c in &report.conditions {
        let name = c.name();
        for d in &c.decoders {
            let weights: Vec<String> = d.weights.iter().map(|w| w.to_string()).collect();
            let _ = writeln!(
                out,
                "decoder condition={name} decoder={} weights={}",
                d.decoder,
                weights.join(",")
            );
            for (metric, value) in metrics_of(d) {
                let _ = writeln!(
                    out,
                    "condition={name} decoder={} metric={metric} value={value}",
                    d.decoder
                );
            }
            for (i, e) in &d.failures {
                let _ = writeln!(
                    out,
                    "failure condition={name} decoder={} utterance={i} error={e}",
                    d.decoder
                );
            }
        }
    }
    let status = match report.status {
        RunStatus::Ok => "ok",
        RunStatus::Failed => "failed",
    };
    let _ = writeln!(
        out,
        "run status={status} failed_decodes={} total_decodes={}",
        report.failed_decodes(),
        report.total_decodes()
    );
    out
}

/// Metric lines of a rendered report; every other record kind is skipped.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricRecord>, HarnessError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if !line.starts_with("condition=") {
            continue;
        }
        let err = |message: String| HarnessError::Report { line: i + 1, message };
        let mut fields = BTreeMap::new();
        for part in line.split(' ') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| err(format!("field {part:?} has no '='")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .map(|s| s.to_string())
                .ok_or_else(|| err(format!("missing {k}")))
        };
        let value = get("value")?;
        records.push(MetricRecord {
            condition: get("condition")?,
            decoder: get("decoder")?,
            metric: get("metric")?,
            value: value.parse().map_err(|_| err(format!("bad value {value:?}")))?,
        });
    }
    Ok(records)
}

pub fn lookup<'a>(
    records: &'a [MetricRecord],
    condition: &str,
    decoder: &str,
    metric: &str,
) -> Option<&'a MetricRecord> {
    records
        .iter()
        .find(|r| r.condition == condition && r.decoder == decoder && r.metric == metric)
}

pub fn hypotheses_file(decoder: &str) -> String {
    format!("{decoder}.hyp")
}

/// Writes `report.txt`, the references, and per condition the signals and
/// each decoder's hypotheses. Wall time goes to a separate timing file.
pub fn write_artifacts(report: &RunReport, dir: &Path) -> Result<(), HarnessError> {
    write_text(&dir.join(REPORT_FILE), &render(report))?;
    write_text(&dir.join(REFERENCES_FILE), &lines_text(&report.references))?;
    for c in &report.conditions {
        let cdir = dir.join(c.name());
        write_text(&cdir.join(SIGNALS_FILE), &lines_text(&c.signals))?;
        for d in &c.decoders {
            write_text(
                &cdir.join(hypotheses_file(d.decoder.name())),
                &lines_text(&d.hypotheses),
            )?;
        }
    }
    write_text(
        &dir.join(TIMING_FILE),
        &format!("wall_seconds={}\n", report.wall_time.as_secs_f64()),
    )
}
