//! Command-line front end. Usage errors exit with 2, failures with 1.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use super::experiment::{run_experiment, DecoderKind, RunStatus, Setup};
use super::report::{render, write_artifacts, REPORT_FILE};
use super::{lines_text, parse_lines, read_text, write_text, ExperimentConfig, HarnessError};
use crate::byte_transform::{
    approx_byte_score, exact_byte_marginal_with_budget, next_byte_scores, refresh_cache, DEFAULT_ORACLE_BUDGET,
};
use crate::metrics::evaluate;
use crate::models::{load_model, Context, TokenModel};
use crate::vocab::{escape_bytes, unescape_bytes, Vocabulary};

#[derive(Debug, Parser)]
#[command(name = "fusedec", version, about = "Byte-level fused beam search over token models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Greedy longest-match tokenization.
    Tokenize {
        #[arg(long)]
        vocab: PathBuf,
        /// Input bytes; `\xNN`, `\n`, `\t` and `\\` escapes are decoded.
        #[arg(long)]
        input: String,
    },
    /// Approximate byte-prefix score and next-byte scores under one model.
    Score {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        bytes: String,
        #[arg(long)]
        prompt: Option<String>,
    },
    /// Compares the approximate score against exhaustive enumeration.
    OracleCheck {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        bytes: String,
        #[arg(long, default_value_t = DEFAULT_ORACLE_BUDGET)]
        budget: usize,
    },
    /// Decodes the configured corpus at one noise level.
    Decode {
        #[arg(long)]
        config: PathBuf,
        /// Language-model weight; overrides the config.
        #[arg(long)]
        r: Option<f64>,
        /// Recognizer alone, no language model.
        #[arg(long, conflicts_with = "r")]
        tr_only: bool,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long)]
        beams: Option<usize>,
        /// Hypotheses file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Word and byte error rates of hypotheses against references.
    Eval {
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        hyps: PathBuf,
    },
    /// Runs the noise sweep and writes report and hypotheses.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("fusedec: {e}");
            1
        }
    }
}

fn arg_bytes(s: &str) -> Result<Vec<u8>, HarnessError> {
    unescape_bytes(s).map_err(|m| HarnessError::Invalid(format!("bad byte string {s:?}: {m}")))
}

/// Probability with at most 12 decimals and no trailing zeros.
pub fn format_prob(p: f64) -> String {
    let s = format!("{p:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn load_pair(vocab: &Path, model: &Path) -> Result<Arc<dyn TokenModel>, HarnessError> {
    let v = Arc::new(Vocabulary::load(vocab)?);
    Ok(load_model(model, v)?)
}

fn run(cmd: Command) -> Result<String, HarnessError> {
    let mut out = String::new();
    match cmd {
        Command::Tokenize { vocab, input } => {
            let v = Vocabulary::load(&vocab)?;
            let seq = v.tokenize(&arg_bytes(&input)?)?;
            let ids: Vec<String> = seq.token_ids.iter().map(|t| t.to_string()).collect();
            let toks: Vec<String> = seq
                .token_ids
                .iter()
                .map(|&t| format!("\"{}\"", escape_bytes(v.bytes(t), false)))
                .collect();
            let _ = writeln!(out, "ids=[{}] tokens=[{}]", ids.join(","), toks.join(","));
        }
        Command::Score {
            vocab,
            model,
            bytes,
            prompt,
        } => {
            let m = load_pair(&vocab, &model)?;
            let ctx = prompt.map_or(Context::Empty, |p| Context::Prompt(p.into_bytes()));
            let b = arg_bytes(&bytes)?;
            let approx = approx_byte_score(m.as_ref(), &b, &ctx)?;
            let cache = refresh_cache(m.as_ref(), &b, &ctx, None)?;
            let next = next_byte_scores(m.as_ref(), &cache, &ctx);
            let _ = writeln!(out, "bytes={} approx={}", escape_bytes(&b, true), format_prob(approx));
            for byte in next.candidates() {
                let _ = writeln!(
                    out,
                    "next byte={} score={}",
                    escape_bytes(&[byte], true),
                    format_prob(next.score(byte))
                );
            }
            let _ = writeln!(out, "terminal score={}", format_prob(next.terminal()));
            let _ = writeln!(out, "forwards={}", next.forwards());
        }
        Command::OracleCheck {
            vocab,
            model,
            bytes,
            budget,
        } => {
            let m = load_pair(&vocab, &model)?;
            let b = arg_bytes(&bytes)?;
            let ctx = Context::Empty;
            let exact = exact_byte_marginal_with_budget(m.as_ref(), &b, &ctx, b.len(), budget)?;
            let approx = approx_byte_score(m.as_ref(), &b, &ctx)?;
            let ok = approx <= exact + 1e-12;
            let _ = writeln!(
                out,
                "exact={} approx={} {}",
                format_prob(exact),
                format_prob(approx),
                if ok {
                    "ok(approx<=exact)"
                } else {
                    "violation(approx>exact)"
                }
            );
            if !ok {
                eprint!("{out}");
                return Err(HarnessError::Invalid("approximate score exceeds exact marginal".into()));
            }
        }
        Command::Decode {
            config,
            r,
            tr_only,
            noise,
            beams,
            out: path,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(r) = r {
                cfg.fusion.r = r;
            }
            if let Some(b) = beams {
                cfg.fusion.beams = b;
            }
            cfg.validate()?;
            if !(0.0..=1.0).contains(&noise) {
                return Err(HarnessError::Config(format!("noise {noise} outside [0, 1]")));
            }
            let setup = Setup::build(&cfg)?;
            let kind = if tr_only { DecoderKind::Beam } else { DecoderKind::Fused };
            let (weights, width) = setup.decoder_params(kind);
            let signals = setup.signals(noise);
            let rep = setup.decode_corpus(kind, weights, width, noise, &signals)?;
            for (i, e) in &rep.failures {
                eprintln!("utterance {i}: {e}");
            }
            eprintln!(
                "decoded={} failures={} cer={} wer={}",
                rep.hypotheses.len(),
                rep.failures.len(),
                rep.eval.cer,
                rep.eval.wer
            );
            let text = lines_text(&rep.hypotheses);
            match path {
                Some(p) => write_text(&p, &text)?,
                None => out = text,
            }
            if rep.failures.len() * 2 > rep.hypotheses.len() {
                print!("{out}");
                return Err(HarnessError::Invalid("more than half of the decodes failed".into()));
            }
        }
        Command::Eval { refs, hyps } => {
            let r = parse_lines(&read_text(&refs)?)?;
            let h = parse_lines(&read_text(&hyps)?)?;
            let e = evaluate(&r, &h)?;
            for (k, v) in [
                ("wer", e.wer),
                ("cer", e.cer),
                ("cer_mean", e.cer_mean),
                ("exact_match", e.exact_match),
            ] {
                let _ = writeln!(out, "metric={k} value={v}");
            }
            let c = e.word.counts;
            let _ = writeln!(
                out,
                "unit=word substitutions={} insertions={} deletions={} reference_len={}",
                c.substitutions, c.insertions, c.deletions, e.word.reference_len
            );
            let c = e.byte.counts;
            let _ = writeln!(
                out,
                "unit=byte substitutions={} insertions={} deletions={} reference_len={}",
                c.substitutions, c.insertions, c.deletions, e.byte.reference_len
            );
        }
        Command::Experiment { config, out: dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = match dir.or_else(|| cfg.output.as_ref().map(|p| cfg.resolve(p))) {
                Some(d) => d,
                None => {
                    return Err(HarnessError::Config(
                        "no output directory: pass --out or set output".into(),
                    ))
                }
            };
            let report = run_experiment(&cfg)?;
            write_artifacts(&report, &dir)?;
            eprintln!(
                "wrote {} ({:.2}s)",
                dir.join(REPORT_FILE).display(),
                report.wall_time.as_secs_f64()
            );
            // the full report is on disk; stdout gets its closing status record
            out = render(&report)
                .lines()
                .last()
                .map(|l| format!("{l}\n"))
                .unwrap_or_default();
            if report.status == RunStatus::Failed {
                print!("{out}");
                return Err(HarnessError::Invalid(
                    "run failed: more than half of the decodes failed".into(),
                ));
            }
        }
    }
    Ok(out)
}
