use std::path::Path;

use fusedec::harness::cli::cli_main;
use fusedec::harness::experiment::{run_experiment, DecoderKind};
use fusedec::harness::report::{lookup, parse_metrics, render, write_artifacts, REFERENCES_FILE, REPORT_FILE};
use fusedec::harness::{parse_lines, ExperimentConfig};
use fusedec::metrics::evaluate;

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.corpus.utterances = 8;
    cfg.corpus.train_utterances = 300;
    cfg.experiment.noise = vec![0.0, 0.2];
    cfg
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["fusedec"];
    argv.extend_from_slice(args);
    cli_main(argv)
}

#[test]
fn report_numbers_recompute_from_persisted_hypotheses() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_config()).unwrap();
    write_artifacts(&report, dir.path()).unwrap();

    let text = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(text, render(&report));
    let records = parse_metrics(&text).unwrap();
    let refs = parse_lines(&std::fs::read_to_string(dir.path().join(REFERENCES_FILE)).unwrap()).unwrap();
    for c in &report.conditions {
        for kind in DecoderKind::ALL {
            let hyp_path = dir.path().join(c.name()).join(format!("{kind}.hyp"));
            let hyps = parse_lines(&std::fs::read_to_string(hyp_path).unwrap()).unwrap();
            let e = evaluate(&refs, &hyps).unwrap();
            for (metric, value) in [
                ("wer", e.wer),
                ("cer", e.cer),
                ("cer_mean", e.cer_mean),
                ("exact_match", e.exact_match),
            ] {
                let rec = lookup(&records, &c.name(), kind.name(), metric).unwrap();
                assert_eq!(rec.value.to_bits(), value.to_bits(), "{} {kind} {metric}", c.name());
            }
            let d = c.decoder(kind).unwrap();
            assert_eq!(d.forwards, d.decoder_forwards);
            let fwd = lookup(&records, &c.name(), kind.name(), "forwards_tr").unwrap();
            assert_eq!(fwd.value, d.forwards[0] as f64);
        }
    }
}

#[test]
fn seed_variable_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "seed = 1\n");
    // single test touching the variable, so no cross-test interference
    std::env::set_var("FUSEDEC_SEED", "99");
    let loaded = ExperimentConfig::load(&cfg);
    std::env::remove_var("FUSEDEC_SEED");
    assert_eq!(loaded.unwrap().seed, 99);
}

#[test]
fn cli_tokenize_score_and_oracle_check() {
    let dir = tempfile::tempdir().unwrap();
    let v = write(dir.path(), "v.txt", "a\nb\nab\n");
    let m = write(dir.path(), "m.txt", "iid\na 0.5\nb 0.3\nab 0.2\n");
    let (v, m) = (v.to_str().unwrap(), m.to_str().unwrap());
    assert_eq!(run(&["tokenize", "--vocab", v, "--input", "ab"]), 0);
    assert_eq!(run(&["tokenize", "--vocab", v, "--input", "abz"]), 1);
    assert_eq!(run(&["score", "--vocab", v, "--model", m, "--bytes", "a"]), 0);
    assert_eq!(run(&["oracle-check", "--vocab", v, "--model", m, "--bytes", "ab"]), 0);
    assert_eq!(
        run(&["oracle-check", "--vocab", v, "--model", "/nonexistent", "--bytes", "ab"]),
        1
    );
    assert_eq!(run(&["oracle-check", "--vocab", v]), 2);
}

#[test]
fn cli_decode_zero_weight_matches_recognizer_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "exp.toml",
        "seed = 4\n[corpus]\nutterances = 10\ntrain_utterances = 200\n[experiment]\nnoise = [0.3]\n",
    );
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("r0.hyp");
    let b = dir.path().join("tr.hyp");
    let c = dir.path().join("fused.hyp");
    assert_eq!(
        run(&[
            "decode",
            "--config",
            cfg,
            "--r",
            "0",
            "--noise",
            "0.3",
            "--out",
            a.to_str().unwrap()
        ]),
        0
    );
    assert_eq!(
        run(&[
            "decode",
            "--config",
            cfg,
            "--tr-only",
            "--noise",
            "0.3",
            "--out",
            b.to_str().unwrap()
        ]),
        0
    );
    assert_eq!(
        run(&[
            "decode",
            "--config",
            cfg,
            "--noise",
            "0.3",
            "--out",
            c.to_str().unwrap()
        ]),
        0
    );
    let ra = std::fs::read(&a).unwrap();
    assert_eq!(ra, std::fs::read(&b).unwrap());
    assert_eq!(ra.iter().filter(|&&x| x == b'\n').count(), 10);
    assert_eq!(run(&["decode", "--config", cfg, "--r", "2"]), 1);
    assert_eq!(run(&["decode", "--config", cfg, "--r", "0", "--tr-only"]), 2);
}

#[test]
fn cli_eval_and_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let r = write(dir.path(), "r.txt", "a b c\nx\n");
    let h = write(dir.path(), "h.txt", "a c\nx\n");
    assert_eq!(
        run(&["eval", "--refs", r.to_str().unwrap(), "--hyps", h.to_str().unwrap()]),
        0
    );
    let short = write(dir.path(), "s.txt", "a c\n");
    assert_eq!(
        run(&["eval", "--refs", r.to_str().unwrap(), "--hyps", short.to_str().unwrap()]),
        1
    );

    let cfg = write(
        dir.path(),
        "exp.toml",
        "output = \"out\"\n[corpus]\nutterances = 5\ntrain_utterances = 100\n[experiment]\nnoise = [0.1]\n",
    );
    assert_eq!(run(&["experiment", "--config", cfg.to_str().unwrap()]), 0);
    let report = std::fs::read_to_string(dir.path().join("out").join(REPORT_FILE)).unwrap();
    assert!(report.contains("condition=noise-0.1 decoder=fused metric=cer "));
    assert!(dir.path().join("out/noise-0.1/beam.hyp").exists());

    let bad = write(dir.path(), "bad.toml", "[experiment]\nnoise = [2.0]\n");
    assert_eq!(run(&["experiment", "--config", bad.to_str().unwrap(), "--out", "x"]), 1);
    assert_eq!(run(&["experiment"]), 2);
}
