use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use serde_json::Value;

use lmrescore::formats::parse_records;
use lmrescore::rescorer::TranscriptRecord;
use lmrescore::scoring::protocol::{Endpoint, ProtocolClient};
use lmrescore::scoring::ScoreRequest;
use lmrescore::tuner::TuneResult;

const BIN: &str = env!("CARGO_BIN_EXE_lmrescore");

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("RESCORE_SCORER")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Small generated corpus with decoded lattices.
fn corpus() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen",
            "--seed",
            "3",
            "--out-dir",
            ".",
            "--utterances",
            "12",
            "--lm-sentences",
            "800",
        ],
    );
    ok(
        d,
        &[
            "decode",
            "--emissions",
            "emissions.jsonl",
            "--refs",
            "refs.jsonl",
            "--out",
            "lat.jsonl",
            "--transcripts",
            "first.jsonl",
        ],
    );
    dir
}

fn transcripts(path: &Path) -> Vec<TranscriptRecord> {
    parse_records(&fs::read_to_string(path).unwrap(), "transcripts").unwrap()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn help_and_version_succeed() {
    let d = Path::new(".");
    assert!(run_in(d, &["--help"]).status.success());
    assert!(run_in(d, &["--version"]).status.success());
    let help = String::from_utf8(run_in(d, &["rescore", "--help"]).stdout).unwrap();
    assert!(help.contains("--context-segments"));
}

#[test]
fn usage_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(exit_code(&run_in(d.path(), &["rescore", "--bogus"])), 1);
    assert_eq!(exit_code(&run_in(d.path(), &["frobnicate"])), 1);
    let out = run_in(
        d.path(),
        &[
            "--json-errors",
            "eval",
            "--transcripts",
            "missing.jsonl",
            "--refs",
            "r.jsonl",
        ],
    );
    assert_eq!(exit_code(&out), 1);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "usage");
    assert_eq!(err["exit_code"], 1);
    assert!(err["error"].as_str().unwrap().contains("missing.jsonl"));
    // both scorer sources at once
    let out = run_in(
        d.path(),
        &["ppl", "--text", "x", "--ngram-corpus", "x", "--scorer", "y"],
    );
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn json_errors_are_single_lines() {
    let d = tempfile::tempdir().unwrap();
    let out = run_in(d.path(), &["--json-errors", "decode", "--nope"]);
    let text = String::from_utf8(out.stderr).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    let err: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(err["kind"], "usage");
}

#[test]
fn data_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.jsonl"), "{\"utterance_id\": 3}\n").unwrap();
    fs::write(d.path().join("lm.txt"), "a b\n").unwrap();
    let out = run_in(
        d.path(),
        &[
            "--json-errors",
            "rescore",
            "--lattices",
            "bad.jsonl",
            "--out",
            "t.jsonl",
            "--ngram-corpus",
            "lm.txt",
        ],
    );
    assert_eq!(exit_code(&out), 2);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "data");
    assert!(!d.path().join("t.jsonl").exists());
}

#[test]
fn scorer_errors_exit_3() {
    let c = corpus();
    let out = run_in(
        c.path(),
        &[
            "--json-errors",
            "rescore",
            "--lattices",
            "lat.jsonl",
            "--out",
            "t.jsonl",
            "--nu",
            "1",
            "--scorer",
            "true",
        ],
    );
    assert_eq!(exit_code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "scorer");
}

#[test]
fn merged_lattices_have_more_paths_than_tries() {
    let c = corpus();
    let out = ok(
        c.path(),
        &[
            "decode",
            "--emissions",
            "emissions.jsonl",
            "--refs",
            "refs.jsonl",
            "--out",
            "x.jsonl",
            "--compare",
        ],
    );
    let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows[0][0], "trie");
    assert_eq!(rows[1][0], "merged");
    let paths = |r: &Vec<&str>| r[3].parse::<f64>().unwrap();
    let oracle = |r: &Vec<&str>| r[1].parse::<f64>().unwrap();
    assert!(paths(&rows[1]) >= paths(&rows[0]));
    assert!(oracle(&rows[1]) <= oracle(&rows[0]));
    // same search, so the same 1-best
    assert_eq!(rows[0][2], rows[1][2]);

    let trie = ok(
        c.path(),
        &[
            "decode",
            "--emissions",
            "emissions.jsonl",
            "--out",
            "t.jsonl",
            "--no-merge",
        ],
    );
    assert!(trie.lines().nth(1).unwrap().starts_with("trie"));
}

#[test]
fn perfect_transcripts_score_zero() {
    let c = corpus();
    let d = c.path();
    let refs = fs::read_to_string(d.join("refs.jsonl")).unwrap();
    let perfect: String = refs
        .lines()
        .map(|l| {
            let r: Value = serde_json::from_str(l).unwrap();
            format!(
                "{}\n",
                serde_json::json!({"utterance_id": r["doc_id"], "transcript": r["text"], "segments": []})
            )
        })
        .collect();
    fs::write(d.join("perfect.jsonl"), perfect).unwrap();
    ok(
        d,
        &[
            "salient",
            "--refs",
            "refs.jsonl",
            "--fraction",
            "0.3",
            "--out",
            "salient.json",
        ],
    );
    let out = ok(
        d,
        &[
            "eval",
            "--transcripts",
            "perfect.jsonl",
            "--refs",
            "refs.jsonl",
            "--salient",
            "salient.json",
            "--out",
            "r.json",
            "--csv",
            "r.csv",
        ],
    );
    assert!(out.contains("WER 0.0%"), "{out}");
    assert!(out.contains("STER 0.0%"), "{out}");
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["wer"], 0.0);
    assert_eq!(report["ster"], 0.0);
    assert!(fs::read_to_string(d.join("r.csv")).unwrap().starts_with("scope,"));
}

#[test]
fn zero_weights_reproduce_the_first_pass() {
    let c = corpus();
    let d = c.path();
    ok(
        d,
        &[
            "rescore",
            "--lattices",
            "lat.jsonl",
            "--out",
            "zero.jsonl",
            "--ngram-corpus",
            "lm_corpus.txt",
            "--nbest",
            "50",
        ],
    );
    let first = transcripts(&d.join("first.jsonl"));
    let zero = transcripts(&d.join("zero.jsonl"));
    assert_eq!(first.len(), zero.len());
    for (f, z) in first.iter().zip(&zero) {
        assert_eq!(f.transcript, z.transcript);
    }
}

#[test]
fn tuning_surface_origin_is_first_pass() {
    let c = corpus();
    let d = c.path();
    let table = ok(
        d,
        &[
            "tune",
            "--lattices",
            "lat.jsonl",
            "--out",
            "tune.json",
            "--ngram-corpus",
            "lm_corpus.txt",
            "--mu-grid",
            "0,0.5",
            "--nu-grid",
            "0,0.3,0.6",
            "--jobs",
            "2",
        ],
    );
    assert!(table.contains("best wer"));
    let result: TuneResult = serde_json::from_str(&fs::read_to_string(d.join("tune.json")).unwrap()).unwrap();
    assert_eq!(result.surface.len(), 6);
    let first = ok(
        d,
        &[
            "eval",
            "--transcripts",
            "first.jsonl",
            "--lattices",
            "lat.jsonl",
            "--out",
            "first.json",
        ],
    );
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("first.json")).unwrap()).unwrap();
    assert_eq!(result.value_at(0.0, 0.0), report["wer"].as_f64());
    assert!(result.best_value <= report["wer"].as_f64().unwrap());
    assert!(first.contains("transcripts"));

    // the tuned weights feed straight into rescore and apply
    ok(
        d,
        &[
            "rescore",
            "--lattices",
            "lat.jsonl",
            "--params",
            "tune.json",
            "--out",
            "tuned.jsonl",
            "--ngram-corpus",
            "lm_corpus.txt",
        ],
    );
    ok(
        d,
        &[
            "apply",
            "--lattices",
            "lat.jsonl",
            "--params",
            "tune.json",
            "--transcripts",
            "applied.jsonl",
            "--out",
            "a.json",
            "--ngram-corpus",
            "lm_corpus.txt",
        ],
    );
    assert_eq!(
        fs::read(d.join("tuned.jsonl")).unwrap(),
        fs::read(d.join("applied.jsonl")).unwrap()
    );
    let applied: Value = serde_json::from_str(&fs::read_to_string(d.join("a.json")).unwrap()).unwrap();
    assert_eq!(applied["wer"].as_f64(), Some(result.best_value));
}

#[test]
fn protocol_scorer_matches_in_process() {
    let c = corpus();
    let d = c.path();
    let args = |scorer: &[&str], out: &str| -> Vec<String> {
        let mut v: Vec<String> = [
            "rescore",
            "--lattices",
            "lat.jsonl",
            "--mu",
            "0.3",
            "--nu",
            "0.5",
            "--out",
            out,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        v.extend(scorer.iter().map(|s| s.to_string()));
        v
    };
    let local = args(&["--ngram-corpus", "lm_corpus.txt"], "local.jsonl");
    ok(d, &local.iter().map(String::as_str).collect::<Vec<_>>());
    let server = format!("{BIN} serve --ngram-corpus lm_corpus.txt");
    let remote = args(&["--scorer", &server], "remote.jsonl");
    ok(d, &remote.iter().map(String::as_str).collect::<Vec<_>>());

    let out = Command::new(BIN)
        .args(args(&[], "env.jsonl"))
        .current_dir(d)
        .env("RESCORE_SCORER", &server)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let local = transcripts(&d.join("local.jsonl"));
    for file in ["remote.jsonl", "env.jsonl"] {
        let remote = transcripts(&d.join(file));
        for (a, b) in local.iter().zip(&remote) {
            assert_eq!(a.transcript, b.transcript);
            for (sa, sb) in a.segments.iter().zip(&b.segments) {
                for (ha, hb) in sa.nbest.iter().zip(&sb.nbest) {
                    assert_eq!(ha.tokens, hb.tokens);
                    assert!((ha.combined - hb.combined).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn shipped_vectors_are_current_and_pass() {
    let testdata = workspace().join("testdata");
    let dir = tempfile::tempdir().unwrap();
    let fresh = dir.path().join("v.jsonl");
    ok(
        dir.path(),
        &[
            "vectors",
            "--corpus",
            testdata.join("vector_corpus.txt").to_str().unwrap(),
            "--order",
            "3",
            "--out",
            fresh.to_str().unwrap(),
        ],
    );
    let shipped = fs::read_to_string(testdata.join("protocol_vectors.jsonl")).unwrap();
    assert_eq!(fs::read_to_string(&fresh).unwrap(), shipped);

    let cmd = format!(
        "{BIN} serve --ngram-corpus {} --ngram-order 3",
        testdata.join("vector_corpus.txt").display()
    );
    let client = ProtocolClient::connect(&Endpoint::Command(cmd), Duration::from_secs(10)).unwrap();
    let mut non_ascii = 0;
    for line in shipped.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let req: ScoreRequest = serde_json::from_value(v["request"].clone()).unwrap();
        non_ascii += usize::from(!line.is_ascii());
        let got = client.protocol_score(&req).unwrap();
        assert_eq!(got.id, v["expected"]["id"].as_u64().unwrap());
        let expected = v["expected"]["scores"].as_array().unwrap();
        assert_eq!(got.scores.len(), expected.len());
        for (g, e) in got.scores.iter().zip(expected) {
            let e = e.as_f64().unwrap_or(f64::NEG_INFINITY);
            assert!((g - e).abs() < 1e-9, "{}: {g} vs {e}", v["vector_id"]);
        }
    }
    assert!(non_ascii > 0);
}

#[test]
fn tcp_server_answers() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("lm.txt"), "a b c\nb c d\n").unwrap();
    let mut child = Command::new(BIN)
        .args([
            "serve",
            "--ngram-corpus",
            "lm.txt",
            "--ngram-order",
            "2",
            "--tcp",
            "127.0.0.1:0",
        ])
        .current_dir(dir.path())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_owned();
    let client = ProtocolClient::connect(&Endpoint::parse(&format!("tcp://{addr}")), Duration::from_secs(5));
    let result = client.and_then(|c| {
        use lmrescore::Scorer;
        c.score("a", &["b c".to_string()])
    });
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(result.unwrap()[0] < 0.0);
}

#[test]
fn perplexity_of_training_text() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("lm.txt"), "a b\na b\n").unwrap();
    let out = ok(
        dir.path(),
        &[
            "ppl",
            "--text",
            "lm.txt",
            "--ngram-corpus",
            "lm.txt",
            "--ngram-order",
            "2",
        ],
    );
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    let lp = v["log_ppl_per_word"].as_f64().unwrap();
    assert!(lp > 0.0 && (v["ppl"].as_f64().unwrap() - lp.exp()).abs() < 1e-12);
}
