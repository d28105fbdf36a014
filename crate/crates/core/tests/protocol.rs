use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::Command;
use std::thread;
use std::time::Duration;

use serde_json::Value;

use lmrescore::scoring::protocol::{serve, Endpoint, ProtocolClient};
use lmrescore::scoring::{NGramScorer, ScoreRequest, Scorer, ScorerError};

type Script = Box<dyn FnOnce(&mut dyn Iterator<Item = Value>, &mut TcpStream) + Send>;

/// A one-connection server that completes the handshake and hands the
/// rest of the session to `script`.
fn scripted(script: Script) -> Endpoint {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let reader = BufReader::new(stream.try_clone().unwrap());
        let mut lines = reader
            .lines()
            .map(|l| serde_json::from_str::<Value>(&l.unwrap()).unwrap());
        let hello = lines.next().unwrap();
        assert_eq!(hello["hello"]["proto"], 1);
        writeln!(stream, r#"{{"hello":{{"proto":1,"name":"scripted"}}}}"#).unwrap();
        script(&mut lines, &mut stream);
    });
    Endpoint::Tcp(addr.to_string())
}

fn serving(scorer: NGramScorer) -> Endpoint {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            let reader = BufReader::new(stream.try_clone().unwrap());
            serve(&scorer, "ngram", reader, stream).unwrap();
        }
    });
    Endpoint::Tcp(addr.to_string())
}

fn corpus() -> Vec<String> {
    [
        "the cat sat",
        "the dog sat down",
        "a cat ran",
        "café crème brûlée",
        "नमस्ते दुनिया",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

const SHORT: Duration = Duration::from_millis(300);

#[test]
fn remote_ngram_matches_in_process() {
    let lm = NGramScorer::train(&corpus(), 3).unwrap();
    let client = ProtocolClient::connect(&serving(lm.clone()), Duration::from_secs(5)).unwrap();
    assert_eq!(client.server_name(), "ngram");
    let cases = [
        ("", s(&["the cat sat", "sat cat the"])),
        ("the dog", s(&["sat", "ran away", ""])),
        ("café", s(&["crème brûlée", "नमस्ते दुनिया"])),
        ("unknown words", s(&["zzz"])),
    ];
    for (context, targets) in cases {
        let local = lm.score(context, &targets).unwrap();
        let remote = client.score(context, &targets).unwrap();
        assert_eq!(local.len(), remote.len());
        for (a, b) in local.iter().zip(&remote) {
            assert!((a - b).abs() < 1e-9, "{context:?}: {a} vs {b}");
        }
    }
}

#[test]
fn out_of_order_replies_are_matched_by_id() {
    let endpoint = scripted(Box::new(|lines, out| {
        let reqs: Vec<Value> = lines.take(3).collect();
        for r in reqs.iter().rev() {
            let n = r["targets"].as_array().unwrap().len();
            let scores: Vec<f64> = (0..n).map(|i| -(r["id"].as_f64().unwrap() * 10.0 + i as f64)).collect();
            writeln!(out, "{}", serde_json::json!({ "id": r["id"], "scores": scores })).unwrap();
        }
    }));
    let client = ProtocolClient::connect(&endpoint, Duration::from_secs(5)).unwrap();
    let reqs: Vec<ScoreRequest> = (0..3)
        .map(|i| client.request("", &s(&["x", "y"][..=i.min(1)])))
        .collect();
    let got = client.score_batch(&reqs).unwrap();
    for (r, g) in reqs.iter().zip(&got) {
        assert_eq!(r.id, g.id);
        assert_eq!(g.scores.len(), r.targets.len());
        assert_eq!(g.scores[0], -(r.id as f64) * 10.0);
    }
}

#[test]
fn neg_infinity_travels_as_null_or_literal() {
    let endpoint = scripted(Box::new(|lines, out| {
        let r = lines.next().unwrap();
        writeln!(out, r#"{{"id":{},"scores":[null,-Infinity]}}"#, r["id"]).unwrap();
    }));
    let client = ProtocolClient::connect(&endpoint, Duration::from_secs(5)).unwrap();
    let got = client.score("", &s(&["a", "b"])).unwrap();
    assert_eq!(got, vec![f64::NEG_INFINITY, f64::NEG_INFINITY]);
}

#[test]
fn wrong_score_count_is_reported() {
    let endpoint = scripted(Box::new(|lines, out| {
        let r = lines.next().unwrap();
        writeln!(out, r#"{{"id":{},"scores":[-1.0]}}"#, r["id"]).unwrap();
    }));
    let client = ProtocolClient::connect(&endpoint, Duration::from_secs(5)).unwrap();
    let err = client.score("", &s(&["a", "b"])).unwrap_err();
    assert!(
        matches!(
            err,
            ScorerError::LengthMismatch {
                expected: 2,
                got: 1,
                ..
            }
        ),
        "{err}"
    );
}

#[test]
fn backend_errors_carry_the_message() {
    let endpoint = scripted(Box::new(|lines, out| {
        let r = lines.next().unwrap();
        writeln!(out, r#"{{"id":{},"error":"model exploded"}}"#, r["id"]).unwrap();
    }));
    let client = ProtocolClient::connect(&endpoint, Duration::from_secs(5)).unwrap();
    match client.score("", &s(&["a"])).unwrap_err() {
        ScorerError::Backend { message, .. } => assert_eq!(message, "model exploded"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn silent_server_times_out() {
    let endpoint = scripted(Box::new(|lines, _| {
        let _ = lines.next();
        thread::sleep(Duration::from_secs(2));
    }));
    let client = ProtocolClient::connect(&endpoint, SHORT).unwrap();
    let err = client.score("", &s(&["a"])).unwrap_err();
    assert!(matches!(err, ScorerError::Timeout { .. }), "{err}");
}

#[test]
fn garbage_and_unknown_ids_are_rejected() {
    let endpoint = scripted(Box::new(|lines, out| {
        let _ = lines.next();
        writeln!(out, "this is not json").unwrap();
    }));
    let client = ProtocolClient::connect(&endpoint, Duration::from_secs(5)).unwrap();
    assert!(matches!(
        client.score("", &s(&["a"])).unwrap_err(),
        ScorerError::MalformedResponse { .. }
    ));

    let endpoint = scripted(Box::new(|lines, out| {
        let _ = lines.next();
        writeln!(out, r#"{{"id":999,"scores":[-1.0]}}"#).unwrap();
    }));
    let client = ProtocolClient::connect(&endpoint, Duration::from_secs(5)).unwrap();
    assert!(matches!(
        client.score("", &s(&["a"])).unwrap_err(),
        ScorerError::IdMismatch { got: 999, .. }
    ));
}

#[test]
fn handshake_must_speak_version_one() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut line = String::new();
        BufReader::new(stream.try_clone().unwrap())
            .read_line(&mut line)
            .unwrap();
        writeln!(stream, r#"{{"hello":{{"proto":2,"name":"future"}}}}"#).unwrap();
    });
    let err = ProtocolClient::connect(&Endpoint::Tcp(addr.to_string()), Duration::from_secs(5)).unwrap_err();
    assert!(matches!(err, ScorerError::Handshake(_)), "{err}");
}

const ECHO_SCORER: &str = r#"
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    if "hello" in req:
        out = {"hello": {"proto": 1, "name": "echo"}}
    else:
        out = {"id": req["id"], "scores": [-float(len(t.split())) for t in req["targets"]]}
    print(json.dumps(out), flush=True)
"#;

#[test]
fn child_process_scorer_over_stdio() {
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 not available; skipping stdio scorer test");
        return;
    }
    let dir = tempdir();
    let script = dir.join("echo.py");
    std::fs::write(&script, ECHO_SCORER).unwrap();
    let endpoint = Endpoint::parse(&format!("python3 {}", script.display()));
    let client = ProtocolClient::connect(&endpoint, Duration::from_secs(10)).unwrap();
    assert_eq!(client.server_name(), "echo");
    assert_eq!(
        client.score("ctx", &s(&["a b", "नमस्ते", ""])).unwrap(),
        vec![-2.0, -1.0, -0.0]
    );
    assert_eq!(client.score("", &s(&["x y z"])).unwrap(), vec![-3.0]);
}

fn tempdir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("lmrescore-protocol-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
