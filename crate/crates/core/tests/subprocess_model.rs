mod common;

use std::fs;
use std::path::Path;
use std::time::Duration;

use common::*;
use opportune_core::harness::write_table;
use opportune_core::models::complete_source;
use opportune_core::{
    decode_retranslation, decode_simultaneous, DecoderConfig, IncrementalModel, ModelError,
    Policy, SubprocessModel,
};

fn python_model(dir: &Path, body: &str) -> SubprocessModel {
    let script = dir.join("model.py");
    fs::write(&script, body).unwrap();
    SubprocessModel::spawn_argv(&["python3", "-u", script.to_str().unwrap()]).unwrap()
}

const COUNTING: &str = r#"
import json, sys
log = open(sys.argv[0] + ".log", "a")
for line in sys.stdin:
    req = json.loads(line)
    log.write(line); log.flush()
    tgt = req["tgt"]
    if len(tgt) >= len([w for w in req["src"] if w != "<eos>"]):
        print(json.dumps({"tokens": ["<eos>", "X"], "logprobs": [-0.1, -2.4]}))
    else:
        print(json.dumps({"tokens": ["X", "Y", "<eos>"], "logprobs": [-0.2, -2.0, -3.0]}))
"#;

#[test]
fn replies_are_cached_per_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let model = python_model(dir.path(), COUNTING);
    let src = toks("a b");
    let first = model.next_distribution(&src, &[]).unwrap();
    let second = model.next_distribution(&src, &[]).unwrap();
    assert_eq!(first, second);
    assert!(first.is_normalized());
    assert_eq!(first.top().0, &tok("X"));
    let log = fs::read_to_string(dir.path().join("model.py.log")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let request: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(request["src"], serde_json::json!(["a", "b"]));
    assert_eq!(request["tgt"], serde_json::json!([]));
    assert_eq!(request["top_k"], 16);
}

#[test]
fn complete_source_is_sent_with_eos() {
    let dir = tempfile::tempdir().unwrap();
    let model = python_model(dir.path(), COUNTING);
    let trace = decode_simultaneous(
        &model,
        &Policy::wait_k(1).unwrap(),
        &toks("a b"),
        &DecoderConfig::new(1, 2),
    )
    .unwrap();
    assert_eq!(trace.final_output.tokens(), &toks("X X")[..]);
    let log = fs::read_to_string(dir.path().join("model.py.log")).unwrap();
    assert!(log.contains(r#"["a","b","<eos>"]"#));
    assert!(model.next_distribution(&complete_source(&toks("a")), &toks("X")).unwrap().top().0.is_eos());
}

#[test]
fn mismatched_arrays_are_protocol_errors() {
    let dir = tempfile::tempdir().unwrap();
    let model = python_model(
        dir.path(),
        "import sys\nfor line in sys.stdin:\n    print('{\"tokens\":[\"A\",\"B\"],\"logprobs\":[-1.0]}')\n",
    );
    let err = model.next_distribution(&toks("a"), &[]).unwrap_err();
    assert!(matches!(err, ModelError::Protocol(_)), "{err:?}");
    // The stream is out of step after a bad reply; later calls fail fast.
    assert!(matches!(
        model.next_distribution(&toks("b"), &[]),
        Err(ModelError::Process(_))
    ));
}

#[test]
fn slow_child_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let model = python_model(
        dir.path(),
        "import sys, time\nfor line in sys.stdin:\n    time.sleep(30)\n",
    )
    .with_timeout(Duration::from_millis(300));
    let err = model.next_distribution(&toks("a"), &[]).unwrap_err();
    assert_eq!(err, ModelError::Timeout(Duration::from_millis(300)));
}

#[test]
fn crashed_child_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let model = python_model(dir.path(), "import sys\nsys.exit(3)\n");
    let err = model.next_distribution(&toks("a"), &[]).unwrap_err();
    assert!(matches!(err, ModelError::Process(_)), "{err:?}");
}

#[test]
fn missing_program_fails_to_spawn() {
    assert!(SubprocessModel::spawn("/nonexistent/model --flag").is_err());
    assert!(SubprocessModel::spawn("").is_err());
    assert!(SubprocessModel::spawn("python3 'unterminated").is_err());
}

#[test]
fn served_transducer_decodes_like_the_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let table_path = dir.path().join("table.tsv");
    let builtin = lookahead(4, 2, 0.7);
    write_table(&table_path, builtin.table()).unwrap();
    let command = format!(
        "{} serve --model lookahead --table {} --lookahead 2 --sharpness 0.7",
        env!("CARGO_BIN_EXE_opportune"),
        table_path.display()
    );
    let served = SubprocessModel::spawn(&command).unwrap();
    for src in ["a b c d", "d c b a a", "b"] {
        let src = toks(src);
        for (k, w, b) in [(1, 3, 1), (2, 2, 3), (3, 0, 1)] {
            let policy = Policy::wait_k(k).unwrap();
            let config = DecoderConfig::new(w, b);
            let want = decode_simultaneous(&builtin, &policy, &src, &config).unwrap();
            let got = decode_simultaneous(&served, &policy, &src, &config).unwrap();
            assert_eq!(got, want, "k={k} w={w} b={b}");
        }
        assert_eq!(
            decode_retranslation(&served, &src, 1, 3.0).unwrap(),
            decode_retranslation(&builtin, &src, 1, 3.0).unwrap()
        );
    }
    assert!(!served.vocabulary().is_empty());
}
