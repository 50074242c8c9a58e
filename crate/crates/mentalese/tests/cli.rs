//! Command-line entry points and transcript files.

mod common;

use std::io::Cursor;

use clap::Parser;
use mentalese::backend::BackendConfig;
use mentalese::cli::{parse_repl_line, repl, run, run_script, Cli, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use mentalese::dialogue::{Dialogue, DialogueSettings, Input};
use mentalese::persist::{from_jsonl, load_transcript, save_transcript, to_jsonl, transcript_path, TranscriptError, SCHEMA_VERSION};
use mentalese::record::{EntryResult, SessionRecord, SessionStatus};
use mentalese::core::infer::SamplingBudget;
use mentalese::core::Tag;

fn run_args(args: &[&str]) -> (i32, String, String) {
    let cli = Cli::try_parse_from(std::iter::once("mentalese").chain(args.iter().copied())).expect("arguments parse");
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(cli, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_script(dir: &std::path::Path, body: serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("script.json");
    std::fs::write(&path, body.to_string()).unwrap();
    path
}

#[test]
fn worlds_lists_every_bundled_world() {
    let (code, out, _) = run_args(&["worlds"]);
    assert_eq!(code, EXIT_OK);
    for id in ["tug-of-war", "kinship", "scenes-static", "scenes-physics", "agents"] {
        assert!(out.contains(id), "{}", out);
    }
}

#[test]
fn unknown_world_in_a_script_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), serde_json::json!({ "world": "chess", "seed": 1, "utterances": [] }));
    let out = dir.path().join("out.json");
    let (code, _, err) = run_args(&["run", script.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("chess"), "{}", err);
    assert!(!out.exists());
}

#[test]
fn malformed_scripts_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), serde_json::json!({ "world": "kinship", "seed": 1, "utterances": [], "extra": true }));
    let out = dir.path().join("out.json");
    let (code, _, _) = run_args(&["run", script.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    let (code, _, _) = run_args(&["run", dir.path().join("missing.json").to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn scripts_stop_at_the_first_failure_and_keep_the_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(
        dir.path(),
        serde_json::json!({
            "world": "tug-of-war",
            "seed": 3,
            "budget": { "target_accepted": 50, "max_attempts": 5000 },
            "utterances": [
                { "code": "(condition false)" },
                { "tag": "query", "text": "Would Gabe beat Josh?" },
                { "tag": "query", "text": "How strong is Josh?" }
            ]
        }),
    );
    let out = dir.path().join("out.json");
    let (code, _, _) = run_args(&["run", script.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_FAILURE);
    let record: SessionRecord = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(record.entries.len(), 2);
    assert!(matches!(record.entries[1].result, EntryResult::Error { .. }));
}

#[test]
fn script_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let script = common::dialogue_path("teams");
    let outputs: Vec<Vec<u8>> = ["1", "2"]
        .iter()
        .map(|threads| {
            let out = dir.path().join(format!("teams-{}.json", threads));
            let (code, stdout, _) = run_args(&["run", script.to_str().unwrap(), "-o", out.to_str().unwrap(), "--threads", threads]);
            assert_eq!(code, EXIT_OK);
            assert!(stdout.contains("P(true)"), "{}", stdout);
            std::fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    let record: SessionRecord = serde_json::from_slice(&outputs[0]).unwrap();
    assert_eq!(record.session_id, "script-tug-of-war-7");
}

#[test]
fn extra_fixture_files_extend_the_mock() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("extra.church");
    std::fs::write(&fixtures, ";; Query: Is Josh stronger than Gabe?\n(query (> (strength 'josh) (strength 'gabe)))\n").unwrap();
    let script = write_script(dir.path(), serde_json::json!({ "world": "tug-of-war", "seed": 3, "budget": { "target_accepted": 50, "max_attempts": 5000 }, "utterances": [{ "tag": "query", "text": "Is Josh stronger than Gabe?" }] }));
    let out = dir.path().join("out.json");
    let backend = BackendConfig { fixture_files: vec![fixtures], ..BackendConfig::default() };
    let code = run_script(&script, &out, None, None, &backend, &mut std::io::sink(), &mut std::io::sink());
    assert_eq!(code, EXIT_OK);
}

#[test]
fn check_reports_prior_statistics() {
    let (code, out, err) = run_args(&["check", "--world", "tug-of-war", "--n", "2000"]);
    assert_eq!(code, EXIT_OK, "{}{}", out, err);
    assert!(!out.is_empty());
}

#[test]
fn repl_lines_map_to_inputs() {
    assert_eq!(parse_repl_line("C: Josh won against Lio.", false), Some(Input::Utterance { tag: Tag::Condition, text: "Josh won against Lio.".into(), override_candidate: None }));
    assert_eq!(parse_repl_line("Q: (query (strength 'josh))", false), Some(Input::Code { code: "(query (strength 'josh))".into(), tag: Some(Tag::Query) }));
    assert_eq!(parse_repl_line("(query 1)", false), Some(Input::Code { code: "(query 1)".into(), tag: None }));
    assert_eq!(parse_repl_line("D: Teams have players.", true), Some(Input::Utterance { tag: Tag::ConstructFragment, text: "Teams have players.".into(), override_candidate: None }));
    assert_eq!(parse_repl_line("what?", false), None);
}

#[test]
fn repl_session_runs_until_quit() {
    let w = common::world("tug-of-war");
    let backend = BackendConfig::default().build(&w).unwrap();
    let mut dialogue = Dialogue::create("tug-of-war", "repl".into(), "t".into(), 1, SamplingBudget::new(100, 10_000), backend, DialogueSettings::default()).unwrap();
    let input = "C: Josh won against Lio.\nhello\nQ: Would Gabe beat Josh?\n:quit\nQ: How strong is Josh?\n";
    let mut out = Vec::new();
    repl(&mut dialogue, Cursor::new(input), &mut out);
    let out = String::from_utf8(out).unwrap();
    assert_eq!(dialogue.record().entries.len(), 2);
    assert!(out.contains("condition added"), "{}", out);
    assert!(out.contains("P(true)"), "{}", out);
    assert!(out.contains("prefix utterances"), "{}", out);
}

// -------------------------------------------------------------------
// transcripts
// -------------------------------------------------------------------

fn sample_record() -> SessionRecord {
    common::play("teams").record().clone()
}

#[test]
fn transcripts_round_trip() {
    let record = sample_record();
    assert_eq!(from_jsonl(&to_jsonl(&record)).unwrap(), record);
    let dir = tempfile::tempdir().unwrap();
    let path = transcript_path(dir.path(), &record.session_id);
    save_transcript(&path, &record).unwrap();
    assert_eq!(load_transcript(&path).unwrap(), record);
    assert_eq!(to_jsonl(&record).lines().count(), record.entries.len() + 1);
}

#[test]
fn truncated_transcripts_name_the_bad_line() {
    let text = to_jsonl(&sample_record());
    let cut = &text[..text.trim_end().len() - 10];
    let lines = cut.lines().count();
    match from_jsonl(cut) {
        Err(TranscriptError::Line { line, .. }) => assert_eq!(line, lines),
        other => panic!("expected a line error, got {:?}", other.map(|r| r.entries.len())),
    }
    assert!(matches!(from_jsonl(""), Err(TranscriptError::Empty)));
}

#[test]
fn transcript_versions_are_checked() {
    let text = to_jsonl(&sample_record()).replacen(&format!("\"schema_version\":{}", SCHEMA_VERSION), "\"schema_version\":7", 1);
    match from_jsonl(&text) {
        Err(TranscriptError::UnsupportedVersion { found, expected }) => assert_eq!((found, expected), (7, SCHEMA_VERSION)),
        other => panic!("expected a version error, got {:?}", other.map(|r| r.entries.len())),
    }
}

#[test]
fn transcript_entries_must_be_dense() {
    let text = to_jsonl(&sample_record());
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(2);
    assert!(matches!(from_jsonl(&lines.join("\n")), Err(TranscriptError::Line { line: 3, .. })));
}

#[test]
fn closed_dialogues_refuse_input() {
    let dir = tempfile::tempdir().unwrap();
    let w = common::world("kinship");
    let backend = BackendConfig::default().build(&w).unwrap();
    let settings = DialogueSettings { persistence_dir: Some(dir.path().to_path_buf()), ..DialogueSettings::default() };
    let mut dialogue = Dialogue::create("kinship", "closing".into(), "t".into(), 1, SamplingBudget::default(), backend, settings).unwrap();
    dialogue.close().unwrap();
    assert!(dialogue.step(Input::Code { code: "(query 1)".into(), tag: None }).is_err());
    assert_eq!(load_transcript(&transcript_path(dir.path(), "closing")).unwrap().status, SessionStatus::Closed);
}
