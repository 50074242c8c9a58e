//! Transcript files: JSON lines, a session header first, then one line per
//! entry. Files are replaced atomically, so a crash leaves either the old
//! transcript or the new one.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mentalese_core::infer::SamplingBudget;
use serde::{Deserialize, Serialize};

use crate::record::{SessionRecord, SessionStatus, UtteranceEntry};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("transcript is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("unsupported transcript schema version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    session_id: String,
    world_id: String,
    created_at: String,
    seed: u64,
    budget: SamplingBudget,
    status: SessionStatus,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

pub fn to_jsonl(record: &SessionRecord) -> String {
    let header = Header {
        schema_version: SCHEMA_VERSION,
        session_id: record.session_id.clone(),
        world_id: record.world_id.clone(),
        created_at: record.created_at.clone(),
        seed: record.seed,
        budget: record.budget,
        status: record.status,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for entry in &record.entries {
        out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<SessionRecord, TranscriptError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(TranscriptError::Empty)?;
    let bad = |line: usize, e: serde_json::Error| TranscriptError::Line { line: line + 1, message: e.to_string() };
    let probe: VersionProbe = serde_json::from_str(first).map_err(|e| bad(0, e))?;
    if probe.schema_version != SCHEMA_VERSION {
        return Err(TranscriptError::UnsupportedVersion { found: probe.schema_version, expected: SCHEMA_VERSION });
    }
    let header: Header = serde_json::from_str(first).map_err(|e| bad(0, e))?;
    let mut entries: Vec<UtteranceEntry> = Vec::new();
    for (i, line) in lines {
        let mut entry: UtteranceEntry = serde_json::from_str(line).map_err(|e| bad(i, e))?;
        // Parsed forms are not stored; they are a function of the code.
        for c in &mut entry.candidates {
            c.forms = mentalese_core::parse(&c.code).map(|u| u.forms).unwrap_or_default();
        }
        if entry.index != entries.len() {
            return Err(TranscriptError::Line { line: i + 1, message: format!("entry index {} out of sequence (expected {})", entry.index, entries.len()) });
        }
        entries.push(entry);
    }
    Ok(SessionRecord {
        session_id: header.session_id,
        world_id: header.world_id,
        created_at: header.created_at,
        seed: header.seed,
        budget: header.budget,
        status: header.status,
        entries,
    })
}

/// Writes `contents` to a sibling temporary file, syncs it, then renames
/// it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), TranscriptError> {
    let io = |source| TranscriptError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(io)?;
    file.write_all(contents).map_err(io)?;
    file.sync_all().map_err(io)?;
    drop(file);
    fs::rename(&tmp, path).map_err(io)
}

pub fn save_transcript(path: &Path, record: &SessionRecord) -> Result<(), TranscriptError> {
    write_atomic(path, to_jsonl(record).as_bytes())
}

pub fn load_transcript(path: &Path) -> Result<SessionRecord, TranscriptError> {
    let text = fs::read_to_string(path).map_err(|source| TranscriptError::Io { path: path.to_path_buf(), source })?;
    from_jsonl(&text)
}

/// Transcript path for a session inside a persistence directory.
pub fn transcript_path(dir: &Path, session_id: &str) -> PathBuf {
    dir.join(format!("{}.jsonl", session_id))
}
