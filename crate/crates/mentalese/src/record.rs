//! Transcript types shared by the service, the CLI and persistence.

use std::net::SocketAddr;
use std::path::PathBuf;

use mentalese_core::infer::{PosteriorSummary, SamplingBudget, ZeroAcceptance};
use mentalese_core::meaning::{BackendError, TranslateConfig, TranslationCandidate};
use mentalese_core::Tag;
use serde::{Deserialize, Serialize};

use crate::backend::BackendConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    #[default]
    Active,
    Closed,
}

/// A dialogue over one world. Entries are append-only with dense indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub world_id: String,
    pub created_at: String,
    pub seed: u64,
    pub budget: SamplingBudget,
    pub status: SessionStatus,
    pub entries: Vec<UtteranceEntry>,
}

/// How the committed code of an entry was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntrySource {
    Translated,
    /// Code typed directly, bypassing translation.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEntry {
    pub index: usize,
    pub tag: Tag,
    pub text: String,
    pub source: EntrySource,
    /// Ranked translations; empty for direct code.
    pub candidates: Vec<TranslationCandidate>,
    /// Index into `candidates` of the committed translation.
    pub chosen: Option<usize>,
    /// The code that was committed, if any.
    pub code: Option<String>,
    pub result: EntryResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub renders: Vec<RenderRef>,
}

impl UtteranceEntry {
    /// Whether the entry changed the session.
    pub fn is_committed(&self) -> bool {
        !matches!(self.result, EntryResult::Error { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EntryResult {
    /// A condition was added.
    None,
    Posterior {
        summary: PosteriorSummary,
        attempts: u64,
        /// Rejections attributed to each committed condition, in order.
        first_failures: Vec<u64>,
    },
    DefinitionInstalled {
        names: Vec<String>,
        /// Trailing conditions committed with the definitions.
        conditions: usize,
    },
    Error {
        error: EntryError,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EntryError {
    /// No candidate translation validated; reasons are on the candidates.
    NoValidCandidate { requested: usize },
    /// Direct code failed validation.
    InvalidCode { reasons: Vec<String> },
    ZeroAcceptance { diagnostics: ZeroAcceptance },
    /// Evaluation failed while sampling.
    Evaluation { message: String },
}

impl EntryError {
    pub fn message(&self) -> String {
        match self {
            EntryError::NoValidCandidate { requested } => format!("none of {} candidate translations was valid", requested),
            EntryError::InvalidCode { reasons } => format!("code rejected: {}", reasons.join("; ")),
            EntryError::ZeroAcceptance { diagnostics } => diagnostics.to_string(),
            EntryError::Evaluation { message } => message.clone(),
        }
    }
}

/// A rendered conditioned sample world, stored next to the transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderRef {
    pub k: usize,
    /// Paths relative to the persistence directory.
    pub svg: String,
    pub json: String,
}

/// Request-level failures: nothing is recorded in the transcript.
#[derive(Debug, thiserror::Error)]
pub enum DialogueError {
    #[error("override candidate {index} is out of range ({len} candidates)")]
    OverrideOutOfRange { index: usize, len: usize },
    #[error("override candidate {index} is not valid: {}", .reasons.join("; "))]
    OverrideInvalid { index: usize, reasons: Vec<String> },
    #[error("session is closed")]
    Closed,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("could not persist transcript: {0}")]
    Persist(#[from] crate::persist::TranscriptError),
    #[error("could not write render: {0}")]
    Render(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub persistence_dir: PathBuf,
    pub backend: BackendConfig,
    pub default_budget: SamplingBudget,
    /// Conditioned sample worlds rendered after each condition.
    pub render_count: usize,
    /// Attempt cap when searching for those worlds.
    pub render_max_attempts: u64,
    pub translate: TranslateConfig,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            persistence_dir: PathBuf::from("sessions"),
            backend: BackendConfig::default(),
            default_budget: SamplingBudget::default(),
            render_count: 4,
            render_max_attempts: 100_000,
            translate: TranslateConfig::default(),
            static_dir: None,
        }
    }
}

impl ServiceConfig {
    /// Creates the persistence directory and checks that it is writable.
    pub fn prepare(&self) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.persistence_dir)?;
        let probe = self.persistence_dir.join(".write-probe");
        std::fs::write(&probe, b"")?;
        std::fs::remove_file(probe)
    }
}
