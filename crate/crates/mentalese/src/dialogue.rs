//! One dialogue: translate an utterance, commit the chosen code, then
//! sample, render and record what it did.

use std::path::PathBuf;

use mentalese_core::infer::{derive_chain_seed, summarize, BudgetError, InferenceError, SamplingBudget};
use mentalese_core::meaning::{translate, TranslateConfig, TranslateError, TranslationCandidate, Utterance, validate_candidate};
use mentalese_core::render::render_scene;
use mentalese_core::session::{Committed, Session};
use mentalese_core::worlds::{load_world, RenderKind, WorldError};
use mentalese_core::{SExpr, Tag};
use serde::{Deserialize, Serialize};

use crate::backend::SharedBackend;
use crate::parallel::{on_eval_thread, parallel_rejection_sample};
use crate::persist::{save_transcript, transcript_path, write_atomic};
use crate::record::{DialogueError, EntryError, EntryResult, EntrySource, RenderRef, SessionRecord, SessionStatus, UtteranceEntry};

/// Block index reserved for render seeds.
const RENDER_CHAIN: u32 = u32::MAX - 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Input {
    /// Code committed as written; the tag is inferred from the first form
    /// when absent.
    Code {
        code: String,
        #[serde(default)]
        tag: Option<Tag>,
    },
    Utterance {
        tag: Tag,
        text: String,
        #[serde(default)]
        override_candidate: Option<usize>,
    },
}

#[derive(Clone, Debug, Default)]
pub struct DialogueSettings {
    pub translate: TranslateConfig,
    pub render_count: usize,
    pub render_max_attempts: u64,
    /// Directory for the transcript and render artifacts; nothing is
    /// written when unset.
    pub persistence_dir: Option<PathBuf>,
    /// Sampling threads; `None` means one per core.
    pub threads: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CreateError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

pub struct Dialogue {
    record: SessionRecord,
    session: Session,
    backend: SharedBackend,
    settings: DialogueSettings,
}

/// The tag a piece of direct code implies: the head of its first form.
pub fn infer_tag(code: &str) -> Option<Tag> {
    let unit = mentalese_core::parse(code).ok()?;
    match unit.forms.first()?.as_list()?.first()?.as_symbol()? {
        "condition" => Some(Tag::Condition),
        "query" => Some(Tag::Query),
        "define" => Some(Tag::Define),
        _ => None,
    }
}

impl Dialogue {
    pub fn create(world_id: &str, session_id: String, created_at: String, seed: u64, budget: SamplingBudget, backend: SharedBackend, settings: DialogueSettings) -> Result<Self, CreateError> {
        budget.validate()?;
        let world = load_world(world_id)?;
        let record = SessionRecord { session_id, world_id: world_id.to_string(), created_at, seed, budget, status: SessionStatus::Active, entries: Vec::new() };
        let session = Session::new(world, seed, budget);
        Ok(Dialogue { record, session, backend, settings })
    }

    /// Rebuilds the session state of a persisted record by recommitting
    /// the code of every committed entry. No sampling is repeated.
    pub fn resume(record: SessionRecord, backend: SharedBackend, settings: DialogueSettings) -> Result<Self, CreateError> {
        let world = load_world(&record.world_id)?;
        let mut session = Session::new(world, record.seed, record.budget);
        let replayed = on_eval_thread(|| {
            for entry in record.entries.iter().filter(|e| e.is_committed()) {
                let Some(code) = &entry.code else { continue };
                let forms = mentalese_core::parse(code).map(|u| u.forms).unwrap_or_default();
                if session.commit(entry.tag, &forms).is_ok() && entry.source == EntrySource::Translated {
                    session.record(entry.tag, &entry.text, code);
                }
            }
            session
        });
        Ok(Dialogue { record, session: replayed, backend, settings })
    }

    pub fn record(&self) -> &SessionRecord {
        &self.record
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    /// Writes the current record to the persistence directory, if any.
    pub fn save(&self) -> Result<(), DialogueError> {
        self.persist(&self.record)
    }

    pub fn close(&mut self) -> Result<(), DialogueError> {
        let mut next = self.record.clone();
        next.status = SessionStatus::Closed;
        self.persist(&next)?;
        self.record = next;
        Ok(())
    }

    /// Processes one input and appends its entry. Dialogue outcomes such
    /// as an untranslatable utterance or a contradiction are recorded as
    /// error entries; `Err` means nothing was recorded.
    pub fn step(&mut self, input: Input) -> Result<&UtteranceEntry, DialogueError> {
        if self.record.status == SessionStatus::Closed {
            return Err(DialogueError::Closed);
        }
        let (session, entry) = on_eval_thread(|| self.process(input))?;
        let mut next = self.record.clone();
        next.entries.push(entry);
        self.persist(&next)?;
        self.record = next;
        self.session = session;
        Ok(self.record.entries.last().expect("entry just pushed"))
    }

    fn persist(&self, record: &SessionRecord) -> Result<(), DialogueError> {
        if let Some(dir) = &self.settings.persistence_dir {
            save_transcript(&transcript_path(dir, &record.session_id), record)?;
        }
        Ok(())
    }

    fn process(&self, input: Input) -> Result<(Session, UtteranceEntry), DialogueError> {
        let index = self.record.entries.len();
        let mut session = self.session.clone();
        let (tag, text, source, candidates, chosen, code) = match input {
            Input::Code { code, tag } => {
                let Some(tag) = tag.or_else(|| infer_tag(&code)) else {
                    let error = EntryError::InvalidCode { reasons: vec!["expected (condition ...), (query ...) or (define ...)".into()] };
                    return Ok((session, error_entry(index, Tag::Condition, String::new(), EntrySource::Direct, Vec::new(), Some(code), error)));
                };
                let checked = validate_candidate(&code, tag, &session);
                if let mentalese_core::meaning::Validation::Invalid { reasons } = checked.validation {
                    return Ok((session, error_entry(index, tag, String::new(), EntrySource::Direct, Vec::new(), Some(code), EntryError::InvalidCode { reasons })));
                }
                (tag, String::new(), EntrySource::Direct, Vec::new(), None, code)
            }
            Input::Utterance { tag, text, override_candidate } => {
                let utterance = Utterance { text: text.clone(), tag, index };
                let candidates = match translate(&utterance, &session, self.backend.as_ref(), &self.settings.translate) {
                    Ok(c) => c,
                    Err(TranslateError::Backend(e)) => return Err(e.into()),
                    Err(TranslateError::NoValidCandidate { requested, candidates }) => {
                        if let Some(i) = override_candidate {
                            return Err(override_error(i, &candidates));
                        }
                        let error = EntryError::NoValidCandidate { requested };
                        return Ok((session, error_entry(index, tag, text, EntrySource::Translated, candidates, None, error)));
                    }
                };
                let chosen = override_candidate.unwrap_or(0);
                if candidates.get(chosen).is_none_or(|c| !c.is_valid()) {
                    return Err(override_error(chosen, &candidates));
                }
                let code = candidates[chosen].code.clone();
                (tag, text, EntrySource::Translated, candidates, Some(chosen), code)
            }
        };
        let forms = mentalese_core::parse(&code).map(|u| u.forms).unwrap_or_default();
        let mut entry = UtteranceEntry { index, tag, text, source, candidates, chosen, code: Some(code), result: EntryResult::None, renders: Vec::new() };
        match session.commit(tag, &forms) {
            Err(e) => {
                entry.result = EntryResult::Error { error: EntryError::InvalidCode { reasons: vec![e.to_string()] } };
                return Ok((self.session.clone(), entry));
            }
            Ok(Committed::Query(body)) => {
                entry.result = self.posterior(&session, body);
            }
            Ok(Committed::Definitions { names, conditions }) => {
                entry.result = EntryResult::DefinitionInstalled { names, conditions };
            }
            Ok(Committed::Conditions(_)) => {
                entry.renders = self.render_conditioned(&session, index)?;
            }
        }
        if !entry.is_committed() {
            return Ok((self.session.clone(), entry));
        }
        if source == EntrySource::Translated {
            session.record(tag, &entry.text, entry.code.as_deref().unwrap_or_default());
        }
        Ok((session, entry))
    }

    fn budget(&self) -> SamplingBudget {
        SamplingBudget { parallel_chains: self.settings.threads, ..self.session.budget() }
    }

    fn posterior(&self, session: &Session, body: SExpr) -> EntryResult {
        let program = session.program(Some(body));
        match parallel_rejection_sample(&program, &self.budget(), session.seed(), session.eval_config()) {
            Ok(samples) => {
                let summary = summarize(&samples).expect("inference returns at least one sample");
                EntryResult::Posterior { summary, attempts: samples.attempts, first_failures: samples.first_failures }
            }
            Err(InferenceError::ZeroAcceptance(diagnostics)) => EntryResult::Error { error: EntryError::ZeroAcceptance { diagnostics } },
            Err(e) => EntryResult::Error { error: EntryError::Evaluation { message: e.to_string() } },
        }
    }

    /// Renders up to `render_count` worlds that satisfy every condition so
    /// far, found by rejection from the prior. Finding none is not an error.
    fn render_conditioned(&self, session: &Session, index: usize) -> Result<Vec<RenderRef>, DialogueError> {
        let world = session.world();
        let (Some(dir), Some(root)) = (&self.settings.persistence_dir, &world.root_expr) else { return Ok(Vec::new()) };
        if self.settings.render_count == 0 || world.render_kind == RenderKind::None {
            return Ok(Vec::new());
        }
        let budget = SamplingBudget {
            target_accepted: self.settings.render_count,
            max_attempts: self.settings.render_max_attempts.max(self.settings.render_count as u64),
            parallel_chains: self.settings.threads,
        };
        let seed = derive_chain_seed(session.seed(), RENDER_CHAIN, index as u32);
        let Ok(samples) = parallel_rejection_sample(&session.program(Some(root.clone())), &budget, seed, session.eval_config()) else {
            return Ok(Vec::new());
        };
        let mut refs = Vec::new();
        for (k, state) in samples.values.iter().enumerate() {
            let rendered = render_scene(state, world).map_err(|e| DialogueError::Render(e.to_string()))?;
            let stem = format!("{}/entry-{}-{}", self.record.session_id, index, k);
            let json = serde_json::to_string_pretty(&rendered.description).expect("scene serializes");
            write_atomic(&dir.join(format!("{}.svg", stem)), rendered.svg.as_bytes())?;
            write_atomic(&dir.join(format!("{}.json", stem)), json.as_bytes())?;
            refs.push(RenderRef { k, svg: format!("{}.svg", stem), json: format!("{}.json", stem) });
        }
        Ok(refs)
    }
}

fn override_error(index: usize, candidates: &[TranslationCandidate]) -> DialogueError {
    match candidates.get(index) {
        None => DialogueError::OverrideOutOfRange { index, len: candidates.len() },
        Some(c) => DialogueError::OverrideInvalid { index, reasons: c.reasons().to_vec() },
    }
}

fn error_entry(index: usize, tag: Tag, text: String, source: EntrySource, candidates: Vec<TranslationCandidate>, code: Option<String>, error: EntryError) -> UtteranceEntry {
    UtteranceEntry { index, tag, text, source, candidates, chosen: None, code, result: EntryResult::Error { error }, renders: Vec::new() }
}
