//! Translation of tagged utterances into program text.
//!
//! A prompt is the world model source, its example translations, the
//! accepted history and a final `;; <Tag>: <text>` line. A completion
//! backend proposes code; each proposal is parsed, checked against the tag,
//! resolved against the session and dry-run before it can be chosen.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{split_forms, FormShape, HistoryItem, Session};
use crate::sexpr::{parse, strip_prompt_forms, SExpr, Tag};
use crate::worlds::construct_example_text;

/// Most recent accepted pairs included in a prompt.
pub const HISTORY_LIMIT: usize = 30;

/// Completions stop at a blank line followed by a comment.
pub const STOP: &str = "\n\n;;";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub tag: Tag,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub model_text: String,
    pub examples_text: String,
    pub history_text: String,
    pub final_line: String,
}

impl PromptBundle {
    /// Non-empty sections separated by one blank line, then the final line
    /// and a newline.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for section in [&self.model_text, &self.examples_text, &self.history_text] {
            let s = section.trim_end();
            if !s.trim_start().is_empty() {
                out.push_str(s);
                out.push_str("\n\n");
            }
        }
        out.push_str(&self.final_line);
        out.push('\n');
        out
    }
}

pub fn tagged_line(tag: Tag, text: &str) -> String {
    format!(";; {}: {}", tag.label(), text.trim())
}

fn render_history<'h>(items: impl Iterator<Item = &'h HistoryItem>) -> String {
    let items: Vec<&HistoryItem> = items.collect();
    let start = items.len().saturating_sub(HISTORY_LIMIT);
    let mut out = String::new();
    for item in &items[start..] {
        out.push_str(&tagged_line(item.tag, &item.text));
        out.push('\n');
        out.push_str(item.code.trim_end());
        out.push_str("\n\n");
    }
    out
}

fn render_fragments<'h>(items: impl Iterator<Item = &'h HistoryItem>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&tagged_line(item.tag, &item.text));
        out.push('\n');
        out.push_str(item.code.trim_end());
        out.push_str("\n\n");
    }
    out
}

/// Assembles the prompt for `utterance` in `session`.
///
/// In a construct-mode session the world model is replaced by the model
/// built so far from accepted fragments; a fragment prompt additionally
/// starts with an unrelated example model.
pub fn build_prompt(session: &Session, utterance: &Utterance) -> PromptBundle {
    let world = session.world();
    let history = session.history();
    let final_line = tagged_line(utterance.tag, &utterance.text);
    if world.is_construct() {
        let fragments = render_fragments(history.iter().filter(|h| h.tag == Tag::ConstructFragment));
        if utterance.tag == Tag::ConstructFragment {
            return PromptBundle {
                model_text: construct_example_text().to_owned(),
                examples_text: String::new(),
                history_text: fragments,
                final_line,
            };
        }
        return PromptBundle {
            model_text: fragments,
            examples_text: String::new(),
            history_text: render_history(history.iter().filter(|h| h.tag != Tag::ConstructFragment)),
            final_line,
        };
    }
    PromptBundle {
        model_text: world.model_text(),
        examples_text: world.examples_text().to_owned(),
        history_text: render_history(history.iter()),
        final_line,
    }
}

// -------------------------------------------------------------------
// backends
// -------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Backend-reported preference, higher is better.
    pub score: Option<f64>,
}

impl Completion {
    pub fn new(text: impl Into<String>) -> Self {
        Completion { text: text.into(), score: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendErrorKind {
    Transport,
    Auth,
    Status,
    Malformed,
    Config,
}

/// A failure to obtain completions at all, as opposed to completions that
/// fail validation.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("completion backend error ({kind:?}): {message}")]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub message: String,
}

pub trait Backend {
    fn name(&self) -> &str;

    fn complete(&self, prompt: &str, n: usize, temperature: f64, stop: &[&str]) -> Result<Vec<Completion>, BackendError>;
}

/// Cuts a completion at the first stop sequence and trims surrounding
/// whitespace.
pub fn normalize_completion(text: &str, stop: &[&str]) -> String {
    let mut end = text.len();
    for s in stop {
        if let Some(i) = text.find(s) {
            end = end.min(i);
        }
    }
    text[..end].trim().to_string()
}

/// What the mock returns for a prompt with no matching fixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MockFallback {
    /// `(mock-unmatched "<text>")`, which never validates.
    EchoError,
    /// No completions.
    Empty,
}

/// Fixture table keyed by the final tagged line of a prompt.
///
/// Several fixtures for the same line are alternatives; a request for `n`
/// completions cycles through them in file order.
#[derive(Clone, Debug)]
pub struct MockBackend {
    entries: Vec<(Tag, String, Vec<String>)>,
    fallback: MockFallback,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum FixtureError {
    #[error("fixture file does not parse: {0}")]
    Parse(#[from] crate::sexpr::ParseError),
    #[error(transparent)]
    Dangling(#[from] crate::sexpr::DanglingTagError),
}

/// Case, surrounding whitespace, inner whitespace runs and trailing
/// punctuation do not affect fixture matching.
pub fn normalize_utterance(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_end_matches(['.', '!', '?']).to_lowercase()
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend { entries: Vec::new(), fallback: MockFallback::EchoError }
    }

    pub fn from_fixtures(text: &str) -> Result<Self, FixtureError> {
        let mut mock = MockBackend::new();
        mock.add_fixtures(text)?;
        Ok(mock)
    }

    pub fn add_fixtures(&mut self, text: &str) -> Result<(), FixtureError> {
        let unit = parse(text)?;
        for block in strip_prompt_forms(&unit)? {
            let code = unit.slice(block.code_span).to_string();
            self.add(block.tag, &block.text, &code);
        }
        Ok(())
    }

    pub fn add(&mut self, tag: Tag, text: &str, code: &str) {
        let key = normalize_utterance(text);
        match self.entries.iter_mut().find(|(t, k, _)| *t == tag && *k == key) {
            Some((_, _, codes)) => codes.push(code.to_string()),
            None => self.entries.push((tag, key, alloc::vec![code.to_string()])),
        }
    }

    pub fn with_fallback(mut self, fallback: MockFallback) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fixture alternatives for a tagged utterance.
    pub fn lookup(&self, tag: Tag, text: &str) -> Option<&[String]> {
        let key = normalize_utterance(text);
        self.entries.iter().find(|(t, k, _)| *t == tag && *k == key).map(|(_, _, c)| c.as_slice())
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend::new()
    }
}

/// The last `;; <Tag>: text` line of a prompt.
pub fn final_tagged_line(prompt: &str) -> Option<(Tag, &str)> {
    let line = prompt.lines().rev().find(|l| !l.trim().is_empty())?;
    let comment = line.trim().strip_prefix(";;")?;
    Tag::split_tagged(comment.trim())
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &str, n: usize, _temperature: f64, _stop: &[&str]) -> Result<Vec<Completion>, BackendError> {
        let found = final_tagged_line(prompt).and_then(|(tag, text)| self.lookup(tag, text).map(|c| (c, text)));
        match found {
            Some((codes, _)) => Ok((0..n).map(|i| Completion::new(codes[i % codes.len()].clone())).collect()),
            None => match self.fallback {
                MockFallback::EchoError => {
                    let text = final_tagged_line(prompt).map(|(_, t)| t).unwrap_or("");
                    let mut echo = String::new();
                    crate::sexpr::write_string(&mut echo, text).expect("writing to a String");
                    Ok((0..n).map(|_| Completion::new(format!("(mock-unmatched {})", echo))).collect())
                }
                MockFallback::Empty => Ok(Vec::new()),
            },
        }
    }
}

// -------------------------------------------------------------------
// candidates
// -------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Validation {
    Valid,
    Invalid { reasons: Vec<String> },
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validation::Valid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateMeta {
    pub temperature: f64,
    pub sample_index: usize,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationCandidate {
    pub raw_text: String,
    /// The completion after stop-sequence and whitespace normalization.
    pub code: String,
    #[serde(skip)]
    pub forms: Vec<SExpr>,
    pub parse_error: Option<String>,
    pub validation: Validation,
    pub meta: CandidateMeta,
    /// How many sampled completions parsed to the same forms.
    pub frequency: usize,
}

impl TranslationCandidate {
    pub fn is_valid(&self) -> bool {
        self.validation.is_valid()
    }

    pub fn reasons(&self) -> &[String] {
        match &self.validation {
            Validation::Valid => &[],
            Validation::Invalid { reasons } => reasons,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckedCode {
    pub forms: Vec<SExpr>,
    pub parse_error: Option<String>,
    pub validation: Validation,
}

/// Checks parse, tag/form agreement, free symbols and a dry run.
pub fn validate_candidate(code: &str, tag: Tag, session: &Session) -> CheckedCode {
    let forms = match parse(code) {
        Ok(unit) => unit.forms,
        Err(e) => {
            let reason = format!("parse error: {}", e);
            return CheckedCode { forms: Vec::new(), parse_error: Some(reason.clone()), validation: Validation::Invalid { reasons: alloc::vec![reason] } };
        }
    };
    let validation = match check_forms(&forms, tag, session) {
        Ok(()) => Validation::Valid,
        Err(reasons) => Validation::Invalid { reasons },
    };
    CheckedCode { forms, parse_error: None, validation }
}

fn check_forms(forms: &[SExpr], tag: Tag, session: &Session) -> Result<(), Vec<String>> {
    let shape = split_forms(tag, forms).map_err(|e| alloc::vec![format!("tag mismatch: {}", e)])?;
    let unbound = session.unbound_in(forms);
    if !unbound.is_empty() {
        return Err(alloc::vec![format!("unbound symbol(s): {}", unbound.join(", "))]);
    }
    let result = match &shape {
        FormShape::Program { defines, conditions } => session.dry_run(defines, conditions, None),
        FormShape::Query(body) => session.dry_run(&[], &[], Some(body)),
    };
    result.map_err(|e| alloc::vec![e.to_string()])
}

/// Sampling settings for one translation request.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslateConfig {
    /// Completions sampled at `temperature`.
    pub k: usize,
    pub temperature: f64,
    /// Also request one completion at temperature 0.
    pub greedy: bool,
}

impl Default for TranslateConfig {
    fn default() -> Self {
        TranslateConfig { k: 5, temperature: 0.7, greedy: true }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum TranslateError {
    #[error("none of {requested} candidate translations was valid")]
    NoValidCandidate { requested: usize, candidates: Vec<TranslationCandidate> },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Requests completions, validates them, merges structurally equal ones
/// and ranks the rest: valid first, then backend score, then frequency,
/// then order of first appearance. The top candidate is the default choice.
pub fn translate(utterance: &Utterance, session: &Session, backend: &dyn Backend, config: &TranslateConfig) -> Result<Vec<TranslationCandidate>, TranslateError> {
    let mut requested = config.k + usize::from(config.greedy);
    if utterance.text.trim().is_empty() {
        return Err(TranslateError::NoValidCandidate { requested: 0, candidates: Vec::new() });
    }
    let prompt = build_prompt(session, utterance).render();
    let mut raw: Vec<(Completion, f64)> = Vec::new();
    if config.greedy {
        raw.extend(backend.complete(&prompt, 1, 0.0, &[STOP])?.into_iter().map(|c| (c, 0.0)));
    }
    if config.k > 0 {
        raw.extend(backend.complete(&prompt, config.k, config.temperature, &[STOP])?.into_iter().map(|c| (c, config.temperature)));
    }
    requested = requested.max(raw.len());

    let mut candidates: Vec<TranslationCandidate> = Vec::new();
    for (sample_index, (completion, temperature)) in raw.into_iter().enumerate() {
        let code = normalize_completion(&completion.text, &[STOP]);
        let parsed = parse(&code).map(|u| u.forms);
        let existing = candidates.iter_mut().find(|c| match &parsed {
            Ok(forms) => c.parse_error.is_none() && c.forms == *forms,
            Err(_) => c.code == code,
        });
        if let Some(c) = existing {
            c.frequency += 1;
            if let (Some(s), prev) = (completion.score, c.meta.score) {
                c.meta.score = Some(prev.map_or(s, |p| p.max(s)));
            }
            continue;
        }
        let checked = validate_candidate(&code, utterance.tag, session);
        candidates.push(TranslationCandidate {
            raw_text: completion.text,
            code,
            forms: checked.forms,
            parse_error: checked.parse_error,
            validation: checked.validation,
            meta: CandidateMeta { temperature, sample_index, score: completion.score },
            frequency: 1,
        });
    }
    candidates.sort_by(|a, b| {
        b.is_valid()
            .cmp(&a.is_valid())
            .then_with(|| {
                let (sa, sb) = (a.meta.score.unwrap_or(f64::NEG_INFINITY), b.meta.score.unwrap_or(f64::NEG_INFINITY));
                sb.partial_cmp(&sa).unwrap_or(core::cmp::Ordering::Equal)
            })
            .then_with(|| b.frequency.cmp(&a.frequency))
            .then_with(|| a.meta.sample_index.cmp(&b.meta.sample_index))
    });
    if !candidates.first().is_some_and(TranslationCandidate::is_valid) {
        return Err(TranslateError::NoValidCandidate { requested, candidates });
    }
    Ok(candidates)
}

/// Translates one sentence of a domain description into definitions,
/// seeing every fragment accepted so far.
pub fn translate_model_fragment(sentence: &str, session: &Session, backend: &dyn Backend, config: &TranslateConfig) -> Result<Vec<TranslationCandidate>, TranslateError> {
    let utterance = Utterance { text: sentence.to_string(), tag: Tag::ConstructFragment, index: session.history().len() };
    translate(&utterance, session, backend, config)
}
