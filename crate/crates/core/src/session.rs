//! Cumulative dialogue state over one world model.
//!
//! A session owns the world, the accepted definitions (extensions) and the
//! accepted condition bodies, in order. Every addition is checked for free
//! symbols and dry-run before it is kept, so the composed program always
//! evaluates.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{EvalConfig, SPECIAL_FORMS};
use crate::infer::{defined_name, derive_chain_seed, rejection_sample, summarize, InferenceError, PosteriorSamples, PosteriorSummary, Program, Sampler, SamplingBudget, StagedError};
use crate::scope::free_symbols;
use crate::sexpr::{print, SExpr, Tag};
use crate::worlds::WorldModel;

/// Worlds tried by a dry run; it passes if any one of them evaluates.
pub const DRY_RUN_WORLDS: u32 = 4;

/// Block index reserved for dry-run seeds, outside any sampling run.
const DRY_RUN_CHAIN: u32 = u32::MAX - 2;

/// An accepted utterance and the code committed for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub tag: Tag,
    pub text: String,
    pub code: String,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SessionError {
    #[error("unbound symbol(s): {}", .names.join(", "))]
    Unbound { names: Vec<String> },
    #[error("expected {expected}, got `{found}`")]
    WrongForm { expected: &'static str, found: String },
    #[error("dry run failed in {0}")]
    DryRun(StagedError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

impl SessionError {
    pub fn unbound_names(&self) -> &[String] {
        match self {
            SessionError::Unbound { names } => names,
            _ => &[],
        }
    }
}

/// What committing a set of forms did to the session.
#[derive(Clone, Debug, PartialEq)]
pub enum Committed {
    Conditions(usize),
    Definitions { names: Vec<String>, conditions: usize },
    /// Queries are not stored; the body is returned for sampling.
    Query(SExpr),
}

#[derive(Clone, Debug)]
pub struct Session {
    world: WorldModel,
    extensions: Vec<SExpr>,
    conditions: Vec<SExpr>,
    history: Vec<HistoryItem>,
    seed: u64,
    budget: SamplingBudget,
    config: EvalConfig,
}

impl Session {
    pub fn new(world: WorldModel, seed: u64, budget: SamplingBudget) -> Self {
        Session { world, extensions: Vec::new(), conditions: Vec::new(), history: Vec::new(), seed, budget, config: EvalConfig::default() }
    }

    pub fn world(&self) -> &WorldModel {
        &self.world
    }

    pub fn extensions(&self) -> &[SExpr] {
        &self.extensions
    }

    pub fn conditions(&self) -> &[SExpr] {
        &self.conditions
    }

    pub fn history(&self) -> &[HistoryItem] {
        &self.history
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn budget(&self) -> SamplingBudget {
        self.budget
    }

    pub fn set_budget(&mut self, budget: SamplingBudget) {
        self.budget = budget;
    }

    pub fn eval_config(&self) -> EvalConfig {
        self.config
    }

    pub fn record(&mut self, tag: Tag, text: &str, code: &str) {
        self.history.push(HistoryItem { tag, text: text.to_string(), code: code.to_string() });
    }

    /// World forms followed by the accepted definitions.
    pub fn model_forms(&self) -> Vec<SExpr> {
        let mut forms = self.world.forms();
        forms.extend(self.extensions.iter().cloned());
        forms
    }

    /// The program a query at this point samples from.
    pub fn program(&self, query: Option<SExpr>) -> Program {
        Program { model: self.model_forms(), conditions: self.conditions.clone(), query }
    }

    /// Whether `name` resolves without any further definitions.
    pub fn is_bound(&self, name: &str) -> bool {
        crate::builtins::is_builtin(name)
            || SPECIAL_FORMS.contains(&name)
            || self.world.forms().iter().chain(&self.extensions).any(|f| defined_name(f) == Some(name))
    }

    /// Free symbols of `forms` against the session environment.
    pub fn unbound_in(&self, forms: &[SExpr]) -> Vec<String> {
        let defined: Vec<String> = self.world.forms().iter().chain(&self.extensions).filter_map(defined_name).map(ToString::to_string).collect();
        let bound = |name: &str| crate::builtins::is_builtin(name) || SPECIAL_FORMS.contains(&name) || defined.iter().any(|d| d == name);
        free_symbols(forms, &bound)
    }

    fn check_bound(&self, forms: &[SExpr]) -> Result<(), SessionError> {
        let names = self.unbound_in(forms);
        if names.is_empty() {
            Ok(())
        } else {
            Err(SessionError::Unbound { names })
        }
    }

    /// Evaluates the model plus `defines`, then `conditions` and `query`,
    /// in up to [`DRY_RUN_WORLDS`] worlds. Condition values are ignored;
    /// only evaluation errors count.
    pub fn dry_run(&self, defines: &[SExpr], conditions: &[SExpr], query: Option<&SExpr>) -> Result<(), SessionError> {
        let mut model = self.model_forms();
        model.extend(defines.iter().cloned());
        let program = Program { model, conditions: conditions.to_vec(), query: query.cloned() };
        let mut sampler = Sampler::new(&program, self.config).map_err(SessionError::DryRun)?;
        let mut first_error = None;
        for i in 0..DRY_RUN_WORLDS {
            let seed = derive_chain_seed(self.seed, DRY_RUN_CHAIN, i);
            let result = sampler.load_world(seed).and_then(|_| {
                for c in 0..conditions.len() {
                    sampler.check_condition(c)?;
                }
                sampler.eval_query().map(|_| ())
            });
            match result {
                Ok(()) => return Ok(()),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        Err(SessionError::DryRun(first_error.expect("at least one dry-run world")))
    }

    /// Appends a condition body after checking that it resolves and
    /// evaluates. Runs no inference.
    pub fn add_condition(&mut self, body: SExpr) -> Result<(), SessionError> {
        self.check_bound(core::slice::from_ref(&body))?;
        self.dry_run(&[], core::slice::from_ref(&body), None)?;
        self.conditions.push(body);
        Ok(())
    }

    /// Appends `define` forms; later conditions and queries may use them.
    pub fn add_definition(&mut self, forms: Vec<SExpr>) -> Result<Vec<String>, SessionError> {
        let mut names = Vec::with_capacity(forms.len());
        for f in &forms {
            match defined_name(f) {
                Some(n) => names.push(n.to_string()),
                None => return Err(SessionError::WrongForm { expected: "a (define ...) form", found: print(f) }),
            }
        }
        self.check_bound(&forms)?;
        self.dry_run(&forms, &[], None)?;
        self.extensions.extend(forms);
        Ok(names)
    }

    /// Checks a query body without sampling.
    pub fn check_query(&self, body: &SExpr) -> Result<(), SessionError> {
        self.check_bound(core::slice::from_ref(body))?;
        self.dry_run(&[], &[], Some(body))
    }

    /// Sequential inference for `body` against everything accepted so far.
    pub fn run_query(&self, body: SExpr) -> Result<(PosteriorSamples, PosteriorSummary), SessionError> {
        self.check_query(&body)?;
        let samples = rejection_sample(&self.program(Some(body)), &self.budget, self.seed, self.config)?;
        let summary = summarize(&samples).expect("inference returns at least one sample");
        Ok((samples, summary))
    }

    /// Installs the forms of a validated translation for `tag`. Either all
    /// forms are installed or none are.
    pub fn commit(&mut self, tag: Tag, forms: &[SExpr]) -> Result<Committed, SessionError> {
        let shape = split_forms(tag, forms)?;
        match shape {
            FormShape::Query(body) => {
                self.check_query(&body)?;
                Ok(Committed::Query(body))
            }
            FormShape::Program { defines, conditions } => {
                let mut next = self.clone();
                let names = if defines.is_empty() { Vec::new() } else { next.add_definition(defines)? };
                let n = conditions.len();
                for c in conditions {
                    next.add_condition(c)?;
                }
                *self = next;
                if tag == Tag::Condition {
                    Ok(Committed::Conditions(n))
                } else {
                    Ok(Committed::Definitions { names, conditions: n })
                }
            }
        }
    }
}

/// Forms of a translation, split by role.
#[derive(Clone, Debug, PartialEq)]
pub enum FormShape {
    Program { defines: Vec<SExpr>, conditions: Vec<SExpr> },
    Query(SExpr),
}

fn wrapped_body<'e>(form: &'e SExpr, head: &str) -> Option<&'e SExpr> {
    let items = form.as_list()?;
    (items.len() == 2 && form.is_form(head)).then(|| &items[1])
}

/// Checks that `forms` agree with `tag` and strips the `condition` and
/// `query` wrappers.
///
/// Condition: one or more `(condition e)`. Query: exactly one `(query e)`.
/// Define: one or more defines, optionally followed by conditions.
/// Construct: defines only.
pub fn split_forms(tag: Tag, forms: &[SExpr]) -> Result<FormShape, SessionError> {
    let wrong = |expected, f: &SExpr| SessionError::WrongForm { expected, found: print(f) };
    if forms.is_empty() {
        return Err(SessionError::WrongForm { expected: "at least one form", found: String::new() });
    }
    match tag {
        Tag::Condition => {
            let mut conditions = Vec::new();
            for f in forms {
                conditions.push(wrapped_body(f, "condition").ok_or_else(|| wrong("(condition <expr>)", f))?.clone());
            }
            Ok(FormShape::Program { defines: Vec::new(), conditions })
        }
        Tag::Query => {
            if forms.len() != 1 {
                return Err(wrong("exactly one (query <expr>)", &forms[1]));
            }
            Ok(FormShape::Query(wrapped_body(&forms[0], "query").ok_or_else(|| wrong("(query <expr>)", &forms[0]))?.clone()))
        }
        Tag::Define | Tag::ConstructFragment => {
            let mut defines = Vec::new();
            let mut conditions = Vec::new();
            for f in forms {
                if defined_name(f).is_some() && conditions.is_empty() {
                    defines.push(f.clone());
                } else if tag == Tag::Define && !defines.is_empty() {
                    conditions.push(wrapped_body(f, "condition").ok_or_else(|| wrong("(define ...) or a trailing (condition <expr>)", f))?.clone());
                } else {
                    return Err(wrong("(define ...)", f));
                }
            }
            Ok(FormShape::Program { defines, conditions })
        }
    }
}
