//! Rejection sampling.
//!
//! Attempts are grouped into fixed-size blocks. Attempt `i` of block `b`
//! runs in a world seeded with `derive_chain_seed(master, b, i)`, and block
//! results are merged strictly in block order, so the accepted sample set
//! depends only on the master seed and the budget, never on how blocks were
//! scheduled across threads.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{EvalConfig, EvalError, Evaluator, Expr};
use crate::sexpr::{print, SExpr, SExprKind};
use crate::value::{Datum, Value};

/// Attempts per scheduling block.
pub const BLOCK_SIZE: u32 = 1024;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// World seed for attempt `attempt` of chain (block) `chain`.
///
/// `mix64` is a bijection, so for a fixed master seed distinct
/// `(chain, attempt)` pairs always give distinct seeds.
pub fn derive_chain_seed(master: u64, chain: u32, attempt: u32) -> u64 {
    let index = ((chain as u64) << 32) | attempt as u64;
    mix64(master ^ mix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingBudget {
    pub target_accepted: usize,
    pub max_attempts: u64,
    /// Worker threads for parallel sampling; `None` means one per core.
    /// Results never depend on this value.
    #[serde(skip)]
    pub parallel_chains: Option<usize>,
}

impl Default for SamplingBudget {
    fn default() -> Self {
        SamplingBudget { target_accepted: 1000, max_attempts: 1_000_000, parallel_chains: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BudgetError {
    #[error("target_accepted must be at least 1")]
    ZeroTarget,
    #[error("max_attempts ({max_attempts}) must be at least target_accepted ({target_accepted})")]
    AttemptsBelowTarget { target_accepted: usize, max_attempts: u64 },
}

impl SamplingBudget {
    pub fn new(target_accepted: usize, max_attempts: u64) -> Self {
        SamplingBudget { target_accepted, max_attempts, parallel_chains: None }
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        if self.target_accepted == 0 {
            return Err(BudgetError::ZeroTarget);
        }
        if self.max_attempts < self.target_accepted as u64 {
            return Err(BudgetError::AttemptsBelowTarget { target_accepted: self.target_accepted, max_attempts: self.max_attempts });
        }
        Ok(())
    }

    pub fn block_count(&self) -> u64 {
        self.max_attempts.div_ceil(BLOCK_SIZE as u64)
    }
}

/// The syntax needed to sample: model forms (defines and any other top-level
/// forms), condition bodies, and an optional query body. Cheap to clone and
/// `Send`, so each worker can compile its own [`Sampler`].
#[derive(Clone, Debug, Default)]
pub struct Program {
    pub model: Vec<SExpr>,
    pub conditions: Vec<SExpr>,
    pub query: Option<SExpr>,
}

/// Where in a world an evaluation error happened.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "kebab-case")]
pub enum Stage {
    Model { form: usize },
    Condition { index: usize },
    Query,
}

impl core::fmt::Display for Stage {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Stage::Model { form } => write!(f, "model form {}", form),
            Stage::Condition { index } => write!(f, "condition {}", index),
            Stage::Query => f.write_str("query"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("{stage}: {error}")]
pub struct StagedError {
    pub stage: Stage,
    pub error: EvalError,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Accepted { value: Datum, non_boolean_conditions: u32 },
    /// Index of the first condition that evaluated to false.
    Rejected(usize),
}

/// A compiled [`Program`] bound to one evaluator.
pub struct Sampler {
    ev: Evaluator,
    model: Vec<Expr>,
    conditions: Vec<Expr>,
    query: Option<Expr>,
}

impl Sampler {
    pub fn new(program: &Program, config: EvalConfig) -> Result<Self, StagedError> {
        let mut ev = Evaluator::new(config);
        let model = compile_all(&mut ev, &program.model, |form| Stage::Model { form })?;
        let conditions = compile_all(&mut ev, &program.conditions, |index| Stage::Condition { index })?;
        let query = match &program.query {
            Some(q) => Some(ev.compile(q).map_err(|error| StagedError { stage: Stage::Query, error })?),
            None => None,
        };
        Ok(Sampler { ev, model, conditions, query })
    }

    pub fn evaluator(&mut self) -> &mut Evaluator {
        &mut self.ev
    }

    pub fn condition_count(&self) -> usize {
        self.conditions.len()
    }

    /// Resets to a fresh world and evaluates the model forms.
    pub fn load_world(&mut self, seed: u64) -> Result<(), StagedError> {
        self.ev.reset(seed);
        for (form, expr) in self.model.iter().enumerate() {
            self.ev.eval(expr, &None).map_err(|error| StagedError { stage: Stage::Model { form }, error })?;
        }
        Ok(())
    }

    /// Evaluates condition `index` in the current world.
    pub fn check_condition(&mut self, index: usize) -> Result<Value, StagedError> {
        self.ev.eval(&self.conditions[index], &None).map_err(|error| StagedError { stage: Stage::Condition { index }, error })
    }

    /// Evaluates the query in the current world.
    pub fn eval_query(&mut self) -> Result<Datum, StagedError> {
        match &self.query {
            Some(q) => {
                let v = self.ev.eval(q, &None).map_err(|error| StagedError { stage: Stage::Query, error })?;
                Ok(self.ev.to_datum(&v))
            }
            None => Ok(Datum::Nil),
        }
    }

    /// Evaluates arbitrary syntax in the current world.
    pub fn eval_in_world(&mut self, expr: &SExpr) -> Result<Datum, EvalError> {
        let v = self.ev.eval_toplevel(expr)?;
        Ok(self.ev.to_datum(&v))
    }

    /// One rejection-sampling attempt in a world with the given seed.
    pub fn attempt(&mut self, seed: u64) -> Result<Outcome, StagedError> {
        self.load_world(seed)?;
        let mut non_boolean_conditions = 0;
        for index in 0..self.conditions.len() {
            let v = self.check_condition(index)?;
            match v {
                Value::Bool(false) => return Ok(Outcome::Rejected(index)),
                Value::Bool(true) => {}
                _ => non_boolean_conditions += 1,
            }
        }
        let value = self.eval_query()?;
        Ok(Outcome::Accepted { value, non_boolean_conditions })
    }

    /// Runs every attempt of one block, stopping early at the first error.
    pub fn run_block(&mut self, master: u64, block: u32, budget: &SamplingBudget) -> BlockResult {
        let start = block as u64 * BLOCK_SIZE as u64;
        let end = (start + BLOCK_SIZE as u64).min(budget.max_attempts);
        let mut outcomes = Vec::with_capacity(end.saturating_sub(start) as usize);
        let mut error = None;
        for attempt in 0..end.saturating_sub(start) as u32 {
            match self.attempt(derive_chain_seed(master, block, attempt)) {
                Ok(o) => outcomes.push(o),
                Err(e) => {
                    error = Some(e);
                    break;
                }
            }
        }
        BlockResult { block, outcomes, error }
    }
}

fn compile_all(ev: &mut Evaluator, forms: &[SExpr], stage: impl Fn(usize) -> Stage) -> Result<Vec<Expr>, StagedError> {
    forms.iter().enumerate().map(|(i, f)| ev.compile(f).map_err(|error| StagedError { stage: stage(i), error })).collect()
}

pub struct BlockResult {
    pub block: u32,
    pub outcomes: Vec<Outcome>,
    /// Error raised by the attempt right after the last outcome.
    pub error: Option<StagedError>,
}

/// Consumes block results in block order and stops exactly at the target.
pub struct Merger {
    budget: SamplingBudget,
    next_block: u32,
    values: Vec<Datum>,
    attempts: u64,
    condition_checks: Vec<u64>,
    first_failures: Vec<u64>,
    non_boolean_conditions: u64,
    error: Option<StagedError>,
}

impl Merger {
    pub fn new(budget: SamplingBudget, condition_count: usize) -> Self {
        Merger {
            budget,
            next_block: 0,
            values: Vec::new(),
            attempts: 0,
            condition_checks: vec![0; condition_count],
            first_failures: vec![0; condition_count],
            non_boolean_conditions: 0,
            error: None,
        }
    }

    pub fn next_block(&self) -> u32 {
        self.next_block
    }

    pub fn accepted(&self) -> usize {
        self.values.len()
    }

    pub fn is_done(&self) -> bool {
        self.error.is_some() || self.values.len() >= self.budget.target_accepted || self.attempts >= self.budget.max_attempts
    }

    /// Folds in the next block. Panics if blocks arrive out of order.
    pub fn push(&mut self, result: BlockResult) {
        assert_eq!(result.block, self.next_block, "blocks must be merged in order");
        self.next_block += 1;
        for outcome in result.outcomes {
            if self.is_done() {
                return;
            }
            self.attempts += 1;
            match outcome {
                Outcome::Accepted { value, non_boolean_conditions } => {
                    for c in self.condition_checks.iter_mut() {
                        *c += 1;
                    }
                    self.non_boolean_conditions += non_boolean_conditions as u64;
                    self.values.push(value);
                }
                Outcome::Rejected(k) => {
                    for c in &mut self.condition_checks[..=k] {
                        *c += 1;
                    }
                    self.first_failures[k] += 1;
                }
            }
        }
        if !self.is_done() {
            self.error = result.error;
        }
    }

    pub fn finish(self, program: &Program, seed: u64) -> Result<PosteriorSamples, InferenceError> {
        if let Some(e) = self.error {
            return Err(InferenceError::Evaluation(e));
        }
        if self.values.is_empty() {
            let conditions = program.conditions.iter().map(print).collect::<Vec<_>>();
            let suspects = continuous_equality_suspects(&program.model, &program.conditions);
            return Err(InferenceError::ZeroAcceptance(ZeroAcceptance {
                attempts: self.attempts,
                conditions,
                first_failures: self.first_failures,
                continuous_equality: suspects,
            }));
        }
        Ok(PosteriorSamples {
            query: program.query.as_ref().map(print).unwrap_or_default(),
            accepted: self.values.len(),
            values: self.values,
            attempts: self.attempts,
            seed,
            condition_checks: self.condition_checks,
            first_failures: self.first_failures,
            non_boolean_conditions: self.non_boolean_conditions,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub query: String,
    pub values: Vec<Datum>,
    pub attempts: u64,
    pub accepted: usize,
    pub seed: u64,
    /// How many times each condition was evaluated.
    pub condition_checks: Vec<u64>,
    /// How many attempts each condition was the first to reject.
    pub first_failures: Vec<u64>,
    /// Condition evaluations in accepted worlds that returned a non-boolean.
    pub non_boolean_conditions: u64,
}

impl PosteriorSamples {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.attempts as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroAcceptance {
    pub attempts: u64,
    pub conditions: Vec<String>,
    pub first_failures: Vec<u64>,
    /// Conditions that test numeric equality on continuous random values.
    pub continuous_equality: Vec<String>,
}

impl core::fmt::Display for ZeroAcceptance {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "no world satisfied the conditions in {} attempts", self.attempts)?;
        for (cond, n) in self.conditions.iter().zip(&self.first_failures) {
            write!(f, "; {} rejected {}", cond, n)?;
        }
        if !self.continuous_equality.is_empty() {
            write!(f, "; equality on a continuous quantity has probability zero: {}", self.continuous_equality.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum InferenceError {
    #[error("{0}")]
    ZeroAcceptance(ZeroAcceptance),
    #[error("evaluation failed in {0}")]
    Evaluation(StagedError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

/// Sequential rejection sampling on the calling thread.
pub fn rejection_sample(program: &Program, budget: &SamplingBudget, seed: u64, config: EvalConfig) -> Result<PosteriorSamples, InferenceError> {
    budget.validate()?;
    let mut sampler = Sampler::new(program, config).map_err(InferenceError::Evaluation)?;
    let mut merger = Merger::new(*budget, sampler.condition_count());
    while !merger.is_done() {
        let block = merger.next_block();
        merger.push(sampler.run_block(seed, block, budget));
    }
    merger.finish(program, seed)
}

const CONTINUOUS: &[&str] = &["gaussian", "normal", "uniform", "exponential"];

/// Conditions containing `(= ...)` over something that can draw a
/// continuous value: a continuous primitive directly, or a name whose
/// model definition calls one.
pub fn continuous_equality_suspects(model: &[SExpr], conditions: &[SExpr]) -> Vec<String> {
    let mut continuous: Vec<&str> = CONTINUOUS.to_vec();
    for form in model {
        if let Some(name) = defined_name(form) {
            if mentions_any(form, CONTINUOUS) {
                continuous.push(name);
            }
        }
    }
    let mut out = Vec::new();
    for cond in conditions {
        if has_continuous_equality(cond, &continuous) {
            out.push(print(cond));
        }
    }
    out
}

/// Name bound by a top-level `define`, if `form` is one.
pub fn defined_name(form: &SExpr) -> Option<&str> {
    let items = form.as_list()?;
    if items.first()?.as_symbol()? != "define" {
        return None;
    }
    match &items.get(1)?.kind {
        SExprKind::Symbol(s) => Some(s),
        SExprKind::List(sig) => sig.first()?.as_symbol(),
        _ => None,
    }
}

fn mentions_any(expr: &SExpr, names: &[&str]) -> bool {
    match &expr.kind {
        SExprKind::Symbol(s) => names.contains(&s.as_str()),
        SExprKind::List(items) => {
            if expr.is_form("quote") {
                return false;
            }
            items.iter().any(|i| mentions_any(i, names))
        }
        _ => false,
    }
}

fn has_continuous_equality(expr: &SExpr, continuous: &[&str]) -> bool {
    let SExprKind::List(items) = &expr.kind else {
        return false;
    };
    if expr.is_form("quote") {
        return false;
    }
    if expr.is_form("=") && items[1..].iter().any(|a| mentions_any(a, continuous)) {
        return true;
    }
    items.iter().any(|i| has_continuous_equality(i, continuous))
}

// -------------------------------------------------------------------
// summaries
// -------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges; the last bin includes its
    /// upper edge.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SummaryKind {
    BooleanProbability { p: f64, stderr: f64 },
    Numeric { mean: f64, stdev: f64, histogram: Histogram },
    /// Proportion per symbol, most frequent first.
    Categorical { frequencies: Vec<(String, f64)> },
    /// Count per printed value, most frequent first.
    Generic { counts: Vec<(String, u64)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    #[serde(flatten)]
    pub kind: SummaryKind,
    pub acceptance_rate: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("cannot summarize an empty sample set")]
pub struct EmptySamples;

/// Bin count for `n` numeric values: `ceil(sqrt(n))` clamped to [10, 40].
pub fn histogram_bins(n: usize) -> usize {
    (libm::ceil(libm::sqrt(n as f64)) as usize).clamp(10, 40)
}

pub fn histogram(values: &[f64]) -> Histogram {
    let bins = histogram_bins(values.len());
    let (mut lo, mut hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram { edges, counts }
}

fn ranked_counts(values: &[Datum]) -> Vec<(String, u64)> {
    let mut counts: Vec<(String, u64)> = Vec::new();
    for v in values {
        let key = v.to_string();
        match counts.iter_mut().find(|(k, _)| *k == key) {
            Some((_, c)) => *c += 1,
            None => counts.push((key, 1)),
        }
    }
    // Stable sort keeps first-appearance order among equal counts.
    counts.sort_by(|a, b| b.1.cmp(&a.1));
    counts
}

pub fn summarize(samples: &PosteriorSamples) -> Result<PosteriorSummary, EmptySamples> {
    summarize_values(&samples.values, samples.acceptance_rate())
}

pub fn summarize_values(values: &[Datum], acceptance_rate: f64) -> Result<PosteriorSummary, EmptySamples> {
    let n = values.len();
    if n == 0 {
        return Err(EmptySamples);
    }
    let kind = if values.iter().all(|v| matches!(v, Datum::Bool(_))) {
        let hits = values.iter().filter(|v| matches!(v, Datum::Bool(true))).count();
        let p = hits as f64 / n as f64;
        SummaryKind::BooleanProbability { p, stderr: libm::sqrt(p * (1.0 - p) / n as f64) }
    } else if values.iter().all(|v| matches!(v, Datum::Number(_))) {
        let xs: Vec<f64> = values.iter().filter_map(Datum::as_number).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        SummaryKind::Numeric { mean, stdev: libm::sqrt(var), histogram: histogram(&xs) }
    } else if values.iter().all(|v| matches!(v, Datum::Symbol(_))) {
        let frequencies = ranked_counts(values).into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect();
        SummaryKind::Categorical { frequencies }
    } else {
        SummaryKind::Generic { counts: ranked_counts(values) }
    };
    Ok(PosteriorSummary { kind, acceptance_rate, n })
}

impl PosteriorSummary {
    pub fn probability(&self) -> Option<f64> {
        match self.kind {
            SummaryKind::BooleanProbability { p, .. } => Some(p),
            _ => None,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match self.kind {
            SummaryKind::Numeric { mean, .. } => Some(mean),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            SummaryKind::BooleanProbability { .. } => "boolean-probability",
            SummaryKind::Numeric { .. } => "numeric",
            SummaryKind::Categorical { .. } => "categorical",
            SummaryKind::Generic { .. } => "generic",
        }
    }

    /// Multi-line plain-text rendering with bar charts.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let bar = |frac: f64| "#".repeat(libm::round(frac * 40.0) as usize);
        match &self.kind {
            SummaryKind::BooleanProbability { p, stderr } => {
                out.push_str(&format!("P(true) = {:.4} +/- {:.4}\n", p, stderr));
                out.push_str(&format!("  true  {}\n  false {}\n", bar(*p), bar(1.0 - p)));
            }
            SummaryKind::Numeric { mean, stdev, histogram } => {
                out.push_str(&format!("mean = {:.4}, stdev = {:.4}\n", mean, stdev));
                let max = histogram.counts.iter().copied().max().unwrap_or(1).max(1);
                for (i, c) in histogram.counts.iter().enumerate() {
                    out.push_str(&format!("  [{:>9.3}, {:>9.3}) {:>6} {}\n", histogram.edges[i], histogram.edges[i + 1], c, bar(*c as f64 / max as f64)));
                }
            }
            SummaryKind::Categorical { frequencies } => {
                for (k, p) in frequencies {
                    out.push_str(&format!("  {:<20} {:.4} {}\n", k, p, bar(*p)));
                }
            }
            SummaryKind::Generic { counts } => {
                for (k, c) in counts {
                    out.push_str(&format!("  {:>6}  {}\n", c, k));
                }
            }
        }
        out.push_str(&format!("n = {}, acceptance rate = {:.4}\n", self.n, self.acceptance_rate));
        out
    }
}

impl Default for PosteriorSummary {
    fn default() -> Self {
        PosteriorSummary { kind: SummaryKind::Generic { counts: Vec::new() }, acceptance_rate: 0.0, n: 0 }
    }
}
