//! Core of the mentalese toolkit: a Church-style probabilistic language,
//! rejection-sampling inference over it, translation of tagged natural
//! language into program text, and the bundled world models.
//!
//! The crate is `no_std` with `alloc`; file IO, threads, HTTP and the CLI
//! live in the companion `mentalese` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod builtins;
pub mod eval;
pub mod infer;
pub mod meaning;
pub mod render;
pub mod scope;
pub mod session;
pub mod sexpr;
pub mod value;
pub mod worlds;

pub use eval::{EvalError, Evaluator};
pub use sexpr::{parse, ParseError, SExpr, SourceUnit, Span, Tag};
pub use value::{Datum, Value};

/// Errors from parsing or evaluating a piece of program text.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("evaluation error: {0}")]
    Eval(#[from] EvalError),
}
