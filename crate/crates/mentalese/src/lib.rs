//! Dialogue sessions over the bundled world models: parallel sampling,
//! translation backends, transcripts, the HTTP service and the CLI.

pub use mentalese_core as core;

pub mod backend;
pub mod dialogue;
pub mod parallel;
pub mod persist;
pub mod record;
pub mod service;
pub mod cli;
