//! CSV ingestion, draw-file formats and the command implementations behind
//! the `ufts` binary.

pub mod commands;
pub mod config;
pub mod csvio;
