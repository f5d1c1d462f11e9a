//! Pipeline driver behind the `trajplan` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod reference;
pub mod sweep;
