//! Library side of the `densopt` command: config parsing, artifact
//! handling and the pipeline commands.

pub mod artifacts;
pub mod commands;
pub mod config;
