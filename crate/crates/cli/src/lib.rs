//! Command-line front end and annotation service for `humal-core`.

pub mod commands;
pub mod config;
pub mod server;
