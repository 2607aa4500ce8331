//! Command-line pipeline and HTTP service around `fsearch-core`.

pub mod cli;
pub mod config;
pub mod service;
