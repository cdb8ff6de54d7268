//! Command-line entry points and the HTTP session service.

pub mod commands;
pub mod config;
pub mod service;

pub use config::{Overrides, RunConfig};
