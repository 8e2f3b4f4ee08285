//! Library half of the command-line driver, shared with its tests.

pub mod commands;
pub mod config;
