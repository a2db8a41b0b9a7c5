//! Command-line pipeline around `holotele-core`: configuration, binary
//! stream formats, reports and the verification suite.

pub mod commands;
pub mod config;
pub mod formats;
pub mod reports;
pub mod runner;
pub mod verify;
