//! File formats, experiment driver and verification front end for `optgail-core`.

pub mod commands;
pub mod config;
pub mod format;
pub mod report;
pub mod verify;
