//! Experiment harness: configuration, experiment runners and report writers
//! behind the `mild-girsanov` binary.

pub mod config;
pub mod experiments;
pub mod report;
pub mod svg;
