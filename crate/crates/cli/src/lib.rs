//! Experiment orchestration for the selfcol pipeline: configuration, the
//! per-seed method comparison, evaluation, reports and the command line.

pub mod app;
pub mod config;
pub mod eval;
pub mod pipeline;
pub mod report;
pub mod selftest;
pub mod svg;
