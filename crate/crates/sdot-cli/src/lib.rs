//! Experiment harness around the transport core: JSON-configured
//! Monte-Carlo runs, a cached scaling-solver ground truth, the diagnostic
//! check suite, and normality post-processing of replicated runs.
//!
//! The binary (`sdot`) is a thin argument parser over these modules; they
//! are exposed as a library so integration tests can drive the same code
//! paths directly.

pub mod checks;
pub mod config;
pub mod normality;
pub mod runner;
pub mod truth;

use std::fmt;

/// An error in how the tool was invoked (malformed config, contradictory
/// flags) as opposed to a failure while running. The entry point maps
/// these to exit code 2; everything else exits 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// True when any link of an error chain is a [`UsageError`].
pub fn is_usage_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| cause.is::<UsageError>())
}
