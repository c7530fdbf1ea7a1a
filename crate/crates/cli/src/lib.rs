//! Scenario runner for the weight-condition laboratory.

pub mod builtins;
pub mod gallery;
pub mod run;
pub mod scenario;

pub use run::{execute, run_and_write, Outcome, Row, RunOptions};
pub use scenario::{Diagnostic, Loaded, Scenario};
