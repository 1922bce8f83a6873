//! Command-line front end: experiment runs and acceptance suites.

pub mod runner;
pub mod suites;
