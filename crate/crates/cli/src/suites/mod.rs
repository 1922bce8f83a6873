//! Acceptance suites: each criterion runs end to end and reports its measured
//! value against a pinned threshold.

mod continuous;
mod improvement;
mod matrix;
mod oracles;

use std::fmt;
use std::time::{Duration, Instant};

use clap::ValueEnum;
use dop::Result;

pub use continuous::{aggregation_study, continuous_config, criterion_8, criterion_9, mill_study, AggregationStudy, MillStudy};
pub use improvement::{criterion_3, criterion_4};
pub use matrix::{criterion_5, matrix_config, matrix_game_study, MatrixGameStudy};
pub use oracles::{criterion_1, criterion_10, criterion_11, criterion_2, criterion_6, criterion_7};

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Check {
    pub id: u8,
    pub name: &'static str,
    pub measured: String,
    pub threshold: String,
    pub pass: bool,
    pub elapsed: Duration,
}

impl Check {
    fn new(id: u8, name: &'static str, measured: String, threshold: impl Into<String>, pass: bool, start: Instant) -> Self {
        Self { id, name, measured, threshold: threshold.into(), pass, elapsed: start.elapsed() }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} C{:<2} {:<34} {} | need {} [{:.1}s]",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured,
            self.threshold,
            self.elapsed.as_secs_f64()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Decomposition, complexity, tree-backup, gradient, scaling and determinism checks.
    Oracles,
    /// Order preservation and one-step policy improvement on tabular instances.
    Improvement,
    #[value(name = "matrix_game")]
    MatrixGame,
    Aggregation,
    Mill,
    All,
}

impl Suite {
    pub fn criteria(self) -> &'static [u8] {
        match self {
            Suite::Oracles => &[1, 2, 6, 7, 10, 11],
            Suite::Improvement => &[3, 4],
            Suite::MatrixGame => &[5],
            Suite::Aggregation => &[8],
            Suite::Mill => &[9],
            Suite::All => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11],
        }
    }
}

pub fn run_criterion(id: u8) -> Result<Check> {
    match id {
        1 => criterion_1(),
        2 => criterion_2(),
        3 => criterion_3(),
        4 => criterion_4(),
        5 => criterion_5(),
        6 => criterion_6(),
        7 => criterion_7(),
        8 => criterion_8(),
        9 => criterion_9(),
        10 => criterion_10(),
        11 => criterion_11(),
        _ => Err(dop::DopError::Input(format!("no criterion {id}"))),
    }
}

/// Runs every criterion of `suite`, printing each line as it finishes.
/// An error inside a criterion is reported as a failure of that criterion.
pub fn run_suite(suite: Suite, mut report: impl FnMut(&Check)) -> Vec<Check> {
    let mut out = Vec::new();
    for &id in suite.criteria() {
        let start = Instant::now();
        let check = run_criterion(id).unwrap_or_else(|e| Check::new(id, "error", e.to_string(), "no error", false, start));
        report(&check);
        out.push(check);
    }
    out
}

fn sci(x: f64) -> String {
    format!("{x:.2e}")
}
