use std::time::{Duration, Instant};

use dop::analysis::{improvement_sweep, order_preservation_sweep};
use dop::Result;

use super::{sci, Check};

pub const ORDER_INSTANCES: usize = 100;
pub const ORDER_BUDGET: Duration = Duration::from_secs(120);
pub const IMPROVEMENT_INSTANCES: usize = 50;
pub const IMPROVEMENT_DELTA: f64 = 1e-4;
pub const IMPROVEMENT_TOL: f64 = 1e-9;
pub const IMPROVEMENT_BUDGET: Duration = Duration::from_secs(300);

/// Local-value order of least-squares fits against exact local values.
pub fn criterion_3() -> Result<Check> {
    let start = Instant::now();
    let sweep = order_preservation_sweep(ORDER_INSTANCES, 0xC3)?;
    let elapsed = start.elapsed();
    Ok(Check::new(
        3,
        "order preservation",
        format!("{} violations in {} pairs over {} instances, {:.1}s", sweep.violations, sweep.pairs_checked, sweep.instances, elapsed.as_secs_f64()),
        format!("0 violations within {}s", ORDER_BUDGET.as_secs()),
        sweep.violations == 0 && elapsed < ORDER_BUDGET,
        start,
    ))
}

/// One small actor step after an exact critic fit, judged by exact evaluation.
pub fn criterion_4() -> Result<Check> {
    let start = Instant::now();
    let sweep = improvement_sweep(IMPROVEMENT_INSTANCES, 0xC4, IMPROVEMENT_DELTA, IMPROVEMENT_TOL)?;
    let elapsed = start.elapsed();
    Ok(Check::new(
        4,
        "one-step policy improvement",
        format!(
            "{} failures among {} monotone instances of {}; {} unguarded drops reported; min gain {}; {:.1}s",
            sweep.failures,
            sweep.monotone,
            sweep.instances,
            sweep.unguarded_drops,
            sci(sweep.min_gain),
            elapsed.as_secs_f64()
        ),
        format!("0 failures (J_new >= J_old - {}) within {}s", sci(IMPROVEMENT_TOL), IMPROVEMENT_BUDGET.as_secs()),
        sweep.failures == 0 && elapsed < IMPROVEMENT_BUDGET,
        start,
    ))
}
