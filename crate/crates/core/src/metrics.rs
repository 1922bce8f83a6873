//! Per-period metric rows.

use serde::{Deserialize, Serialize};

/// One CSV row. Absent metrics serialize as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub seed: u64,
    pub step: u64,
    /// Return of the last training episode finished before this row.
    pub train_return: Option<f64>,
    pub eval_return: Option<f64>,
    pub loss_tb: Option<f64>,
    pub loss_on: Option<f64>,
    pub loss_td: Option<f64>,
    pub k_spread: Option<f64>,
    pub grad_variance: Option<f64>,
    pub bias: Option<f64>,
    /// Space-separated per-agent actions.
    pub argmax_actions: Option<String>,
    /// Seconds since the run started.
    pub wall_clock: Option<f64>,
}

pub const COLUMNS: [&str; 13] = [
    "run_id",
    "seed",
    "step",
    "train_return",
    "eval_return",
    "loss_tb",
    "loss_on",
    "loss_td",
    "k_spread",
    "grad_variance",
    "bias",
    "argmax_actions",
    "wall_clock",
];

impl MetricRecord {
    pub fn argmax(&self) -> Option<Vec<usize>> {
        self.argmax_actions.as_ref().map(|s| s.split_whitespace().filter_map(|x| x.parse().ok()).collect())
    }
}

pub fn format_actions(actions: &[usize]) -> String {
    actions.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_follow_field_order() {
        let rec = MetricRecord {
            run_id: "r".into(),
            seed: 0,
            step: 0,
            train_return: None,
            eval_return: None,
            loss_tb: None,
            loss_on: None,
            loss_td: None,
            k_spread: None,
            grad_variance: None,
            bias: None,
            argmax_actions: Some(format_actions(&[1, 5, 9])),
            wall_clock: None,
        };
        let v = serde_json::to_value(&rec).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut sorted = COLUMNS.to_vec();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
        assert_eq!(rec.argmax(), Some(vec![1, 5, 9]));
    }
}
