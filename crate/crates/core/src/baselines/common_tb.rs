//! Joint-action expectations for tree-backup targets.
//!
//! The decomposed mode reads `n |A|` local values. The sampled and exhaustive
//! modes treat the critic as an opaque joint function, which is the
//! "common tree backup" ablation.

use serde::{Deserialize, Serialize};

use crate::envs::{joint_count, joint_from_index};
use crate::rng::SeedRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpectationMode {
    #[default]
    Decomposed,
    /// Monte-Carlo average over joint actions drawn from the policies.
    Sampled { samples: usize },
    /// Sum over every joint action.
    Exhaustive,
}

/// Decomposed values at one state: `q[i][a]`, weights `k`, bias `b`.
#[derive(Debug, Clone, Copy)]
pub struct LocalTables<'a> {
    pub q: &'a [Vec<f64>],
    pub k: &'a [f64],
    pub b: f64,
}

impl LocalTables<'_> {
    fn joint_value(&self, joint: &[usize]) -> f64 {
        self.b + joint.iter().enumerate().map(|(i, &a)| self.k[i] * self.q[i][a]).sum::<f64>()
    }
}

/// `E_pi[Q_tot]` under `mode`, and the number of summation terms it took.
pub fn expectation(tables: LocalTables<'_>, policies: &[Vec<f64>], mode: ExpectationMode, rng: &mut SeedRng) -> (f64, usize) {
    let n = policies.len();
    match mode {
        ExpectationMode::Decomposed => {
            let mut total = tables.b;
            let mut terms = 0;
            for i in 0..n {
                let mut e = 0.0;
                for (p, q) in policies[i].iter().zip(&tables.q[i]) {
                    e += p * q;
                    terms += 1;
                }
                total += tables.k[i] * e;
            }
            (total, terms)
        }
        ExpectationMode::Sampled { samples } => {
            let samples = samples.max(1);
            let mut joint = vec![0; n];
            let mut total = 0.0;
            for _ in 0..samples {
                for (i, slot) in joint.iter_mut().enumerate() {
                    *slot = crate::stochastic::sample_categorical(&policies[i], rng);
                }
                total += tables.joint_value(&joint);
            }
            (total / samples as f64, samples)
        }
        ExpectationMode::Exhaustive => {
            let a = policies[0].len();
            let count = joint_count(n, a);
            let mut total = 0.0;
            for j in 0..count {
                let joint = joint_from_index(j, n, a);
                let p: f64 = joint.iter().enumerate().map(|(i, &x)| policies[i][x]).product();
                total += p * tables.joint_value(&joint);
            }
            (total, count)
        }
    }
}
