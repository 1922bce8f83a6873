use std::collections::VecDeque;

use rand::Rng;

use crate::rng::SeedRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    /// Per-agent action vectors (relaxed one-hots for discrete baselines).
    pub actions: Vec<Vec<f64>>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_observations: Vec<Vec<f64>>,
    pub terminated: bool,
}

/// Ring buffer of the latest transitions.
#[derive(Debug, Clone)]
pub struct TransitionBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl TransitionBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut SeedRng) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn t(r: f64) -> Transition {
        Transition {
            state: vec![r],
            observations: vec![vec![r]],
            actions: vec![vec![0.0]],
            reward: r,
            next_state: vec![r],
            next_observations: vec![vec![r]],
            terminated: false,
        }
    }

    #[test]
    fn evicts_oldest() {
        let mut b = TransitionBuffer::new(3);
        for i in 0..5 {
            b.push(t(i as f64));
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = b.sample(200, &mut seeded(0)).iter().map(|x| x.reward).collect();
        assert!(rewards.iter().all(|&r| r >= 2.0));
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut b = TransitionBuffer::new(100);
        for i in 0..50 {
            b.push(t(i as f64));
        }
        let a: Vec<f64> = b.sample(20, &mut seeded(4)).iter().map(|x| x.reward).collect();
        let c: Vec<f64> = b.sample(20, &mut seeded(4)).iter().map(|x| x.reward).collect();
        assert_eq!(a, c);
        assert!(TransitionBuffer::new(4).sample(3, &mut seeded(0)).is_empty());
    }
}
