use std::collections::VecDeque;

use rand::Rng;

use crate::envs::Episode;
use crate::rng::SeedRng;

/// Ring buffer of whole episodes.
#[derive(Debug, Clone)]
pub struct EpisodeBuffer<A = Vec<usize>> {
    capacity: usize,
    episodes: VecDeque<Episode<A>>,
}

impl<A> EpisodeBuffer<A> {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), episodes: VecDeque::with_capacity(capacity.clamp(1, 4096)) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: Episode<A>) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode<A>> {
        self.episodes.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, rng: &mut SeedRng) -> Vec<&Episode<A>> {
        if self.episodes.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.episodes[rng.random_range(0..self.episodes.len())]).collect()
    }

    /// Up to `n` most recent episodes generated by `version`, newest last.
    pub fn current(&self, version: u64, n: usize) -> Vec<&Episode<A>> {
        let mut out: Vec<&Episode<A>> = self.episodes.iter().rev().filter(|e| e.policy_version == version).take(n).collect();
        out.reverse();
        out
    }

    pub fn clear(&mut self) {
        self.episodes.clear();
    }
}
