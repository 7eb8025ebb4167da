//! Transition storage with episode boundaries.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

/// One real environment interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub obs: Vec<T>,
    pub action: Vec<T>,
    pub reward: T,
    pub next_obs: Vec<T>,
    pub terminated: bool,
    /// Episode cut by the step limit rather than a termination condition.
    pub truncated: bool,
    /// Log-density of `action` under the actor at collection time.
    pub behavior_log_prob: Option<T>,
}

impl<T: Scalar> Transition<T> {
    pub fn ends_episode(&self) -> bool {
        self.terminated || self.truncated
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.obs)
            && all_finite(&self.action)
            && all_finite(&self.next_obs)
            && self.reward.is_finite()
            && self.behavior_log_prob.map_or(true, |l| l.is_finite())
    }
}

/// A contiguous run of transitions from a single episode.
#[derive(Debug, Clone)]
pub struct Sequence<'a, T> {
    pub steps: Vec<&'a Transition<T>>,
    /// False for windows cut short by the end of their episode.
    pub full: bool,
}

/// Ring buffer of transitions; the oldest entries are evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    storage: VecDeque<Transition<T>>,
    capacity: usize,
    min_reward: Option<T>,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            storage: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            min_reward: None,
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Smallest reward ever stored.
    pub fn min_reward(&self) -> Option<T> {
        self.min_reward
    }

    pub fn iter(&self) -> std::collections::vec_deque::Iter<'_, Transition<T>> {
        self.storage.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Transition<T>> {
        self.storage.get(i)
    }

    /// Rejects transitions containing non-finite values.
    pub fn push(&mut self, t: Transition<T>) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::NonFinite("transition"));
        }
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.min_reward = Some(self.min_reward.map_or(t.reward, |m| m.min(t.reward)));
        self.storage.push_back(t);
        Ok(())
    }

    /// Uniformly sampled transitions, with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<&Transition<T>>> {
        if self.storage.is_empty() {
            return Err(Error::InsufficientData("replay buffer is empty".into()));
        }
        Ok((0..count)
            .map(|_| &self.storage[rng.gen_range(0..self.storage.len())])
            .collect())
    }

    /// The window of at most `n` steps starting at `start`, stopping at the end of its episode.
    pub fn window(&self, start: usize, n: usize) -> Sequence<'_, T> {
        let mut steps = Vec::with_capacity(n);
        let mut i = start;
        while steps.len() < n && i < self.storage.len() {
            let t = &self.storage[i];
            steps.push(t);
            if t.ends_episode() {
                break;
            }
            i += 1;
        }
        Sequence {
            full: steps.len() == n,
            steps,
        }
    }

    /// `count` windows of length `n` whose start is uniform over stored
    /// transitions; windows never cross an episode boundary.
    pub fn sample_sequences<R: Rng + ?Sized>(&self, count: usize, n: usize, rng: &mut R) -> Result<Vec<Sequence<'_, T>>> {
        if n == 0 {
            return Err(Error::InvalidConfig("sequence length must be >= 1".into()));
        }
        if self.storage.is_empty() {
            return Err(Error::InsufficientData("replay buffer is empty".into()));
        }
        Ok((0..count)
            .map(|_| self.window(rng.gen_range(0..self.storage.len()), n))
            .collect())
    }
}
