//! Bounded FIFO replay with uniform sampling.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Assignment;
use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub assignment: Assignment,
    /// Squashed actor sample, before decoding and projection.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub terminal: bool,
}

/// A sampled minibatch in the learner's scalar type.
#[derive(Debug, Clone)]
pub struct Batch<T: Real> {
    pub observations: Array2<T>,
    pub assignments: Vec<Assignment>,
    pub actions: Array2<T>,
    pub rewards: Vec<T>,
    pub next_observations: Array2<T>,
    pub terminals: Vec<bool>,
}

impl<T: Real> Batch<T> {
    pub fn from_transitions(ts: &[&Transition]) -> Self {
        assert!(!ts.is_empty(), "empty batch");
        let rows = |f: &dyn Fn(&Transition) -> &[f64]| {
            let w = f(ts[0]).len();
            Array2::from_shape_fn((ts.len(), w), |(i, j)| T::lit(f(ts[i])[j]))
        };
        Self {
            observations: rows(&|t| &t.observation),
            assignments: ts.iter().map(|t| t.assignment.clone()).collect(),
            actions: rows(&|t| &t.action),
            rewards: ts.iter().map(|t| T::lit(t.reward)).collect(),
            next_observations: rows(&|t| &t.next_observation),
            terminals: ts.iter().map(|t| t.terminal).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::new(), next: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Overwrites the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Uniform sample with replacement; `None` until `batch_size` items are stored.
    pub fn sample<T: Real, R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Batch<T>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return None;
        }
        let picks: Vec<&Transition> = (0..batch_size).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect();
        Some(Batch::from_transitions(&picks))
    }
}
