//! Temperature scheduler for diverse sample generation.
//!
//! Each draw picks a temperature by inverting the cumulative weight table
//! at an externally supplied uniform variate, halves the chosen weight, and
//! resets every weight to 1 once all seven temperatures have been used.

use serde::{Deserialize, Serialize};

pub const TEMPERATURES: [f64; 7] = [0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    weights: [f64; 7],
    used: [bool; 7],
    resets: u64,
}

impl Default for SchedulerState {
    fn default() -> Self {
        Self {
            weights: [1.0; 7],
            used: [false; 7],
            resets: 0,
        }
    }
}

impl SchedulerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn peek_weights(&self) -> [f64; 7] {
        self.weights
    }

    pub fn used(&self) -> [bool; 7] {
        self.used
    }

    /// Number of completed seven-temperature cycles.
    pub fn resets(&self) -> u64 {
        self.resets
    }

    /// Index chosen for `u` under the current weights.
    pub fn index_for(&self, u: f64) -> usize {
        let total: f64 = self.weights.iter().sum();
        let mut cumulative = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            cumulative += w;
            if cumulative / total > u {
                return i;
            }
        }
        self.weights.len() - 1
    }

    /// Pure transition: the chosen temperature and the successor state.
    pub fn next_temperature(&self, u: f64) -> (f64, SchedulerState) {
        let mut next = self.clone();
        let t = next.draw(u);
        (t, next)
    }

    /// In-place form of [`next_temperature`](Self::next_temperature).
    pub fn draw(&mut self, u: f64) -> f64 {
        debug_assert!((0.0..1.0).contains(&u), "u = {u} outside [0, 1)");
        let i = self.index_for(u.clamp(0.0, 1.0));
        self.weights[i] *= 0.5;
        self.used[i] = true;
        if self.used.iter().all(|u| *u) {
            self.weights = [1.0; 7];
            self.used = [false; 7];
            self.resets += 1;
        }
        TEMPERATURES[i]
    }
}
