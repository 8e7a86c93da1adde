use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::safety_filter::ActionBox;

/// One executed transition. `s_next` must be the successor produced by
/// applying `u_safe`; `done` marks true termination (no bootstrapping).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    pub u_nom: Vec<f64>,
    pub u_safe: Vec<f64>,
    pub reward: f64,
    pub s_next: Vec<f64>,
    pub z_next: Vec<f64>,
    pub done: bool,
}

/// Ring buffer of executed transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<ReplayRecord>,
    next: usize,
    action_box: ActionBox,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, action_box: ActionBox) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, records: Vec::new(), next: 0, action_box }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, i: usize) -> &ReplayRecord {
        &self.records[i]
    }

    /// Inserts a record after checking that `applied_action`, the plant's
    /// echo of the action it integrated, is bitwise equal to `u_safe`.
    pub fn push(&mut self, record: ReplayRecord, applied_action: &[f64]) -> Result<(), AgentError> {
        let echoed = record.u_safe.len() == applied_action.len()
            && record.u_safe.iter().zip(applied_action).all(|(a, b)| a.to_bits() == b.to_bits());
        if !echoed {
            return Err(AgentError::OffTransition { stored: record.u_safe, applied: applied_action.to_vec() });
        }
        if !self.action_box.contains(&record.u_safe) {
            return Err(AgentError::InvalidRecord(format!("executed action {:?} outside the box", record.u_safe)));
        }
        if self.records.len() < self.capacity {
            self.records.push(record);
        } else {
            self.records[self.next] = record;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.records.is_empty(), "sampling from an empty buffer");
        (0..batch).map(|_| rng.random_range(0..self.records.len())).collect()
    }
}
