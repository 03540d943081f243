//! Fixed-capacity FIFO of unit-norm key embeddings: the negative queues
//! Q_g and Q_l, one per subspace.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{FlagsError, Result};
use crate::numeric::Tensor;

/// Allowed deviation from unit norm for enqueued keys.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Global,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyQueue {
    capacity: usize,
    embed_dim: usize,
    branch: Branch,
    entries: VecDeque<Vec<f64>>,
}

impl KeyQueue {
    pub fn new(capacity: usize, embed_dim: usize, branch: Branch) -> Result<Self> {
        if capacity == 0 {
            return Err(FlagsError::Config("queue capacity must be positive".into()));
        }
        Ok(KeyQueue {
            capacity,
            embed_dim,
            branch,
            entries: VecDeque::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    /// Append keys in order, evicting oldest entries past capacity.
    /// Every key must be unit-norm and embed_dim long.
    pub fn enqueue_batch(&mut self, keys: &[Vec<f64>]) -> Result<()> {
        for key in keys {
            if key.len() != self.embed_dim {
                return Err(FlagsError::Dimension {
                    expected: format!("embed dim {}", self.embed_dim),
                    got: format!("{}", key.len()),
                });
            }
            let norm = key.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(FlagsError::Contract(format!(
                    "enqueued key has norm {norm:.9}, expected 1 within {UNIT_NORM_TOLERANCE:e}"
                )));
            }
        }
        for key in keys {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(key.clone());
        }
        Ok(())
    }

    /// Snapshot of the queue as a [len x embed_dim] matrix, oldest entry
    /// first. An empty queue yields a 0-row matrix.
    pub fn negatives_matrix(&self) -> Tensor {
        let mut values = Vec::with_capacity(self.entries.len() * self.embed_dim);
        for e in &self.entries {
            values.extend_from_slice(e);
        }
        Tensor {
            shape: vec![self.entries.len(), self.embed_dim],
            values,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.entries.iter()
    }
}
