//! Checkpoint records produced during training.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{ActivityReport, RankReport};

/// Diagnostics of one network snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    /// Number of updates applied so far.
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub rank: RankReport,
    pub activity: ActivityReport,
    pub weight_norm: f64,
    pub knn_error: Option<f64>,
}

impl CheckpointRecord {
    /// A record with only the step filled in.
    pub fn empty(step: usize) -> Self {
        Self {
            step,
            train_loss: f64::NAN,
            test_loss: f64::NAN,
            rank: RankReport::default(),
            activity: ActivityReport::default(),
            weight_norm: f64::NAN,
            knn_error: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Strictly increasing in `step`.
    pub records: Vec<CheckpointRecord>,
    /// Step at which parameters or loss became non-finite.
    pub diverged_at: Option<usize>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&CheckpointRecord> {
        self.records.last()
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}
