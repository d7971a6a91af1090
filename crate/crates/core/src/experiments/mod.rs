//! Reproducible experiment definitions built on the optimizers and
//! diagnostics: teacher-student ρ-sweeps, the step-decomposition battery for
//! two-layer ReLU networks, and the low-rank bottleneck ablation.

mod ablation;
mod prop1;
mod sweep;
mod teacher_student;

pub use ablation::{make_vector_teacher, run_bottleneck_ablation, AblationRow, AblationSpec, AblationSummary, AblationVariant};
pub use prop1::{run_prop1_battery, BatteryOptions, CheckOutcome, Prop1Fault, Prop1Report};
pub use sweep::{run_cell, run_sweep, SweepCell, SweepMedians, SweepResult, SweepSpec};
pub use teacher_student::{init_student, make_teacher_student, InputLaw, TeacherStudent, TeacherStudentSpec};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{active_units, feature_matrix, feature_rank, knn_error, weight_norm, ActivityMode, DEFAULT_THRESHOLDS};
use crate::error::Result;
use crate::log::CheckpointRecord;
use crate::nets::{dataset_loss, Dataset, Model};
use crate::optim::{Method, OptimConfig, SamConfig, Schedule};

/// What to measure at each checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub thresholds: Vec<f64>,
    /// Mean-center features before PCA.
    pub center: bool,
    pub activity: ActivityMode,
    /// `k` of the k-NN probe on sign-of-target labels; `None` disables it.
    pub knn_k: Option<usize>,
    /// Feature block to probe; `None` means the last block of the network.
    pub block: Option<usize>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            center: true,
            activity: ActivityMode::AnyNonzero,
            knn_k: Some(5),
            block: None,
        }
    }
}

/// Optimizer, schedule and diagnostics of a single training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub optim: OptimConfig,
    pub method: Method,
    pub sam: SamConfig,
    pub cadence: usize,
    pub diag: DiagnosticsConfig,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            optim: OptimConfig::default(),
            method: Method::Sam,
            sam: SamConfig::default(),
            cadence: 0,
            diag: DiagnosticsConfig::default(),
        }
    }
}

impl RunSettings {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            method: self.method,
            sam: self.sam.clone(),
            cadence: self.cadence,
        }
    }
}

/// Binary labels `1[y > 0]` from the first target coordinate.
pub fn sign_labels(data: &Dataset) -> Vec<usize> {
    (0..data.len())
        .map(|i| usize::from(data.target(i)[0] > 0.0))
        .collect()
}

/// Losses and feature diagnostics of `net` after `step` updates. Features
/// are measured on the training set.
pub fn checkpoint_record<M: Model>(
    step: usize,
    net: &M,
    train: &Dataset,
    test: &Dataset,
    diag: &DiagnosticsConfig,
) -> Result<CheckpointRecord> {
    let block = diag.block.unwrap_or(net.num_blocks() - 1);
    let features = feature_matrix(net, train, block)?;
    let knn = match diag.knn_k {
        Some(k) if k <= train.len() => {
            let test_features = feature_matrix(net, test, block)?;
            Some(knn_error(&features, &sign_labels(train), &test_features, &sign_labels(test), k)?)
        }
        _ => None,
    };
    Ok(CheckpointRecord {
        step,
        train_loss: dataset_loss(net, train)?,
        test_loss: dataset_loss(net, test)?,
        rank: feature_rank(&features, &diag.thresholds, diag.center)?,
        activity: active_units(&features, diag.activity),
        weight_norm: weight_norm(net),
        knn_error: knn,
    })
}

/// Median of the finite values; `NaN` when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}
