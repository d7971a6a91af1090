//! Sharpness-aware minimization, first-order gradient-norm regularization and
//! feature-rank diagnostics for small fully-connected networks.
//!
//! The crate is organized bottom-up: [`linalg`] provides dense matrices and a
//! symmetric eigensolver, [`nets`] the two-layer network and a general MLP with
//! analytic gradients, [`optim`] the SGD/SAM/gradient-regularization steppers,
//! [`diagnostics`] the feature-rank and activity measures, [`experiments`] the
//! teacher-student sweeps, and [`io`] the on-disk formats.

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod log;
pub mod nets;
pub mod optim;

pub use diagnostics::{ActivityMode, ActivityReport, RankReport};
pub use error::{Error, Result};
pub use linalg::{DenseMatrix, EigenSpectrum};
pub use log::{CheckpointRecord, TrainLog};
pub use nets::{ActivationKind, BottleneckSpec, Dataset, Mlp, Model, ParamVector, TwoLayerNet};
pub use optim::{Method, OptimConfig, SamConfig, SamStepReport};
