use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{checkpoint_record, init_student, make_teacher_student, median, RunSettings, TeacherStudentSpec};
use crate::error::{Error, Result};
use crate::log::{CheckpointRecord, TrainLog};
use crate::nets::TwoLayerNet;
use crate::optim::{train, Method};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub rho_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub optimizer: Method,
    pub steps: usize,
    pub cadence: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            rho_grid: vec![0.0, 0.05, 0.1, 0.2, 0.4, 0.6],
            seeds: vec![0, 1, 2, 3, 4],
            optimizer: Method::Sam,
            steps: 200_000,
            cadence: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rho_grid.is_empty() {
            return Err(Error::Empty("rho grid"));
        }
        if self.seeds.is_empty() {
            return Err(Error::Empty("seed list"));
        }
        if let Some(bad) = self.rho_grid.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
            return Err(Error::invalid(format!("rho must be >= 0, got {bad}")));
        }
        Ok(())
    }

    /// Whether the grid brackets the effect: it has the ρ = 0 baseline and
    /// at least one ρ >= 0.4.
    pub fn spans_baseline_and_large_rho(&self) -> bool {
        self.rho_grid.contains(&0.0) && self.rho_grid.iter().any(|&r| r >= 0.4)
    }
}

/// One (ρ, seed) training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub rho: f64,
    pub seed: u64,
    pub log: TrainLog,
    pub student: TwoLayerNet,
}

impl SweepCell {
    pub fn final_record(&self) -> Option<&CheckpointRecord> {
        if self.log.diverged() {
            None
        } else {
            self.log.last()
        }
    }
}

/// Medians over the non-diverged seeds of one ρ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepMedians {
    pub rho: f64,
    pub runs: usize,
    pub diverged: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    /// Aligned with the sweep's thresholds.
    pub ranks: Vec<f64>,
    pub active_units: f64,
    pub weight_norm: f64,
    pub knn_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub thresholds: Vec<f64>,
    /// Ordered by ρ (grid order), then seed (list order).
    pub cells: Vec<SweepCell>,
    pub medians: Vec<SweepMedians>,
}

impl SweepResult {
    pub fn medians_for(&self, rho: f64) -> Option<&SweepMedians> {
        self.medians.iter().find(|m| m.rho == rho)
    }

    /// Median rank at `threshold` for `rho`.
    pub fn median_rank(&self, rho: f64, threshold: f64) -> Option<f64> {
        let idx = self.thresholds.iter().position(|&t| t == threshold)?;
        Some(self.medians_for(rho)?.ranks[idx])
    }
}

/// Trains a fresh student on the teacher-student task described by `ts`
/// (data and initialization from `ts.seed`, batches from
/// `settings.optim.seed`).
pub fn run_cell(ts: &TeacherStudentSpec, settings: &RunSettings) -> Result<(TwoLayerNet, TrainLog)> {
    let task = make_teacher_student(ts)?;
    let student = init_student(ts)?;
    let diag = settings.diag.clone();
    train(student, &task.train, &settings.optim, &settings.schedule(), |step, net| {
        checkpoint_record(step, net, &task.train, &task.test, &diag)
    })
}

/// Runs every (ρ, seed) cell with up to `jobs` worker threads. Cells are
/// independent, so results do not depend on scheduling. Seed `s` sets the
/// task seed and the batch-sampling seed.
pub fn run_sweep(
    spec: &SweepSpec,
    ts: &TeacherStudentSpec,
    base: &RunSettings,
    jobs: usize,
) -> Result<SweepResult> {
    spec.validate()?;
    let jobs_list: Vec<(f64, u64)> = spec
        .rho_grid
        .iter()
        .flat_map(|&rho| spec.seeds.iter().map(move |&seed| (rho, seed)))
        .collect();
    let run = |&(rho, seed): &(f64, u64)| -> Result<SweepCell> {
        let mut settings = base.clone();
        settings.method = spec.optimizer;
        settings.sam.rho = rho;
        settings.optim.steps = spec.steps;
        settings.optim.seed = seed;
        settings.cadence = spec.cadence;
        let (student, log) = run_cell(&ts.with_seed(seed), &settings)?;
        Ok(SweepCell {
            rho,
            seed,
            log,
            student,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let cells = pool.install(|| jobs_list.par_iter().map(run).collect::<Result<Vec<_>>>())?;

    let thresholds = base.diag.thresholds.clone();
    let medians = spec
        .rho_grid
        .iter()
        .map(|&rho| summarize(rho, &cells, thresholds.len()))
        .collect();
    Ok(SweepResult {
        thresholds,
        cells,
        medians,
    })
}

fn summarize(rho: f64, cells: &[SweepCell], n_thresholds: usize) -> SweepMedians {
    let group: Vec<&SweepCell> = cells.iter().filter(|c| c.rho == rho).collect();
    let finals: Vec<&CheckpointRecord> = group.iter().filter_map(|c| c.final_record()).collect();
    SweepMedians {
        rho,
        runs: group.len(),
        diverged: group.iter().filter(|c| c.log.diverged()).count(),
        train_loss: median(finals.iter().map(|r| r.train_loss)),
        test_loss: median(finals.iter().map(|r| r.test_loss)),
        ranks: (0..n_thresholds)
            .map(|i| median(finals.iter().map(|r| r.rank.ranks[i] as f64)))
            .collect(),
        active_units: median(finals.iter().map(|r| r.activity.active_units as f64)),
        weight_norm: median(finals.iter().map(|r| r.weight_norm)),
        knn_error: median(finals.iter().filter_map(|r| r.knn_error)),
    }
}
