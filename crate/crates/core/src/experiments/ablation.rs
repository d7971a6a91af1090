use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::teacher_student::{draw_inputs, stream_rng, STUDENT_STREAM, TEACHER_STREAM, TEST_STREAM, TRAIN_STREAM};
use super::{checkpoint_record, median, RunSettings, TeacherStudentSpec};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nets::{ActivationKind, Dataset, Mlp, Model};
use crate::optim::{train, Method};

/// Student variants compared by the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// Unfactorized last layer, plain SGD.
    Baseline,
    /// Last layer `W = U·V` with inner dimension `h`, plain SGD.
    Bottleneck(usize),
    /// Unfactorized last layer trained with SAM at this ρ.
    Sam(f64),
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationVariant::Baseline => f.write_str("baseline"),
            AblationVariant::Bottleneck(h) => write!(f, "h={h}"),
            AblationVariant::Sam(rho) => write!(f, "sam_rho={rho}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub h_grid: Vec<usize>,
    /// Width of the teacher's (and student's) vector output.
    pub output_dim: usize,
    pub seeds: Vec<u64>,
    pub steps: usize,
    /// Replaces the base learning rate; the vector-output loss has roughly
    /// `output_dim` times the curvature of the scalar task.
    pub learning_rate: f64,
    pub sam_rho: f64,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            h_grid: vec![1, 2, 3, 5, 10],
            output_dim: 10,
            seeds: vec![0, 1, 2, 3, 4],
            steps: 200_000,
            learning_rate: 0.02,
            sam_rho: 0.2,
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.h_grid.is_empty() {
            return Err(Error::Empty("h grid"));
        }
        if self.h_grid.contains(&0) {
            return Err(Error::invalid("bottleneck dimensions must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::Empty("seed list"));
        }
        if self.output_dim == 0 {
            return Err(Error::invalid("output_dim must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.sam_rho >= 0.0 && self.sam_rho.is_finite()) {
            return Err(Error::invalid(format!("sam_rho must be >= 0, got {}", self.sam_rho)));
        }
        Ok(())
    }

    pub fn variants(&self) -> Vec<AblationVariant> {
        let mut v = vec![AblationVariant::Baseline];
        v.extend(self.h_grid.iter().map(|&h| AblationVariant::Bottleneck(h)));
        v.push(AblationVariant::Sam(self.sam_rho));
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub seed: u64,
    pub diverged: bool,
    pub train_loss: f64,
    pub test_loss: f64,
    /// Output-layer feature ranks at the run's thresholds.
    pub output_ranks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub thresholds: Vec<f64>,
    pub rows: Vec<AblationRow>,
    /// Median test loss per variant over non-diverged seeds, in variant order.
    pub median_test_loss: Vec<(AblationVariant, f64)>,
}

impl AblationSummary {
    pub fn median_for(&self, variant: AblationVariant) -> Option<f64> {
        self.median_test_loss
            .iter()
            .find(|(v, _)| *v == variant)
            .map(|&(_, m)| m)
    }

    /// Every bottlenecked run has output rank at most `h` at every threshold.
    pub fn rank_bound_holds(&self) -> bool {
        self.rows.iter().all(|r| match r.variant {
            AblationVariant::Bottleneck(h) => r.output_ranks.iter().all(|&k| k <= h),
            _ => true,
        })
    }
}

/// Vector-output teacher `y = A σ(W x)` (bias-free, both factors
/// `N(0, teacher_init_std²)`) on the teacher-student input law.
pub fn make_vector_teacher(ts: &TeacherStudentSpec, output_dim: usize) -> Result<(Mlp, Dataset, Dataset)> {
    ts.validate()?;
    let teacher = Mlp::random(
        &[ts.d_in, ts.teacher_neurons, output_dim],
        &[ts.activation, ActivationKind::Identity],
        &[ts.teacher_init_std, ts.teacher_init_std],
        None,
        &mut stream_rng(ts.seed, TEACHER_STREAM),
    )?;
    let label = |inputs: DenseMatrix| -> Result<Dataset> {
        let mut targets = Vec::with_capacity(inputs.rows() * output_dim);
        for i in 0..inputs.rows() {
            targets.extend(teacher.forward(inputs.row(i))?);
        }
        Dataset::new(inputs.clone(), DenseMatrix::new(inputs.rows(), output_dim, targets)?)
    };
    let train_x = draw_inputs(&mut stream_rng(ts.seed, TRAIN_STREAM), ts.inputs, ts.input_scale, ts.n_train, ts.d_in);
    let test_x = draw_inputs(&mut stream_rng(ts.seed, TEST_STREAM), ts.inputs, ts.input_scale, ts.n_test, ts.d_in);
    let train = label(train_x)?;
    let test = label(test_x)?;
    Ok((teacher, train, test))
}

fn student(ts: &TeacherStudentSpec, output_dim: usize, bottleneck: Option<usize>) -> Result<Mlp> {
    Mlp::random(
        &[ts.d_in, ts.student_neurons, output_dim],
        &[ts.activation, ActivationKind::Identity],
        &[ts.student_init_std, ts.student_init_std],
        bottleneck,
        &mut stream_rng(ts.seed, STUDENT_STREAM),
    )
}

fn run_variant(
    variant: AblationVariant,
    seed: u64,
    spec: &AblationSpec,
    ts: &TeacherStudentSpec,
    base: &RunSettings,
) -> Result<AblationRow> {
    let ts = ts.with_seed(seed);
    let (_, train_set, test_set) = make_vector_teacher(&ts, spec.output_dim)?;
    let bottleneck = match variant {
        AblationVariant::Bottleneck(h) => Some(h),
        _ => None,
    };
    let net = student(&ts, spec.output_dim, bottleneck)?;
    let mut settings = base.clone();
    settings.optim.steps = spec.steps;
    settings.optim.learning_rate = spec.learning_rate;
    settings.optim.seed = seed;
    settings.cadence = 0;
    match variant {
        AblationVariant::Sam(rho) => {
            settings.method = Method::Sam;
            settings.sam.rho = rho;
        }
        _ => settings.method = Method::Sgd,
    }
    let diag = settings.diag.clone();
    let (_, log) = train(net, &train_set, &settings.optim, &settings.schedule(), |step, net| {
        checkpoint_record(step, net, &train_set, &test_set, &diag)
    })?;
    Ok(match log.last().filter(|_| !log.diverged()) {
        Some(last) => AblationRow {
            variant,
            seed,
            diverged: false,
            train_loss: last.train_loss,
            test_loss: last.test_loss,
            output_ranks: last.rank.ranks.clone(),
        },
        None => AblationRow {
            variant,
            seed,
            diverged: log.diverged(),
            train_loss: f64::NAN,
            test_loss: f64::NAN,
            output_ranks: Vec::new(),
        },
    })
}

/// Trains, per seed, the unfactorized baseline, one bottlenecked student per
/// `h`, and a SAM-trained unfactorized student, all on a vector-output
/// teacher. Ranks are measured on the output layer.
pub fn run_bottleneck_ablation(
    spec: &AblationSpec,
    ts: &TeacherStudentSpec,
    base: &RunSettings,
    jobs: usize,
) -> Result<AblationSummary> {
    spec.validate()?;
    let variants = spec.variants();
    let cells: Vec<(AblationVariant, u64)> = variants
        .iter()
        .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .map(|&(v, s)| run_variant(v, s, spec, ts, base))
            .collect::<Result<Vec<_>>>()
    })?;
    let median_test_loss = variants
        .iter()
        .map(|&v| {
            let losses = rows.iter().filter(|r| r.variant == v && !r.diverged).map(|r| r.test_loss);
            (v, median(losses))
        })
        .collect();
    Ok(AblationSummary {
        thresholds: base.diag.thresholds.clone(),
        rows,
        median_test_loss,
    })
}
