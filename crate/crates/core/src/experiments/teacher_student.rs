use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nets::{ActivationKind, Dataset, TwoLayerNet};

/// Random streams drawn from one seed.
pub(crate) const TEACHER_STREAM: u64 = 0;
pub(crate) const TRAIN_STREAM: u64 = 1;
pub(crate) const TEST_STREAM: u64 = 2;
pub(crate) const STUDENT_STREAM: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Distribution of the teacher-student inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLaw {
    /// i.i.d. standard Gaussian coordinates.
    #[default]
    Gaussian,
    /// Standard Gaussian vectors rescaled to unit Euclidean norm.
    UnitSphere,
}

impl InputLaw {
    pub fn name(self) -> &'static str {
        match self {
            InputLaw::Gaussian => "gaussian",
            InputLaw::UnitSphere => "unit_sphere",
        }
    }
}

impl std::str::FromStr for InputLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(InputLaw::Gaussian),
            "unit_sphere" => Ok(InputLaw::UnitSphere),
            _ => Err(Error::invalid(format!(
                "unknown input law `{s}` (expected gaussian or unit_sphere)"
            ))),
        }
    }
}

/// A noise-free regression task labelled by a small random two-layer
/// "teacher" and fitted by a wider "student".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherStudentSpec {
    pub d_in: usize,
    pub teacher_neurons: usize,
    pub student_neurons: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub teacher_init_std: f64,
    pub student_init_std: f64,
    pub activation: ActivationKind,
    pub inputs: InputLaw,
    /// Multiplies every input: the coordinate standard deviation for
    /// Gaussian inputs, the radius for sphere inputs.
    pub input_scale: f64,
    /// Student hidden and output biases (initialized to zero).
    pub student_biases: bool,
    pub seed: u64,
}

impl Default for TeacherStudentSpec {
    fn default() -> Self {
        Self {
            d_in: 3,
            teacher_neurons: 3,
            student_neurons: 100,
            n_train: 20,
            n_test: 1000,
            teacher_init_std: 1.0,
            student_init_std: 0.3,
            activation: ActivationKind::Relu,
            inputs: InputLaw::default(),
            input_scale: 0.7,
            student_biases: true,
            seed: 0,
        }
    }
}

impl TeacherStudentSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_in", self.d_in),
            ("teacher_neurons", self.teacher_neurons),
            ("student_neurons", self.student_neurons),
            ("n_train", self.n_train),
            ("n_test", self.n_test),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be >= 1")));
        }
        for (name, std) in [
            ("teacher_init_std", self.teacher_init_std),
            ("student_init_std", self.student_init_std),
            ("input_scale", self.input_scale),
        ] {
            if !(std > 0.0 && std.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {std}")));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct TeacherStudent {
    pub teacher: TwoLayerNet,
    pub train: Dataset,
    pub test: Dataset,
}

pub(crate) fn draw_inputs(rng: &mut ChaCha8Rng, law: InputLaw, scale: f64, n: usize, d: usize) -> DenseMatrix {
    let mut x = DenseMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng));
    if law == InputLaw::UnitSphere {
        for i in 0..n {
            let row = x.row_mut(i);
            let norm = crate::linalg::norm(row);
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    x.scaled(scale)
}

fn label(teacher: &TwoLayerNet, inputs: DenseMatrix) -> Result<Dataset> {
    let targets = (0..inputs.rows())
        .map(|i| teacher.output(inputs.row(i)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(inputs, DenseMatrix::new(targets.len(), 1, targets)?)
}

/// Teacher weights i.i.d. `N(0, teacher_init_std²)` without biases; inputs
/// i.i.d. standard Gaussian; targets are the teacher's outputs.
pub fn make_teacher_student(spec: &TeacherStudentSpec) -> Result<TeacherStudent> {
    spec.validate()?;
    let teacher = TwoLayerNet::random(
        spec.d_in,
        spec.teacher_neurons,
        spec.teacher_init_std,
        false,
        spec.activation,
        &mut stream_rng(spec.seed, TEACHER_STREAM),
    )?;
    let train = label(
        &teacher,
        draw_inputs(&mut stream_rng(spec.seed, TRAIN_STREAM), spec.inputs, spec.input_scale, spec.n_train, spec.d_in),
    )?;
    let test = label(
        &teacher,
        draw_inputs(&mut stream_rng(spec.seed, TEST_STREAM), spec.inputs, spec.input_scale, spec.n_test, spec.d_in),
    )?;
    Ok(TeacherStudent {
        teacher,
        train,
        test,
    })
}

/// Student weights i.i.d. `N(0, student_init_std²)`, biases zero.
pub fn init_student(spec: &TeacherStudentSpec) -> Result<TwoLayerNet> {
    spec.validate()?;
    TwoLayerNet::random(
        spec.d_in,
        spec.student_neurons,
        spec.student_init_std,
        spec.student_biases,
        spec.activation,
        &mut stream_rng(spec.seed, STUDENT_STREAM),
    )
}
