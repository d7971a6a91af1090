//! Training steppers: plain SGD, SAM, and first-order SAM (SGD on the
//! gradient-norm-regularized loss `ℓ + ρ‖∇ℓ‖`).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::log::{CheckpointRecord, TrainLog};
use crate::nets::{batch_grad, batch_grad_and_loss, ActivationKind, Dataset, Model, ParamVector, TwoLayerNet};

/// Step size of the central difference used for Hessian-vector products.
pub const HVP_STEP: f64 = 1e-4;
pub const DEFAULT_NORM_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            weight_decay: 0.0,
            batch_size: 1,
            steps: 200_000,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamConfig {
    pub rho: f64,
    /// SAM (or gradient regularization) runs while `step < active_fraction · steps`.
    pub active_fraction: f64,
    /// Gradients with norm at or below this skip the perturbation.
    pub norm_epsilon: f64,
}

impl Default for SamConfig {
    fn default() -> Self {
        Self {
            rho: 0.0,
            active_fraction: 0.5,
            norm_epsilon: DEFAULT_NORM_EPSILON,
        }
    }
}

impl SamConfig {
    pub fn with_rho(rho: f64) -> Self {
        Self {
            rho,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid(format!("rho must be >= 0, got {}", self.rho)));
        }
        if !(self.active_fraction > 0.0 && self.active_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "active_fraction must be in (0, 1], got {}",
                self.active_fraction
            )));
        }
        if !(self.norm_epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "norm_epsilon must be positive, got {}",
                self.norm_epsilon
            )));
        }
        Ok(())
    }
}

/// Which update runs while the sharpness term is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgd,
    Sam,
    #[serde(rename = "gradreg")]
    GradReg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Sam => "sam",
            Method::GradReg => "gradreg",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Method::Sgd),
            "sam" => Ok(Method::Sam),
            "gradreg" => Ok(Method::GradReg),
            other => Err(Error::invalid(format!(
                "unknown optimizer `{other}` (expected sgd, sam or gradreg)"
            ))),
        }
    }
}

/// `θ − η·(g + λθ)`
fn descend<M: Model>(net: &M, params: &ParamVector, direction: &ParamVector, cfg: &OptimConfig) -> Result<M> {
    let mut next = params.clone();
    next.axpy(-cfg.learning_rate, direction);
    if cfg.weight_decay != 0.0 {
        next.axpy(-cfg.learning_rate * cfg.weight_decay, params);
    }
    net.with_params(&next)
}

/// `θ ← θ − η·(∇ℓ_batch(θ) + λθ)`
pub fn sgd_step<M: Model>(net: &M, data: &Dataset, batch: &[usize], cfg: &OptimConfig) -> Result<M> {
    let g = batch_grad(net, data, batch)?;
    descend(net, &net.params(), &g, cfg)
}

/// What a SAM step computed on its way to the update.
#[derive(Clone, Debug, PartialEq)]
pub struct SamStep {
    /// `ε = ρ·g/‖g‖`, or zero when the perturbation was skipped.
    pub perturbation: ParamVector,
    /// Batch gradient at `θ`.
    pub inner_grad: ParamVector,
    /// Batch gradient at `θ + ε` (same batch).
    pub outer_grad: ParamVector,
    pub perturbed: bool,
    /// Batch loss at `θ`.
    pub loss: f64,
}

/// One SAM update: `θ ← θ − η·(∇ℓ_B(θ + ρ·g/‖g‖) + λθ)` with `g = ∇ℓ_B(θ)`
/// and the same batch `B` for both gradients.
pub fn sam_step<M: Model>(
    net: &M,
    data: &Dataset,
    batch: &[usize],
    cfg: &OptimConfig,
    sam: &SamConfig,
) -> Result<(M, SamStep)> {
    let params = net.params();
    let (g, loss) = batch_grad_and_loss(net, data, batch)?;
    let g_norm = g.norm();
    if sam.rho == 0.0 || g_norm <= sam.norm_epsilon {
        let next = descend(net, &params, &g, cfg)?;
        let info = SamStep {
            perturbation: ParamVector::zeros(params.len()),
            outer_grad: g.clone(),
            inner_grad: g,
            perturbed: false,
            loss,
        };
        return Ok((next, info));
    }
    let mut eps = g.clone();
    eps.scale(sam.rho / g_norm);
    let perturbed = net.with_params(&params.plus_scaled(1.0, &eps))?;
    let outer = batch_grad(&perturbed, data, batch)?;
    let next = descend(net, &params, &outer, cfg)?;
    Ok((
        next,
        SamStep {
            perturbation: eps,
            inner_grad: g,
            outer_grad: outer,
            perturbed: true,
            loss,
        },
    ))
}

/// Hessian-vector product `H·v` of the batch loss by central differences of
/// the gradient: `(∇ℓ(θ + hv) − ∇ℓ(θ − hv)) / 2h`.
pub fn hessian_vector_product<M: Model>(
    net: &M,
    data: &Dataset,
    batch: &[usize],
    direction: &ParamVector,
    step: f64,
) -> Result<ParamVector> {
    let params = net.params();
    let plus = batch_grad(&net.with_params(&params.plus_scaled(step, direction))?, data, batch)?;
    let minus = batch_grad(&net.with_params(&params.plus_scaled(-step, direction))?, data, batch)?;
    let mut out = plus;
    out.axpy(-1.0, &minus);
    out.scale(0.5 / step);
    Ok(out)
}

/// `∇‖∇ℓ‖ = H·∇ℓ/‖∇ℓ‖`, or `None` when `‖∇ℓ‖ <= norm_epsilon`.
pub fn grad_norm_gradient<M: Model>(
    net: &M,
    data: &Dataset,
    batch: &[usize],
    g: &ParamVector,
    norm_epsilon: f64,
) -> Result<Option<ParamVector>> {
    let g_norm = g.norm();
    if g_norm <= norm_epsilon {
        return Ok(None);
    }
    let mut unit = g.clone();
    unit.scale(1.0 / g_norm);
    hessian_vector_product(net, data, batch, &unit, HVP_STEP).map(Some)
}

/// SGD on `ℓ + ρ‖∇ℓ‖`: `θ ← θ − η·(∇ℓ + ρ·H∇ℓ/‖∇ℓ‖ + λθ)`.
pub fn gradreg_step<M: Model>(
    net: &M,
    data: &Dataset,
    batch: &[usize],
    cfg: &OptimConfig,
    sam: &SamConfig,
) -> Result<M> {
    let params = net.params();
    let mut g = batch_grad(net, data, batch)?;
    if sam.rho != 0.0 {
        if let Some(reg) = grad_norm_gradient(net, data, batch, &g, sam.norm_epsilon)? {
            g.axpy(sam.rho, &reg);
        }
    }
    descend(net, &params, &g, cfg)
}

/// Per-neuron anatomy of one first-order SAM step on a single example for a
/// bias-free two-layer ReLU network.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamStepReport {
    pub perturbation: ParamVector,
    pub outer_grad: ParamVector,
    /// `r = f(x) − y`
    pub residual: f64,
    /// `‖∇f(θ)‖₂`
    pub model_grad_norm: f64,
    /// `η·(1 + ρ‖∇f‖/|r|)`
    pub effective_learning_rate: f64,
    /// `η·r·(1 + ρ‖∇f‖/|r|)·a_j·σ′(⟨w_j,x⟩)·‖x‖²`
    pub per_neuron_data_fit: Vec<f64>,
    /// `η·ρ·(|r|/‖∇f‖)·σ(⟨w_j,x⟩)·‖x‖²`, the non-negative decrease of each
    /// pre-activation.
    pub per_neuron_reg_component: Vec<f64>,
    pub per_neuron_preact_before: Vec<f64>,
    /// Pre-activations after a first-order SAM ([`gradreg_step`]) update.
    pub per_neuron_preact_after: Vec<f64>,
    /// Pre-activations after a full [`sam_step`] update.
    pub per_neuron_preact_after_sam: Vec<f64>,
}

/// Splits the first-order SAM update of each pre-activation `⟨w_j, x⟩` into
/// a data-fitting term and a regularization component:
///
/// `Δ⟨w_j,x⟩ = −data_fit_j − reg_j + O(ρ²)`.
pub fn decompose_sam_step(
    net: &TwoLayerNet,
    x: &[f64],
    y: f64,
    cfg: &OptimConfig,
    sam: &SamConfig,
) -> Result<SamStepReport> {
    if net.has_biases() {
        return Err(Error::invalid("step decomposition requires a bias-free network"));
    }
    if net.activation() != ActivationKind::Relu {
        return Err(Error::invalid(format!(
            "step decomposition requires relu activations, got {}",
            net.activation()
        )));
    }
    let z = net.preactivations(x)?;
    let residual = net.output(x)? - y;
    if residual == 0.0 {
        return Err(Error::invalid("residual is zero; the step decomposition is undefined"));
    }
    let model_grad_norm = net.model_grad_norm(x)?;
    let eta = cfg.learning_rate;
    let rho = sam.rho;
    let x_sq = dot(x, x);
    let abs_r = residual.abs();
    let act = net.activation();

    let effective_learning_rate = eta * (1.0 + rho * model_grad_norm / abs_r);
    let per_neuron_data_fit = net
        .output_weights()
        .iter()
        .zip(&z)
        .map(|(aj, &zj)| effective_learning_rate * residual * aj * act.derivative(zj) * x_sq)
        .collect();
    // ‖∇f‖ = 0 forces σ(⟨w_j,x⟩) = 0 for every neuron
    let reg_scale = if model_grad_norm > 0.0 {
        eta * rho * abs_r / model_grad_norm
    } else {
        0.0
    };
    let per_neuron_reg_component = z.iter().map(|&zj| reg_scale * act.apply(zj) * x_sq).collect();

    let data = Dataset::new(
        DenseMatrix::new(1, x.len(), x.to_vec())?,
        DenseMatrix::new(1, 1, vec![y])?,
    )?;
    let (after_sam, step) = sam_step(net, &data, &[0], cfg, sam)?;
    let after_first_order = gradreg_step(net, &data, &[0], cfg, sam)?;

    Ok(SamStepReport {
        perturbation: step.perturbation,
        outer_grad: step.outer_grad,
        residual,
        model_grad_norm,
        effective_learning_rate,
        per_neuron_data_fit,
        per_neuron_reg_component,
        per_neuron_preact_before: z,
        per_neuron_preact_after: after_first_order.preactivations(x)?,
        per_neuron_preact_after_sam: after_sam.preactivations(x)?,
    })
}

/// Update rule and checkpoint cadence of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub method: Method,
    pub sam: SamConfig,
    /// Record a checkpoint every `cadence` steps (0: final step only). The
    /// final step is always recorded.
    pub cadence: usize,
}

impl Schedule {
    pub fn sgd(cadence: usize) -> Self {
        Self {
            method: Method::Sgd,
            sam: SamConfig::default(),
            cadence,
        }
    }

    pub fn sharpness_active(&self, step: usize, total: usize) -> bool {
        self.method != Method::Sgd && (step as f64) < self.sam.active_fraction * total as f64
    }
}

/// Runs `cfg.steps` updates with batches drawn uniformly with replacement
/// from a generator seeded by `cfg.seed`. `checkpoint` is called after the
/// configured steps. A run whose parameters or loss become non-finite stops
/// early and is marked diverged.
pub fn train<M, F>(
    mut net: M,
    data: &Dataset,
    cfg: &OptimConfig,
    schedule: &Schedule,
    mut checkpoint: F,
) -> Result<(M, TrainLog)>
where
    M: Model,
    F: FnMut(usize, &M) -> Result<CheckpointRecord>,
{
    cfg.validate()?;
    schedule.sam.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    let mut batch = vec![0usize; cfg.batch_size];
    for step in 0..cfg.steps {
        batch.iter_mut().for_each(|b| *b = rng.random_range(0..data.len()));
        let (next, loss) = if schedule.sharpness_active(step, cfg.steps) {
            match schedule.method {
                Method::Sam => {
                    let (next, info) = sam_step(&net, data, &batch, cfg, &schedule.sam)?;
                    (next, info.loss)
                }
                Method::GradReg => {
                    // divergence is caught by the parameter check below
                    let next = gradreg_step(&net, data, &batch, cfg, &schedule.sam)?;
                    (next, 0.0)
                }
                Method::Sgd => unreachable!("sharpness_active is false for sgd"),
            }
        } else {
            let (g, loss) = batch_grad_and_loss(&net, data, &batch)?;
            (descend(&net, &net.params(), &g, cfg)?, loss)
        };
        net = next;
        let done = step + 1;
        if !loss.is_finite() || !net.params().is_finite() {
            log.diverged_at = Some(done);
            return Ok((net, log));
        }
        if done == cfg.steps || (schedule.cadence > 0 && done % schedule.cadence == 0) {
            log.records.push(checkpoint(done, &net)?);
        }
    }
    Ok((net, log))
}
