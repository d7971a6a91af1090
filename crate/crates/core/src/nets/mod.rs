//! Small fully-connected networks with analytic forward and backward passes.
//!
//! Every network is trained with the squared loss `ℓ = ½‖f(x) − y‖²`, so the
//! gradient of the loss is the residual `r = f − y` times the model Jacobian.

mod activation;
mod dataset;
mod mlp;
mod params;
mod two_layer;

pub use activation::ActivationKind;
pub use dataset::Dataset;
pub use mlp::{BottleneckSpec, Layer, LayerWeights, Mlp};
pub use params::ParamVector;
pub use two_layer::TwoLayerNet;

use crate::error::{Error, Result};

/// A network whose parameters can be flattened into a [`ParamVector`] and
/// differentiated analytically.
pub trait Model: Clone + Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn num_params(&self) -> usize;

    /// Parameters in the network's documented flattening order.
    fn params(&self) -> ParamVector;

    /// Inverse of [`Model::params`].
    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Adds `scale · ∇θ ½‖f(x) − y‖²` into `out` and returns the loss.
    fn accumulate_grad(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) -> Result<f64>;

    /// Number of feature blocks that [`Model::block_output`] can expose.
    fn num_blocks(&self) -> usize;

    fn block_width(&self, block: usize) -> Result<usize>;

    /// Post-activation output of feature block `block` for input `x`.
    fn block_output(&self, x: &[f64], block: usize) -> Result<Vec<f64>>;

    fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_params(params)?;
        Ok(out)
    }
}

pub(crate) fn check_len(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            op,
            left: (expected, 1),
            right: (got, 1),
        });
    }
    Ok(())
}

/// `½‖f(x) − y‖²`
pub fn loss<M: Model>(net: &M, x: &[f64], y: &[f64]) -> Result<f64> {
    let out = net.forward(x)?;
    check_len("loss", out.len(), y.len())?;
    Ok(0.5 * out.iter().zip(y).map(|(f, t)| (f - t) * (f - t)).sum::<f64>())
}

pub fn grad<M: Model>(net: &M, x: &[f64], y: &[f64]) -> Result<ParamVector> {
    let mut g = ParamVector::zeros(net.num_params());
    net.accumulate_grad(x, y, 1.0, &mut g)?;
    Ok(g)
}

/// Mean gradient over the examples `indices` of `data`.
pub fn batch_grad<M: Model>(net: &M, data: &Dataset, indices: &[usize]) -> Result<ParamVector> {
    Ok(batch_grad_and_loss(net, data, indices)?.0)
}

/// Mean gradient and mean loss over `indices`.
pub fn batch_grad_and_loss<M: Model>(
    net: &M,
    data: &Dataset,
    indices: &[usize],
) -> Result<(ParamVector, f64)> {
    if indices.is_empty() {
        return Err(Error::Empty("batch index set"));
    }
    let scale = 1.0 / indices.len() as f64;
    let mut g = ParamVector::zeros(net.num_params());
    let mut total = 0.0;
    for &i in indices {
        if i >= data.len() {
            return Err(Error::invalid(format!(
                "batch index {i} out of range for dataset of {} examples",
                data.len()
            )));
        }
        total += net.accumulate_grad(data.input(i), data.target(i), scale, &mut g)?;
    }
    Ok((g, total * scale))
}

/// Mean loss over the whole dataset.
pub fn dataset_loss<M: Model>(net: &M, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        total += loss(net, data.input(i), data.target(i))?;
    }
    Ok(total / data.len() as f64)
}
