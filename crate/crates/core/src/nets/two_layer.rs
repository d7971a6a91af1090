use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_len, ActivationKind, Model, ParamVector};
use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};

/// `f(x) = ⟨a, σ(Wx + b₁)⟩ + b₂` with `W ∈ ℝ^{m×d}`.
///
/// Flattening order: `W` row-major, `b₁` (if present), `a`, `b₂` (if present).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerNet {
    w: DenseMatrix,
    a: Vec<f64>,
    b1: Option<Vec<f64>>,
    b2: Option<f64>,
    act: ActivationKind,
}

impl TwoLayerNet {
    pub fn new(w: DenseMatrix, a: Vec<f64>, act: ActivationKind) -> Result<Self> {
        Self::with_biases(w, a, None, None, act)
    }

    pub fn with_biases(
        w: DenseMatrix,
        a: Vec<f64>,
        b1: Option<Vec<f64>>,
        b2: Option<f64>,
        act: ActivationKind,
    ) -> Result<Self> {
        if w.rows() != a.len() {
            return Err(Error::Shape {
                op: "two-layer net",
                left: w.shape(),
                right: (a.len(), 1),
            });
        }
        if let Some(b) = &b1 {
            check_len("two-layer hidden bias", w.rows(), b.len())?;
        }
        Ok(Self { w, a, b1, b2, act })
    }

    /// Gaussian weights with standard deviation `std`; biases (when enabled)
    /// start at zero.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        neurons: usize,
        std: f64,
        biases: bool,
        act: ActivationKind,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::invalid(format!("bad init std {std}: {e}")))?;
        let w = DenseMatrix::from_fn(neurons, input_dim, |_, _| normal.sample(rng));
        let a = (0..neurons).map(|_| normal.sample(rng)).collect();
        let (b1, b2) = if biases {
            (Some(vec![0.0; neurons]), Some(0.0))
        } else {
            (None, None)
        };
        Self::with_biases(w, a, b1, b2, act)
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.w
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.a
    }

    pub fn hidden_bias(&self) -> Option<&[f64]> {
        self.b1.as_deref()
    }

    pub fn output_bias(&self) -> Option<f64> {
        self.b2
    }

    pub fn activation(&self) -> ActivationKind {
        self.act
    }

    pub fn neurons(&self) -> usize {
        self.w.rows()
    }

    pub fn has_biases(&self) -> bool {
        self.b1.is_some() || self.b2.is_some()
    }

    /// Pre-activations `Wx + b₁`.
    pub fn preactivations(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("two-layer input", self.w.cols(), x.len())?;
        let mut z = self.w.matvec(x)?;
        if let Some(b) = &self.b1 {
            z.iter_mut().zip(b).for_each(|(zi, bi)| *zi += bi);
        }
        Ok(z)
    }

    /// Scalar output `f(x)`.
    pub fn output(&self, x: &[f64]) -> Result<f64> {
        let z = self.preactivations(x)?;
        Ok(self.output_from_preactivations(&z))
    }

    fn output_from_preactivations(&self, z: &[f64]) -> f64 {
        let s: f64 = self
            .a
            .iter()
            .zip(z)
            .map(|(aj, &zj)| aj * self.act.apply(zj))
            .sum();
        s + self.b2.unwrap_or(0.0)
    }

    /// `‖∇_θ f(x)‖₂`. Without biases this is
    /// `sqrt(‖σ(Wx)‖² + ‖x‖²·‖a ⊙ σ′(Wx)‖²)`; bias entries add their own
    /// partial derivatives.
    pub fn model_grad_norm(&self, x: &[f64]) -> Result<f64> {
        let z = self.preactivations(x)?;
        let hidden_sq: f64 = z.iter().map(|&zj| self.act.apply(zj).powi(2)).sum();
        let gated_sq: f64 = self
            .a
            .iter()
            .zip(&z)
            .map(|(aj, &zj)| (aj * self.act.derivative(zj)).powi(2))
            .sum();
        let x_sq = dot(x, x);
        let mut total = hidden_sq + x_sq * gated_sq;
        if self.b1.is_some() {
            total += gated_sq;
        }
        if self.b2.is_some() {
            total += 1.0;
        }
        Ok(total.sqrt())
    }

    /// Offsets of the `W`, `b₁`, `a`, `b₂` segments in the flat vector.
    pub(crate) fn layout(&self) -> TwoLayerLayout {
        let w = self.w.rows() * self.w.cols();
        let b1 = self.b1.as_ref().map_or(0, Vec::len);
        TwoLayerLayout {
            w_end: w,
            b1_end: w + b1,
            a_end: w + b1 + self.a.len(),
            total: w + b1 + self.a.len() + usize::from(self.b2.is_some()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct TwoLayerLayout {
    pub w_end: usize,
    pub b1_end: usize,
    pub a_end: usize,
    pub total: usize,
}

impl Model for TwoLayerNet {
    fn input_dim(&self) -> usize {
        self.w.cols()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn num_params(&self) -> usize {
        self.layout().total
    }

    fn params(&self) -> ParamVector {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend_from_slice(self.w.data());
        if let Some(b) = &self.b1 {
            p.extend_from_slice(b);
        }
        p.extend_from_slice(&self.a);
        if let Some(b) = self.b2 {
            p.push(b);
        }
        ParamVector(p)
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let l = self.layout();
        check_len("two-layer params", l.total, params.len())?;
        self.w.data_mut().copy_from_slice(&params[..l.w_end]);
        if let Some(b) = &mut self.b1 {
            b.copy_from_slice(&params[l.w_end..l.b1_end]);
        }
        self.a.copy_from_slice(&params[l.b1_end..l.a_end]);
        if let Some(b) = &mut self.b2 {
            *b = params[l.a_end];
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.output(x)?])
    }

    fn accumulate_grad(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) -> Result<f64> {
        check_len("two-layer target", 1, y.len())?;
        let l = self.layout();
        check_len("two-layer gradient buffer", l.total, out.len())?;
        let z = self.preactivations(x)?;
        let r = self.output_from_preactivations(&z) - y[0];
        let d = x.len();
        for (j, &zj) in z.iter().enumerate() {
            let delta = scale * r * self.a[j] * self.act.derivative(zj);
            if delta != 0.0 {
                let row = &mut out[j * d..(j + 1) * d];
                row.iter_mut().zip(x).for_each(|(g, xi)| *g += delta * xi);
                if self.b1.is_some() {
                    out[l.w_end + j] += delta;
                }
            }
            out[l.b1_end + j] += scale * r * self.act.apply(zj);
        }
        if self.b2.is_some() {
            out[l.a_end] += scale * r;
        }
        Ok(0.5 * r * r)
    }

    fn num_blocks(&self) -> usize {
        1
    }

    fn block_width(&self, block: usize) -> Result<usize> {
        if block != 0 {
            return Err(Error::invalid(format!(
                "two-layer net has a single feature block (0), got {block}"
            )));
        }
        Ok(self.neurons())
    }

    fn block_output(&self, x: &[f64], block: usize) -> Result<Vec<f64>> {
        self.block_width(block)?;
        Ok(self
            .preactivations(x)?
            .into_iter()
            .map(|z| self.act.apply(z))
            .collect())
    }
}
