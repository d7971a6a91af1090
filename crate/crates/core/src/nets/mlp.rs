use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_len, ActivationKind, Model, ParamVector};
use crate::error::{Error, Result};
use crate::linalg::{axpy, DenseMatrix};

/// Low-rank factorization of a layer's weight: the effective `d_in × d_out`
/// map is `u · v` with inner dimension `h`, so its rank is at most `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BottleneckSpec {
    u: DenseMatrix,
    v: DenseMatrix,
}

impl BottleneckSpec {
    /// `u` is `d_in × h`, `v` is `h × d_out`.
    pub fn new(u: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        if u.cols() != v.rows() {
            return Err(Error::Shape {
                op: "bottleneck factors",
                left: u.shape(),
                right: v.shape(),
            });
        }
        Ok(Self { u, v })
    }

    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn inner_dim(&self) -> usize {
        self.u.cols()
    }

    /// The effective `d_in × d_out` weight `u · v`.
    pub fn product(&self) -> DenseMatrix {
        self.u.matmul(&self.v).expect("factor shapes validated on construction")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerWeights {
    /// `d_out × d_in` weight applied as `W·z`.
    Dense(DenseMatrix),
    /// Applied as `(u·v)ᵀ·z = vᵀ(uᵀz)`.
    Factorized(BottleneckSpec),
}

impl LayerWeights {
    pub fn input_dim(&self) -> usize {
        match self {
            LayerWeights::Dense(w) => w.cols(),
            LayerWeights::Factorized(b) => b.u.rows(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            LayerWeights::Dense(w) => w.rows(),
            LayerWeights::Factorized(b) => b.v.cols(),
        }
    }

    fn num_params(&self) -> usize {
        match self {
            LayerWeights::Dense(w) => w.data().len(),
            LayerWeights::Factorized(b) => b.u.data().len() + b.v.data().len(),
        }
    }
}

/// One affine map followed by a pointwise activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: LayerWeights,
    pub bias: Vec<f64>,
    pub act: ActivationKind,
}

impl Layer {
    pub fn dense(weight: DenseMatrix, bias: Vec<f64>, act: ActivationKind) -> Self {
        Self {
            weights: LayerWeights::Dense(weight),
            bias,
            act,
        }
    }

    pub fn factorized(spec: BottleneckSpec, bias: Vec<f64>, act: ActivationKind) -> Self {
        Self {
            weights: LayerWeights::Factorized(spec),
            bias,
            act,
        }
    }

    fn num_params(&self) -> usize {
        self.weights.num_params() + self.bias.len()
    }

    fn preactivation(&self, input: &[f64]) -> Vec<f64> {
        let mut z = match &self.weights {
            LayerWeights::Dense(w) => w.matvec(input).expect("layer chain validated"),
            LayerWeights::Factorized(b) => {
                let inner = b.u.t_matvec(input).expect("layer chain validated");
                b.v.t_matvec(&inner).expect("layer chain validated")
            }
        };
        z.iter_mut().zip(&self.bias).for_each(|(zi, bi)| *zi += bi);
        z
    }
}

/// A chain of fully-connected layers. Only the last layer may be factorized.
///
/// Flattening order: layer by layer; within a layer the weights row-major
/// (`W`, or `u` then `v` for a factorized layer), then the bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layer list"));
        }
        for (idx, layer) in layers.iter().enumerate() {
            check_len("layer bias", layer.weights.output_dim(), layer.bias.len())?;
            if idx > 0 {
                let prev = layers[idx - 1].weights.output_dim();
                if prev != layer.weights.input_dim() {
                    return Err(Error::invalid(format!(
                        "layer {idx} expects {} inputs but layer {} produces {prev}",
                        layer.weights.input_dim(),
                        idx - 1
                    )));
                }
            }
            if idx + 1 < layers.len() && matches!(layer.weights, LayerWeights::Factorized(_)) {
                return Err(Error::invalid(format!(
                    "only the last layer may be factorized (layer {idx} is)"
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Gaussian initialization. `dims` lists layer widths from input to
    /// output; `stds[i]` is the weight std of layer `i` (applied to both
    /// factors of a bottleneck). Biases start at zero. When `bottleneck` is
    /// `Some(h)` the last layer is factorized with inner dimension `h`.
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        acts: &[ActivationKind],
        stds: &[f64],
        bottleneck: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || acts.len() != dims.len() - 1 || stds.len() != acts.len() {
            return Err(Error::invalid(format!(
                "need dims.len() = acts.len() + 1 = stds.len() + 1, got {}, {}, {}",
                dims.len(),
                acts.len(),
                stds.len()
            )));
        }
        let n = acts.len();
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let normal = Normal::new(0.0, stds[i])
                .map_err(|e| Error::invalid(format!("bad init std {}: {e}", stds[i])))?;
            let (d_in, d_out) = (dims[i], dims[i + 1]);
            let weights = match bottleneck {
                Some(h) if i + 1 == n => {
                    if h == 0 {
                        return Err(Error::invalid("bottleneck inner dimension must be >= 1"));
                    }
                    let u = DenseMatrix::from_fn(d_in, h, |_, _| normal.sample(rng));
                    let v = DenseMatrix::from_fn(h, d_out, |_, _| normal.sample(rng));
                    LayerWeights::Factorized(BottleneckSpec::new(u, v)?)
                }
                _ => LayerWeights::Dense(DenseMatrix::from_fn(d_out, d_in, |_, _| {
                    normal.sample(rng)
                })),
            };
            layers.push(Layer {
                weights,
                bias: vec![0.0; d_out],
                act: acts[i],
            });
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn bottleneck(&self) -> Option<&BottleneckSpec> {
        match &self.layers.last()?.weights {
            LayerWeights::Factorized(b) => Some(b),
            LayerWeights::Dense(_) => None,
        }
    }

    /// `u · v` of the factorized last layer.
    pub fn effective_last_weight(&self) -> Result<DenseMatrix> {
        self.bottleneck()
            .map(BottleneckSpec::product)
            .ok_or_else(|| Error::invalid("network has no bottleneck layer"))
    }

    /// Pre-activations and activations of every layer.
    fn trace(&self, x: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        check_len("mlp input", self.input_dim(), x.len())?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().map_or(x, Vec::as_slice);
            let z = layer.preactivation(input);
            post.push(z.iter().map(|&v| layer.act.apply(v)).collect());
            pre.push(z);
        }
        Ok((pre, post))
    }

    fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        let mut out = Vec::with_capacity(self.layers.len() + 1);
        out.push(0);
        for layer in &self.layers {
            acc += layer.num_params();
            out.push(acc);
        }
        out
    }
}

impl Model for Mlp {
    fn input_dim(&self) -> usize {
        self.layers[0].weights.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.output_dim()
    }

    fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    fn params(&self) -> ParamVector {
        let mut p = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            match &layer.weights {
                LayerWeights::Dense(w) => p.extend_from_slice(w.data()),
                LayerWeights::Factorized(b) => {
                    p.extend_from_slice(b.u.data());
                    p.extend_from_slice(b.v.data());
                }
            }
            p.extend_from_slice(&layer.bias);
        }
        ParamVector(p)
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("mlp params", self.num_params(), params.len())?;
        let mut rest = params;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        };
        for layer in &mut self.layers {
            match &mut layer.weights {
                LayerWeights::Dense(w) => {
                    let n = w.data().len();
                    w.data_mut().copy_from_slice(take(n));
                }
                LayerWeights::Factorized(b) => {
                    let n = b.u.data().len();
                    b.u.data_mut().copy_from_slice(take(n));
                    let n = b.v.data().len();
                    b.v.data_mut().copy_from_slice(take(n));
                }
            }
            let n = layer.bias.len();
            layer.bias.copy_from_slice(take(n));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (_, mut post) = self.trace(x)?;
        Ok(post.pop().expect("at least one layer"))
    }

    fn accumulate_grad(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) -> Result<f64> {
        check_len("mlp target", self.output_dim(), y.len())?;
        check_len("mlp gradient buffer", self.num_params(), out.len())?;
        let (pre, post) = self.trace(x)?;
        let output = post.last().expect("at least one layer");
        let residual: Vec<f64> = output.iter().zip(y).map(|(f, t)| f - t).collect();
        let loss = 0.5 * residual.iter().map(|r| r * r).sum::<f64>();

        let offsets = self.offsets();
        // dL/d(post-activation) of the current layer
        let mut upstream = residual;
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let input = if idx == 0 { x } else { &post[idx - 1] };
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&pre[idx])
                .map(|(u, &z)| u * layer.act.derivative(z))
                .collect();
            let seg = &mut out[offsets[idx]..offsets[idx + 1]];
            let mut downstream = vec![0.0; input.len()];
            match &layer.weights {
                LayerWeights::Dense(w) => {
                    let d_in = w.cols();
                    for (o, &dl) in delta.iter().enumerate() {
                        if dl == 0.0 {
                            continue;
                        }
                        axpy(scale * dl, input, &mut seg[o * d_in..(o + 1) * d_in]);
                        axpy(dl, w.row(o), &mut downstream);
                    }
                    let bias = &mut seg[w.data().len()..];
                    bias.iter_mut().zip(&delta).for_each(|(g, d)| *g += scale * d);
                }
                LayerWeights::Factorized(b) => {
                    // forward: t = uᵀz, out = vᵀt
                    let h = b.inner_dim();
                    let d_out = b.v.cols();
                    let inner = b.u.t_matvec(input).expect("shapes validated");
                    let (gu, rest) = seg.split_at_mut(b.u.data().len());
                    let (gv, gbias) = rest.split_at_mut(b.v.data().len());
                    for (k, &tk) in inner.iter().enumerate() {
                        axpy(scale * tk, &delta, &mut gv[k * d_out..(k + 1) * d_out]);
                    }
                    let d_inner = b.v.matvec(&delta).expect("shapes validated");
                    for (i, &zi) in input.iter().enumerate() {
                        axpy(scale * zi, &d_inner, &mut gu[i * h..(i + 1) * h]);
                    }
                    downstream = b.u.matvec(&d_inner).expect("shapes validated");
                    gbias.iter_mut().zip(&delta).for_each(|(g, d)| *g += scale * d);
                }
            }
            upstream = downstream;
        }
        Ok(loss)
    }

    fn num_blocks(&self) -> usize {
        self.layers.len()
    }

    fn block_width(&self, block: usize) -> Result<usize> {
        self.layers
            .get(block)
            .map(|l| l.weights.output_dim())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "block {block} out of range for a {}-layer network",
                    self.layers.len()
                ))
            })
    }

    fn block_output(&self, x: &[f64], block: usize) -> Result<Vec<f64>> {
        self.block_width(block)?;
        let (_, mut post) = self.trace(x)?;
        Ok(post.swap_remove(block))
    }
}
