//! Minimal dense layers with hand-written backward passes, in `f64`.
//!
//! Every trainable tensor is a [`Param`] that owns its gradient and AdamW
//! moments. Layers expose them through [`ParamMut`] slices so the optimizer
//! and gradient clipping can treat the whole model as one flat parameter set.

use ndarray::{Array, Array1, Array2, ArrayView1, ArrayView2, Axis, Dimension, ShapeBuilder};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct Param<D: Dimension> {
    pub value: Array<f64, D>,
    pub grad: Array<f64, D>,
    m: Array<f64, D>,
    v: Array<f64, D>,
    /// Whether decoupled weight decay applies (weights yes, biases and norms no).
    pub decay: bool,
}

impl<D: Dimension> Param<D> {
    pub fn new(value: Array<f64, D>, decay: bool) -> Self {
        let value = value.as_standard_layout().into_owned();
        let zeros = Array::zeros(value.raw_dim());
        Self {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
            decay,
        }
    }

    pub fn zeros<Sh: ShapeBuilder<Dim = D>>(shape: Sh, decay: bool) -> Self {
        Self::new(Array::zeros(shape), decay)
    }

    pub fn normal<Sh: ShapeBuilder<Dim = D>, R: Rng + ?Sized>(
        shape: Sh,
        std: f64,
        decay: bool,
        rng: &mut R,
    ) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        let mut value = Array::zeros(shape);
        value.iter_mut().for_each(|x| *x = dist.sample(rng));
        Self::new(value, decay)
    }

    pub fn named(&self, name: impl Into<String>) -> ParamRef<'_> {
        ParamRef {
            name: name.into(),
            shape: self.value.shape(),
            value: self.value.as_slice().expect("standard layout"),
        }
    }

    pub fn view(&mut self, name: impl Into<String>) -> ParamMut<'_> {
        ParamMut {
            name: name.into(),
            shape: self.value.shape().to_vec(),
            value: self.value.as_slice_mut().expect("standard layout"),
            grad: self.grad.as_slice_mut().expect("standard layout"),
            m: self.m.as_slice_mut().expect("standard layout"),
            v: self.v.as_slice_mut().expect("standard layout"),
            decay: self.decay,
        }
    }
}

/// Read-only view of one parameter tensor.
pub struct ParamRef<'a> {
    pub name: String,
    pub shape: &'a [usize],
    pub value: &'a [f64],
}

/// Flat mutable view of one parameter tensor.
pub struct ParamMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
    pub m: &'a mut [f64],
    pub v: &'a mut [f64],
    pub decay: bool,
}

pub fn zero_grads(params: &mut [ParamMut<'_>]) {
    for p in params {
        p.grad.fill(0.0);
    }
}

/// Affine map `y = x W^T + b` with `W` stored as (out, in).
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param<ndarray::Ix2>,
    pub bias: Param<ndarray::Ix1>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, std: f64, rng: &mut R) -> Self {
        Self {
            weight: Param::normal((output, input), std, true, rng),
            bias: Param::zeros(output, false),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.value.t()) + &self.bias.value
    }

    pub fn forward_vec(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weight.value.dot(&x) + &self.bias.value
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
        self.weight.grad += &dy.t().dot(&x);
        self.bias.grad += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.value)
    }

    pub fn backward_vec(&mut self, x: ArrayView1<f64>, dy: ArrayView1<f64>) -> Array1<f64> {
        let outer = dy
            .view()
            .insert_axis(Axis(1))
            .dot(&x.view().insert_axis(Axis(0)));
        self.weight.grad += &outer;
        self.bias.grad += &dy;
        self.weight.value.t().dot(&dy)
    }

    pub fn params(&self, prefix: &str) -> Vec<ParamRef<'_>> {
        vec![
            self.weight.named(format!("{prefix}.weight")),
            self.bias.named(format!("{prefix}.bias")),
        ]
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<ParamMut<'_>> {
        vec![
            self.weight.view(format!("{prefix}.weight")),
            self.bias.view(format!("{prefix}.bias")),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param<ndarray::Ix1>,
    pub beta: Param<ndarray::Ix1>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormTrace {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize, eps: f64) -> Self {
        Self {
            gamma: Param::new(Array1::ones(dim), false),
            beta: Param::zeros(dim, false),
            eps,
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, LayerNormTrace) {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let centered = &x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|c| c * c).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma.value + &self.beta.value;
        (y, LayerNormTrace { xhat, inv_std })
    }

    pub fn backward(&mut self, trace: &LayerNormTrace, dy: ArrayView2<f64>) -> Array2<f64> {
        self.gamma.grad += &(&dy * &trace.xhat).sum_axis(Axis(0));
        self.beta.grad += &dy.sum_axis(Axis(0));
        let dxhat = &dy * &self.gamma.value;
        let d = dy.ncols() as f64;
        let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
        let mean_dxhat_xhat = (&dxhat * &trace.xhat).sum_axis(Axis(1)) / d;
        let mut dx = dxhat - &mean_dxhat.view().insert_axis(Axis(1));
        dx = dx - &trace.xhat * &mean_dxhat_xhat.view().insert_axis(Axis(1));
        dx * &trace.inv_std.view().insert_axis(Axis(1))
    }

    pub fn params(&self, prefix: &str) -> Vec<ParamRef<'_>> {
        vec![
            self.gamma.named(format!("{prefix}.weight")),
            self.beta.named(format!("{prefix}.bias")),
        ]
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<ParamMut<'_>> {
        vec![
            self.gamma.view(format!("{prefix}.weight")),
            self.beta.view(format!("{prefix}.bias")),
        ]
    }
}

/// Inverted dropout mask (entries `0` or `1/(1-rate)`), or `None` when the
/// layer is inactive.
pub fn dropout_mask<D: Dimension, R: Rng + ?Sized>(
    dim: D,
    rate: f64,
    rng: Option<&mut R>,
) -> Option<Array<f64, D>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let mut mask = Array::zeros(dim);
    mask.iter_mut().for_each(|m| {
        *m = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
    });
    Some(mask)
}

pub fn apply_mask<D: Dimension>(x: Array<f64, D>, mask: Option<&Array<f64, D>>) -> Array<f64, D> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax.
pub fn softmax_rows(mut x: Array2<f64>) -> Array2<f64> {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    x
}
