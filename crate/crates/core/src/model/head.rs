use ndarray::{Array1, ArrayView1, Ix1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{apply_mask, dropout_mask, sigmoid, Linear, ParamMut, ParamRef};
use crate::va::{VA_MAX, VA_MIN};

const SPAN: f64 = VA_MAX - VA_MIN;
// Keeps outputs inside the open interval once sigmoid rounds to 0 or 1.
const LOWEST: f64 = VA_MIN + SPAN * f64::EPSILON;
const HIGHEST: f64 = VA_MAX - SPAN * f64::EPSILON;

/// Maps an unbounded score onto the open interval (1, 9).
pub fn scale_to_va(raw: f64) -> f64 {
    (SPAN * sigmoid(raw) + VA_MIN).clamp(LOWEST, HIGHEST)
}

/// Derivative of [`scale_to_va`] with respect to `raw`.
pub fn scale_to_va_grad(raw: f64) -> f64 {
    let s = sigmoid(raw);
    SPAN * s * (1.0 - s)
}

/// Two-layer MLP producing one unbounded score: `d -> d/2 -> 1` with tanh.
#[derive(Debug, Clone)]
pub struct RegressionHead {
    pub dense: Linear,
    pub out: Linear,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct HeadTrace {
    input: Array1<f64>,
    hidden: Array1<f64>,
    mask: Option<Array1<f64>>,
    raw: f64,
}

impl HeadTrace {
    pub fn raw(&self) -> f64 {
        self.raw
    }
}

impl RegressionHead {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, dropout: f64, init_std: f64, rng: &mut R) -> Result<Self> {
        if input_dim < 2 {
            return Err(Error::Config(format!("head input dim must be at least 2, got {input_dim}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("head dropout {dropout} must lie in [0, 1)")));
        }
        Ok(Self {
            dense: Linear::new(input_dim, input_dim / 2, init_std, rng),
            out: Linear::new(input_dim / 2, 1, init_std, rng),
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dense.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.dense.output_dim()
    }

    /// Unbounded score. Dropout between the layers is active only when `rng`
    /// is given.
    pub fn forward<R: Rng + ?Sized>(&self, h: ArrayView1<f64>, rng: Option<&mut R>) -> HeadTrace {
        let hidden = self.dense.forward_vec(h).mapv(f64::tanh);
        let mask = dropout_mask(Ix1(hidden.len()), self.dropout, rng);
        let dropped = apply_mask(hidden.clone(), mask.as_ref());
        let raw = self.out.forward_vec(dropped.view())[0];
        HeadTrace {
            input: h.to_owned(),
            hidden,
            mask,
            raw,
        }
    }

    pub fn raw(&self, h: ArrayView1<f64>) -> f64 {
        let hidden = self.dense.forward_vec(h).mapv(f64::tanh);
        self.out.forward_vec(hidden.view())[0]
    }

    /// Accumulates parameter gradients for `d loss / d raw` and returns the
    /// gradient with respect to the head input.
    pub fn backward(&mut self, trace: &HeadTrace, d_raw: f64) -> Array1<f64> {
        let dropped = apply_mask(trace.hidden.clone(), trace.mask.as_ref());
        let d_dropped = self.out.backward_vec(dropped.view(), Array1::from_elem(1, d_raw).view());
        let d_hidden = apply_mask(d_dropped, trace.mask.as_ref());
        let d_pre = d_hidden * trace.hidden.mapv(|t| 1.0 - t * t);
        self.dense.backward_vec(trace.input.view(), d_pre.view())
    }

    /// Zeroes the output layer so every score is exactly 0.
    pub fn zero_output(&mut self) {
        self.out.weight.value.fill(0.0);
        self.out.bias.value.fill(0.0);
    }

    pub fn params(&self, prefix: &str) -> Vec<ParamRef<'_>> {
        let mut v = self.dense.params(&format!("{prefix}.dense"));
        v.extend(self.out.params(&format!("{prefix}.out")));
        v
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<ParamMut<'_>> {
        let mut v = self.dense.params_mut(&format!("{prefix}.dense"));
        v.extend(self.out.params_mut(&format!("{prefix}.out")));
        v
    }
}
