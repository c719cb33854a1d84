//! Dense layers with explicit backward passes.
//!
//! Every layer follows the same contract: `forward` consumes an input
//! tensor and returns the output, `backward` consumes the same input (or a
//! cache) plus the upstream gradient and returns parameter gradients and
//! the gradient with respect to the input. Backward passes are exact
//! derivatives of the forward code, so central finite differences on the
//! forward pass bound their error.

use crate::init::init_linear_weight;
use crate::tensor::Tensor2;
use crate::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected layer computing `x @ weight + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `(in, out)` weight matrix.
    pub weight: Tensor2,
    /// `(1, out)` bias row.
    pub bias: Tensor2,
}

/// Gradients for a [`Linear`] layer, shaped like its parameters.
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: init_linear_weight(rng, fan_in, fan_out),
            bias: Tensor2::zeros(1, fan_out),
        }
    }

    /// Square layer that returns its input unchanged.
    pub fn identity(n: usize) -> Self {
        let mut weight = Tensor2::zeros(n, n);
        for i in 0..n {
            *weight.at_mut(i, i) = 1.0;
        }
        Linear { weight, bias: Tensor2::zeros(1, n) }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn forward(&self, x: &Tensor2) -> Tensor2 {
        x.matmul(&self.weight).add_row(&self.bias)
    }

    /// Returns parameter gradients and the input gradient.
    pub fn backward(&self, x: &Tensor2, upstream: &Tensor2) -> (LinearGrads, Tensor2) {
        let grads = LinearGrads {
            weight: x.t_matmul(upstream),
            bias: upstream.sum_rows(),
        };
        (grads, upstream.matmul_t(&self.weight))
    }
}

/// Element-wise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
    Tanh,
}

const GELU_C: Real = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_CUBIC: Real = 0.044_715;

impl Activation {
    pub fn apply(self, v: Real) -> Real {
        match self {
            // Tanh-form GELU; the backward pass below is its exact
            // derivative, so the pair stays finite-difference consistent.
            Activation::Gelu => {
                let u = GELU_C * (v + GELU_CUBIC * v * v * v);
                0.5 * v * (1.0 + u.tanh())
            }
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    pub fn derivative(self, v: Real) -> Real {
        match self {
            Activation::Gelu => {
                let u = GELU_C * (v + GELU_CUBIC * v * v * v);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * GELU_CUBIC * v * v);
                0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du
            }
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn forward(self, x: &Tensor2) -> Tensor2 {
        x.map(|v| self.apply(v))
    }

    /// Input gradient given the pre-activation input.
    pub fn backward(self, x: &Tensor2, upstream: &Tensor2) -> Tensor2 {
        assert_eq!(x.shape(), upstream.shape());
        let data = x
            .data
            .iter()
            .zip(&upstream.data)
            .map(|(&v, &u)| u * self.derivative(v))
            .collect();
        Tensor2 { rows: x.rows, cols: x.cols, data }
    }
}

const LAYER_NORM_EPS: Real = 1e-5;

/// Per-row normalization with learned gain and shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    /// `(1, dim)` multiplicative gain, initialized to ones.
    pub gain: Tensor2,
    /// `(1, dim)` additive shift, initialized to zeros.
    pub shift: Tensor2,
}

/// Gradients for a [`LayerNorm`], shaped like its parameters.
#[derive(Debug, Clone)]
pub struct LayerNormGrads {
    pub gain: Tensor2,
    pub shift: Tensor2,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor2::from_vec(1, dim, vec![1.0; dim]),
            shift: Tensor2::zeros(1, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.cols
    }

    pub fn forward(&self, x: &Tensor2) -> Tensor2 {
        assert_eq!(x.cols, self.dim(), "layer norm width mismatch");
        let mut out = Tensor2::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let row = x.row(r);
            let (mean, inv_std) = row_stats(row);
            for (c, (&v, o)) in row.iter().zip(out.row_mut(r)).enumerate() {
                *o = self.gain.data[c] * (v - mean) * inv_std + self.shift.data[c];
            }
        }
        out
    }

    pub fn backward(&self, x: &Tensor2, upstream: &Tensor2) -> (LayerNormGrads, Tensor2) {
        assert_eq!(x.shape(), upstream.shape());
        let n = x.cols as Real;
        let mut grads = LayerNormGrads {
            gain: Tensor2::zeros(1, x.cols),
            shift: Tensor2::zeros(1, x.cols),
        };
        let mut dx = Tensor2::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let row = x.row(r);
            let up = upstream.row(r);
            let (mean, inv_std) = row_stats(row);
            let normed: Vec<Real> = row.iter().map(|&v| (v - mean) * inv_std).collect();
            // d(normed) plus its row statistics drive the input gradient.
            let mut sum_d = 0.0;
            let mut sum_dn = 0.0;
            let d: Vec<Real> = (0..x.cols)
                .map(|c| {
                    let dv = up[c] * self.gain.data[c];
                    sum_d += dv;
                    sum_dn += dv * normed[c];
                    grads.gain.data[c] += up[c] * normed[c];
                    grads.shift.data[c] += up[c];
                    dv
                })
                .collect();
            for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                *o = inv_std * (d[c] - sum_d / n - normed[c] * sum_dn / n);
            }
        }
        (grads, dx)
    }
}

fn row_stats(row: &[Real]) -> (Real, Real) {
    let n = row.len() as Real;
    let mean = row.iter().sum::<Real>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<Real>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

/// Inverted dropout: kept entries are scaled by 1/(1-rate) so the
/// expectation over masks equals the eval-mode identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub rate: Real,
}

impl Dropout {
    pub fn new(rate: Real) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Dropout { rate }
    }

    /// Samples a mask of 0s and 1/(1-rate)s; apply with [`Dropout::apply`].
    pub fn sample_mask<R: Rng>(&self, rng: &mut R, rows: usize, cols: usize) -> Tensor2 {
        if self.rate == 0.0 {
            return Tensor2::from_vec(rows, cols, vec![1.0; rows * cols]);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let data = (0..rows * cols)
            .map(|_| if rng.gen::<Real>() < self.rate { 0.0 } else { keep })
            .collect();
        Tensor2::from_vec(rows, cols, data)
    }

    /// Element-wise product with a previously sampled mask; with the mask
    /// fixed the op is linear, so backward is the same product.
    pub fn apply(x: &Tensor2, mask: &Tensor2) -> Tensor2 {
        assert_eq!(x.shape(), mask.shape());
        let data = x.data.iter().zip(&mask.data).map(|(&a, &m)| a * m).collect();
        Tensor2 { rows: x.rows, cols: x.cols, data }
    }

    pub fn backward(upstream: &Tensor2, mask: &Tensor2) -> Tensor2 {
        Dropout::apply(upstream, mask)
    }
}

/// Numerically stable per-row softmax.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let max = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        let mut sum = 0.0;
        for (o, &v) in out.row_mut(r).iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in out.row_mut(r) {
            *o /= sum;
        }
    }
    out
}

/// Input gradient of [`softmax_rows`] given its output `p`.
pub fn softmax_backward(p: &Tensor2, upstream: &Tensor2) -> Tensor2 {
    assert_eq!(p.shape(), upstream.shape());
    let mut dx = Tensor2::zeros(p.rows, p.cols);
    for r in 0..p.rows {
        let pr = p.row(r);
        let up = upstream.row(r);
        let dot: Real = pr.iter().zip(up).map(|(&a, &b)| a * b).sum();
        for (o, (&pv, &uv)) in dx.row_mut(r).iter_mut().zip(pr.iter().zip(up)) {
            *o = pv * (uv - dot);
        }
    }
    dx
}

#[cfg(test)]
pub(crate) mod grad_check {
    //! Central finite differences over a scalar probe loss.

    use super::*;

    /// Probe loss: sum of outputs weighted by a fixed coefficient tensor,
    /// so every output element influences the scalar.
    pub fn probe_loss(out: &Tensor2, coeff: &Tensor2) -> Real {
        out.data.iter().zip(&coeff.data).map(|(&a, &b)| a * b).sum()
    }

    /// Central difference of `f` at `x[index]` with step `h`.
    pub fn central_diff(
        x: &Tensor2,
        index: usize,
        h: Real,
        mut f: impl FnMut(&Tensor2) -> Real,
    ) -> Real {
        let mut plus = x.clone();
        plus.data[index] += h;
        let mut minus = x.clone();
        minus.data[index] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    /// Relative error with a unit floor: tiny true gradients are compared
    /// absolutely.
    pub fn rel_err(analytic: Real, numeric: Real) -> Real {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
    }

    pub fn assert_close(analytic: Real, numeric: Real, tol: Real, what: &str) {
        let e = rel_err(analytic, numeric);
        assert!(e < tol, "{what}: analytic {analytic} vs numeric {numeric} (rel {e})");
    }
}
