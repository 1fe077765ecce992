//! Elementwise activations.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Sigmoid,
}

/// Exact GELU, `x * Phi(x)` with the standard normal CDF.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Gelu => x.map(gelu),
            Activation::Sigmoid => x.map(sigmoid),
        }
    }

    /// Backward given the forward *input* `x`.
    pub fn backward(self, x: &Tensor, grad_out: &Tensor) -> crate::Result<Tensor> {
        match self {
            Activation::Gelu => x.zip_map(grad_out, |v, g| g * gelu_grad(v)),
            Activation::Sigmoid => x.zip_map(grad_out, |v, g| {
                let s = sigmoid(v);
                g * s * (1.0 - s)
            }),
        }
    }
}
