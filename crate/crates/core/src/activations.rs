//! Scalar activation functions with closed-form first derivatives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ELU_ALPHA: f64 = 1.0;
pub const LEAKY_RELU_ALPHA: f64 = 0.01;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Elu { alpha: f64 },
    Gelu,
    LeakyRelu { alpha: f64 },
    Relu,
    Selu { alpha: f64, lambda: f64 },
    Sigmoid,
    Silu,
    Softplus,
    Tanh,
}

impl Activation {
    pub const ALL: [Activation; 9] = [
        Activation::Elu { alpha: ELU_ALPHA },
        Activation::Gelu,
        Activation::LeakyRelu {
            alpha: LEAKY_RELU_ALPHA,
        },
        Activation::Relu,
        Activation::Selu {
            alpha: SELU_ALPHA,
            lambda: SELU_LAMBDA,
        },
        Activation::Sigmoid,
        Activation::Silu,
        Activation::Softplus,
        Activation::Tanh,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Activation::Elu { .. } => "elu",
            Activation::Gelu => "gelu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Relu => "relu",
            Activation::Selu { .. } => "selu",
            Activation::Sigmoid => "sigmoid",
            Activation::Silu => "silu",
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
        }
    }

    /// Whether the first derivative jumps at zero.
    pub fn has_kink(&self) -> bool {
        match *self {
            Activation::Relu | Activation::LeakyRelu { .. } => true,
            Activation::Elu { alpha } => alpha != 1.0,
            Activation::Selu { alpha, .. } => alpha != 1.0,
            _ => false,
        }
    }

    #[inline(always)]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Elu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x.exp_m1()
                }
            }
            Activation::Gelu => 0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh()),
            Activation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Selu { alpha, lambda } => {
                if x > 0.0 {
                    lambda * x
                } else {
                    lambda * alpha * x.exp_m1()
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Silu => x * sigmoid(x),
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Tanh => x.tanh(),
        }
    }

    /// First derivative; at kinks the right-hand derivative.
    #[inline(always)]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Elu { alpha } => {
                if x >= 0.0 {
                    1.0
                } else {
                    alpha * x.exp()
                }
            }
            Activation::Gelu => {
                let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                let t = u.tanh();
                let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Activation::LeakyRelu { alpha } => {
                if x >= 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Selu { alpha, lambda } => {
                if x >= 0.0 {
                    lambda
                } else {
                    lambda * alpha * x.exp()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Softplus => sigmoid(x),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// `1 / (1 + e^-x)`; for very negative `x` the exponential overflows to infinity and the
/// quotient correctly underflows to 0, so no branch is needed.
#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Runs `$body` with `$a` bound to a copy of `$self` inside a match arm per variant, so the
/// per-element `match` in `apply`/`derivative` folds away.
macro_rules! hoisted {
    ($self:expr, $a:ident => $body:expr) => {
        match $self {
            $a @ Activation::Elu { .. } => $body,
            $a @ Activation::Gelu => $body,
            $a @ Activation::LeakyRelu { .. } => $body,
            $a @ Activation::Relu => $body,
            $a @ Activation::Selu { .. } => $body,
            $a @ Activation::Sigmoid => $body,
            $a @ Activation::Silu => $body,
            $a @ Activation::Softplus => $body,
            $a @ Activation::Tanh => $body,
        }
    };
}

impl Activation {
    /// Value and first derivative together, sharing the transcendental where possible.
    #[inline(always)]
    pub fn value_and_derivative(&self, x: f64) -> (f64, f64) {
        match *self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s))
            }
            Activation::Silu => {
                let s = sigmoid(x);
                (x * s, s * (1.0 + x * (1.0 - s)))
            }
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            a => (a.apply(x), a.derivative(x)),
        }
    }

    /// [`apply`](Self::apply) over a slice, dispatching once rather than per element.
    pub fn apply_all(&self, xs: &[f64]) -> Vec<f64> {
        hoisted!(*self, a => xs.iter().map(|&x| a.apply(x)).collect())
    }

    pub fn apply_in_place(&self, xs: &mut [f64]) {
        hoisted!(*self, a => xs.iter_mut().for_each(|x| *x = a.apply(*x)))
    }

    /// Overwrites `xs` with activation values and `ds` with derivatives at the original `xs`.
    pub fn eval_in_place(&self, xs: &mut [f64], ds: &mut [f64]) {
        hoisted!(*self, a => {
            for (x, d) in xs.iter_mut().zip(ds.iter_mut()) {
                (*x, *d) = a.value_and_derivative(*x);
            }
        })
    }

    /// Multiplies `g` in place by the derivative at `xs`, scaled by `factor`.
    pub(crate) fn scale_by_derivative(&self, xs: &[f64], g: &mut [f64], factor: f64) {
        hoisted!(*self, a => {
            for (gv, &x) in g.iter_mut().zip(xs) {
                *gv *= factor * a.derivative(x);
            }
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .iter()
            .copied()
            .find(|a| a.tag() == s)
            .ok_or_else(|| Error::UnknownTag {
                kind: "activation",
                tag: s.to_string(),
            })
    }
}

pub fn act_forward(kind: Activation, x: &Tensor) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), kind.apply_all(x.data()))
}

pub fn act_derivative(kind: Activation, x: &Tensor) -> Tensor {
    x.map(|v| kind.derivative(v))
}
