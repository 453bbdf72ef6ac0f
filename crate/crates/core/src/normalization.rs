//! Basis-output scaling (L2 then min-max) and the pre-linear layer/batch norms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{CustomOp, Tape, Var};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Layer,
    Batch,
    None,
}

impl NormKind {
    pub fn tag(&self) -> &'static str {
        match self {
            NormKind::Layer => "layer",
            NormKind::Batch => "batch",
            NormKind::None => "none",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer" => Ok(NormKind::Layer),
            "batch" => Ok(NormKind::Batch),
            "none" => Ok(NormKind::None),
            _ => Err(Error::UnknownTag {
                kind: "normalization",
                tag: s.to_string(),
            }),
        }
    }
}

/// L2-normalizes `x` over all of its entries, then min-max scales it onto `[lo, hi]`.
///
/// An all-zero input skips the L2 step; a flat input maps to a constant `lo` tensor.
/// Recorded as a single tape node. The L2 factor cancels inside the min-max ratio, so the
/// backward rule is that of `(x - min x) / (max x - min x)`, with min and max routed to
/// their first occurrence.
pub fn l2_minmax(tape: &mut Tape, x: Var, lo: f64, hi: f64) -> Result<Var> {
    let xs = tape.value(x);
    let ss: f64 = xs.data().iter().map(|v| v * v).sum();
    let norm = if ss == 0.0 { 1.0 } else { ss.powf(0.5) };
    let o: Vec<f64> = if ss == 0.0 {
        xs.data().to_vec()
    } else {
        xs.data().iter().map(|v| v / norm).collect()
    };
    let (mut argmin, mut argmax) = (0, 0);
    for (i, &v) in o.iter().enumerate() {
        if v < o[argmin] {
            argmin = i;
        }
        if v > o[argmax] {
            argmax = i;
        }
    }
    if !ss.is_finite() {
        return Err(Error::NonFinite { op: "l2_minmax" });
    }
    let shape = xs.shape().to_vec();
    if o.is_empty() || o[argmin] == o[argmax] {
        return Ok(tape.constant(Tensor::full(shape, lo)));
    }
    let (mn, mx) = (o[argmin], o[argmax]);
    let den = mx - mn;
    let affine = !(lo == 0.0 && hi == 1.0);
    let mut y = o;
    for v in &mut y {
        *v = (*v - mn) / den;
        if affine {
            *v = *v * (hi - lo) + lo;
        }
    }
    let op = MinMax {
        argmin,
        argmax,
        lo,
        span: hi - lo,
        // d unit / d x = 1 / (norm * den) before the correction terms.
        inv: 1.0 / (norm * den),
    };
    tape.custom(Box::new(op), &[x], Tensor::new(shape, y)?)
}

#[derive(Debug)]
struct MinMax {
    argmin: usize,
    argmax: usize,
    lo: f64,
    span: f64,
    inv: f64,
}

impl CustomOp for MinMax {
    fn name(&self) -> &'static str {
        "l2_minmax"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        out: &Tensor,
        mut grad: Tensor,
        need: &[bool],
        _: f64,
    ) -> Vec<Option<Tensor>> {
        if !need[0] {
            return vec![None];
        }
        let (mut g_sum, mut gy_sum) = (0.0, 0.0);
        for (g, &y) in grad.data_mut().iter_mut().zip(out.data()) {
            let unit = (y - self.lo) / self.span;
            *g *= self.span;
            g_sum += *g;
            gy_sum += *g * unit;
            *g *= self.inv;
        }
        let gd = grad.data_mut();
        gd[self.argmin] += (gy_sum - g_sum) * self.inv;
        gd[self.argmax] -= gy_sum * self.inv;
        vec![Some(grad)]
    }
}

/// Per-row standardization over the last axis followed by `gain` and `bias`.
pub fn layer_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
    let d = *tape.shape(x).last().unwrap_or(&0);
    for p in [gain, bias] {
        if tape.shape(p) != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: tape.shape(x).to_vec(),
                rhs: tape.shape(p).to_vec(),
            });
        }
    }
    let mu = tape.mean(x, -1, true)?;
    let xc = tape.sub(x, mu)?;
    let sq = tape.mul(xc, xc)?;
    let var = tape.mean(sq, -1, true)?;
    let ve = tape.add_scalar(var, eps)?;
    let inv = tape.pow_scalar(ve, -0.5)?;
    let xhat = tape.mul(xc, inv)?;
    let scaled = tape.mul(xhat, gain)?;
    tape.add(scaled, bias)
}

/// Running statistics of a batch norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(d: usize) -> Self {
        Self {
            mean: Tensor::zeros(vec![d]),
            var: Tensor::ones(vec![d]),
            momentum: BN_MOMENTUM,
        }
    }
}

/// Column-wise batch normalization of a `(B, D)` input.
///
/// In training mode batch statistics normalize the input and the running
/// statistics move toward them (`new = (1 - m) old + m batch`, variance unbiased).
pub fn batch_norm(
    tape: &mut Tape,
    x: Var,
    gain: Var,
    bias: Var,
    stats: &mut RunningStats,
    training: bool,
    eps: f64,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 || tape.shape(gain) != [shape[1]] || tape.shape(bias) != [shape[1]] {
        return Err(Error::ShapeMismatch {
            op: "batch_norm",
            lhs: shape,
            rhs: tape.shape(gain).to_vec(),
        });
    }
    let (b, d) = (shape[0], shape[1]);
    let xhat = if training {
        if b < 2 {
            return Err(Error::invalid(
                "batch norm needs at least 2 rows in training mode",
            ));
        }
        let mu = tape.mean(x, 0, true)?;
        let xc = tape.sub(x, mu)?;
        let sq = tape.mul(xc, xc)?;
        let var = tape.mean(sq, 0, true)?;
        let m = stats.momentum;
        let unbias = b as f64 / (b - 1) as f64;
        let (bm, bv) = (tape.value(mu).data().to_vec(), tape.value(var).data().to_vec());
        for j in 0..d {
            let rm = &mut stats.mean.data_mut()[j];
            *rm = (1.0 - m) * *rm + m * bm[j];
            let rv = &mut stats.var.data_mut()[j];
            *rv = (1.0 - m) * *rv + m * bv[j] * unbias;
        }
        let ve = tape.add_scalar(var, eps)?;
        let inv = tape.pow_scalar(ve, -0.5)?;
        tape.mul(xc, inv)?
    } else {
        let mean = tape.constant(stats.mean.clone());
        let inv = tape.constant(stats.var.map(|v| 1.0 / (v + eps).sqrt()));
        let xc = tape.sub(x, mean)?;
        tape.mul(xc, inv)?
    };
    let scaled = tape.mul(xhat, gain)?;
    tape.add(scaled, bias)
}

/// Affine parameters and running statistics of one normalization site.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gain: Tensor,
    pub bias: Tensor,
    pub stats: RunningStats,
    pub eps: f64,
}

impl NormParams {
    pub fn identity(d: usize) -> Self {
        Self {
            gain: Tensor::ones(vec![d]),
            bias: Tensor::zeros(vec![d]),
            stats: RunningStats::new(d),
            eps: NORM_EPS,
        }
    }
}

pub fn l2_minmax_values(x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let y = l2_minmax(&mut t, v, lo, hi)?;
    Ok(t.value(y).clone())
}

pub fn layer_norm_values(x: &Tensor, p: &NormParams) -> Result<Tensor> {
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let g = t.constant(p.gain.clone());
    let b = t.constant(p.bias.clone());
    let y = layer_norm(&mut t, v, g, b, p.eps)?;
    Ok(t.value(y).clone())
}

pub fn batch_norm_values(x: &Tensor, p: &mut NormParams, training: bool) -> Result<Tensor> {
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let g = t.constant(p.gain.clone());
    let b = t.constant(p.bias.clone());
    let y = batch_norm(&mut t, v, g, b, &mut p.stats, training, p.eps)?;
    Ok(t.value(y).clone())
}
