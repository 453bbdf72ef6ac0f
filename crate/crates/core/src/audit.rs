//! Trainable-parameter audit and a dense-counting FLOP estimate.

use serde::Serialize;

use crate::basis::FunctionType;
use crate::layers::{Layer, Model, ReductionMode};
use crate::normalization::NormKind;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub tensors: Vec<(String, usize)>,
    pub layers: Vec<usize>,
    pub total: usize,
}

pub fn count_params(model: &Model) -> ParamReport {
    let mut layers = vec![0; model.layers().len()];
    let mut tensors = Vec::new();
    for (name, t) in model.params().iter() {
        let idx = name
            .strip_prefix("layers.")
            .and_then(|r| r.split('.').next())
            .and_then(|i| i.parse::<usize>().ok())
            .expect("parameter names start with layers.<i>");
        layers[idx] += t.len();
        tensors.push((name.to_string(), t.len()));
    }
    let total = layers.iter().sum();
    ParamReport {
        tensors,
        layers,
        total,
    }
}

impl ParamReport {
    /// Indented human-readable listing.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, sub) in self.layers.iter().enumerate() {
            s.push_str(&format!("layer {i}: {sub}\n"));
            let prefix = format!("layers.{i}.");
            for (name, n) in self.tensors.iter().filter(|(n, _)| n.starts_with(&prefix)) {
                s.push_str(&format!("  {name}: {n}\n"));
            }
        }
        s.push_str(&format!("total: {}\n", self.total));
        s
    }

    /// `key=value` lines for scripts.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (name, n) in &self.tensors {
            s.push_str(&format!("param.{name}={n}\n"));
        }
        for (i, sub) in self.layers.iter().enumerate() {
            s.push_str(&format!("layer.{i}={sub}\n"));
        }
        s.push_str(&format!("total={}\n", self.total));
        s
    }
}

/// Parameters of a spline KAN layer with a `G + k` coefficient grid per edge.
pub fn kan_params_formula(d_in: usize, d_out: usize, grid: usize, order: usize) -> usize {
    d_in * d_out * (grid + order) + d_out
}

pub fn mlp_params_formula(d_in: usize, d_out: usize) -> usize {
    d_in * d_out + d_out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LayerFlops {
    /// `2abc` for every `(a, b) x (b, c)` product.
    pub dense: u64,
    /// Named elementwise stages and their op-unit counts.
    pub elementwise: Vec<(String, u64)>,
}

impl LayerFlops {
    pub fn elementwise_total(&self) -> u64 {
        self.elementwise.iter().map(|(_, n)| n).sum()
    }

    fn dense(&mut self, a: usize, b: usize, c: usize) {
        self.dense += 2 * (a * b * c) as u64;
    }

    fn elem(&mut self, name: &str, n: usize) {
        self.elementwise.push((name.to_string(), n as u64));
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub layers: Vec<LayerFlops>,
    pub dense_total: u64,
    pub elementwise_total: u64,
}

fn combine_ops(f: FunctionType) -> usize {
    match f {
        FunctionType::Sum | FunctionType::Prod => 1,
        FunctionType::Quad1 | FunctionType::SumProd => 2,
        FunctionType::Cubic2 => 3,
        FunctionType::Cubic1 => 5,
        FunctionType::Quad2 => 6,
    }
}

fn norm_ops(kind: NormKind, extent: usize) -> usize {
    match kind {
        NormKind::None => 0,
        // mean, center, square, mean, scale, gain, bias
        NormKind::Layer | NormKind::Batch => 7 * extent,
    }
}

/// Forward-pass cost of one batch of `batch` rows.
///
/// Softmax counts 5 op-units per entry; every other elementwise stage counts one per entry.
pub fn estimate_flops(model: &Model, batch: usize) -> FlopReport {
    let mut layers = Vec::new();
    for layer in model.layers() {
        let mut f = LayerFlops::default();
        let (d_in, d_out) = layer.widths();
        match layer {
            Layer::Afkan(l) => {
                let n = l.grid.n();
                let bdn = batch * d_in * n;
                f.elem("basis", (4 + combine_ops(l.ftype)) * bdn);
                if l.l2mm {
                    f.elem("l2_minmax", 6 * bdn);
                }
                match l.mode {
                    ReductionMode::GlobalAttn => {
                        f.dense(batch * d_in, n, 1);
                        f.elem("attn_bias", batch * d_in);
                        f.elem("softmax", 5 * batch * d_in);
                        f.elem("weight_and_sum", 2 * bdn);
                    }
                    ReductionMode::SpatialAttn => {
                        f.elem("depthwise_conv", 2 * bdn);
                        f.elem("softmax", 5 * bdn);
                        f.elem("weight_and_sum", 2 * bdn);
                    }
                    ReductionMode::Multistep => {
                        f.dense(batch * d_in, n, 1);
                        f.elem("attn_bias", batch * d_in);
                    }
                }
                f.elem("pln", norm_ops(l.pln.kind, batch * d_in));
                f.elem("activation", batch * d_in);
                f.dense(batch, d_in, d_out);
                f.elem("out_bias", batch * d_out);
            }
            Layer::Relukan(l) => {
                let nd = l.grid.n() * d_in;
                f.elem("basis", 7 * batch * nd);
                f.dense(batch, nd, d_out);
                f.elem("conv_bias", batch * d_out);
            }
            Layer::Mlp(l) => {
                f.elem("norm", norm_ops(l.pre_norm.kind, batch * d_in));
                f.dense(batch, d_in, d_out);
                if l.act_after.is_some() {
                    f.elem("activation", batch * d_out);
                }
            }
            Layer::BasisKan(l) => {
                let c = l.centers.len();
                f.elem("norm", norm_ops(l.norm.kind, batch * d_in));
                f.elem("basis", 4 * batch * d_in * c);
                f.dense(batch, d_in * c, d_out);
                f.elem("bias", batch * d_out);
            }
        }
        layers.push(f);
    }
    let dense_total = layers.iter().map(|l| l.dense).sum();
    let elementwise_total = layers.iter().map(LayerFlops::elementwise_total).sum();
    FlopReport {
        layers,
        dense_total,
        elementwise_total,
    }
}
