use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, kaiming_uniform, NormSite};
use crate::activations::Activation;
use crate::basis::{self, FunctionType, GridSpec, PhaseLayout};
use crate::error::{Error, Result};
use crate::normalization::{self, NormKind};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// How the `(B, D, n)` basis tensor is collapsed to `(B, D)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMode {
    GlobalAttn,
    SpatialAttn,
    Multistep,
}

impl ReductionMode {
    pub const ALL: [ReductionMode; 3] = [
        ReductionMode::GlobalAttn,
        ReductionMode::SpatialAttn,
        ReductionMode::Multistep,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            ReductionMode::GlobalAttn => "global_attn",
            ReductionMode::SpatialAttn => "spatial_attn",
            ReductionMode::Multistep => "multistep",
        }
    }
}

impl fmt::Display for ReductionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ReductionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReductionMode::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::UnknownTag {
                kind: "reduction mode",
                tag: s.to_string(),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Reducer {
    /// `W_gk (n)`, `b_gk` scalar, optional temperature.
    Linear {
        weight: ParamId,
        bias: ParamId,
        tau: Option<ParamId>,
    },
    /// Depthwise kernel-1 convolution over the basis axis plus temperature.
    Conv {
        weight: ParamId,
        bias: ParamId,
        tau: ParamId,
    },
}

/// One AF-KAN layer mapping `(B, D)` to `(B, d_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AfKanLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub grid: GridSpec,
    pub act: Activation,
    pub ftype: FunctionType,
    pub mode: ReductionMode,
    pub l2mm: bool,
    low: ParamId,
    high: ParamId,
    reducer: Reducer,
    pub pln: NormSite,
    w_out: ParamId,
    b_out: ParamId,
}

/// Layer hyperparameters shared by every AF-KAN layer of a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct AfKanConfig {
    pub grid: GridSpec,
    pub act: Activation,
    pub ftype: FunctionType,
    pub mode: ReductionMode,
    pub pln: NormKind,
    pub l2mm: bool,
}

impl AfKanLayer {
    pub(crate) fn new(
        d_in: usize,
        d_out: usize,
        cfg: AfKanConfig,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n = cfg.grid.n();
        let phase = basis::phase_init(cfg.grid, PhaseLayout::Compact);
        let low = store.insert(format!("{prefix}.phase_low"), phase.low);
        let high = store.insert(format!("{prefix}.phase_high"), phase.high);
        let tau_init = Tensor::scalar((d_in as f64).sqrt());
        let reducer = match cfg.mode {
            ReductionMode::GlobalAttn | ReductionMode::Multistep => {
                let weight = store.insert(format!("{prefix}.attn_weight"), kaiming_uniform(rng, vec![n], n));
                let bias = store.insert(format!("{prefix}.attn_bias"), Tensor::scalar(0.0));
                let tau = (cfg.mode == ReductionMode::GlobalAttn)
                    .then(|| store.insert(format!("{prefix}.tau"), tau_init.clone()));
                Reducer::Linear { weight, bias, tau }
            }
            ReductionMode::SpatialAttn => {
                let weight = store.insert(format!("{prefix}.conv_weight"), kaiming_uniform(rng, vec![n], 1));
                let bias = store.insert(format!("{prefix}.conv_bias"), Tensor::zeros(vec![n]));
                let tau = store.insert(format!("{prefix}.tau"), tau_init);
                Reducer::Conv { weight, bias, tau }
            }
        };
        let pln = NormSite::new(cfg.pln, d_in, &format!("{prefix}.pln"), store);
        let w_out = store.insert(
            format!("{prefix}.w_out"),
            kaiming_uniform(rng, vec![d_in, d_out], d_in),
        );
        let b_out = store.insert(format!("{prefix}.b_out"), Tensor::zeros(vec![d_out]));
        Self {
            d_in,
            d_out,
            grid: cfg.grid,
            act: cfg.act,
            ftype: cfg.ftype,
            mode: cfg.mode,
            l2mm: cfg.l2mm,
            low,
            high,
            reducer,
            pln,
            w_out,
            b_out,
        }
    }

    /// Basis expansion followed by the optional L2 / min-max scaling, shape `(B, D, n)`.
    pub fn scaled_basis(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        check_input(tape, x, self.d_in, "afkan_forward")?;
        let xa = basis::basis_a(
            tape,
            x,
            bound.var(self.low),
            bound.var(self.high),
            self.act,
            self.ftype,
        )?;
        if self.l2mm {
            normalization::l2_minmax(tape, xa, 0.0, 1.0)
        } else {
            Ok(xa)
        }
    }

    /// Attention weights with the same layout as the basis tensor (global: `(B, D, 1)`,
    /// spatial: `(B, D, n)`), or the reduced `(B, D)` features for multistep.
    pub fn attention(&self, tape: &mut Tape, bound: &Bound, xn1: Var) -> Result<Var> {
        let shape = tape.shape(xn1).to_vec();
        let (b, d, n) = (shape[0], shape[1], shape[2]);
        match self.reducer {
            Reducer::Linear { weight, bias, tau } => {
                let w = tape.reshape(bound.var(weight), vec![n, 1])?;
                let lin = tape.matmul(xn1, w)?;
                let lin = tape.add(lin, bound.var(bias))?;
                match tau {
                    Some(t) => tape.softmax_tempered(lin, 1, bound.var(t)),
                    None => tape.reshape(lin, vec![b, d]),
                }
            }
            Reducer::Conv { weight, bias, tau } => {
                let perm = tape.permute(xn1, vec![0, 2, 1])?;
                let w = tape.reshape(bound.var(weight), vec![n, 1])?;
                let c = tape.reshape(bound.var(bias), vec![n, 1])?;
                let conv = tape.mul(perm, w)?;
                let conv = tape.add(conv, c)?;
                let attn = tape.softmax_tempered(conv, -2, bound.var(tau))?;
                tape.permute(attn, vec![0, 2, 1])
            }
        }
    }

    /// The `(B, D)` features fed to the pre-linear normalization.
    pub fn reduce(&self, tape: &mut Tape, bound: &Bound, xn1: Var) -> Result<Var> {
        let attn = self.attention(tape, bound, xn1)?;
        if self.mode == ReductionMode::Multistep {
            return Ok(attn);
        }
        if self.mode == ReductionMode::GlobalAttn {
            // attn is constant along n, so sum_n(xn1 * attn) = attn * sum_n(xn1).
            let rows = tape.sum(xn1, -1, true)?;
            let weighted = tape.mul(rows, attn)?;
            return tape.sum(weighted, -1, false);
        }
        let weighted = tape.mul(xn1, attn)?;
        tape.sum(weighted, -1, false)
    }

    pub fn forward(&mut self, tape: &mut Tape, bound: &Bound, x: Var, training: bool) -> Result<Var> {
        let xn1 = self.scaled_basis(tape, bound, x)?;
        let reduced = self.reduce(tape, bound, xn1)?;
        let xn2 = self.pln.apply(tape, bound, reduced, training)?;
        let s = tape.activation(self.act, xn2)?;
        let out = tape.matmul(s, bound.var(self.w_out))?;
        tape.add(out, bound.var(self.b_out))
    }

    /// Parameters of the reduction stage, in insertion order.
    pub fn reducer_params(&self) -> Vec<ParamId> {
        match self.reducer {
            Reducer::Linear { weight, bias, tau } => {
                let mut v = vec![weight, bias];
                v.extend(tau);
                v
            }
            Reducer::Conv { weight, bias, tau } => vec![weight, bias, tau],
        }
    }
}
