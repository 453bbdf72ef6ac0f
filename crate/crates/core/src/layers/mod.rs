//! The trainable layers and the [`Model`] that stacks them.

mod afkan;
mod basis_kan;
mod mlp;
mod model;
mod relukan;

pub use afkan::{AfKanLayer, ReductionMode};
pub use basis_kan::BasisKanLayer;
pub use mlp::MlpLayer;
pub use model::{init_model, Layer, Model, ModelSpec, Variant};
pub use relukan::ReluKanLayer;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::normalization::{self, NormKind, RunningStats, NORM_EPS};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Uniform on `[-b, b]` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = kaiming_bound(fan_in);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| bound * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    Tensor::from_parts(shape, data)
}

pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// A normalization site over the last axis of a `(B, D)` input.
#[derive(Clone, Debug, PartialEq)]
pub struct NormSite {
    pub kind: NormKind,
    gain: Option<ParamId>,
    bias: Option<ParamId>,
    pub stats: Option<RunningStats>,
}

impl NormSite {
    pub(crate) fn new(kind: NormKind, d: usize, prefix: &str, store: &mut ParamStore) -> Self {
        let (gain, bias) = match kind {
            NormKind::None => (None, None),
            _ => (
                Some(store.insert(format!("{prefix}.gain"), Tensor::ones(vec![d]))),
                Some(store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![d]))),
            ),
        };
        let stats = (kind == NormKind::Batch).then(|| RunningStats::new(d));
        Self {
            kind,
            gain,
            bias,
            stats,
        }
    }

    pub(crate) fn apply(&mut self, tape: &mut Tape, bound: &Bound, x: Var, training: bool) -> Result<Var> {
        match (self.kind, self.gain, self.bias) {
            (NormKind::None, ..) => Ok(x),
            (NormKind::Layer, Some(g), Some(b)) => {
                normalization::layer_norm(tape, x, bound.var(g), bound.var(b), NORM_EPS)
            }
            (NormKind::Batch, Some(g), Some(b)) => {
                let stats = self
                    .stats
                    .as_mut()
                    .expect("batch norm site carries running stats");
                normalization::batch_norm(tape, x, bound.var(g), bound.var(b), stats, training, NORM_EPS)
            }
            _ => unreachable!("affine parameters exist for every active norm"),
        }
    }
}

pub(crate) fn check_input(tape: &Tape, x: Var, d_in: usize, op: &'static str) -> Result<usize> {
    let shape = tape.shape(x);
    if shape.len() != 2 || shape[1] != d_in {
        return Err(Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: format!("expected (batch, {d_in})"),
        });
    }
    Ok(shape[0])
}
