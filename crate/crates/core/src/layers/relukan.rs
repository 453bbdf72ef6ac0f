use rand_chacha::ChaCha8Rng;

use super::{check_input, kaiming_uniform};
use crate::basis::{self, GridSpec, PhaseLayout};
use crate::error::Result;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Multi-input ReLU-KAN layer: per-input bells followed by a full-kernel
/// convolution, which is a single dense product over the flattened `(n, D)` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluKanLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub grid: GridSpec,
    low: ParamId,
    high: ParamId,
    conv_weight: ParamId,
    conv_bias: ParamId,
}

impl ReluKanLayer {
    pub(crate) fn new(
        d_in: usize,
        d_out: usize,
        grid: GridSpec,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n = grid.n();
        let phase = basis::phase_init(grid, PhaseLayout::PerInput(d_in));
        let low = store.insert(format!("{prefix}.phase_low"), phase.low);
        let high = store.insert(format!("{prefix}.phase_high"), phase.high);
        let conv_weight = store.insert(
            format!("{prefix}.conv_weight"),
            kaiming_uniform(rng, vec![d_out, n * d_in], n * d_in),
        );
        let conv_bias = store.insert(format!("{prefix}.conv_bias"), Tensor::zeros(vec![d_out]));
        Self {
            d_in,
            d_out,
            grid,
            low,
            high,
            conv_weight,
            conv_bias,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let b = check_input(tape, x, self.d_in, "relukan_forward")?;
        let n = self.grid.n();
        let r = basis::relu_kan_r(tape, x, bound.var(self.low), bound.var(self.high))?;
        let r = tape.permute(r, vec![0, 2, 1])?;
        let flat = tape.reshape(r, vec![b, n * self.d_in])?;
        let out = tape.matmul_t(flat, bound.var(self.conv_weight))?;
        tape.add(out, bound.var(self.conv_bias))
    }
}
