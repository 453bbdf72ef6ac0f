use rand_chacha::ChaCha8Rng;

use super::{check_input, kaiming_uniform, NormSite};
use crate::activations::Activation;
use crate::error::Result;
use crate::normalization::NormKind;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Normalization then a bias-free dense map; `act_after` is set on every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub pre_norm: NormSite,
    weight: ParamId,
    pub act_after: Option<Activation>,
}

impl MlpLayer {
    pub(crate) fn new(
        d_in: usize,
        d_out: usize,
        norm: NormKind,
        act_after: Option<Activation>,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let pre_norm = NormSite::new(norm, d_in, &format!("{prefix}.norm"), store);
        let weight = store.insert(
            format!("{prefix}.weight"),
            kaiming_uniform(rng, vec![d_in, d_out], d_in),
        );
        Self {
            d_in,
            d_out,
            pre_norm,
            weight,
            act_after,
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, bound: &Bound, x: Var, training: bool) -> Result<Var> {
        check_input(tape, x, self.d_in, "mlp_forward")?;
        let xn = self.pre_norm.apply(tape, bound, x, training)?;
        let y = tape.matmul(xn, bound.var(self.weight))?;
        match self.act_after {
            Some(act) => tape.activation(act, y),
            None => Ok(y),
        }
    }
}
