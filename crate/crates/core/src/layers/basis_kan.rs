use rand_chacha::ChaCha8Rng;

use super::{check_input, kaiming_uniform, NormSite};
use crate::basis::{radial_centers, RadialFamily};
use crate::error::Result;
use crate::normalization::NormKind;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Fixed-center radial expansion (GRBF or RSWAF) followed by a dense map.
///
/// Centers are spread evenly over `[-2, 2]` and the width equals their spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisKanLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub family: RadialFamily,
    pub centers: Vec<f64>,
    pub width: f64,
    pub norm: NormSite,
    weight: ParamId,
    bias: ParamId,
}

pub const CENTER_RANGE: (f64, f64) = (-2.0, 2.0);

impl BasisKanLayer {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        d_in: usize,
        d_out: usize,
        family: RadialFamily,
        num_centers: usize,
        norm: NormKind,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (centers, width) = radial_centers(num_centers, CENTER_RANGE.0, CENTER_RANGE.1);
        let norm = NormSite::new(norm, d_in, &format!("{prefix}.norm"), store);
        let fan_in = d_in * num_centers;
        let weight = store.insert(
            format!("{prefix}.weight"),
            kaiming_uniform(rng, vec![fan_in, d_out], fan_in),
        );
        let bias = store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![d_out]));
        Self {
            d_in,
            d_out,
            family,
            centers,
            width,
            norm,
            weight,
            bias,
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, bound: &Bound, x: Var, training: bool) -> Result<Var> {
        let b = check_input(tape, x, self.d_in, "basis_kan_forward")?;
        let xn = self.norm.apply(tape, bound, x, training)?;
        let c = tape.constant(Tensor::vector(self.centers.clone()));
        let phi = self.family.eval(tape, xn, c, self.width)?;
        let flat = tape.reshape(phi, vec![b, self.d_in * self.centers.len()])?;
        let y = tape.matmul(flat, bound.var(self.weight))?;
        tape.add(y, bound.var(self.bias))
    }
}
