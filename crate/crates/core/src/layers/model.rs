use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::afkan::AfKanConfig;
use super::{AfKanLayer, BasisKanLayer, MlpLayer, NormSite, ReductionMode, ReluKanLayer};
use crate::activations::Activation;
use crate::basis::{FunctionType, GridSpec, RadialFamily};
use crate::error::{Error, Result};
use crate::normalization::{NormKind, RunningStats};
use crate::params::{Bound, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Afkan,
    Relukan,
    Mlp,
    BasisKan,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Afkan, Variant::Relukan, Variant::Mlp, Variant::BasisKan];

    pub fn tag(&self) -> &'static str {
        match self {
            Variant::Afkan => "afkan",
            Variant::Relukan => "relukan",
            Variant::Mlp => "mlp",
            Variant::BasisKan => "basis_kan",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::UnknownTag {
                kind: "variant",
                tag: s.to_string(),
            })
    }
}

/// Declarative network description. Fields that a variant does not use are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub widths: Vec<usize>,
    pub variant: Variant,
    pub grid: GridSpec,
    pub act: Activation,
    pub ftype: FunctionType,
    pub mode: ReductionMode,
    pub pln: NormKind,
    pub l2mm: bool,
    pub radial: RadialFamily,
    pub num_centers: usize,
    pub seed: u64,
}

impl ModelSpec {
    /// The default configuration of `variant` on `widths`.
    pub fn new(variant: Variant, widths: Vec<usize>) -> Self {
        let grid = match variant {
            Variant::BasisKan => GridSpec { grid: 5, order: 3 },
            _ => GridSpec { grid: 3, order: 3 },
        };
        Self {
            widths,
            variant,
            grid,
            act: Activation::Silu,
            ftype: FunctionType::Quad1,
            mode: ReductionMode::GlobalAttn,
            pln: NormKind::Layer,
            l2mm: true,
            radial: RadialFamily::Grbf,
            num_centers: 8,
            seed: 0,
        }
    }

    pub fn mnist(variant: Variant) -> Self {
        Self::new(variant, vec![784, 64, 10])
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::invalid(
                "a model needs at least an input and an output width",
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid(format!(
                "widths must be positive: {:?}",
                self.widths
            )));
        }
        if matches!(self.variant, Variant::Afkan | Variant::Relukan) {
            GridSpec::new(self.grid.grid, self.grid.order)?;
        }
        if self.variant == Variant::BasisKan && self.num_centers == 0 {
            return Err(Error::invalid("basis_kan needs at least one center"));
        }
        Ok(())
    }

    /// Short human label such as `afkan:global_attn`.
    pub fn label(&self) -> String {
        match self.variant {
            Variant::Afkan => format!("afkan:{}", self.mode),
            Variant::BasisKan => format!("basis_kan:{}", self.radial.tag()),
            v => v.tag().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Afkan(AfKanLayer),
    Relukan(ReluKanLayer),
    Mlp(MlpLayer),
    BasisKan(BasisKanLayer),
}

impl Layer {
    pub fn forward(&mut self, tape: &mut Tape, bound: &Bound, x: Var, training: bool) -> Result<Var> {
        match self {
            Layer::Afkan(l) => l.forward(tape, bound, x, training),
            Layer::Relukan(l) => l.forward(tape, bound, x),
            Layer::Mlp(l) => l.forward(tape, bound, x, training),
            Layer::BasisKan(l) => l.forward(tape, bound, x, training),
        }
    }

    pub fn widths(&self) -> (usize, usize) {
        match self {
            Layer::Afkan(l) => (l.d_in, l.d_out),
            Layer::Relukan(l) => (l.d_in, l.d_out),
            Layer::Mlp(l) => (l.d_in, l.d_out),
            Layer::BasisKan(l) => (l.d_in, l.d_out),
        }
    }

    fn norm_site_mut(&mut self) -> Option<&mut NormSite> {
        match self {
            Layer::Afkan(l) => Some(&mut l.pln),
            Layer::Relukan(_) => None,
            Layer::Mlp(l) => Some(&mut l.pre_norm),
            Layer::BasisKan(l) => Some(&mut l.norm),
        }
    }
}

/// A stack of layers plus the parameter store they index into.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    layers: Vec<Layer>,
}

/// Builds every layer and draws initial weights from a ChaCha8 stream seeded by `spec.seed`.
pub fn init_model(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = ParamStore::new();
    let depth = spec.widths.len() - 1;
    let mut layers = Vec::with_capacity(depth);
    for (i, w) in spec.widths.windows(2).enumerate() {
        let (d_in, d_out) = (w[0], w[1]);
        let prefix = format!("layers.{i}");
        let layer = match spec.variant {
            Variant::Afkan => {
                let cfg = AfKanConfig {
                    grid: spec.grid,
                    act: spec.act,
                    ftype: spec.ftype,
                    mode: spec.mode,
                    pln: spec.pln,
                    l2mm: spec.l2mm,
                };
                Layer::Afkan(AfKanLayer::new(d_in, d_out, cfg, &prefix, &mut params, &mut rng))
            }
            Variant::Relukan => Layer::Relukan(ReluKanLayer::new(
                d_in,
                d_out,
                spec.grid,
                &prefix,
                &mut params,
                &mut rng,
            )),
            Variant::Mlp => {
                let act_after = (i + 1 < depth).then_some(spec.act);
                Layer::Mlp(MlpLayer::new(
                    d_in,
                    d_out,
                    spec.pln,
                    act_after,
                    &prefix,
                    &mut params,
                    &mut rng,
                ))
            }
            Variant::BasisKan => Layer::BasisKan(BasisKanLayer::new(
                d_in,
                d_out,
                spec.radial,
                spec.num_centers,
                spec.pln,
                &prefix,
                &mut params,
                &mut rng,
            )),
        };
        layers.push(layer);
    }
    Ok(Model {
        spec: spec.clone(),
        params,
        layers,
    })
}

impl Model {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        init_model(spec)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape)
    }

    pub fn forward(&mut self, tape: &mut Tape, bound: &Bound, x: Var, training: bool) -> Result<Var> {
        let mut h = x;
        for layer in &mut self.layers {
            h = layer.forward(tape, bound, h, training)?;
        }
        Ok(h)
    }

    /// Inference logits for `x`, evaluated in chunks of `batch` rows.
    pub fn predict(&mut self, x: &Tensor, batch: usize) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "predict",
                shape: shape.to_vec(),
                reason: "expected (rows, features)".into(),
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let d_out = *self.spec.widths.last().expect("validated widths");
        let mut out = Vec::with_capacity(rows * d_out);
        let batch = batch.max(1);
        for start in (0..rows).step_by(batch) {
            let end = (start + batch).min(rows);
            let chunk = Tensor::from_parts(
                vec![end - start, cols],
                x.data()[start * cols..end * cols].to_vec(),
            );
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let xv = tape.constant(chunk);
            let y = self.forward(&mut tape, &bound, xv, false)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(Tensor::from_parts(vec![rows, d_out], out))
    }

    /// Running statistics of batch-norm sites, keyed by parameter-style names.
    pub fn buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let site = match layer {
                Layer::Afkan(l) => Some((&l.pln, "pln")),
                Layer::Mlp(l) => Some((&l.pre_norm, "norm")),
                Layer::BasisKan(l) => Some((&l.norm, "norm")),
                Layer::Relukan(_) => None,
            };
            if let Some((NormSite { stats: Some(s), .. }, tag)) = site {
                out.push((format!("layers.{i}.{tag}.running_mean"), s.mean.clone()));
                out.push((format!("layers.{i}.{tag}.running_var"), s.var.clone()));
            }
        }
        out
    }

    /// Restores buffers produced by [`Model::buffers`].
    pub fn set_buffers(&mut self, buffers: &[(String, Tensor)]) -> Result<()> {
        let expected = self.buffers();
        if expected.len() != buffers.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} buffers, found {}",
                expected.len(),
                buffers.len()
            )));
        }
        let mut it = buffers.iter();
        for layer in &mut self.layers {
            if let Some(NormSite {
                stats: Some(RunningStats { mean, var, .. }),
                ..
            }) = layer.norm_site_mut()
            {
                for slot in [mean, var] {
                    let (name, t) = it.next().expect("length checked");
                    let (want, _) = &expected[buffers.len() - it.len() - 1];
                    if name != want {
                        return Err(Error::Checkpoint(format!("expected buffer {want}, found {name}")));
                    }
                    if t.shape() != slot.shape() {
                        return Err(Error::Checkpoint(format!(
                            "buffer {name} has shape {:?}",
                            t.shape()
                        )));
                    }
                    *slot = t.clone();
                }
            }
        }
        Ok(())
    }
}
