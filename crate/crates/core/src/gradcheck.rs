//! Central finite-difference checks of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::activations::Activation;
use crate::basis::{FunctionType, RadialFamily};
use crate::error::{Error, Result};
use crate::layers::{Model, ModelSpec, ReductionMode, Variant};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Largest relative error between the tape gradient of `f` at `theta` and central
/// differences `(f(θ + εe) - f(θ - εe)) / 2ε`.
pub fn grad_check<F>(mut f: F, theta: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let mut tape = Tape::new();
    let p = tape.param(theta.clone());
    let loss = f(&mut tape, p)?;
    tape.backward(loss)?;
    let g = tape.grad(p);
    let mut eval = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let p = tape.constant(t);
        let y = f(&mut tape, p)?;
        let v = tape.value(y).item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        Ok(v)
    };
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus.data_mut()[i] += eps;
        let mut minus = theta.clone();
        minus.data_mut()[i] -= eps;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(g.data()[i], fd));
    }
    Ok(worst)
}

/// Result of checking one model configuration.
#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub max_rel_err: f64,
    /// Tensor holding the worst coordinate (`input` for the batch itself).
    pub worst_tensor: String,
    pub coordinates: usize,
}

/// Options shared by every check in a suite.
#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub batch: usize,
    pub eps: f64,
    /// Minimum distance of any kinked activation input from its kink.
    pub kink_margin: f64,
    /// Scales activation backward rules; only for negative controls.
    pub fault: Option<f64>,
    /// Draw inputs from this many evenly spaced levels instead of a continuum,
    /// the way pixel intensities repeat.
    pub levels: Option<usize>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            batch: 4,
            eps: 1e-5,
            kink_margin: 1e-3,
            fault: None,
            levels: None,
        }
    }
}

fn loss_of(model: &mut Model, tape: &mut Tape, x: Var, labels: &[usize]) -> Result<Var> {
    let bound = model.bind(tape);
    let logits = model.forward(tape, &bound, x, true)?;
    tape.cross_entropy(logits, labels)
}

fn eval_loss(model: &Model, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut m = model.clone();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let loss = loss_of(&mut m, &mut tape, xv, labels)?;
    let v = tape.value(loss).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    Ok(v)
}

/// Gradient check of a whole model against cross-entropy on random labels,
/// covering every parameter entry and every input entry.
///
/// Parameters get a small random perturbation so the probe is not at the
/// symmetric initialization; inputs are redrawn until no kinked activation
/// sits within `kink_margin` of its kink.
pub fn check_model(spec: &ModelSpec, opts: CheckOptions, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = spec.clone();
    spec.seed = seed;
    let mut model = Model::new(&spec)?;
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += 0.05 * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    let d_in = spec.widths[0];
    let d_out = *spec.widths.last().expect("validated");
    let labels: Vec<usize> = (0..opts.batch).map(|_| rng.random_range(0..d_out)).collect();

    let mut attempt = 0;
    let (x, grads, xgrad) = loop {
        attempt += 1;
        let x = Tensor::new(
            vec![opts.batch, d_in],
            (0..opts.batch * d_in)
                .map(|_| match opts.levels {
                    Some(n) if n > 1 => -0.6 + 2.2 * rng.random_range(0..n) as f64 / (n - 1) as f64,
                    _ => -0.6 + 2.2 * rng.random::<f64>(),
                })
                .collect(),
        )?;
        let mut tape = Tape::new();
        tape.track_kinks(true);
        if let Some(f) = opts.fault {
            tape.inject_backward_fault(f);
        }
        let xv = tape.param(x.clone());
        let bound = model.bind(&mut tape);
        let mut m = model.clone();
        let logits = m.forward(&mut tape, &bound, xv, true)?;
        let loss = tape.cross_entropy(logits, &labels)?;
        if tape.kink_margin() < opts.kink_margin && attempt < 200 {
            continue;
        }
        tape.backward(loss)?;
        break (x, bound.grads(&tape), tape.grad(xv));
    };

    let eps = opts.eps;
    let mut worst = (0.0f64, String::new());
    let mut coordinates = 0;
    let ids: Vec<_> = model.params().ids().collect();
    for (id, g) in ids.into_iter().zip(&grads) {
        for i in 0..g.len() {
            let base = model.params().get(id).data()[i];
            model.params_mut().get_mut(id).data_mut()[i] = base + eps;
            let fp = eval_loss(&model, &x, &labels)?;
            model.params_mut().get_mut(id).data_mut()[i] = base - eps;
            let fm = eval_loss(&model, &x, &labels)?;
            model.params_mut().get_mut(id).data_mut()[i] = base;
            let e = relative_error(g.data()[i], (fp - fm) / (2.0 * eps));
            coordinates += 1;
            if e > worst.0 {
                worst = (e, model.params().name(id).to_string());
            }
        }
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let mut xm = x.clone();
        xm.data_mut()[i] -= eps;
        let fd = (eval_loss(&model, &xp, &labels)? - eval_loss(&model, &xm, &labels)?) / (2.0 * eps);
        let e = relative_error(xgrad.data()[i], fd);
        coordinates += 1;
        if e > worst.0 {
            worst = (e, "input".to_string());
        }
    }
    Ok(CheckOutcome {
        max_rel_err: worst.0,
        worst_tensor: worst.1,
        coordinates,
    })
}

/// One configuration of the full sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteRow {
    pub variant: String,
    pub mode: Option<ReductionMode>,
    pub act: Activation,
    pub ftype: Option<FunctionType>,
    pub outcome: CheckOutcome,
}

impl SuiteRow {
    pub fn describe(&self) -> String {
        format!(
            "variant={} mode={} act={} ftype={} err={:.3e} worst={}",
            self.variant,
            self.mode.map_or("-".into(), |m| m.to_string()),
            self.act,
            self.ftype.map_or("-".into(), |f| f.to_string()),
            self.outcome.max_rel_err,
            self.outcome.worst_tensor
        )
    }
}

/// Every variant, reduction mode, activation and function type on `(B=batch, D=12, d_out=5)`
/// with `G = k = 3`; `trials` independent probes per configuration, keeping the worst.
pub fn gradcheck_suite(opts: CheckOptions, trials: usize, seed: u64) -> Result<Vec<SuiteRow>> {
    let (d, d_out) = (12, 5);
    let mut rows = Vec::new();
    let mut run_with = |opts: CheckOptions, spec: ModelSpec, label: String, mode, act, ftype| -> Result<()> {
        let mut best: Option<CheckOutcome> = None;
        for t in 0..trials.max(1) {
            let o = check_model(&spec, opts, seed.wrapping_add(t as u64))?;
            if best.as_ref().is_none_or(|b| o.max_rel_err > b.max_rel_err) {
                best = Some(o);
            }
        }
        rows.push(SuiteRow {
            variant: label,
            mode,
            act,
            ftype,
            outcome: best.expect("at least one trial"),
        });
        Ok(())
    };
    let mut run = |spec, label, mode, act, ftype| run_with(opts, spec, label, mode, act, ftype);
    for act in Activation::ALL {
        for ftype in FunctionType::ALL {
            for mode in ReductionMode::ALL {
                let mut s = ModelSpec::new(Variant::Afkan, vec![d, d_out]);
                s.act = act;
                s.ftype = ftype;
                s.mode = mode;
                run(s, "afkan".into(), Some(mode), act, Some(ftype))?;
            }
        }
        let mut s = ModelSpec::new(Variant::Mlp, vec![d, 7, d_out]);
        s.act = act;
        run(s, "mlp".into(), None, act, None)?;
    }
    run(
        ModelSpec::new(Variant::Relukan, vec![d, d_out]),
        "relukan".into(),
        None,
        Activation::Relu,
        None,
    )?;
    for family in [RadialFamily::Grbf, RadialFamily::Rswaf] {
        let mut s = ModelSpec::new(Variant::BasisKan, vec![d, d_out]);
        s.radial = family;
        run(
            s,
            format!("basis_kan:{}", family.tag()),
            None,
            Activation::Silu,
            None,
        )?;
    }
    // Repeated input values take the lookup-table route through the basis. They also tie
    // the min/max of the basis scaling, a kink for input perturbations, so it is off here.
    let leveled = CheckOptions {
        levels: Some(9),
        ..opts
    };
    for act in Activation::ALL {
        let mut s = ModelSpec::new(Variant::Afkan, vec![d, 7, d_out]);
        s.act = act;
        s.l2mm = false;
        let ftype = Some(s.ftype);
        run_with(
            leveled,
            s,
            "afkan:leveled".into(),
            Some(ReductionMode::GlobalAttn),
            act,
            ftype,
        )?;
    }
    Ok(rows)
}
