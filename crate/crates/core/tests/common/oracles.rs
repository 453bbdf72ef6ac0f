//! Brute-force reference implementations, written from the formulas with plain loops and
//! sharing nothing with the library but its tensor container for input and output.

use afkan::basis::{self, FunctionType, GridSpec, PhaseLayout, PhasePair};
use afkan::layers::{ReductionMode, Variant};
use afkan::normalization::{self, NormKind, NormParams};
use afkan::train::{AdamW, AdamWConfig};
use afkan::{Activation, Model, ModelSpec, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One oracle comparison: the largest absolute difference seen and the bound it must beat.
#[derive(Clone, Debug)]
pub struct OracleCase {
    pub name: String,
    pub delta: f64,
    pub tolerance: f64,
}

impl OracleCase {
    pub fn new(name: impl Into<String>, delta: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            delta,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.delta < self.tolerance
    }
}

pub const EXACT: f64 = 1e-12;

fn max_delta(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "oracle and library lengths differ");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * r.random::<f64>()).collect()
}

// ---------------------------------------------------------------- scalar references

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

pub fn act(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Elu { alpha } => {
            if x > 0.0 {
                x
            } else {
                alpha * (x.exp() - 1.0)
            }
        }
        Activation::Gelu => {
            let inner = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3));
            0.5 * x * (1.0 + inner.tanh())
        }
        Activation::LeakyRelu { alpha } => {
            if x > 0.0 {
                x
            } else {
                alpha * x
            }
        }
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Selu { alpha, lambda } => {
            if x > 0.0 {
                lambda * x
            } else {
                lambda * alpha * (x.exp() - 1.0)
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Silu => x / (1.0 + (-x).exp()),
        Activation::Softplus => (1.0 + x.exp()).ln(),
        Activation::Tanh => {
            let (e, f) = (x.exp(), (-x).exp());
            (e - f) / (e + f)
        }
    }
}

pub fn act_derivative(kind: Activation, x: f64) -> f64 {
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    match kind {
        Activation::Elu { alpha } => {
            if x >= 0.0 {
                1.0
            } else {
                alpha * x.exp()
            }
        }
        Activation::Gelu => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            let u = c * (x + 0.044715 * x.powi(3));
            let sech2 = 1.0 / u.cosh().powi(2);
            0.5 * (1.0 + u.tanh()) + 0.5 * x * sech2 * c * (1.0 + 3.0 * 0.044715 * x * x)
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
        Activation::Sigmoid => sig(x) * (1.0 - sig(x)),
        Activation::Silu => sig(x) + x * sig(x) * (1.0 - sig(x)),
        Activation::Softplus => sig(x),
        Activation::Tanh => 1.0 / x.cosh().powi(2),
    }
}

pub fn combine(f: FunctionType, p: f64, q: f64) -> f64 {
    match f {
        FunctionType::Sum => p + q,
        FunctionType::Prod => p * q,
        FunctionType::SumProd => p + q + p * q,
        FunctionType::Quad1 => (p * q).powi(2),
        FunctionType::Quad2 => p.powi(2) + q.powi(2) + (p * q).powi(2),
        FunctionType::Cubic1 => (p + q) * (p.powi(2) + q.powi(2)),
        FunctionType::Cubic2 => (p * q).powi(3),
    }
}

/// `A[b, d, i]` with per-input phase rows `low[d][i]`, `high[d][i]`.
pub fn basis_a(
    x: &[f64],
    d: usize,
    low: &[Vec<f64>],
    high: &[Vec<f64>],
    kind: Activation,
    f: FunctionType,
) -> Vec<f64> {
    let mut out = Vec::new();
    for (e, &xv) in x.iter().enumerate() {
        let (l, h) = (&low[e % d], &high[e % d]);
        for i in 0..l.len() {
            out.push(combine(f, act(kind, xv - l[i]), act(kind, h[i] - xv)));
        }
    }
    out
}

pub fn relu_kan_r(x: &[f64], d: usize, low: &[Vec<f64>], high: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (e, &xv) in x.iter().enumerate() {
        let (l, h) = (&low[e % d], &high[e % d]);
        for i in 0..l.len() {
            let bump = f64::max(xv - l[i], 0.0) * f64::max(h[i] - xv, 0.0);
            out.push(bump * bump * 16.0 / (h[i] - l[i]).powi(4));
        }
    }
    out
}

/// Phase rows straight from their definition.
pub fn phases(grid: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let g = grid as f64;
    let low: Vec<f64> = (0..grid + order).map(|i| (i as f64 - order as f64) / g).collect();
    let high = low.iter().map(|l| l + (order as f64 + 1.0) / g).collect();
    (low, high)
}

/// Recursive Cox–de Boor definition on an explicit knot vector.
pub fn bspline(knots: &[f64], j: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        return if knots[j] <= x && x < knots[j + 1] {
            1.0
        } else {
            0.0
        };
    }
    let left = (x - knots[j]) / (knots[j + p] - knots[j]) * bspline(knots, j, p - 1, x);
    let right = (knots[j + p + 1] - x) / (knots[j + p + 1] - knots[j + 1]) * bspline(knots, j + 1, p - 1, x);
    left + right
}

pub fn bspline_row(x: f64, grid: usize, order: usize, lo: f64, hi: f64) -> Vec<f64> {
    let h = (hi - lo) / grid as f64;
    let knots: Vec<f64> = (0..=grid + 2 * order)
        .map(|j| lo + h * (j as f64 - order as f64))
        .collect();
    (0..grid + order).map(|j| bspline(&knots, j, order, x)).collect()
}

pub fn l2_minmax(x: &[f64]) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let o: Vec<f64> = if norm == 0.0 {
        x.to_vec()
    } else {
        x.iter().map(|v| v / norm).collect()
    };
    let mn = o.iter().cloned().fold(f64::INFINITY, f64::min);
    let mx = o.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == mn {
        return vec![0.0; x.len()];
    }
    o.iter().map(|v| (v - mn) / (mx - mn)).collect()
}

pub fn softmax(row: &[f64], tau: f64) -> Vec<f64> {
    let t = tau.max(1.0);
    let e: Vec<f64> = row.iter().map(|v| (v / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn layer_norm(row: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    row.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * gain[i] + bias[i])
        .collect()
}

/// Central difference of a scalar function of a vector.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut p = at.to_vec();
            let mut m = at.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// AdamW on one scalar, written out step by step.
pub fn adamw_scalar(theta: f64, grads: &[f64], lr: f64, wd: f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v, mut th) = (0.0, 0.0, theta);
    for (t, &g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        th -= lr * wd * th;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        th -= lr * mh / (vh.sqrt() + eps);
    }
    th
}

// ---------------------------------------------------------------- whole-layer references

fn param(model: &Model, name: &str) -> Vec<f64> {
    let id = model
        .params()
        .find(name)
        .unwrap_or_else(|| panic!("no parameter {name}"));
    model.params().get(id).data().to_vec()
}

fn perturbed(spec: &ModelSpec, seed: u64) -> Model {
    let mut model = Model::new(spec).unwrap();
    let mut r = rng(seed);
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += 0.2 * (2.0 * r.random::<f64>() - 1.0);
        }
    }
    model
}

/// Inference-mode forward of a one-layer AF-KAN, `x` of shape `(b, d)`.
pub fn afkan_layer(model: &Model, x: &[f64], b: usize, d: usize) -> Vec<f64> {
    let spec = model.spec();
    let d_out = spec.widths[1];
    let p = |n: &str| param(model, &format!("layers.0.{n}"));
    let (low, high) = (p("phase_low"), p("phase_high"));
    let n = low.len();
    let mut a = basis_a(x, d, &vec![low; d], &vec![high; d], spec.act, spec.ftype);
    if spec.l2mm {
        a = l2_minmax(&a);
    }
    let at = |bb: usize, dd: usize, i: usize| a[(bb * d + dd) * n + i];
    let mut reduced = vec![0.0; b * d];
    match spec.mode {
        ReductionMode::GlobalAttn => {
            let (w, bias, tau) = (p("attn_weight"), p("attn_bias")[0], p("tau")[0]);
            for bb in 0..b {
                let lin: Vec<f64> = (0..d)
                    .map(|dd| (0..n).map(|i| at(bb, dd, i) * w[i]).sum::<f64>() + bias)
                    .collect();
                let attn = softmax(&lin, tau);
                for dd in 0..d {
                    reduced[bb * d + dd] = (0..n).map(|i| at(bb, dd, i) * attn[dd]).sum();
                }
            }
        }
        ReductionMode::SpatialAttn => {
            let (w, c, tau) = (p("conv_weight"), p("conv_bias"), p("tau")[0]);
            for bb in 0..b {
                for dd in 0..d {
                    let conv: Vec<f64> = (0..n).map(|i| at(bb, dd, i) * w[i] + c[i]).collect();
                    let attn = softmax(&conv, tau);
                    reduced[bb * d + dd] = (0..n).map(|i| at(bb, dd, i) * attn[i]).sum();
                }
            }
        }
        ReductionMode::Multistep => {
            let (w, bias) = (p("attn_weight"), p("attn_bias")[0]);
            for bb in 0..b {
                for dd in 0..d {
                    reduced[bb * d + dd] = (0..n).map(|i| at(bb, dd, i) * w[i]).sum::<f64>() + bias;
                }
            }
        }
    }
    let normed: Vec<f64> = match spec.pln {
        NormKind::Layer => {
            let (g, bi) = (p("pln.gain"), p("pln.bias"));
            reduced
                .chunks(d)
                .flat_map(|row| layer_norm(row, &g, &bi))
                .collect()
        }
        // fresh running statistics: mean 0, variance 1
        NormKind::Batch => {
            let (g, bi) = (p("pln.gain"), p("pln.bias"));
            reduced
                .iter()
                .enumerate()
                .map(|(e, v)| v / (1.0 + 1e-5f64).sqrt() * g[e % d] + bi[e % d])
                .collect()
        }
        NormKind::None => reduced,
    };
    let s: Vec<f64> = normed.iter().map(|&v| act(spec.act, v)).collect();
    let mut out = matmul(&s, &p("w_out"), b, d, d_out);
    let bo = p("b_out");
    for (e, v) in out.iter_mut().enumerate() {
        *v += bo[e % d_out];
    }
    out
}

pub fn relukan_layer(model: &Model, x: &[f64], b: usize, d: usize) -> Vec<f64> {
    let d_out = model.spec().widths[1];
    let p = |n: &str| param(model, &format!("layers.0.{n}"));
    let (low, high) = (p("phase_low"), p("phase_high"));
    let n = low.len() / d;
    let rows = |v: &[f64]| v.chunks(n).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let r = relu_kan_r(x, d, &rows(&low), &rows(&high));
    let (w, c) = (p("conv_weight"), p("conv_bias"));
    let mut out = vec![0.0; b * d_out];
    for bb in 0..b {
        for o in 0..d_out {
            let mut s = c[o];
            // flattened feature index i * d + dd
            for i in 0..n {
                for dd in 0..d {
                    s += w[o * n * d + i * d + dd] * r[(bb * d + dd) * n + i];
                }
            }
            out[bb * d_out + o] = s;
        }
    }
    out
}

pub fn mlp(model: &Model, x: &[f64], b: usize) -> Vec<f64> {
    let widths = model.spec().widths.clone();
    let mut h = x.to_vec();
    for (li, w) in widths.windows(2).enumerate() {
        let p = |n: &str| param(model, &format!("layers.{li}.{n}"));
        let (g, bi) = (p("norm.gain"), p("norm.bias"));
        let normed: Vec<f64> = h.chunks(w[0]).flat_map(|row| layer_norm(row, &g, &bi)).collect();
        h = matmul(&normed, &p("weight"), b, w[0], w[1]);
        if li + 2 < widths.len() {
            h = h.iter().map(|&v| act(model.spec().act, v)).collect();
        }
    }
    h
}

// ---------------------------------------------------------------- cases

pub fn matmul_cases() -> Vec<OracleCase> {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut worst_t = 0.0f64;
    for _ in 0..20 {
        let (m, k, n) = (
            r.random_range(1..40),
            r.random_range(1..40),
            r.random_range(1..40),
        );
        let a = uniform(&mut r, m * k, -1.0, 1.0);
        let b = uniform(&mut r, k * n, -1.0, 1.0);
        let expect = matmul(&a, &b, m, k, n);
        let mut t = Tape::new();
        let av = t.constant(Tensor::new(vec![m, k], a).unwrap());
        let bv = t.constant(Tensor::new(vec![k, n], b.clone()).unwrap());
        let c = t.matmul(av, bv).unwrap();
        worst = worst.max(max_delta(t.value(c).data(), &expect));
        let bt: Vec<f64> = (0..n * k).map(|e| b[(e % k) * n + e / k]).collect();
        let btv = t.constant(Tensor::new(vec![n, k], bt).unwrap());
        let c = t.matmul_t(av, btv).unwrap();
        worst_t = worst_t.max(max_delta(t.value(c).data(), &expect));
    }
    vec![
        OracleCase::new("matmul vs triple loop, 20 random shapes", worst, EXACT),
        OracleCase::new("matmul with transposed right factor", worst_t, EXACT),
    ]
}

pub fn activation_cases() -> Vec<OracleCase> {
    let xs: Vec<f64> = (0..161).map(|i| -8.0 + 0.1 * i as f64).collect();
    Activation::ALL
        .iter()
        .flat_map(|&kind| {
            let value = max_delta(
                &xs.iter().map(|&x| kind.apply(x)).collect::<Vec<_>>(),
                &xs.iter().map(|&x| act(kind, x)).collect::<Vec<_>>(),
            );
            let deriv = max_delta(
                &xs.iter().map(|&x| kind.derivative(x)).collect::<Vec<_>>(),
                &xs.iter().map(|&x| act_derivative(kind, x)).collect::<Vec<_>>(),
            );
            [
                OracleCase::new(format!("activation {kind} value"), value, EXACT),
                OracleCase::new(format!("activation {kind} derivative"), deriv, EXACT),
            ]
        })
        .collect()
}

pub fn combine_cases() -> Vec<OracleCase> {
    let mut r = rng(2);
    let p = uniform(&mut r, 64, -2.0, 2.0);
    let q = uniform(&mut r, 64, -2.0, 2.0);
    FunctionType::ALL
        .iter()
        .map(|&f| {
            let lib =
                basis::combine_values(f, &Tensor::vector(p.clone()), &Tensor::vector(q.clone())).unwrap();
            let want: Vec<f64> = p.iter().zip(&q).map(|(&a, &b)| combine(f, a, b)).collect();
            OracleCase::new(format!("combine {f}"), max_delta(lib.data(), &want), EXACT)
        })
        .collect()
}

pub fn basis_cases() -> Vec<OracleCase> {
    let mut cases = Vec::new();
    let (b, d) = (3, 4);
    let mut r = rng(3);
    // repeated values exercise the per-distinct-value path, fresh ones the dense path
    let repeated: Vec<f64> = (0..b * d).map(|i| [0.0, 0.25, 1.0][i % 3]).collect();
    let spread = uniform(&mut r, b * d, -0.6, 1.6);
    let spec = GridSpec::new(3, 3).unwrap();
    let (low, high) = phases(3, 3);
    let compact = basis::phase_init(spec, PhaseLayout::Compact);
    for (label, x) in [("repeated", &repeated), ("spread", &spread)] {
        let xt = Tensor::new(vec![b, d], x.clone()).unwrap();
        let mut worst = 0.0f64;
        for kind in Activation::ALL {
            for f in FunctionType::ALL {
                let lib = basis::basis_a_values(&xt, &compact, kind, f).unwrap();
                let want = basis_a(x, d, &vec![low.clone(); d], &vec![high.clone(); d], kind, f);
                worst = worst.max(max_delta(lib.data(), &want));
            }
        }
        cases.push(OracleCase::new(
            format!("basis A, 9 activations x 7 types, {label} inputs"),
            worst,
            EXACT,
        ));
    }
    // per-input phases with distinct rows
    let low_rows: Vec<Vec<f64>> = (0..d).map(|_| uniform(&mut r, 6, -1.0, 0.5)).collect();
    let high_rows: Vec<Vec<f64>> = low_rows
        .iter()
        .map(|l| l.iter().map(|v| v + 1.0).collect())
        .collect();
    let phase = PhasePair {
        low: Tensor::new(vec![d, 6], low_rows.concat()).unwrap(),
        high: Tensor::new(vec![d, 6], high_rows.concat()).unwrap(),
    };
    let xt = Tensor::new(vec![b, d], spread.clone()).unwrap();
    let lib = basis::basis_a_values(&xt, &phase, Activation::Silu, FunctionType::Quad1).unwrap();
    let want = basis_a(
        &spread,
        d,
        &low_rows,
        &high_rows,
        Activation::Silu,
        FunctionType::Quad1,
    );
    cases.push(OracleCase::new(
        "basis A, per-input phases",
        max_delta(lib.data(), &want),
        EXACT,
    ));

    let lib = basis::relu_kan_r_values(&xt, &phase).unwrap();
    let want = relu_kan_r(&spread, d, &low_rows, &high_rows);
    cases.push(OracleCase::new(
        "ReLU-KAN bell, per-input phases",
        max_delta(lib.data(), &want),
        EXACT,
    ));

    let init = basis::phase_init(GridSpec::new(5, 3).unwrap(), PhaseLayout::Compact);
    let (l5, h5) = phases(5, 3);
    let delta = max_delta(init.low.data(), &l5).max(max_delta(init.high.data(), &h5));
    cases.push(OracleCase::new("phase initialization G=5 k=3", delta, EXACT));

    let xs: Vec<f64> = (0..41).map(|i| -1.0 + 0.05 * i as f64).collect();
    let lib = basis::bspline_basis(
        &Tensor::vector(xs.clone()),
        GridSpec::new(5, 3).unwrap(),
        -1.0,
        1.0,
    )
    .unwrap();
    let want: Vec<f64> = xs.iter().flat_map(|&x| bspline_row(x, 5, 3, -1.0, 1.0)).collect();
    cases.push(OracleCase::new(
        "B-spline vs recursive Cox-de Boor",
        max_delta(lib.data(), &want),
        EXACT,
    ));
    cases
}

pub fn normalization_cases() -> Vec<OracleCase> {
    let mut r = rng(4);
    let x = uniform(&mut r, 2 * 3 * 4, -1.0, 2.0);
    let lib =
        normalization::l2_minmax_values(&Tensor::new(vec![2, 3, 4], x.clone()).unwrap(), 0.0, 1.0).unwrap();
    let mm = OracleCase::new("L2 then min-max", max_delta(lib.data(), &l2_minmax(&x)), EXACT);

    let rows = uniform(&mut r, 3 * 7, -3.0, 3.0);
    let mut p = NormParams::identity(7);
    p.gain = Tensor::vector(uniform(&mut r, 7, 0.5, 1.5));
    p.bias = Tensor::vector(uniform(&mut r, 7, -0.5, 0.5));
    let lib = normalization::layer_norm_values(&Tensor::new(vec![3, 7], rows.clone()).unwrap(), &p).unwrap();
    let want: Vec<f64> = rows
        .chunks(7)
        .flat_map(|row| layer_norm(row, p.gain.data(), p.bias.data()))
        .collect();
    let ln = OracleCase::new("layer norm", max_delta(lib.data(), &want), EXACT);

    let mut worst = 0.0f64;
    for tau in [0.3, 1.0, 2.5, 28.0] {
        let row = uniform(&mut r, 9, -4.0, 4.0);
        let lib = afkan::tape::softmax_axis(&Tensor::vector(row.clone()), 0, tau).unwrap();
        worst = worst.max(max_delta(lib.data(), &softmax(&row, tau)));
    }
    let sm = OracleCase::new("tempered softmax, tau below and above 1", worst, EXACT);
    vec![mm, ln, sm]
}

pub fn optimizer_cases() -> Vec<OracleCase> {
    let mut r = rng(5);
    let theta = uniform(&mut r, 6, -1.0, 1.0);
    let grads: Vec<Vec<f64>> = (0..4).map(|_| uniform(&mut r, 6, -2.0, 2.0)).collect();
    let (lr, wd) = (1e-3, 1e-4);

    let mut one = vec![Tensor::vector(theta.clone())];
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: wd,
            ..AdamWConfig::default()
        },
        &one,
    );
    opt.step(&mut one, &[Tensor::vector(grads[0].clone())], lr)
        .unwrap();
    // first step closed form: m̂ = g and v̂ = g², so the move is lr·g/(|g| + eps)
    let closed: Vec<f64> = theta
        .iter()
        .zip(&grads[0])
        .map(|(&t, &g)| t * (1.0 - lr * wd) - lr * g / (g.abs() + 1e-8))
        .collect();
    let first = OracleCase::new(
        "AdamW first step, closed form",
        max_delta(one[0].data(), &closed),
        EXACT,
    );

    let mut many = vec![Tensor::vector(theta.clone())];
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: wd,
            ..AdamWConfig::default()
        },
        &many,
    );
    for (s, g) in grads.iter().enumerate() {
        let lr_s = lr * 0.8f64.powi(s as i32);
        opt.step(&mut many, &[Tensor::vector(g.clone())], lr_s).unwrap();
    }
    let want: Vec<f64> = (0..6)
        .map(|j| {
            let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
            let (mut m, mut v, mut th) = (0.0, 0.0, theta[j]);
            for (s, g) in grads.iter().enumerate() {
                let lr_s = lr * 0.8f64.powi(s as i32);
                let t = (s + 1) as i32;
                th -= lr_s * wd * th;
                m = b1 * m + (1.0 - b1) * g[j];
                v = b2 * v + (1.0 - b2) * g[j] * g[j];
                th -= lr_s * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            }
            th
        })
        .collect();
    let four = OracleCase::new(
        "AdamW four decayed steps, scalar loop",
        max_delta(many[0].data(), &want),
        EXACT,
    );
    let single = adamw_scalar(
        theta[0],
        &grads.iter().map(|g| g[0]).collect::<Vec<_>>()[..1],
        lr,
        wd,
    );
    let agree = OracleCase::new(
        "AdamW scalar reference self-consistency",
        (single - closed[0]).abs(),
        EXACT,
    );
    vec![first, four, agree]
}

/// Gradient of a quadratic, where a power-of-two central difference has no truncation error.
pub fn gradient_cases() -> Vec<OracleCase> {
    let mut r = rng(6);
    let (m, k) = (5, 4);
    let a = uniform(&mut r, m * k, -1.0, 1.0);
    let y = uniform(&mut r, m, -1.0, 1.0);
    let w0 = uniform(&mut r, k, -1.0, 1.0);
    let f = |w: &[f64]| {
        let aw = matmul(&a, w, m, k, 1);
        aw.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>()
    };
    let fd = finite_difference(f, &w0, 2f64.powi(-10));
    let mut t = Tape::new();
    let av = t.constant(Tensor::new(vec![m, k], a.clone()).unwrap());
    let wv = t.param(Tensor::new(vec![k, 1], w0.clone()).unwrap());
    let yv = t.constant(Tensor::new(vec![m, 1], y.clone()).unwrap());
    let aw = t.matmul(av, wv).unwrap();
    let res = t.sub(aw, yv).unwrap();
    let sq = t.mul(res, res).unwrap();
    let loss = t.sum_all(sq).unwrap();
    t.backward(loss).unwrap();
    vec![OracleCase::new(
        "tape gradient vs central difference on a quadratic",
        max_delta(t.grad(wv).data(), &fd),
        EXACT,
    )]
}

pub fn layer_cases() -> Vec<OracleCase> {
    let (b, d, d_out) = (4, 5, 3);
    let mut r = rng(7);
    let x = uniform(&mut r, b * d, -0.5, 1.5);
    let xt = Tensor::new(vec![b, d], x.clone()).unwrap();
    let mut cases = Vec::new();
    for mode in ReductionMode::ALL {
        for (pln, l2mm) in [
            (NormKind::Layer, true),
            (NormKind::None, false),
            (NormKind::Batch, true),
        ] {
            let mut spec = ModelSpec::new(Variant::Afkan, vec![d, d_out]);
            spec.mode = mode;
            spec.pln = pln;
            spec.l2mm = l2mm;
            let mut model = perturbed(&spec, 8);
            let want = afkan_layer(&model, &x, b, d);
            let got = model.predict(&xt, b).unwrap();
            cases.push(OracleCase::new(
                format!("AF-KAN layer forward, {mode}, pln={pln}, l2mm={l2mm}"),
                max_delta(got.data(), &want),
                EXACT,
            ));
        }
    }
    let mut model = perturbed(&ModelSpec::new(Variant::Relukan, vec![d, d_out]), 9);
    let got = model.predict(&xt, b).unwrap();
    cases.push(OracleCase::new(
        "ReLU-KAN layer forward",
        max_delta(got.data(), &relukan_layer(&model, &x, b, d)),
        EXACT,
    ));
    let mut model = perturbed(&ModelSpec::new(Variant::Mlp, vec![d, 6, d_out]), 10);
    let got = model.predict(&xt, b).unwrap();
    cases.push(OracleCase::new(
        "MLP forward",
        max_delta(got.data(), &mlp(&model, &x, b)),
        EXACT,
    ));
    cases
}

/// Closed-form parameter counts per layer variant.
pub fn count_cases() -> Vec<OracleCase> {
    let afkan = |d: usize, o: usize, n: usize, mode: ReductionMode| -> usize {
        let reducer = match mode {
            ReductionMode::GlobalAttn => n + 1 + 1,
            ReductionMode::SpatialAttn => 2 * n + 1,
            ReductionMode::Multistep => n + 1,
        };
        2 * n + reducer + 2 * d + d * o + o
    };
    let relukan = |d: usize, o: usize, n: usize| 2 * d * n + d * n * o + o;
    let mlp = |d: usize, o: usize| 2 * d + d * o;
    let mut cases = Vec::new();
    for mode in ReductionMode::ALL {
        let mut spec = ModelSpec::mnist(Variant::Afkan);
        spec.mode = mode;
        let want = afkan(784, 64, 6, mode) + afkan(64, 10, 6, mode);
        let got = Model::new(&spec).unwrap().params().total();
        cases.push(OracleCase::new(
            format!("AF-KAN {mode} count"),
            got.abs_diff(want) as f64,
            0.5,
        ));
    }
    for (widths, want) in [
        (vec![784, 64, 10], relukan(784, 64, 6) + relukan(64, 10, 6)),
        (vec![784, 9, 10], relukan(784, 9, 6) + relukan(9, 10, 6)),
    ] {
        let got = Model::new(&ModelSpec::new(Variant::Relukan, widths.clone()))
            .unwrap()
            .params()
            .total();
        cases.push(OracleCase::new(
            format!("ReLU-KAN {widths:?} count"),
            got.abs_diff(want) as f64,
            0.5,
        ));
    }
    let got = Model::new(&ModelSpec::mnist(Variant::Mlp))
        .unwrap()
        .params()
        .total();
    cases.push(OracleCase::new(
        "MLP count",
        got.abs_diff(mlp(784, 64) + mlp(64, 10)) as f64,
        0.5,
    ));
    cases
}

pub fn all() -> Vec<OracleCase> {
    let mut v = Vec::new();
    v.extend(matmul_cases());
    v.extend(activation_cases());
    v.extend(combine_cases());
    v.extend(basis_cases());
    v.extend(normalization_cases());
    v.extend(optimizer_cases());
    v.extend(gradient_cases());
    v.extend(layer_cases());
    v.extend(count_cases());
    v
}
