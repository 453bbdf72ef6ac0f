//! Basis-function families: the activation-combination basis `A`, the
//! squared-ReLU bell `R`, Gaussian and reflectional-switch radial bases,
//! and a Cox–de Boor B-spline used as a reference.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::tape::{CustomOp, Tape, Var};
use crate::tensor::Tensor;

/// Grid size `G` and spline order `k`; every layer carries `G + k` basis functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid: usize,
    pub order: usize,
}

impl GridSpec {
    pub fn new(grid: usize, order: usize) -> Result<Self> {
        if grid == 0 || order == 0 {
            return Err(Error::invalid(format!(
                "grid size and spline order must be positive (got G={grid}, k={order})"
            )));
        }
        Ok(Self { grid, order })
    }

    /// Number of basis functions, `G + k`.
    pub fn n(&self) -> usize {
        self.grid + self.order
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseLayout {
    /// One `(n)` row shared by every input dimension.
    Compact,
    /// One `(d_in, n)` matrix, a row per input dimension.
    PerInput(usize),
}

/// Trainable interval endpoints of each basis function.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePair {
    pub low: Tensor,
    pub high: Tensor,
}

/// `l_i = (i - k) / G` and `h_i = l_i + (k + 1) / G` for `i = 0..G+k`.
pub fn phase_init(spec: GridSpec, layout: PhaseLayout) -> PhasePair {
    let g = spec.grid as f64;
    let k = spec.order as i64;
    let gap = (spec.order + 1) as f64 / g;
    let low: Vec<f64> = (0..spec.n() as i64).map(|i| (i - k) as f64 / g).collect();
    let high: Vec<f64> = low.iter().map(|l| l + gap).collect();
    match layout {
        PhaseLayout::Compact => PhasePair {
            low: Tensor::vector(low),
            high: Tensor::vector(high),
        },
        PhaseLayout::PerInput(d) => {
            let n = spec.n();
            PhasePair {
                low: Tensor::from_parts(vec![d, n], low.repeat(d)),
                high: Tensor::from_parts(vec![d, n], high.repeat(d)),
            }
        }
    }
}

/// How `p = act(x - l)` and `q = act(h - x)` are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionType {
    Sum,
    Prod,
    SumProd,
    Quad1,
    Quad2,
    Cubic1,
    Cubic2,
}

impl FunctionType {
    pub const ALL: [FunctionType; 7] = [
        FunctionType::Sum,
        FunctionType::Prod,
        FunctionType::SumProd,
        FunctionType::Quad1,
        FunctionType::Quad2,
        FunctionType::Cubic1,
        FunctionType::Cubic2,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            FunctionType::Sum => "sum",
            FunctionType::Prod => "prod",
            FunctionType::SumProd => "sum_prod",
            FunctionType::Quad1 => "quad1",
            FunctionType::Quad2 => "quad2",
            FunctionType::Cubic1 => "cubic1",
            FunctionType::Cubic2 => "cubic2",
        }
    }
}

impl fmt::Display for FunctionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FunctionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FunctionType::ALL
            .iter()
            .copied()
            .find(|t| t.tag() == s)
            .ok_or_else(|| Error::UnknownTag {
                kind: "function type",
                tag: s.to_string(),
            })
    }
}

pub fn combine(tape: &mut Tape, ftype: FunctionType, p: Var, q: Var) -> Result<Var> {
    if tape.shape(p) != tape.shape(q) {
        return Err(Error::ShapeMismatch {
            op: "combine",
            lhs: tape.shape(p).to_vec(),
            rhs: tape.shape(q).to_vec(),
        });
    }
    match ftype {
        FunctionType::Sum => tape.add(p, q),
        FunctionType::Prod => tape.mul(p, q),
        FunctionType::SumProd => {
            let s = tape.add(p, q)?;
            let pq = tape.mul(p, q)?;
            tape.add(s, pq)
        }
        FunctionType::Quad1 => {
            let pq = tape.mul(p, q)?;
            tape.mul(pq, pq)
        }
        FunctionType::Quad2 => {
            let p2 = tape.mul(p, p)?;
            let q2 = tape.mul(q, q)?;
            let pq = tape.mul(p, q)?;
            let pq2 = tape.mul(pq, pq)?;
            let s = tape.add(p2, q2)?;
            tape.add(s, pq2)
        }
        FunctionType::Cubic1 => {
            let s = tape.add(p, q)?;
            let p2 = tape.mul(p, p)?;
            let q2 = tape.mul(q, q)?;
            let s2 = tape.add(p2, q2)?;
            tape.mul(s, s2)
        }
        FunctionType::Cubic2 => {
            let pq = tape.mul(p, q)?;
            let pq2 = tape.mul(pq, pq)?;
            tape.mul(pq2, pq)
        }
    }
}

/// Activation-combination basis: `(..., D)` inputs against `(n)` or `(D, n)` phases give
/// `(..., D, n)`.
///
/// Recorded as one tape node with an analytic backward; [`basis_a_composed`] builds the same
/// function from primitive ops and serves as its reference.
pub fn basis_a(
    tape: &mut Tape,
    x: Var,
    low: Var,
    high: Var,
    act: Activation,
    ftype: FunctionType,
) -> Result<Var> {
    let grid = BellGrid::new("basis_a", tape.value(x), tape.value(low), tape.value(high))?;
    let keep = [x, low, high].iter().any(|&v| tape.requires_grad(v));
    let (xv, lv, hv) = (tape.value(x), tape.value(low), tape.value(high));
    let (value, cache) = match (grid.per_input, distinct_values(xv.data())) {
        (false, Some((vals, index))) => basis_a_table(&grid, &vals, index, lv, hv, act, ftype, keep),
        _ => basis_a_dense(&grid, xv, lv, hv, act, ftype, keep),
    };
    let op = BasisA {
        grid,
        ftype,
        kinked: act.has_kink(),
        cache,
    };
    tape.custom(Box::new(op), &[x, low, high], value)
}

fn basis_a_dense(
    grid: &BellGrid,
    x: &Tensor,
    low: &Tensor,
    high: &Tensor,
    act: Activation,
    ftype: FunctionType,
    keep: bool,
) -> (Tensor, BasisCache) {
    let mut pq = grid.differences(x, low, high);
    let mut deriv = if keep { vec![0.0; pq.len()] } else { Vec::new() };
    if keep {
        act.eval_in_place(&mut pq, &mut deriv);
    } else {
        act.apply_in_place(&mut pq);
    }
    let cols = grid.cols();
    let mut value = vec![0.0; grid.rows * cols];
    for (dst, row) in value.chunks_exact_mut(cols).zip(pq.chunks_exact(2 * cols)) {
        let (p, q) = row.split_at(cols);
        combine_into(ftype, dst, p, q);
    }
    let value = Tensor::from_parts(grid.out_shape.clone(), value);
    (value, BasisCache::Dense { pq, deriv })
}

/// Evaluates every basis function once per distinct input value, then gathers. With shared
/// phases the result depends only on the value, so this is exact.
#[allow(clippy::too_many_arguments)]
fn basis_a_table(
    grid: &BellGrid,
    vals: &[f64],
    index: Vec<u32>,
    low: &Tensor,
    high: &Tensor,
    act: Activation,
    ftype: FunctionType,
    keep: bool,
) -> (Tensor, BasisCache) {
    let n = grid.n;
    let (l, h) = (low.data(), high.data());
    let mut p: Vec<f64> = vals
        .iter()
        .flat_map(|&v| l.iter().map(move |&li| v - li))
        .collect();
    let mut q: Vec<f64> = vals
        .iter()
        .flat_map(|&v| h.iter().map(move |&hi| hi - v))
        .collect();
    let mut table = vec![0.0; p.len()];
    let (mut da, mut db) = (Vec::new(), Vec::new());
    if keep {
        let (mut dp, mut dq) = (vec![0.0; p.len()], vec![0.0; q.len()]);
        act.eval_in_place(&mut p, &mut dp);
        act.eval_in_place(&mut q, &mut dq);
        da = dp;
        db = dq;
        for j in 0..p.len() {
            let (cp, cq) = combine_partials(ftype, p[j], q[j]);
            da[j] *= cp;
            db[j] *= cq;
        }
    } else {
        act.apply_in_place(&mut p);
        act.apply_in_place(&mut q);
    }
    combine_into(ftype, &mut table, &p, &q);
    let mut value = Vec::with_capacity(index.len() * n);
    for &t in &index {
        let t = t as usize * n;
        value.extend_from_slice(&table[t..t + n]);
    }
    let value = Tensor::from_parts(grid.out_shape.clone(), value);
    (value, BasisCache::Table { index, da, db })
}

/// Distinct values of `xs` and each entry's position among them, or `None` once more than
/// an eighth of the entries turn out distinct.
fn distinct_values(xs: &[f64]) -> Option<(Vec<f64>, Vec<u32>)> {
    let limit = (xs.len() / 8).max(16);
    let mut seen: HashMap<u64, u32> = HashMap::new();
    let mut vals = Vec::new();
    let mut index = Vec::with_capacity(xs.len());
    for &v in xs {
        let next = vals.len() as u32;
        let t = *seen.entry(v.to_bits()).or_insert(next);
        if t == next {
            if vals.len() == limit {
                return None;
            }
            vals.push(v);
        }
        index.push(t);
    }
    Some((vals, index))
}

/// ReLU-KAN bell: `[relu(x - l) relu(h - x)]^2 * 16 / (h - l)^4`, shapes as in [`basis_a`].
///
/// The normalizing constant is rebuilt from the live phases on every call.
pub fn relu_kan_r(tape: &mut Tape, x: Var, low: Var, high: Var) -> Result<Var> {
    let grid = BellGrid::new("relu_kan_r", tape.value(x), tape.value(low), tape.value(high))?;
    let (l, h) = (tape.value(low).data(), tape.value(high).data());
    if l.iter().zip(h).any(|(a, b)| a == b) {
        return Err(Error::invalid(
            "phase high equals phase low; normalizer is undefined",
        ));
    }
    let scale: Vec<f64> = l.iter().zip(h).map(|(a, b)| 16.0 / (b - a).powi(4)).collect();
    let xs = tape.value(x).data();
    let mut value = vec![0.0; grid.rows * grid.cols()];
    for (r, row) in value.chunks_exact_mut(grid.cols()).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let xv = xs[r * grid.d + j / grid.n];
            let k = grid.phase_index(j);
            let pq = (xv - l[k]).max(0.0) * (h[k] - xv).max(0.0);
            *v = pq * pq * scale[k];
        }
    }
    let value = Tensor::from_parts(grid.out_shape.clone(), value);
    tape.custom(Box::new(ReluKanR { grid }), &[x, low, high], value)
}

/// Peak `m = ((h - l) / 2)^4` of the unnormalized ReLU-KAN bell at initialization and
/// its reciprocal `c`, which is the scale [`relu_kan_r`] applies.
pub fn relu_kan_constants(spec: GridSpec) -> (f64, f64) {
    let gap = (spec.order + 1) as f64 / spec.grid as f64;
    ((gap / 2.0).powi(4), 16.0 / gap.powi(4))
}

/// Shape bookkeeping shared by the two bell-shaped bases.
#[derive(Clone, Debug)]
struct BellGrid {
    rows: usize,
    d: usize,
    n: usize,
    per_input: bool,
    out_shape: Vec<usize>,
}

impl BellGrid {
    fn new(op: &'static str, x: &Tensor, low: &Tensor, high: &Tensor) -> Result<Self> {
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::invalid(format!("{op}: input is a scalar")))?;
        let mismatch = || Error::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: low.shape().to_vec(),
        };
        if low.shape() != high.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: low.shape().to_vec(),
                rhs: high.shape().to_vec(),
            });
        }
        let (n, per_input) = match *low.shape() {
            [n] => (n, false),
            [rows, n] if rows == d => (n, true),
            _ => return Err(mismatch()),
        };
        let rows = x.len().checked_div(d).unwrap_or(0);
        let mut out_shape = x.shape().to_vec();
        out_shape.push(n);
        Ok(Self {
            rows,
            d,
            n,
            per_input,
            out_shape,
        })
    }

    fn cols(&self) -> usize {
        self.d * self.n
    }

    /// Index into the phase buffers for column `j = d * n + i` of an output row.
    #[inline(always)]
    fn phase_index(&self, j: usize) -> usize {
        if self.per_input {
            j
        } else {
            j % self.n
        }
    }

    /// Rows of `[x - l | h - x]`, each half `cols()` long.
    fn differences(&self, x: &Tensor, low: &Tensor, high: &Tensor) -> Vec<f64> {
        let cols = self.cols();
        let (xs, l, h) = (x.data(), low.data(), high.data());
        let mut out = vec![0.0; 2 * self.rows * cols];
        for (r, row) in out.chunks_exact_mut(2 * cols).enumerate() {
            let (dl, dh) = row.split_at_mut(cols);
            for j in 0..cols {
                let xv = xs[r * self.d + j / self.n];
                let k = self.phase_index(j);
                dl[j] = xv - l[k];
                dh[j] = h[k] - xv;
            }
        }
        out
    }

    /// Distributes per-element partials `a = dL/d(x - l)` and `b = dL/d(h - x)` onto the inputs.
    fn scatter(
        &self,
        partials: impl Fn(usize, usize) -> (f64, f64),
        need: &[bool],
        x_shape: &[usize],
        phase_shape: &[usize],
    ) -> Vec<Option<Tensor>> {
        let cols = self.cols();
        let mut gx = vec![0.0; self.rows * self.d];
        let plen = if self.per_input { cols } else { self.n };
        let mut gl = vec![0.0; plen];
        let mut gh = vec![0.0; plen];
        for r in 0..self.rows {
            for j in 0..cols {
                let (a, b) = partials(r, j);
                let k = self.phase_index(j);
                gx[r * self.d + j / self.n] += a - b;
                gl[k] -= a;
                gh[k] += b;
            }
        }
        let wrap =
            |flag: bool, shape: &[usize], v: Vec<f64>| flag.then(|| Tensor::from_parts(shape.to_vec(), v));
        vec![
            wrap(need[0], x_shape, gx),
            wrap(need[1], phase_shape, gl),
            wrap(need[2], phase_shape, gh),
        ]
    }
}

/// `out <- C(p, q)` elementwise.
fn combine_into(ftype: FunctionType, out: &mut [f64], p: &[f64], q: &[f64]) {
    macro_rules! each {
        (|$p:ident, $q:ident| $e:expr) => {
            for ((o, &$p), &$q) in out.iter_mut().zip(p).zip(q) {
                *o = $e;
            }
        };
    }
    match ftype {
        FunctionType::Sum => each!(|p, q| p + q),
        FunctionType::Prod => each!(|p, q| p * q),
        FunctionType::SumProd => each!(|p, q| p + q + p * q),
        FunctionType::Quad1 => each!(|p, q| (p * q) * (p * q)),
        FunctionType::Quad2 => each!(|p, q| p * p + q * q + (p * q) * (p * q)),
        FunctionType::Cubic1 => each!(|p, q| (p + q) * (p * p + q * q)),
        FunctionType::Cubic2 => each!(|p, q| (p * q) * (p * q) * (p * q)),
    }
}

/// Partial derivatives `(dC/dp, dC/dq)`.
#[inline(always)]
fn combine_partials(ftype: FunctionType, p: f64, q: f64) -> (f64, f64) {
    match ftype {
        FunctionType::Sum => (1.0, 1.0),
        FunctionType::Prod => (q, p),
        FunctionType::SumProd => (1.0 + q, 1.0 + p),
        FunctionType::Quad1 => {
            let pq2 = 2.0 * p * q;
            (pq2 * q, pq2 * p)
        }
        FunctionType::Quad2 => {
            let pq2 = 2.0 * p * q;
            (2.0 * p + pq2 * q, 2.0 * q + pq2 * p)
        }
        FunctionType::Cubic1 => {
            let s2 = p * p + q * q;
            let s = p + q;
            (s2 + 2.0 * p * s, s2 + 2.0 * q * s)
        }
        FunctionType::Cubic2 => {
            let pq3 = 3.0 * (p * q) * (p * q);
            (pq3 * q, pq3 * p)
        }
    }
}

fn bell_kink_margin(inputs: &[&Tensor]) -> f64 {
    let Ok(grid) = BellGrid::new("kink", inputs[0], inputs[1], inputs[2]) else {
        return f64::INFINITY;
    };
    let diffs = grid.differences(inputs[0], inputs[1], inputs[2]);
    diffs.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

#[derive(Debug)]
enum BasisCache {
    /// Activation values and derivatives, rows laid out as `[x - l | h - x]`.
    Dense { pq: Vec<f64>, deriv: Vec<f64> },
    /// Per distinct value `t` and basis `i`: `dC/dp * act'(v_t - l_i)` in `da` and
    /// `dC/dq * act'(h_i - v_t)` in `db`; `index` maps each input entry to its `t`.
    Table {
        index: Vec<u32>,
        da: Vec<f64>,
        db: Vec<f64>,
    },
}

#[derive(Debug)]
struct BasisA {
    grid: BellGrid,
    ftype: FunctionType,
    kinked: bool,
    cache: BasisCache,
}

impl CustomOp for BasisA {
    fn name(&self) -> &'static str {
        "basis_a"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _out: &Tensor,
        grad: Tensor,
        need: &[bool],
        act_scale: f64,
    ) -> Vec<Option<Tensor>> {
        let grid = &self.grid;
        let (cols, n) = (grid.cols(), grid.n);
        let g = grad.data();
        // a = dL/d(x - l), b = dL/d(h - x)
        match &self.cache {
            BasisCache::Dense { pq, deriv } => {
                let partial = |r: usize, j: usize| {
                    let (ip, iq) = (2 * r * cols + j, (2 * r + 1) * cols + j);
                    let (cp, cq) = combine_partials(self.ftype, pq[ip], pq[iq]);
                    let gs = g[r * cols + j] * act_scale;
                    (gs * cp * deriv[ip], gs * cq * deriv[iq])
                };
                grid.scatter(partial, need, inputs[0].shape(), inputs[1].shape())
            }
            BasisCache::Table { index, da, db } => {
                let mut gx = vec![0.0; if need[0] { index.len() } else { 0 }];
                let (mut gl, mut gh) = (vec![0.0; n], vec![0.0; n]);
                for (e, (&t, gr)) in index.iter().zip(g.chunks_exact(n)).enumerate() {
                    let t = t as usize * n;
                    let (ra, rb) = (&da[t..t + n], &db[t..t + n]);
                    let mut gxe = 0.0;
                    for i in 0..n {
                        let gs = gr[i] * act_scale;
                        let (a, b) = (gs * ra[i], gs * rb[i]);
                        gxe += a - b;
                        gl[i] -= a;
                        gh[i] += b;
                    }
                    if need[0] {
                        gx[e] = gxe;
                    }
                }
                let shape = |i: usize| inputs[i].shape().to_vec();
                vec![
                    need[0].then(|| Tensor::from_parts(shape(0), gx)),
                    need[1].then(|| Tensor::from_parts(shape(1), gl)),
                    need[2].then(|| Tensor::from_parts(shape(2), gh)),
                ]
            }
        }
    }

    fn kink_margin(&self, inputs: &[&Tensor]) -> f64 {
        if self.kinked {
            bell_kink_margin(inputs)
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug)]
struct ReluKanR {
    grid: BellGrid,
}

impl CustomOp for ReluKanR {
    fn name(&self) -> &'static str {
        "relu_kan_r"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _out: &Tensor,
        grad: Tensor,
        need: &[bool],
        act_scale: f64,
    ) -> Vec<Option<Tensor>> {
        let grid = &self.grid;
        let (xs, l, h) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let g = grad.data();
        let cols = grid.cols();
        let mut gx = vec![0.0; xs.len()];
        let mut gl = vec![0.0; l.len()];
        let mut gh = vec![0.0; h.len()];
        for r in 0..grid.rows {
            for j in 0..cols {
                let gv = g[r * cols + j];
                let xi = r * grid.d + j / grid.n;
                let k = grid.phase_index(j);
                let (p, q) = ((xs[xi] - l[k]).max(0.0), (h[k] - xs[xi]).max(0.0));
                if p == 0.0 || q == 0.0 || gv == 0.0 {
                    continue;
                }
                let w = h[k] - l[k];
                let c = 16.0 / w.powi(4);
                // R = c (pq)^2: dR/dp = 2cpq^2, dR/dq = 2cp^2q, dc/dh = -dc/dl = -4c/w.
                let a = gv * 2.0 * c * p * q * q * act_scale;
                let b = gv * 2.0 * c * p * p * q * act_scale;
                let dc = gv * (p * q) * (p * q) * 4.0 * c / w;
                gx[xi] += a - b;
                gl[k] += dc - a;
                gh[k] += b - dc;
            }
        }
        let wrap = |i: usize, v: Vec<f64>| need[i].then(|| Tensor::from_parts(inputs[i].shape().to_vec(), v));
        vec![wrap(0, gx), wrap(1, gl), wrap(2, gh)]
    }

    fn kink_margin(&self, inputs: &[&Tensor]) -> f64 {
        bell_kink_margin(inputs)
    }
}

/// Gaussian radial basis `exp(-(x - c)^2 / (2 h^2))`, one output per center along a new last axis.
pub fn grbf(tape: &mut Tape, x: Var, centers: Var, h: f64) -> Result<Var> {
    check_width(h)?;
    let xe = expand_last(tape, x)?;
    let r = tape.sub(xe, centers)?;
    let r2 = tape.mul(r, r)?;
    let z = tape.mul_scalar(r2, -1.0 / (2.0 * h * h))?;
    tape.exp(z)
}

/// Reflectional switch basis `1 - tanh^2((x - c) / h)`.
pub fn rswaf(tape: &mut Tape, x: Var, centers: Var, h: f64) -> Result<Var> {
    check_width(h)?;
    let xe = expand_last(tape, x)?;
    let r = tape.sub(xe, centers)?;
    let z = tape.mul_scalar(r, 1.0 / h)?;
    let t = tape.tanh(z)?;
    let t2 = tape.mul(t, t)?;
    let neg = tape.neg(t2)?;
    tape.add_scalar(neg, 1.0)
}

fn check_width(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("basis width must be positive, got {h}")))
    }
}

fn expand_last(tape: &mut Tape, x: Var) -> Result<Var> {
    let mut shape = tape.shape(x).to_vec();
    shape.push(1);
    tape.reshape(x, shape)
}

/// Radial basis families used by the baseline layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialFamily {
    Grbf,
    Rswaf,
}

impl FromStr for RadialFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grbf" => Ok(RadialFamily::Grbf),
            "rswaf" => Ok(RadialFamily::Rswaf),
            _ => Err(Error::UnknownTag {
                kind: "radial basis",
                tag: s.to_string(),
            }),
        }
    }
}

impl RadialFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            RadialFamily::Grbf => "grbf",
            RadialFamily::Rswaf => "rswaf",
        }
    }

    pub fn eval(&self, tape: &mut Tape, x: Var, centers: Var, h: f64) -> Result<Var> {
        match self {
            RadialFamily::Grbf => grbf(tape, x, centers, h),
            RadialFamily::Rswaf => rswaf(tape, x, centers, h),
        }
    }
}

/// `count` evenly spaced centers on `[lo, hi]` and the spacing between them.
pub fn radial_centers(count: usize, lo: f64, hi: f64) -> (Vec<f64>, f64) {
    if count == 1 {
        return (vec![(lo + hi) / 2.0], hi - lo);
    }
    let step = (hi - lo) / (count - 1) as f64;
    ((0..count).map(|i| lo + step * i as f64).collect(), step)
}

/// Cox–de Boor B-spline basis of order `k` on `G` uniform cells over `[lo, hi]`,
/// with `k` extra knots beyond each end. Output gains a trailing `G + k` axis.
pub fn bspline_basis(x: &Tensor, spec: GridSpec, lo: f64, hi: f64) -> Result<Tensor> {
    if lo >= hi {
        return Err(Error::invalid(format!("empty B-spline range [{lo}, {hi}]")));
    }
    let (g, k) = (spec.grid, spec.order);
    let step = (hi - lo) / g as f64;
    let knots: Vec<f64> = (0..=g + 2 * k)
        .map(|j| lo + (j as f64 - k as f64) * step)
        .collect();
    let n = spec.n();
    let mut out = Vec::with_capacity(x.len() * n);
    let mut b = vec![0.0; knots.len() - 1];
    for &v in x.data() {
        for (j, bj) in b.iter_mut().enumerate() {
            *bj = if knots[j] <= v && v < knots[j + 1] {
                1.0
            } else {
                0.0
            };
        }
        for p in 1..=k {
            for j in 0..knots.len() - 1 - p {
                let left = (v - knots[j]) / (knots[j + p] - knots[j]) * b[j];
                let right = (knots[j + p + 1] - v) / (knots[j + p + 1] - knots[j + 1]) * b[j + 1];
                b[j] = left + right;
            }
        }
        out.extend_from_slice(&b[..n]);
    }
    let mut shape = x.shape().to_vec();
    shape.push(n);
    Tensor::new(shape, out)
}

// Value-level conveniences over a throwaway tape.

pub fn combine_values(ftype: FunctionType, p: &Tensor, q: &Tensor) -> Result<Tensor> {
    let mut t = Tape::new();
    let (pv, qv) = (t.constant(p.clone()), t.constant(q.clone()));
    let y = combine(&mut t, ftype, pv, qv)?;
    Ok(t.value(y).clone())
}

pub fn basis_a_values(x: &Tensor, phase: &PhasePair, act: Activation, ftype: FunctionType) -> Result<Tensor> {
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let l = t.constant(phase.low.clone());
    let h = t.constant(phase.high.clone());
    let y = basis_a(&mut t, xv, l, h, act, ftype)?;
    Ok(t.value(y).clone())
}

pub fn relu_kan_r_values(x: &Tensor, phase: &PhasePair) -> Result<Tensor> {
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let l = t.constant(phase.low.clone());
    let h = t.constant(phase.high.clone());
    let y = relu_kan_r(&mut t, xv, l, h)?;
    Ok(t.value(y).clone())
}

pub fn radial_values(family: RadialFamily, x: &Tensor, centers: &[f64], h: f64) -> Result<Tensor> {
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let c = t.constant(Tensor::vector(centers.to_vec()));
    let y = family.eval(&mut t, xv, c, h)?;
    Ok(t.value(y).clone())
}
