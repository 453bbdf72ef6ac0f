//! Randomized invariants, each returning the first counterexample as an error string so
//! both the test target and the acceptance binary can drive them.

use afkan::basis::{self, FunctionType, GridSpec, PhaseLayout, PhasePair};
use afkan::data::{make_batches, BatchPlan, Dataset};
use afkan::layers::Variant;
use afkan::normalization;
use afkan::train::{train_model, EpochRecord, MetricsLog, TrainConfig};
use afkan::{tape, Activation, ModelSpec, Tape, Tensor};
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn finish(r: Result<(), proptest::test_runner::TestError<impl std::fmt::Debug>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

/// Every softmax slice sums to one and lies in `[0, 1]`, for any temperature.
pub fn softmax_normalization() -> Result<(), String> {
    let strat = (1usize..6, 1usize..9, 0usize..2, 0.05f64..40.0)
        .prop_flat_map(|(r, c, axis, tau)| (vec(-60.0f64..60.0, r * c), Just((r, c, axis, tau))));
    finish(runner(256).run(&strat, |(data, (r, c, axis, tau))| {
        let y = tape::softmax_axis(&Tensor::new(vec![r, c], data).unwrap(), axis as isize, tau)
            .map_err(|e| fail(e.to_string()))?;
        let d = y.data();
        prop_assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
        let sums: Vec<f64> = if axis == 0 {
            (0..c).map(|j| (0..r).map(|i| d[i * c + j]).sum()).collect()
        } else {
            d.chunks(c).map(|row| row.iter().sum()).collect()
        };
        for s in sums {
            prop_assert!((s - 1.0).abs() < 1e-12, "slice sums to {s}");
        }
        Ok(())
    }))
}

/// L2 plus min-max lands in `[0, 1]`, hits both ends and keeps the order of entries.
pub fn l2mm_range_and_order() -> Result<(), String> {
    let strat = (1usize..4, 1usize..5, 1usize..7)
        .prop_flat_map(|(b, d, n)| (vec(-5.0f64..5.0, b * d * n), Just(vec![b, d, n])));
    finish(runner(256).run(&strat, |(data, shape)| {
        let y = normalization::l2_minmax_values(&Tensor::new(shape, data.clone()).unwrap(), 0.0, 1.0)
            .map_err(|e| fail(e.to_string()))?;
        let y = y.data();
        prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        let constant = data.iter().all(|&v| v == data[0]);
        if !constant {
            prop_assert!(y.contains(&0.0) && y.contains(&1.0));
        }
        for i in 0..data.len() {
            for j in 0..data.len() {
                if data[i] < data[j] {
                    prop_assert!(y[i] <= y[j], "order broken at {i}, {j}");
                }
            }
        }
        Ok(())
    }))
}

/// B-spline rows are non-negative and sum to one anywhere inside the grid range.
pub fn partition_of_unity() -> Result<(), String> {
    let strat = (
        1usize..9,
        1usize..5,
        -3.0f64..3.0,
        0.1f64..4.0,
        vec(0.0f64..1.0, 1..16),
    );
    finish(runner(256).run(&strat, |(g, k, lo, width, ts)| {
        let hi = lo + width;
        let xs: Vec<f64> = ts.iter().map(|t| lo + t * width).filter(|&x| x < hi).collect();
        let spec = GridSpec::new(g, k).unwrap();
        let rows =
            basis::bspline_basis(&Tensor::vector(xs), spec, lo, hi).map_err(|e| fail(e.to_string()))?;
        for row in rows.data().chunks(spec.n()) {
            prop_assert!(row.iter().all(|&v| v >= -1e-15));
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12, "row sums to {s}");
        }
        Ok(())
    }))
}

/// At initialization every basis support has width `(k + 1) / G`.
pub fn phase_gap() -> Result<(), String> {
    finish(runner(256).run(&(1usize..20, 1usize..8, 1usize..5), |(g, k, d)| {
        let spec = GridSpec::new(g, k).unwrap();
        let gap = (k + 1) as f64 / g as f64;
        for layout in [PhaseLayout::Compact, PhaseLayout::PerInput(d)] {
            let p = basis::phase_init(spec, layout);
            prop_assert_eq!(p.low.len(), p.high.len());
            for (l, h) in p.low.data().iter().zip(p.high.data()) {
                prop_assert!((h - l - gap).abs() < 1e-12, "gap {} vs {gap}", h - l);
            }
        }
        Ok(())
    }))
}

/// Concatenated batches of an epoch hold each row exactly once, labels attached.
pub fn batching_round_trip() -> Result<(), String> {
    finish(runner(128).run(
        &(1usize..300, 1usize..80, any::<u64>(), 0usize..30),
        |(n, bs, seed, epoch)| {
            let images =
                Tensor::new(vec![n, 2], (0..n).flat_map(|i| [i as f64, -(i as f64)]).collect()).unwrap();
            let ds = Dataset::new("index", images, (0..n).map(|i| i % 10).collect()).unwrap();
            let plan = BatchPlan { seed, batch_size: bs };
            let mut seen = vec![false; n];
            let mut count = 0;
            for batch in make_batches(&ds, plan, epoch).map_err(|e| fail(e.to_string()))? {
                prop_assert!(batch.labels.len() <= bs);
                for (row, &label) in batch.images.data().chunks(2).zip(&batch.labels) {
                    let i = row[0] as usize;
                    prop_assert_eq!(row[1], -row[0]);
                    prop_assert_eq!(label, i % 10);
                    prop_assert!(!seen[i], "row {i} twice");
                    seen[i] = true;
                    count += 1;
                }
            }
            prop_assert_eq!(count, n);
            Ok(())
        },
    ))
}

/// Broadcasting matches explicit index arithmetic and does not depend on operand order.
pub fn broadcast_agrees_with_loops() -> Result<(), String> {
    let strat = (
        vec(1usize..4, 1..4),
        vec(any::<bool>(), 3),
        vec(any::<bool>(), 3),
        0usize..3,
    );
    finish(runner(256).run(&strat, |(full, ma, mb, drop)| {
        let rank = full.len();
        let a_shape: Vec<usize> = (0..rank).map(|i| if ma[i] { 1 } else { full[i] }).collect();
        // the right operand may also lose leading axes
        let b_full: Vec<usize> = (0..rank).map(|i| if mb[i] { 1 } else { full[i] }).collect();
        let b_shape = b_full[drop.min(rank - 1)..].to_vec();
        let out = tape::broadcast(&a_shape, &b_shape).map_err(|e| fail(e.to_string()))?;
        prop_assert_eq!(&out, &tape::broadcast(&b_shape, &a_shape).unwrap());
        let size = |s: &[usize]| s.iter().product::<usize>();
        let a: Vec<f64> = (0..size(&a_shape)).map(|v| v as f64).collect();
        let b: Vec<f64> = (0..size(&b_shape)).map(|v| 1000.0 * v as f64).collect();
        let mut t = Tape::new();
        let av = t.constant(Tensor::new(a_shape.clone(), a.clone()).unwrap());
        let bv = t.constant(Tensor::new(b_shape.clone(), b.clone()).unwrap());
        let c = t.add(av, bv).map_err(|e| fail(e.to_string()))?;
        prop_assert_eq!(t.value(c).shape(), &out[..]);
        let index = |shape: &[usize], coord: &[usize]| {
            let off = coord.len() - shape.len();
            shape.iter().enumerate().fold(0, |acc, (i, &s)| {
                acc * s + if s == 1 { 0 } else { coord[i + off] }
            })
        };
        for (flat, &v) in t.value(c).data().iter().enumerate() {
            let mut coord = vec![0; out.len()];
            let mut rem = flat;
            for i in (0..out.len()).rev() {
                coord[i] = rem % out[i];
                rem /= out[i];
            }
            prop_assert_eq!(v, a[index(&a_shape, &coord)] + b[index(&b_shape, &coord)]);
        }
        Ok(())
    }))
}

/// Every function type is symmetric in `p` and `q`, so basis values mirror about each
/// support midpoint; the ReLU-KAN bell does too and rises monotonically to its peak.
pub fn bell_symmetry_and_monotonicity() -> Result<(), String> {
    let strat = (
        -1.0f64..1.0,
        0.1f64..2.0,
        0usize..9,
        0usize..7,
        vec(0.0f64..1.0, 2..10),
    );
    finish(runner(256).run(&strat, |(l, width, ai, fi, ts)| {
        let h = l + width;
        let mid = 0.5 * (l + h);
        let phase = PhasePair {
            low: Tensor::vector(vec![l]),
            high: Tensor::vector(vec![h]),
        };
        let act = Activation::ALL[ai];
        let f = FunctionType::ALL[fi];
        let xs: Vec<f64> = ts.iter().map(|t| l + t * width).collect();
        let mirrored: Vec<f64> = xs.iter().map(|x| 2.0 * mid - x).collect();
        let eval = |xs: &[f64]| {
            basis::basis_a_values(
                &Tensor::new(vec![xs.len(), 1], xs.to_vec()).unwrap(),
                &phase,
                act,
                f,
            )
        };
        let (a, b) = (eval(&xs).unwrap(), eval(&mirrored).unwrap());
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()), "{act} {f}: {u} vs {v}");
        }
        let mut rising: Vec<f64> = ts.iter().map(|t| l + t * (mid - l)).collect();
        rising.sort_by(f64::total_cmp);
        let r =
            basis::relu_kan_r_values(&Tensor::new(vec![rising.len(), 1], rising).unwrap(), &phase).unwrap();
        prop_assert!(r.data().windows(2).all(|w| w[0] <= w[1]));
        Ok(())
    }))
}

fn log_bytes(records: &[EpochRecord]) -> Vec<u8> {
    let mut log = MetricsLog::new(Vec::new());
    for r in records {
        // wall-clock time is the one field that may legitimately differ
        log.record(&EpochRecord {
            seconds: 0.0,
            ..r.clone()
        })
        .unwrap();
    }
    log.into_inner()
}

/// Two trainings from one seed produce byte-identical metric logs and parameters.
pub fn run_determinism() -> Result<(), String> {
    let train = super::blobs(96, 16, 4, 1);
    let test = super::blobs(40, 16, 4, 2);
    for variant in [Variant::Afkan, Variant::Relukan, Variant::Mlp] {
        let mut cfg = TrainConfig::new(ModelSpec::new(variant, vec![16, 6, 4]));
        cfg.epochs = 2;
        cfg.runs = 1;
        cfg.batch_size = 16;
        let go = || train_model(&cfg, &train, &test, 0, 7, &mut |_| {}).map_err(|e| e.to_string());
        let ((h1, m1), (h2, m2)) = (go()?, go()?);
        if log_bytes(&h1.epochs) != log_bytes(&h2.epochs) {
            return Err(format!("{variant}: metric logs differ"));
        }
        let bits = |m: &afkan::Model| -> Vec<u64> {
            m.params()
                .tensors()
                .iter()
                .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        if bits(&m1) != bits(&m2) {
            return Err(format!("{variant}: trained parameters differ"));
        }
    }
    Ok(())
}

pub type Property = (&'static str, fn() -> Result<(), String>);

pub const ALL: [Property; 8] = [
    ("softmax normalization", softmax_normalization),
    ("L2MM range and order", l2mm_range_and_order),
    ("partition of unity", partition_of_unity),
    ("phase gap identity", phase_gap),
    ("batching round trip", batching_round_trip),
    ("broadcasting", broadcast_agrees_with_loops),
    ("basis symmetry and monotonicity", bell_symmetry_and_monotonicity),
    ("run determinism", run_determinism),
];
