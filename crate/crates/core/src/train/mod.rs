//! The training protocol: AdamW with per-epoch exponential decay, cross-entropy,
//! post-epoch evaluation, and aggregation over seeded runs.

mod metrics;
mod optim;

pub use metrics::{argmax_rows, mean_std, metrics, MeanStd, Metrics};
pub use optim::{lr_schedule, AdamW, AdamWConfig};

use std::io::Write;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::layers::{Model, ModelSpec};
use crate::tape::Tape;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub runs: usize,
    pub seed: u64,
    pub model: ModelSpec,
}

impl TrainConfig {
    pub fn new(model: ModelSpec) -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            gamma: 0.8,
            batch_size: 64,
            epochs: 25,
            runs: 5,
            seed: 0,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid(
                "learning rate must be positive and weight decay non-negative",
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.runs == 0 {
            return Err(Error::invalid("batch size, epochs and runs must be positive"));
        }
        self.model.validate()
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub run: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub macro_f1: f64,
    pub seconds: f64,
}

impl EpochRecord {
    /// Equality on every field except wall-clock time.
    pub fn same_numbers(&self, other: &EpochRecord) -> bool {
        let strip = |r: &EpochRecord| EpochRecord {
            seconds: 0.0,
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub run: usize,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
}

impl RunHistory {
    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("a run records at least one epoch")
    }
}

/// Accuracy and F1 of `model` on `ds`, evaluated in batches of `batch` rows.
pub fn evaluate(model: &mut Model, ds: &Dataset, batch: usize) -> Result<Metrics> {
    let classes = *model.spec().widths.last().expect("validated");
    let logits = model.predict(&ds.images, batch)?;
    let pred = argmax_rows(logits.data(), classes);
    Ok(metrics(&pred, &ds.labels, classes))
}

/// Trains one model from `seed`, calling `on_epoch` after every epoch.
///
/// The seed drives both weight initialization and batch order. Test-set metrics
/// are evaluated in batches of the training batch size, since the basis scaling
/// is computed per batch.
pub fn train_model(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    run: usize,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(RunHistory, Model)> {
    cfg.validate()?;
    let mut spec = cfg.model.clone();
    spec.seed = seed;
    let mut model = Model::new(&spec)?;
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        model.params().tensors(),
    );
    let plan = BatchPlan {
        seed,
        batch_size: cfg.batch_size,
    };
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = lr_schedule(cfg.lr, cfg.gamma, epoch);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (bi, batch) in make_batches(train, plan, epoch)?.enumerate() {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let x = tape.constant(batch.images);
            let logits = model.forward(&mut tape, &bound, x, true)?;
            let loss = tape.cross_entropy(logits, &batch.labels)?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            tape.backward(loss)?;
            let grads = bound.grads(&tape);
            drop(tape);
            opt.step(model.params_mut().tensors_mut(), &grads, lr)?;
            loss_sum += lv * batch.labels.len() as f64;
            seen += batch.labels.len();
        }
        let train_m = evaluate(&mut model, train, cfg.batch_size)?;
        let test_m = evaluate(&mut model, test, cfg.batch_size)?;
        let rec = EpochRecord {
            run,
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            train_acc: train_m.accuracy,
            val_acc: test_m.accuracy,
            macro_f1: test_m.macro_f1,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "{} run {run} epoch {epoch}: loss {:.4} train {:.4} val {:.4} f1 {:.4} ({:.1}s)",
            spec.label(),
            rec.train_loss,
            rec.train_acc,
            rec.val_acc,
            rec.macro_f1,
            rec.seconds
        );
        on_epoch(&rec);
        epochs.push(rec);
    }
    Ok((RunHistory { run, seed, epochs }, model))
}

/// Final-epoch statistics across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub train_loss: MeanStd,
    pub train_acc: MeanStd,
    pub val_acc: MeanStd,
    pub macro_f1: MeanStd,
    pub seconds: MeanStd,
}

pub fn aggregate(histories: &[RunHistory]) -> Aggregate {
    let col = |f: fn(&RunHistory) -> f64| mean_std(&histories.iter().map(f).collect::<Vec<_>>());
    Aggregate {
        runs: histories.len(),
        train_loss: col(|h| h.last().train_loss),
        train_acc: col(|h| h.last().train_acc),
        val_acc: col(|h| h.last().val_acc),
        macro_f1: col(|h| h.last().macro_f1),
        seconds: col(|h| h.epochs.iter().map(|e| e.seconds).sum()),
    }
}

impl Aggregate {
    /// Percentages as `mean ± std`, one metric per line.
    pub fn to_text(&self) -> String {
        let pct = |m: MeanStd| format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std);
        format!(
            "runs: {}\ntrain_acc: {}\nval_acc: {}\nmacro_f1: {}\ntrain_loss: {:.4} ± {:.4}\nseconds: {:.1} ± {:.1}\n",
            self.runs,
            pct(self.train_acc),
            pct(self.val_acc),
            pct(self.macro_f1),
            self.train_loss.mean,
            self.train_loss.std,
            self.seconds.mean,
            self.seconds.std
        )
    }
}

/// Runs seeds `cfg.seed .. cfg.seed + n` one after another.
pub fn multi_run(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    n: usize,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Vec<RunHistory>, Aggregate, Model)> {
    if n == 0 {
        return Err(Error::invalid("multi_run needs at least one run"));
    }
    let mut histories = Vec::with_capacity(n);
    let mut last = None;
    for run in 0..n {
        let (h, m) = train_model(cfg, train, test, run, cfg.seed + run as u64, on_epoch)?;
        histories.push(h);
        last = Some(m);
    }
    let agg = aggregate(&histories);
    Ok((histories, agg, last.expect("n >= 1")))
}

/// Line-delimited JSON metrics log.
pub struct MetricsLog<W: Write> {
    out: W,
}

impl<W: Write> MetricsLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn record(&mut self, rec: &EpochRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn aggregate(&mut self, label: &str, agg: &Aggregate) -> Result<()> {
        let block = serde_json::json!({ "model": label, "aggregate": agg });
        serde_json::to_writer(&mut self.out, &block)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Variant;
    use crate::tensor::Tensor;

    fn toy(n: usize, seed: u64) -> Dataset {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let c = rng.random_range(0..3usize);
            for j in 0..6 {
                let base = if j / 2 == c { 0.8 } else { 0.1 };
                x.push(base + 0.1 * rng.random::<f64>());
            }
            y.push(c);
        }
        Dataset::new("toy", Tensor::new(vec![n, 6], x).unwrap(), y).unwrap()
    }

    fn cfg(variant: Variant) -> TrainConfig {
        let mut c = TrainConfig::new(ModelSpec::new(variant, vec![6, 5, 3]));
        c.epochs = 3;
        c.batch_size = 16;
        c.lr = 1e-2;
        c
    }

    #[test]
    fn learns_toy_problem_deterministically() {
        let (tr, te) = (toy(240, 1), toy(60, 2));
        for v in [Variant::Afkan, Variant::Mlp, Variant::Relukan] {
            let c = cfg(v);
            let (h1, _) = train_model(&c, &tr, &te, 0, 3, &mut |_| {}).unwrap();
            let (h2, _) = train_model(&c, &tr, &te, 0, 3, &mut |_| {}).unwrap();
            assert!(h1.epochs.iter().zip(&h2.epochs).all(|(a, b)| a.same_numbers(b)));
            assert!(h1.last().train_loss < h1.epochs[0].train_loss, "{v}");
            assert!(h1.last().val_acc > 0.6, "{v}: {:?}", h1.last());
        }
    }

    #[test]
    fn log_lines_are_json() {
        let rec = EpochRecord {
            run: 0,
            epoch: 1,
            lr: 8e-4,
            train_loss: 0.3,
            train_acc: 0.9,
            val_acc: 0.91,
            macro_f1: 0.9,
            seconds: 1.5,
        };
        let mut log = MetricsLog::new(Vec::new());
        log.record(&rec).unwrap();
        let h = RunHistory {
            run: 0,
            seed: 0,
            epochs: vec![rec.clone()],
        };
        log.aggregate("mlp", &aggregate(&[h])).unwrap();
        let text = String::from_utf8(log.into_inner()).unwrap();
        let first: EpochRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, rec);
        assert!(text.lines().nth(1).unwrap().contains("\"aggregate\""));
    }
}
