use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and macro-averaged F1 over `classes` classes.
///
/// A class with no true and no predicted samples scores F1 = 0 and still counts in the mean.
pub fn metrics(pred: &[usize], truth: &[usize], classes: usize) -> Metrics {
    assert_eq!(pred.len(), truth.len(), "prediction and label counts differ");
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    let mut correct = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            correct += 1;
            if t < classes {
                tp[t] += 1;
            }
        } else {
            if p < classes {
                fp[p] += 1;
            }
            if t < classes {
                fn_[t] += 1;
            }
        }
    }
    let f1: f64 = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Metrics {
        accuracy: if pred.is_empty() {
            0.0
        } else {
            correct as f64 / pred.len() as f64
        },
        macro_f1: if classes == 0 { 0.0 } else { f1 / classes as f64 },
    }
}

/// Row-wise argmax of a `(rows, classes)` buffer; ties go to the lowest class.
pub fn argmax_rows(data: &[f64], classes: usize) -> Vec<usize> {
    data.chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 for a single value).
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std }
}
