//! Accuracy-side evaluation: UA/RA/TUA/TRA, per-class accuracy differences
//! and the proportion/confidence prediction matrix.

use serde::{Deserialize, Serialize};

use crate::dataset::{ForgetPartition, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::linalg::argmax;
use crate::nn::{softmax_rows, Mlp};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub ua: f64,
    pub ra: f64,
    pub tua: f64,
    pub tra: f64,
}

fn accuracy_on(model: &Mlp, data: &LabeledDataset, indices: &[usize], what: &str) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Metric(format!("{what} split is empty")));
    }
    let subset = data.subset(indices);
    let predictions = model.predict(&subset.features)?;
    let correct = predictions.iter().zip(&subset.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / indices.len() as f64)
}

pub fn accuracy(model: &Mlp, data: &LabeledDataset) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    accuracy_on(model, data, &all, "dataset")
}

pub fn accuracy_summary(model: &Mlp, p: &ForgetPartition) -> Result<AccuracySummary> {
    Ok(AccuracySummary {
        ua: accuracy_on(model, &p.train, &p.forget_train, "forget_train")?,
        ra: accuracy_on(model, &p.train, &p.retain_train, "retain_train")?,
        tua: accuracy_on(model, &p.test, &p.forget_test, "forget_test")?,
        tra: accuracy_on(model, &p.test, &p.retain_test, "retain_test")?,
    })
}

/// Accuracy per true class; `NaN` for classes absent from `data`.
pub fn per_class_accuracy(model: &Mlp, data: &LabeledDataset) -> Result<Vec<f64>> {
    let predictions = model.predict(&data.features)?;
    let mut hits = vec![0usize; data.n_classes];
    let mut totals = vec![0usize; data.n_classes];
    for (&p, &l) in predictions.iter().zip(&data.labels) {
        totals[l] += 1;
        hits[l] += usize::from(p == l);
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracyDiff {
    pub split: Split,
    pub acc_a: Vec<f64>,
    pub acc_b: Vec<f64>,
    pub diff: Vec<f64>,
    pub retain_avg_diff: f64,
}

pub fn class_accuracy_diff(a: &Mlp, b: &Mlp, p: &ForgetPartition, split: Split) -> Result<ClassAccuracyDiff> {
    if a.arch.n_classes != b.arch.n_classes {
        return Err(Error::argument("models disagree on n_classes"));
    }
    let data = p.split(split);
    let acc_a = per_class_accuracy(a, data)?;
    let acc_b = per_class_accuracy(b, data)?;
    let diff: Vec<f64> = acc_a.iter().zip(&acc_b).map(|(x, y)| x - y).collect();
    let retain: Vec<f64> = diff
        .iter()
        .enumerate()
        .filter(|&(c, d)| c != p.forget_class && !d.is_nan())
        .map(|(_, &d)| d)
        .collect();
    let retain_avg_diff = if retain.is_empty() {
        0.0
    } else {
        retain.iter().sum::<f64>() / retain.len() as f64
    };
    Ok(ClassAccuracyDiff {
        split,
        acc_a,
        acc_b,
        diff,
        retain_avg_diff,
    })
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    pub proportion: Vec<Vec<f64>>,
    /// Mean softmax probability of the column's class over the cell's samples.
    pub mean_confidence: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
}

pub fn prediction_matrix(model: &Mlp, data: &LabeledDataset) -> Result<PredictionMatrix> {
    if data.is_empty() {
        return Err(Error::Metric("prediction matrix of an empty view".into()));
    }
    let probs = softmax_rows(&model.logits(&data.features)?);
    prediction_matrix_from_probs(&probs.to_rows(), &data.labels, data.n_classes)
}

/// Builds the matrix from per-sample probability rows.
pub fn prediction_matrix_from_probs(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<PredictionMatrix> {
    if probs.len() != labels.len() {
        return Err(Error::argument("probability rows and labels differ in length"));
    }
    let mut counts = vec![vec![0usize; n_classes]; n_classes];
    let mut conf_sum = vec![vec![0.0; n_classes]; n_classes];
    for (row, &label) in probs.iter().zip(labels) {
        let predicted = argmax(row);
        counts[label][predicted] += 1;
        conf_sum[label][predicted] += row[predicted];
    }
    let mut proportion = vec![vec![0.0; n_classes]; n_classes];
    let mut mean_confidence = vec![vec![0.0; n_classes]; n_classes];
    for i in 0..n_classes {
        let total: usize = counts[i].iter().sum();
        for j in 0..n_classes {
            if counts[i][j] > 0 {
                proportion[i][j] = counts[i][j] as f64 / total as f64;
                mean_confidence[i][j] = conf_sum[i][j] / counts[i][j] as f64;
            }
        }
    }
    Ok(PredictionMatrix {
        proportion,
        mean_confidence,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_blobs, partition, split};
    use crate::linalg::Matrix;
    use crate::nn::ArchitectureSpec;

    /// A model whose logits are a constant vector, via zero weights and a
    /// hand-set output bias.
    fn constant_model(input_dim: usize, logits: &[f64]) -> Mlp {
        let arch = ArchitectureSpec {
            input_dim,
            hidden_widths: vec![2],
            n_classes: logits.len(),
            activation: Default::default(),
        };
        let mut m = Mlp::init(&arch, 0).unwrap();
        for l in &mut m.layers {
            l.weights.as_mut_slice().fill(0.0);
        }
        m.layers.last_mut().unwrap().bias = logits.to_vec();
        m
    }

    fn fixture() -> ForgetPartition {
        let ds = generate_blobs(1, 4, 20, 3, 0.5).unwrap();
        let (train, test) = split(&ds, 0.25, 1).unwrap();
        partition(train, test, 2).unwrap()
    }

    #[test]
    fn constant_predictor_accuracies() {
        let p = fixture();
        let m = constant_model(3, &[0.0, 0.0, 5.0, 0.0]);
        let s = accuracy_summary(&m, &p).unwrap();
        assert_eq!((s.ua, s.ra, s.tua, s.tra), (1.0, 0.0, 1.0, 0.0));
        let m = constant_model(3, &[5.0, 0.0, 0.0, 0.0]);
        let s = accuracy_summary(&m, &p).unwrap();
        assert_eq!(s.ua, 0.0);
        // class 0 is a third of retain_train
        assert!((s.ra - 1.0 / 3.0).abs() < 1e-12);
        let errors = p.retain_train.iter().filter(|&&i| p.train.labels[i] != 0).count();
        assert!((s.ra + errors as f64 / p.retain_train.len() as f64 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_split_is_metric_error() {
        let mut p = fixture();
        p.forget_test.clear();
        let m = constant_model(3, &[0.0; 4]);
        assert!(matches!(accuracy_summary(&m, &p), Err(Error::Metric(_))));
    }

    #[test]
    fn diff_identity_and_antisymmetry() {
        let p = fixture();
        let a = Mlp::init(&ArchitectureSpec::default_for(3, 4), 1).unwrap();
        let b = Mlp::init(&ArchitectureSpec::default_for(3, 4), 2).unwrap();
        let same = class_accuracy_diff(&a, &a, &p, Split::Train).unwrap();
        assert!(same.diff.iter().all(|&d| d == 0.0));
        let ab = class_accuracy_diff(&a, &b, &p, Split::Test).unwrap();
        let ba = class_accuracy_diff(&b, &a, &p, Split::Test).unwrap();
        for (x, y) in ab.diff.iter().zip(&ba.diff) {
            assert_eq!(*x, -*y);
        }
        assert_eq!(ab.retain_avg_diff, -ba.retain_avg_diff);
    }

    #[test]
    fn retain_average_matches_direct_mean() {
        let p = fixture();
        let a = Mlp::init(&ArchitectureSpec::default_for(3, 4), 3).unwrap();
        let b = constant_model(3, &[0.0, 1.0, 0.0, 0.0]);
        let d = class_accuracy_diff(&a, &b, &p, Split::Train).unwrap();
        // Direct recomputation over the retain classes {0, 1, 3}.
        let preds_a = a.predict(&p.train.features).unwrap();
        let mut manual = 0.0;
        for c in [0usize, 1, 3] {
            let idx = p.train.indices_of_class(c);
            let acc_a = idx.iter().filter(|&&i| preds_a[i] == c).count() as f64 / idx.len() as f64;
            let acc_b = if c == 1 { 1.0 } else { 0.0 };
            manual += acc_a - acc_b;
        }
        assert!((d.retain_avg_diff - manual / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_model_matrix_concentrates_on_class_zero() {
        let p = fixture();
        let m = constant_model(3, &[0.0; 4]);
        let pm = prediction_matrix(&m, &p.train).unwrap();
        for i in 0..4 {
            assert_eq!(pm.proportion[i][0], 1.0);
            assert!((pm.mean_confidence[i][0] - 0.25).abs() < 1e-15);
            assert_eq!(pm.counts[i].iter().sum::<usize>(), p.train.class_counts()[i]);
            for j in 1..4 {
                assert_eq!((pm.proportion[i][j], pm.mean_confidence[i][j], pm.counts[i][j]), (0.0, 0.0, 0));
            }
        }
    }

    #[test]
    fn perfect_classifier_gives_identity() {
        let n = 3;
        let probs: Vec<Vec<f64>> = (0..30)
            .map(|k| {
                let mut r = vec![1e-6; n];
                r[k % n] = 1.0 - 2e-6;
                r
            })
            .collect();
        let labels: Vec<usize> = (0..30).map(|k| k % n).collect();
        let pm = prediction_matrix_from_probs(&probs, &labels, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(pm.proportion[i][j], if i == j { 1.0 } else { 0.0 });
            }
            assert!(pm.mean_confidence[i][i] > 0.999);
        }
    }

    #[test]
    fn proportion_confidence_mismatch_pattern() {
        // 56 of 100 class-0 samples land on class 1 with a flat distribution
        // that still puts the argmax on class 1 (p = 0.16 over 10 classes).
        let n = 10;
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for k in 0..100 {
            let mut row = vec![0.0; n];
            if k < 56 {
                row[1] = 0.16;
                let rest = (1.0 - 0.16) / 9.0;
                for (j, v) in row.iter_mut().enumerate() {
                    if j != 1 {
                        *v = rest - 1e-3 * (j == 0) as u8 as f64;
                    }
                }
            } else {
                row[0] = 0.9;
                for v in row.iter_mut().skip(1) {
                    *v = 0.1 / 9.0;
                }
            }
            probs.push(row);
            labels.push(0);
        }
        let pm = prediction_matrix_from_probs(&probs, &labels, n).unwrap();
        assert!((pm.proportion[0][1] - 0.56).abs() < 1e-12);
        assert!((pm.mean_confidence[0][1] - 0.16).abs() < 1e-12);
        assert!(pm.proportion[0][1] > 3.0 * pm.mean_confidence[0][1]);
        let row_sum: f64 = pm.proportion[0].iter().sum();
        assert!((row_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn matrix_of_empty_view_is_error() {
        let m = constant_model(3, &[0.0; 4]);
        let empty = LabeledDataset::new(Matrix::zeros(0, 3), vec![], 4, "e", 0).unwrap();
        assert!(prediction_matrix(&m, &empty).is_err());
    }
}
