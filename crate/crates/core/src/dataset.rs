//! Desk-scale labeled datasets and forget/retain partitions.
//!
//! Two generators are provided: Gaussian blobs whose class centers sit on a
//! circular arc (so consecutive classes are each other's nearest neighbors),
//! and concentric rings, which are not linearly separable.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

/// Distance between consecutive blob centers.
pub const CENTER_STEP: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub name: String,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize, name: impl Into<String>, seed: u64) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::argument(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::argument("n_classes must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::argument(format!("label {bad} outside 0..{n_classes}")));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            name: name.into(),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            name: self.name.clone(),
            seed: self.seed,
        }
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }
}

/// Where the class centers of a blob dataset sit. Consecutive centers are
/// [`CENTER_STEP`] apart on an arc spanning at most 0.9π, so chord length
/// grows with index distance.
pub fn blob_centers(seed: u64, n_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut r = rng::rng(rng::derive(seed, &[rng::tag("blob-centers")]));
    let (u, v) = random_orthonormal_pair(&mut r, dim);
    let delta = 0.9 * PI / (n_classes.max(2) - 1) as f64;
    let radius = CENTER_STEP / (2.0 * (delta / 2.0).sin());
    let offset: f64 = rand::Rng::random_range(&mut r, 0.0..2.0 * PI);
    (0..n_classes)
        .map(|c| {
            let theta = offset + c as f64 * delta;
            let (s, co) = theta.sin_cos();
            u.iter()
                .zip(&v)
                .map(|(a, b)| radius * (co * a + s * b))
                .collect()
        })
        .collect()
}

fn random_orthonormal_pair(r: &mut rng::Rng, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let draw = |r: &mut rng::Rng| -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(r)).collect() };
    let normalize = |x: &mut Vec<f64>| {
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= n);
    };
    let mut u = draw(r);
    normalize(&mut u);
    let mut v = draw(r);
    let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(&u).for_each(|(b, a)| *b -= proj * a);
    normalize(&mut v);
    (u, v)
}

fn check_shape(n_classes: usize, n_per_class: usize, dim: usize, spread: f64) -> Result<()> {
    if n_classes < 2 {
        return Err(Error::argument("n_classes must be at least 2"));
    }
    if n_per_class < 1 {
        return Err(Error::argument("n_per_class must be at least 1"));
    }
    if dim < 2 {
        return Err(Error::argument("dim must be at least 2"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::argument("spread must be finite and non-negative"));
    }
    Ok(())
}

pub fn generate_blobs(seed: u64, n_classes: usize, n_per_class: usize, dim: usize, spread: f64) -> Result<LabeledDataset> {
    check_shape(n_classes, n_per_class, dim, spread)?;
    let centers = blob_centers(seed, n_classes, dim);
    blobs_around(seed, &centers, n_per_class, spread, "blobs")
}

/// Isotropic Gaussian samples around explicitly given centers, one class per
/// center. Samples are ordered class by class.
pub fn blobs_around(seed: u64, centers: &[Vec<f64>], n_per_class: usize, spread: f64, name: &str) -> Result<LabeledDataset> {
    let dim = centers.first().map_or(0, Vec::len);
    if centers.iter().any(|c| c.len() != dim) {
        return Err(Error::argument("centers must share one dimension"));
    }
    check_shape(centers.len(), n_per_class, dim, spread)?;
    let mut r = rng::rng(rng::derive(seed, &[rng::tag("blob-noise")]));
    let mut data = Vec::with_capacity(centers.len() * n_per_class * dim);
    let mut labels = Vec::with_capacity(centers.len() * n_per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &c in center {
                let z: f64 = StandardNormal.sample(&mut r);
                data.push(c + spread * z);
            }
            labels.push(class);
        }
    }
    let features = Matrix::from_vec(labels.len(), dim, data);
    LabeledDataset::new(features, labels, centers.len(), name, seed)
}

/// Concentric annuli in the first two coordinates; class `c` has radius
/// `1 + c`. Remaining coordinates carry pure noise.
pub fn generate_rings(seed: u64, n_classes: usize, n_per_class: usize, dim: usize, spread: f64) -> Result<LabeledDataset> {
    check_shape(n_classes, n_per_class, dim, spread)?;
    let mut r = rng::rng(rng::derive(seed, &[rng::tag("rings")]));
    let mut data = Vec::with_capacity(n_classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * n_per_class);
    for class in 0..n_classes {
        let radius = 1.0 + class as f64;
        for _ in 0..n_per_class {
            let angle: f64 = rand::Rng::random_range(&mut r, 0.0..2.0 * PI);
            let dr: f64 = StandardNormal.sample(&mut r);
            let rr = radius + spread * dr;
            data.push(rr * angle.cos());
            data.push(rr * angle.sin());
            for _ in 2..dim {
                let z: f64 = StandardNormal.sample(&mut r);
                data.push(spread * z);
            }
            labels.push(class);
        }
    }
    let features = Matrix::from_vec(labels.len(), dim, data);
    LabeledDataset::new(features, labels, n_classes, "rings", seed)
}

/// Stratified train/test split. Each class contributes `round(n_c · f)` test
/// samples, clamped so both sides keep at least one sample.
pub fn split(dataset: &LabeledDataset, test_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::argument("test_fraction must lie in (0, 1)"));
    }
    let mut r = rng::rng(rng::derive(seed, &[rng::tag("split")]));
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..dataset.n_classes {
        let mut members = dataset.indices_of_class(class);
        if members.len() < 2 {
            return Err(Error::Partition(format!(
                "class {class} has {} sample(s); need at least 2 to split",
                members.len()
            )));
        }
        members.shuffle(&mut r);
        let n_test = ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len() - 1);
        test_idx.extend_from_slice(&members[..n_test]);
        train_idx.extend_from_slice(&members[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((dataset.subset(&train_idx), dataset.subset(&test_idx)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForgetPartition {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub forget_class: usize,
    pub forget_train: Vec<usize>,
    pub retain_train: Vec<usize>,
    pub forget_test: Vec<usize>,
    pub retain_test: Vec<usize>,
}

/// Which slice of a partition a metric is computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl ForgetPartition {
    pub fn forget_train_set(&self) -> LabeledDataset {
        self.train.subset(&self.forget_train)
    }

    pub fn retain_train_set(&self) -> LabeledDataset {
        self.train.subset(&self.retain_train)
    }

    pub fn forget_test_set(&self) -> LabeledDataset {
        self.test.subset(&self.forget_test)
    }

    pub fn retain_test_set(&self) -> LabeledDataset {
        self.test.subset(&self.retain_test)
    }

    pub fn split(&self, split: Split) -> &LabeledDataset {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.train.n_classes
    }
}

pub fn partition(train: LabeledDataset, test: LabeledDataset, forget_class: usize) -> Result<ForgetPartition> {
    if forget_class >= train.n_classes {
        return Err(Error::argument(format!(
            "forget class {forget_class} outside 0..{}",
            train.n_classes
        )));
    }
    if train.n_classes != test.n_classes || train.dim() != test.dim() {
        return Err(Error::argument("train and test disagree on classes or dimension"));
    }
    let (forget_train, retain_train): (Vec<usize>, Vec<usize>) =
        (0..train.len()).partition(|&i| train.labels[i] == forget_class);
    if forget_train.is_empty() {
        return Err(Error::argument(format!("forget class {forget_class} absent from train")));
    }
    let (forget_test, retain_test): (Vec<usize>, Vec<usize>) =
        (0..test.len()).partition(|&i| test.labels[i] == forget_class);
    Ok(ForgetPartition {
        train,
        test,
        forget_class,
        forget_train,
        retain_train,
        forget_test,
        retain_test,
    })
}

/// Built-in dataset recipe as it appears in run-config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub seed: u64,
    pub n_classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    pub forget_class: usize,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            name: "blobs".into(),
            seed: 7,
            n_classes: 10,
            n_per_class: 100,
            dim: 16,
            spread: 1.0,
            test_fraction: default_test_fraction(),
            forget_class: 0,
        }
    }
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<LabeledDataset> {
        match self.name.as_str() {
            "blobs" => generate_blobs(self.seed, self.n_classes, self.n_per_class, self.dim, self.spread),
            "rings" => generate_rings(self.seed, self.n_classes, self.n_per_class, self.dim, self.spread),
            other => Err(Error::argument(format!("unknown dataset `{other}` (expected blobs or rings)"))),
        }
    }

    pub fn build_partition(&self) -> Result<ForgetPartition> {
        let full = self.generate()?;
        let (train, test) = split(&full, self.test_fraction, self.seed)?;
        partition(train, test, self.forget_class)
    }
}
