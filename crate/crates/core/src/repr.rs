//! Representation-level comparison: linear CKA per layer, the elbow layer,
//! penultimate embeddings with a 2-D projection, and forget-status categories.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataset::{ForgetPartition, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix};
use crate::nn::{softmax_rows, Mlp, PENULTIMATE};
use crate::rng;

/// Row cap for CKA inputs.
pub const CKA_MAX_ROWS: usize = 1000;
pub const DEFAULT_DROP_RATIO: f64 = 0.8;

/// Linear CKA of column-centered `x` and `y`:
/// `‖Yᵀ X‖²_F / (‖Xᵀ X‖_F · ‖Yᵀ Y‖_F)`.
pub fn linear_cka(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::argument(format!("CKA inputs have {} and {} rows", x.rows(), y.rows())));
    }
    if x.rows() < 2 {
        return Err(Error::argument("CKA needs at least 2 samples"));
    }
    let mut xc = x.clone();
    let mut yc = y.clone();
    xc.center_columns();
    yc.center_columns();
    let xx = xc.t_matmul(&xc).frobenius_sq().sqrt();
    let yy = yc.t_matmul(&yc).frobenius_sq().sqrt();
    if xx == 0.0 || yy == 0.0 || !xx.is_finite() || !yy.is_finite() {
        return Err(Error::UndefinedSimilarity("an activation matrix has zero variance".into()));
    }
    let cross = yc.t_matmul(&xc).frobenius_sq();
    Ok((cross / (xx * yy)).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSimilarity {
    pub layer: String,
    pub cka_vs_original_forget: f64,
    pub cka_vs_original_retain: f64,
    pub cka_vs_retrained_forget: f64,
    pub cka_vs_retrained_retain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSimilarityProfile {
    pub layers: Vec<LayerSimilarity>,
}

/// Deterministic subsample of at most `cap` indices, kept in input order.
pub fn subsample(indices: &[usize], cap: usize, seed: u64) -> Vec<usize> {
    if indices.len() <= cap {
        return indices.to_vec();
    }
    let mut r = rng::rng(rng::derive(seed, &[rng::tag("cka-subsample")]));
    let mut picked: Vec<usize> = sample(&mut r, indices.len(), cap).into_iter().collect();
    picked.sort_unstable();
    picked.into_iter().map(|i| indices[i]).collect()
}

fn activations(model: &Mlp, x: &Matrix, layers: &[String]) -> Result<Vec<Matrix>> {
    let names: Vec<&str> = layers.iter().map(String::as_str).collect();
    let mut trace = model.forward(x, &names)?;
    Ok(layers
        .iter()
        .map(|l| trace.activations.remove(l).expect("requested layer captured"))
        .collect())
}

/// Per-layer CKA of `model` against `reference` on the given samples.
pub fn cka_curve(model: &Mlp, reference: &Mlp, x: &Matrix, layers: &[String]) -> Result<Vec<f64>> {
    if model.arch != reference.arch {
        return Err(Error::argument("CKA profile requires identical architectures"));
    }
    let a = activations(model, x, layers)?;
    let b = activations(reference, x, layers)?;
    a.iter().zip(&b).map(|(p, q)| linear_cka(p, q)).collect()
}

/// CKA of `model` against both references, separately on forget and retain
/// training samples (each capped at [`CKA_MAX_ROWS`] rows).
pub fn layer_similarity_profile(
    model: &Mlp,
    original: &Mlp,
    retrained: &Mlp,
    p: &ForgetPartition,
    layers: &[String],
    seed: u64,
) -> Result<LayerSimilarityProfile> {
    let forget = p.train.features.select_rows(&subsample(&p.forget_train, CKA_MAX_ROWS, seed));
    let retain = p.train.features.select_rows(&subsample(&p.retain_train, CKA_MAX_ROWS, seed));
    let of = cka_curve(model, original, &forget, layers)?;
    let or = cka_curve(model, original, &retain, layers)?;
    let rf = cka_curve(model, retrained, &forget, layers)?;
    let rr = cka_curve(model, retrained, &retain, layers)?;
    Ok(LayerSimilarityProfile {
        layers: layers
            .iter()
            .enumerate()
            .map(|(i, name)| LayerSimilarity {
                layer: name.clone(),
                cka_vs_original_forget: of[i],
                cka_vs_original_retain: or[i],
                cka_vs_retrained_forget: rf[i],
                cka_vs_retrained_retain: rr[i],
            })
            .collect(),
    })
}

/// Elbow rule on forget (`f`) and retain (`r`) similarity curves between the
/// original and retrained models. The divergence layer is the first `l` with
/// `f[l] < drop_ratio · max(f[..=l])`; the elbow is the argmin of `r` over the
/// layers before it. Without divergence (or with divergence at layer 0) the
/// elbow is the last hidden layer, `f.len() − 2`.
pub fn elbow_from_curves(f: &[f64], r: &[f64], drop_ratio: f64) -> usize {
    let last_hidden = f.len().saturating_sub(2);
    let mut running_max = f64::NEG_INFINITY;
    let mut divergence = None;
    for (l, &v) in f.iter().enumerate() {
        running_max = running_max.max(v);
        if v < drop_ratio * running_max {
            divergence = Some(l);
            break;
        }
    }
    match divergence {
        Some(d) if d > 0 => {
            let mut best = 0;
            for l in 1..d {
                if r[l] < r[best] {
                    best = l;
                }
            }
            best
        }
        _ => last_hidden,
    }
}

pub fn elbow_layer(original: &Mlp, retrained: &Mlp, p: &ForgetPartition, seed: u64) -> Result<usize> {
    let layers = original.arch.layer_names();
    if layers.len() < 2 {
        return Err(Error::argument("elbow detection needs at least 2 layers"));
    }
    let forget = p.train.features.select_rows(&subsample(&p.forget_train, CKA_MAX_ROWS, seed));
    let retain = p.train.features.select_rows(&subsample(&p.retain_train, CKA_MAX_ROWS, seed));
    let f = cka_curve(retrained, original, &forget, &layers)?;
    let r = cka_curve(retrained, original, &retain, &layers)?;
    Ok(elbow_from_curves(&f, &r, DEFAULT_DROP_RATIO))
}

/// Last hidden activation for every row of `data`.
pub fn penultimate_embeddings(model: &Mlp, features: &Matrix) -> Result<Matrix> {
    let mut trace = model.forward(features, &[PENULTIMATE])?;
    Ok(trace.activations.remove(PENULTIMATE).expect("captured"))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    #[default]
    Pca,
}

/// 2-D projection of `embeddings`.
pub fn project_2d(embeddings: &Matrix, method: Projection) -> Result<Matrix> {
    match method {
        Projection::Pca => pca_2d(embeddings),
    }
}

/// Projects centered rows onto the top two principal directions. Each
/// direction's largest-magnitude loading is made positive. Missing rank is
/// padded with a zero axis.
fn pca_2d(x: &Matrix) -> Result<Matrix> {
    if x.rows() < 3 {
        return Err(Error::argument("projection needs at least 3 samples"));
    }
    let mut xc = x.clone();
    xc.center_columns();
    let d = xc.cols();
    let cov = xc.t_matmul(&xc);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.as_slice()));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(2);
    for &k in order.iter().take(2) {
        if eig.eigenvalues[k] <= scale * 1e-12 {
            break;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = argmax(&v.iter().map(|c| c.abs()).collect::<Vec<_>>());
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        axes.push(v);
    }
    let mut out = Matrix::zeros(x.rows(), 2);
    for r in 0..x.rows() {
        for (a, axis) in axes.iter().enumerate() {
            out.set(r, a, crate::linalg::dot(xc.row(r), axis));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Highlight {
    SuccessfullyForgotten,
    NotForgotten,
    OverlyForgotten,
    None,
}

impl Highlight {
    pub fn of(is_forget: bool, correct: bool) -> Highlight {
        match (is_forget, correct) {
            (true, false) => Highlight::SuccessfullyForgotten,
            (true, true) => Highlight::NotForgotten,
            (false, false) => Highlight::OverlyForgotten,
            (false, true) => Highlight::None,
        }
    }
}

/// Per-sample category over the train split. Forget samples additionally
/// belong to "target to forget", which is implied by `is_forget`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleCategory {
    pub sample_id: usize,
    pub is_forget: bool,
    pub category: Highlight,
}

pub fn highlight_categories(model: &Mlp, p: &ForgetPartition) -> Result<Vec<SampleCategory>> {
    let predicted = model.predict(&p.train.features)?;
    Ok(predicted
        .iter()
        .zip(&p.train.labels)
        .enumerate()
        .map(|(i, (&pred, &label))| {
            let is_forget = label == p.forget_class;
            let category = Highlight::of(is_forget, pred == label);
            SampleCategory {
                sample_id: i,
                is_forget,
                category,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub sample_id: usize,
    pub x: f64,
    pub y: f64,
    pub label: usize,
    pub predicted: usize,
    pub predicted_probability: f64,
    pub probabilities: Vec<f64>,
    pub is_forget: bool,
    pub category: Highlight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingView {
    pub points: Vec<EmbeddingPoint>,
}

/// Projected penultimate embeddings of the whole train split.
pub fn embedding_view(model: &Mlp, p: &ForgetPartition, method: Projection) -> Result<EmbeddingView> {
    embedding_view_of(model, &p.train, p.forget_class, method)
}

fn embedding_view_of(model: &Mlp, data: &LabeledDataset, forget_class: usize, method: Projection) -> Result<EmbeddingView> {
    let coords = project_2d(&penultimate_embeddings(model, &data.features)?, method)?;
    let probs = softmax_rows(&model.logits(&data.features)?);
    let points = (0..data.len())
        .map(|i| {
            let row = probs.row(i);
            let predicted = argmax(row);
            let label = data.labels[i];
            let is_forget = label == forget_class;
            let category = Highlight::of(is_forget, predicted == label);
            EmbeddingPoint {
                sample_id: i,
                x: coords.get(i, 0),
                y: coords.get(i, 1),
                label,
                predicted,
                predicted_probability: row[predicted],
                probabilities: row.to_vec(),
                is_forget,
                category,
            }
        })
        .collect();
    Ok(EmbeddingView { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::rng(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(&mut r)).collect())
    }

    #[test]
    fn cka_self_and_scale() {
        let x = gaussian(50, 6, 1);
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-6);
        assert!((linear_cka(&x, &x.scale(-3.5)).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cka_rejects_degenerate_inputs() {
        let x = gaussian(10, 3, 1);
        let zero = Matrix::zeros(10, 3);
        assert!(matches!(linear_cka(&x, &zero), Err(Error::UndefinedSimilarity(_))));
        assert!(linear_cka(&x, &gaussian(9, 3, 2)).is_err());
    }

    #[test]
    fn cka_of_independent_noise_is_small() {
        let x = gaussian(1000, 8, 3);
        let y = gaussian(1000, 8, 4);
        assert!(linear_cka(&x, &y).unwrap() < 0.1);
    }

    #[test]
    fn elbow_fixture() {
        let f = [1.0, 0.95, 0.5, 0.2];
        let r = [0.9, 0.7, 0.8, 0.6];
        assert_eq!(elbow_from_curves(&f, &r, 0.8), 1);
        assert_eq!(elbow_from_curves(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], 0.8), 1);
        assert_eq!(elbow_from_curves(&[1.0, 0.1, 0.1], &[1.0, 1.0, 1.0], 0.8), 0);
    }

    #[test]
    fn pca_preserves_planar_distances() {
        let mut x = gaussian(20, 2, 5);
        x.center_columns();
        let y = project_2d(&x, Projection::Pca).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let d0 = ((x.get(i, 0) - x.get(j, 0)).powi(2) + (x.get(i, 1) - x.get(j, 1)).powi(2)).sqrt();
                let d1 = ((y.get(i, 0) - y.get(j, 0)).powi(2) + (y.get(i, 1) - y.get(j, 1)).powi(2)).sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_orders_variance_and_duplicates_rows() {
        let x = gaussian(30, 5, 6);
        let doubled = x.vstack(&x);
        let y = project_2d(&doubled, Projection::Pca).unwrap();
        for i in 0..30 {
            assert!((y.get(i, 0) - y.get(i + 30, 0)).abs() < 1e-12);
            assert!((y.get(i, 1) - y.get(i + 30, 1)).abs() < 1e-12);
        }
        let var = |c: usize| (0..60).map(|i| y.get(i, c).powi(2)).sum::<f64>();
        assert!(var(0) >= var(1));
    }

    #[test]
    fn pca_pads_rank_one_input() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let y = project_2d(&x, Projection::Pca).unwrap();
        assert!((0..3).all(|i| y.get(i, 1) == 0.0));
        assert!(project_2d(&Matrix::zeros(2, 2), Projection::Pca).is_err());
    }

    #[test]
    fn subsample_is_deterministic_and_capped() {
        let idx: Vec<usize> = (0..5000).map(|i| i * 2).collect();
        let a = subsample(&idx, 1000, 3);
        assert_eq!(a.len(), 1000);
        assert_eq!(a, subsample(&idx, 1000, 3));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample(&idx[..10], 1000, 3), idx[..10].to_vec());
    }
}
