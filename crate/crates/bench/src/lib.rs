//! Seeded inputs shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use unlearn_core::privacy::OutputStatistics;
use unlearn_core::{ArchitectureSpec, Matrix, Mlp};

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(&mut rng)).collect())
}

/// Statistics for `n` samples, shifted by `shift` so two calls can differ.
pub fn output_statistics(n: usize, shift: f64, seed: u64) -> OutputStatistics {
    let m = gaussian_matrix(n, 2, seed);
    let confidence = m.iter_rows().map(|r| r[0] + shift).collect();
    let entropy = m.iter_rows().map(|r| r[1].abs() + shift.abs()).collect();
    OutputStatistics::from_values((0..n).collect(), confidence, entropy).expect("finite values")
}

/// The default [input → 64 → 32 → classes] network.
pub fn default_mlp(input_dim: usize, n_classes: usize, seed: u64) -> Mlp {
    Mlp::init(&ArchitectureSpec::default_for(input_dim, n_classes), seed).expect("valid architecture")
}
