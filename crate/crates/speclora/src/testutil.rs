//! Shared helpers for unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::DenseMatrix;

pub(crate) fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

pub(crate) fn test_rng(seed: u64) -> ChaCha8Rng {
    crate::rng::stream(seed, 0xdead_beef)
}
