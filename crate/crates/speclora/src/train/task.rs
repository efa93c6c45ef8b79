//! Planted regression tasks.
//!
//! The teacher weight is the base weight with a known rescale of its top
//! singular directions plus a small low-rank perturbation, so recovery
//! can be checked exactly. The base weight is assembled from Gaussian
//! draws with its top-k left singular frame concentrated on the leading
//! coordinates; that concentration is what makes the planted rescale
//! land exactly on the singular values (an unstructured Gaussian would
//! smear it across the spectrum and leave nothing to recover).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adapter::{exact_rescale, Direction};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, matmul, matmul_transpose_b, DenseMatrix};
use crate::rng::stream;

const BASE_STREAM_TAG: u64 = 0x7a5c_0001;
const DATA_STREAM_TAG: u64 = 0x7a5c_0002;
const PERTURB_STREAM_TAG: u64 = 0x7a5c_0003;

/// Relative Frobenius size of the planted low-rank perturbation.
const PERTURBATION_SCALE: f64 = 0.05;

/// Parameters of a planted task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Teacher output dimension.
    pub n: usize,
    /// Teacher input dimension.
    pub m: usize,
    /// Width of the planted rescale.
    pub k_true: usize,
    /// Planted per-direction scales, length `k_true`, entries in `[0.25, 4]`.
    pub d_true: Vec<f64>,
    /// Rank of the planted low-rank perturbation.
    pub rank_true: usize,
    /// Standard deviation of the observation noise.
    pub noise_sigma: f64,
    pub num_samples: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let p = self.n.min(self.m);
        if self.n == 0 || self.m == 0 {
            return Err(Error::config("teacher shape must be non-empty"));
        }
        if self.k_true > p {
            return Err(Error::config(format!(
                "k_true = {} exceeds min(n, m) = {}",
                self.k_true, p
            )));
        }
        if self.d_true.len() != self.k_true {
            return Err(Error::config(format!(
                "d_true has length {} but k_true = {}",
                self.d_true.len(),
                self.k_true
            )));
        }
        if self.d_true.iter().any(|&v| !(0.25..=4.0).contains(&v)) {
            return Err(Error::config("d_true entries must lie in [0.25, 4]"));
        }
        if self.rank_true > p {
            return Err(Error::config(format!(
                "rank_true = {} exceeds min(n, m) = {}",
                self.rank_true, p
            )));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::config("noise_sigma must be finite and >= 0"));
        }
        if self.num_samples == 0 {
            return Err(Error::config("num_samples must be >= 1"));
        }
        Ok(())
    }
}

/// A generated task: base weight, teacher weight, and the regression
/// dataset `y = x * teacher^T + noise`.
#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub w_base: DenseMatrix,
    pub w_teacher: DenseMatrix,
    pub x: DenseMatrix,
    pub y: DenseMatrix,
}

/// Generate a planted task, deterministically per seed.
pub fn gen_planted_task(spec: &TaskSpec) -> Result<PlantedTask> {
    spec.validate()?;
    let p = spec.n.min(spec.m);

    // spread singular values with distinct gaps; only the overall scale
    // is randomized
    let mut base_rng = stream(spec.seed, BASE_STREAM_TAG);
    let top: f64 = 3.0 + base_rng.gen_range(0.0..2.0);
    let gamma = 0.85 / (p.max(2) - 1) as f64;
    let sigma: Vec<f64> = (0..p).map(|i| top * (1.0 - gamma * i as f64)).collect();

    let w_base = concentrated_base_from_rng(&mut base_rng, spec.n, spec.m, spec.k_true, &sigma)?;

    let mut w_teacher = exact_rescale(&w_base, &spec.d_true, Direction::Top)?;
    if spec.rank_true > 0 {
        let mut prng = stream(spec.seed, PERTURB_STREAM_TAG);
        let g1 = gaussian_matrix(&mut prng, spec.n, spec.rank_true);
        let g2 = gaussian_matrix(&mut prng, spec.rank_true, spec.m);
        let mut perturb = matmul(&g1, &g2)?;
        let norm = frobenius_norm(&perturb);
        if norm > 0.0 {
            let target = PERTURBATION_SCALE * frobenius_norm(&w_base);
            perturb = perturb.scaled(target / norm);
        }
        w_teacher = w_teacher.add(&perturb)?;
    }

    let mut data_rng = stream(spec.seed, DATA_STREAM_TAG);
    let x = gaussian_matrix(&mut data_rng, spec.num_samples, spec.m);
    let mut y = matmul_transpose_b(&x, &w_teacher)?;
    if spec.noise_sigma > 0.0 {
        for v in y.data_mut() {
            let z: f64 = data_rng.sample(StandardNormal);
            *v += spec.noise_sigma * z;
        }
    }

    Ok(PlantedTask {
        w_base,
        w_teacher,
        x,
        y,
    })
}

/// Build an `n x m` matrix with the given singular values whose top-k
/// left singular vectors are the first k coordinate axes. Rescaling
/// those directions then moves the top singular values exactly.
pub fn concentrated_base(
    seed: u64,
    n: usize,
    m: usize,
    k: usize,
    sigma: &[f64],
) -> Result<DenseMatrix> {
    let mut rng = stream(seed, BASE_STREAM_TAG);
    concentrated_base_from_rng(&mut rng, n, m, k, sigma)
}

fn concentrated_base_from_rng(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    k: usize,
    sigma: &[f64],
) -> Result<DenseMatrix> {
    let p = n.min(m);
    if sigma.len() != p {
        return Err(Error::dimension(format!(
            "need {} singular values for a {}x{} matrix, got {}",
            p,
            n,
            m,
            sigma.len()
        )));
    }
    if k > p {
        return Err(Error::config(format!("k = {k} exceeds min(n, m) = {p}")));
    }
    if sigma.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::domain("singular values must be positive and finite"));
    }

    // left frame: identity on the first k coordinates, a random
    // orthonormal frame on the complement
    let mut u = DenseMatrix::zeros(n, p);
    for i in 0..k {
        u[(i, i)] = 1.0;
    }
    let q = orthonormal_columns(rng, n - k, p - k)?;
    for i in 0..n - k {
        for j in 0..p - k {
            u[(k + i, k + j)] = q[(i, j)];
        }
    }
    let v = orthonormal_columns(rng, m, p)?;

    // w = u * diag(sigma) * v^T
    let mut scaled_u = u;
    for j in 0..p {
        for i in 0..n {
            scaled_u[(i, j)] *= sigma[j];
        }
    }
    matmul_transpose_b(&scaled_u, &v)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("length matches by construction")
}

/// Orthonormalize Gaussian columns by modified Gram-Schmidt, run twice
/// for numerical insurance. Gaussian frames are well conditioned, so a
/// deficient draw is practically impossible, but it is still an error.
fn orthonormal_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<DenseMatrix> {
    let mut q = gaussian_matrix(rng, rows, cols);
    for _pass in 0..2 {
        for j in 0..cols {
            for prev in 0..j {
                let mut proj = 0.0;
                for r in 0..rows {
                    proj += q[(r, prev)] * q[(r, j)];
                }
                for r in 0..rows {
                    let sub = proj * q[(r, prev)];
                    q[(r, j)] -= sub;
                }
            }
            let norm = (0..rows).map(|r| q[(r, j)] * q[(r, j)]).sum::<f64>().sqrt();
            if norm < 1e-10 {
                return Err(Error::numeric(
                    "degenerate Gaussian draw during orthonormalization",
                ));
            }
            for r in 0..rows {
                q[(r, j)] /= norm;
            }
        }
    }
    Ok(q)
}
