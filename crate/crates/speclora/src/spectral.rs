//! Spectrum comparison for a (pre-trained, fine-tuned) weight pair:
//! per-index singular-value ratios, per-index singular-vector alignment,
//! and scalar information metrics (spectral entropy, effective rank).
//!
//! All functions are pure; batch analyses over many matrices can run
//! them in parallel with no coordination.

use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{cosine, thin_svd, DenseMatrix, SvdFactors};

/// Ratios with `sigma_pre` below this threshold are reported as `inf`.
const RATIO_EPS: f64 = 1e-12;

/// Per-index gaps below `1e-8 * sigma_1` make the index-wise comparison
/// ill-posed; such indices are flagged so downstream plots can grey
/// them out.
const DEGENERACY_REL_GAP: f64 = 1e-8;

/// Per-index spectral statistics for one weight pair.
///
/// All vectors have length `min(n, m)`. Alignments are absolute cosines
/// in `[0, 1]`: singular-vector signs are arbitrary, so raw cosines
/// could be negative without carrying information.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub matrix_name: String,
    pub sigma_pre: Vec<f64>,
    pub sigma_ft: Vec<f64>,
    /// `sigma_ft[i] / sigma_pre[i]`; infinity (serialized as the string
    /// `"inf"`) where `sigma_pre[i] < 1e-12`.
    #[serde(serialize_with = "serialize_ratios")]
    pub sigma_ratio: Vec<f64>,
    pub left_alignment: Vec<f64>,
    pub right_alignment: Vec<f64>,
    /// True at indices where a neighbouring singular-value gap is below
    /// `1e-8 * sigma_1` in either spectrum.
    pub degenerate: Vec<bool>,
    pub effective_rank_pre: f64,
    pub effective_rank_ft: f64,
    pub spectral_entropy_pre: f64,
    pub spectral_entropy_ft: f64,
}

/// Keeps JSON parseable: `f64::INFINITY` has no JSON literal, so the
/// sentinel text "inf" is emitted instead of a huge float.
fn serialize_ratios<S: Serializer>(v: &[f64], ser: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = ser.serialize_seq(Some(v.len()))?;
    for x in v {
        if x.is_finite() {
            seq.serialize_element(x)?;
        } else {
            seq.serialize_element("inf")?;
        }
    }
    seq.end()
}

impl SpectralReport {
    /// CSV header for the per-index rows.
    pub const CSV_HEADER: [&'static str; 7] = [
        "matrix_name",
        "index",
        "sigma_pre",
        "sigma_ft",
        "ratio",
        "left_align",
        "right_align",
    ];

    /// One CSV record per singular index.
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        (0..self.sigma_pre.len())
            .map(|i| {
                vec![
                    self.matrix_name.clone(),
                    i.to_string(),
                    self.sigma_pre[i].to_string(),
                    self.sigma_ft[i].to_string(),
                    if self.sigma_ratio[i].is_finite() {
                        self.sigma_ratio[i].to_string()
                    } else {
                        "inf".to_string()
                    },
                    self.left_alignment[i].to_string(),
                    self.right_alignment[i].to_string(),
                ]
            })
            .collect()
    }
}

/// Full spectral comparison of two equally-shaped matrices.
pub fn compare_spectra(w_pre: &DenseMatrix, w_ft: &DenseMatrix) -> Result<SpectralReport> {
    compare_spectra_named("", w_pre, w_ft)
}

/// [`compare_spectra`] with a report name attached.
pub fn compare_spectra_named(
    name: &str,
    w_pre: &DenseMatrix,
    w_ft: &DenseMatrix,
) -> Result<SpectralReport> {
    if w_pre.rows() != w_ft.rows() || w_pre.cols() != w_ft.cols() {
        return Err(Error::dimension(format!(
            "pre is {}x{} but ft is {}x{}",
            w_pre.rows(),
            w_pre.cols(),
            w_ft.rows(),
            w_ft.cols()
        )));
    }
    let f_pre = thin_svd(w_pre)?;
    let f_ft = thin_svd(w_ft)?;
    let (left, right) = vector_alignment(&f_pre, &f_ft)?;

    let sigma_ratio = f_pre
        .sigma
        .iter()
        .zip(&f_ft.sigma)
        .map(|(&pre, &ft)| if pre < RATIO_EPS { f64::INFINITY } else { ft / pre })
        .collect();

    let degenerate = degenerate_flags(&f_pre.sigma, &f_ft.sigma);

    Ok(SpectralReport {
        matrix_name: name.to_string(),
        spectral_entropy_pre: spectral_entropy(&f_pre.sigma)?,
        spectral_entropy_ft: spectral_entropy(&f_ft.sigma)?,
        effective_rank_pre: effective_rank(&f_pre.sigma)?,
        effective_rank_ft: effective_rank(&f_ft.sigma)?,
        sigma_pre: f_pre.sigma,
        sigma_ft: f_ft.sigma,
        sigma_ratio,
        left_alignment: left,
        right_alignment: right,
        degenerate,
    })
}

fn degenerate_flags(sigma_pre: &[f64], sigma_ft: &[f64]) -> Vec<bool> {
    let p = sigma_pre.len();
    let mut flags = vec![false; p];
    for sigma in [sigma_pre, sigma_ft] {
        let top = sigma.first().copied().unwrap_or(0.0);
        let thresh = DEGENERACY_REL_GAP * top;
        for i in 0..p {
            let gap_above = if i > 0 { sigma[i - 1] - sigma[i] } else { f64::INFINITY };
            let gap_below = if i + 1 < p {
                sigma[i] - sigma[i + 1]
            } else {
                f64::INFINITY
            };
            if gap_above.min(gap_below) < thresh {
                flags[i] = true;
            }
        }
    }
    flags
}

/// Per-index absolute cosine similarity between corresponding singular
/// vectors of two factorizations: `left[i] = |cos(u_pre[:,i], u_ft[:,i])|`
/// and likewise for the right factors.
pub fn vector_alignment(f_pre: &SvdFactors, f_ft: &SvdFactors) -> Result<(Vec<f64>, Vec<f64>)> {
    if f_pre.u.rows() != f_ft.u.rows()
        || f_pre.v.rows() != f_ft.v.rows()
        || f_pre.sigma.len() != f_ft.sigma.len()
    {
        return Err(Error::dimension(
            "factor shapes differ between pre and ft".to_string(),
        ));
    }
    let p = f_pre.sigma.len();
    let mut left = Vec::with_capacity(p);
    let mut right = Vec::with_capacity(p);
    for i in 0..p {
        left.push(cosine(&f_pre.u.col(i), &f_ft.u.col(i))?.abs().min(1.0));
        right.push(cosine(&f_pre.v.col(i), &f_ft.v.col(i))?.abs().min(1.0));
    }
    Ok((left, right))
}

/// Entropy (nats) of the normalized singular-value distribution:
/// `H = -sum p_i ln p_i` with `p_i = sigma_i / sum(sigma)`. Zero terms
/// contribute zero.
pub fn spectral_entropy(sigma: &[f64]) -> Result<f64> {
    if sigma.iter().any(|&s| s < 0.0 || !s.is_finite()) {
        return Err(Error::domain("singular values must be finite and >= 0"));
    }
    let total: f64 = sigma.iter().sum();
    if total <= 0.0 {
        return Err(Error::domain("all-zero spectrum has no distribution"));
    }
    let mut h = 0.0;
    for &s in sigma {
        if s > 0.0 {
            let p = s / total;
            h -= p * p.ln();
        }
    }
    Ok(h)
}

/// `exp` of the spectral entropy: a smooth rank surrogate in
/// `[1, len(sigma)]`.
pub fn effective_rank(sigma: &[f64]) -> Result<f64> {
    Ok(spectral_entropy(sigma)?.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{exact_rescale, Direction};
    use crate::linalg::matmul;

    #[test]
    fn entropy_uniform() {
        let h = spectral_entropy(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((h - 4.0f64.ln()).abs() < 1e-12);
        assert!((h - 1.3862943611).abs() < 1e-9);
    }

    #[test]
    fn entropy_point_mass() {
        assert_eq!(spectral_entropy(&[5.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn entropy_two_to_one() {
        // p = (2/3, 1/3): H = ln 3 - (2/3) ln 2
        let h = spectral_entropy(&[2.0, 1.0]).unwrap();
        assert!((h - 0.6365141682948129).abs() < 1e-12);
    }

    #[test]
    fn entropy_all_zero_rejected() {
        assert!(matches!(
            spectral_entropy(&[0.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn effective_rank_values() {
        assert!((effective_rank(&[1.0, 1.0, 1.0, 1.0]).unwrap() - 4.0).abs() < 1e-12);
        assert!((effective_rank(&[5.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((effective_rank(&[2.0, 1.0]).unwrap() - 1.8898815748423097).abs() < 1e-10);
    }

    #[test]
    fn entropy_scale_invariance() {
        let sigma = [3.0, 1.5, 0.2, 0.01];
        let h = spectral_entropy(&sigma).unwrap();
        for c in [0.5, 7.0, 1e6] {
            let scaled: Vec<f64> = sigma.iter().map(|s| c * s).collect();
            assert!((spectral_entropy(&scaled).unwrap() - h).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_pair_reports_ones() {
        let mut rng = crate::testutil::test_rng(21);
        let w = crate::testutil::random_matrix(&mut rng, 6, 8);
        let rep = compare_spectra(&w, &w).unwrap();
        for i in 0..rep.sigma_pre.len() {
            assert!((rep.sigma_ratio[i] - 1.0).abs() < 1e-12);
            assert!(rep.left_alignment[i] > 1.0 - 1e-12);
            assert!(rep.right_alignment[i] > 1.0 - 1e-12);
        }
        assert_eq!(rep.effective_rank_pre, rep.effective_rank_ft);
    }

    #[test]
    fn scaled_pair_reports_ratio_two() {
        let mut rng = crate::testutil::test_rng(22);
        let w = crate::testutil::random_matrix(&mut rng, 5, 7);
        let rep = compare_spectra(&w, &w.scaled(2.0)).unwrap();
        for i in 0..rep.sigma_pre.len() {
            assert!((rep.sigma_ratio[i] - 2.0).abs() < 1e-9);
            assert!(rep.left_alignment[i] > 1.0 - 1e-9);
            assert!(rep.right_alignment[i] > 1.0 - 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = DenseMatrix::zeros(3, 4);
        let b = DenseMatrix::zeros(4, 3);
        assert!(matches!(compare_spectra(&a, &b), Err(Error::Dimension(_))));
    }

    /// A matrix whose top-k left singular directions live exactly in the
    /// first k coordinates, so an exact rescale moves singular values by
    /// exactly `d`. This is the planting used across the test suite.
    pub(crate) fn concentrated_matrix(
        seed: u64,
        n: usize,
        m: usize,
        k: usize,
        sigma: &[f64],
    ) -> DenseMatrix {
        crate::train::task::concentrated_base(seed, n, m, k, sigma).unwrap()
    }

    #[test]
    fn planted_rescale_recovered() {
        let n = 7;
        let m = 9;
        let k = 2;
        let sigma: Vec<f64> = (0..n).map(|i| 10.0 * (1.0 - 0.11 * i as f64)).collect();
        let w = concentrated_matrix(23, n, m, k, &sigma);
        let d = vec![2.0, 1.5];
        let w_ft = exact_rescale(&w, &d, Direction::Top).unwrap();
        let rep = compare_spectra(&w, &w_ft).unwrap();
        assert!((rep.sigma_ratio[0] - 2.0).abs() < 5e-2);
        assert!((rep.sigma_ratio[1] - 1.5).abs() < 5e-2);
        for i in k..n {
            assert!(
                (rep.sigma_ratio[i] - 1.0).abs() < 1e-6,
                "trailing ratio {} at {}",
                rep.sigma_ratio[i],
                i
            );
            assert!(rep.right_alignment[i] >= 0.999);
            assert!(rep.left_alignment[i] >= 0.999);
        }
    }

    #[test]
    fn alignment_detects_replaced_column() {
        let mut rng = crate::testutil::test_rng(24);
        let w = crate::testutil::random_matrix(&mut rng, 8, 4);
        let f_pre = thin_svd(&w).unwrap();
        let mut f_ft = thin_svd(&w).unwrap();
        // Gram-Schmidt a fresh direction against every u column, then
        // swap it in for column 0
        let raw: Vec<f64> = (0..8).map(|i| ((i * i + 3) % 7) as f64 - 3.0).collect();
        let mut cand = raw;
        for c in 0..4 {
            let col = f_pre.u.col(c);
            let proj: f64 = col.iter().zip(&cand).map(|(a, b)| a * b).sum();
            for (x, u) in cand.iter_mut().zip(&col) {
                *x -= proj * u;
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 1e-6);
        for (r, x) in cand.iter().enumerate() {
            f_ft.u[(r, 0)] = x / norm;
        }
        let (left, _) = vector_alignment(&f_pre, &f_ft).unwrap();
        assert!(left[0] < 1e-10);
        for v in &left[1..] {
            assert!(*v > 1.0 - 1e-12);
        }
    }

    #[test]
    fn alignment_detects_planted_rotation() {
        let mut rng = crate::testutil::test_rng(25);
        let w = crate::testutil::random_matrix(&mut rng, 8, 5);
        let f_pre = thin_svd(&w).unwrap();
        let mut f_ft = thin_svd(&w).unwrap();
        let theta: f64 = 0.7;
        let (c, s) = (theta.cos(), theta.sin());
        for r in 0..8 {
            let a = f_pre.u[(r, 0)];
            let b = f_pre.u[(r, 1)];
            f_ft.u[(r, 0)] = c * a - s * b;
            f_ft.u[(r, 1)] = s * a + c * b;
        }
        let (left, _) = vector_alignment(&f_pre, &f_ft).unwrap();
        assert!((left[0] - c.abs()).abs() < 1e-12);
        assert!((left[1] - c.abs()).abs() < 1e-12);
        for v in &left[2..] {
            assert!(*v > 1.0 - 1e-8);
        }
    }

    #[test]
    fn alignment_symmetric_and_sign_robust() {
        let mut rng = crate::testutil::test_rng(26);
        let w1 = crate::testutil::random_matrix(&mut rng, 6, 6);
        let w2 = crate::testutil::random_matrix(&mut rng, 6, 6);
        let f1 = thin_svd(&w1).unwrap();
        let f2 = thin_svd(&w2).unwrap();
        let (l_ab, r_ab) = vector_alignment(&f1, &f2).unwrap();
        let (l_ba, r_ba) = vector_alignment(&f2, &f1).unwrap();
        assert_eq!(l_ab, l_ba);
        assert_eq!(r_ab, r_ba);

        let mut flipped = thin_svd(&w2).unwrap();
        for r in 0..6 {
            flipped.u[(r, 2)] = -flipped.u[(r, 2)];
        }
        let (l_fl, r_fl) = vector_alignment(&f1, &flipped).unwrap();
        assert_eq!(l_ab, l_fl);
        assert_eq!(r_ab, r_fl);
    }

    #[test]
    fn ratio_sentinel_for_vanishing_sigma() {
        // rank-1 pre, full-rank ft: trailing pre sigmas are ~0
        let pre = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let ft = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let rep = compare_spectra(&pre, &ft).unwrap();
        assert!(rep.sigma_ratio[1].is_infinite());
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"inf\""));
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["sigma_ratio"][1], serde_json::json!("inf"));
    }

    #[test]
    fn degenerate_indices_flagged() {
        let u = DenseMatrix::identity(3);
        let sigma = DenseMatrix::from_rows(&[
            vec![5.0, 0.0, 0.0],
            vec![0.0, 5.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let w = matmul(&u, &sigma).unwrap();
        let rep = compare_spectra(&w, &w).unwrap();
        assert!(rep.degenerate[0]);
        assert!(rep.degenerate[1]);
        assert!(!rep.degenerate[2]);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn effective_rank_within_bounds(seed in 0u64..1000, len in 1usize..12) {
            use rand::Rng;
            let mut rng = crate::testutil::test_rng(seed);
            let sigma: Vec<f64> = (0..len).map(|_| rng.gen_range(0.01..10.0)).collect();
            let er = effective_rank(&sigma).unwrap();
            proptest::prop_assert!(er >= 1.0 - 1e-12);
            proptest::prop_assert!(er <= len as f64 + 1e-12);
        }
    }
}
