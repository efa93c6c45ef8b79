//! Finite-difference verification of the adapter's analytic gradients.
//!
//! Each case builds a small randomized adapter (cycling through both
//! variants and both directions), takes the scalar loss `0.5 * |y|^2`,
//! and compares every component of the analytic gradient against
//! central differences computed through the forward pass alone. The
//! checker never calls `backward` to produce its reference values, so
//! the two routes stay independent.

use rand::Rng;

use crate::adapter::{AdapterConfig, Direction, ForwardMode, SpecLoraAdapter, Variant};
use crate::error::Result;
use crate::linalg::DenseMatrix;
use crate::rng::stream;

/// Step size for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Maximum tolerated relative error between analytic and numeric
/// gradients.
pub const GRAD_TOL: f64 = 1e-5;

/// Outcome of a verification run.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub cases: usize,
    pub components_checked: usize,
    pub max_rel_err: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOL
    }
}

/// Run `cases` randomized gradient checks.
pub fn run(seed: u64, cases: usize) -> Result<GradcheckReport> {
    run_inner(seed, cases, false)
}

/// Negative control: deliberately corrupt one analytic gradient
/// component per case so the comparison must fail. Verifies that the
/// checker can actually catch a wrong gradient.
pub fn run_faulted(seed: u64, cases: usize) -> Result<GradcheckReport> {
    run_inner(seed, cases, true)
}

fn run_inner(seed: u64, cases: usize, inject_fault: bool) -> Result<GradcheckReport> {
    let mut rng = stream(seed, 0x6c0d_0001);
    let mut max_rel_err = 0.0f64;
    let mut components = 0usize;

    for case in 0..cases {
        let variant = if case % 2 == 0 {
            Variant::Hadamard
        } else {
            Variant::SvdExact
        };
        let direction = if (case / 2) % 2 == 0 {
            Direction::Top
        } else {
            Direction::Bottom
        };
        let n = rng.gen_range(2..=8usize);
        let m = rng.gen_range(2..=8usize);
        let p = n.min(m);
        let rank = rng.gen_range(1..=3.min(p));
        let k = rng.gen_range(0..=4.min(p));
        let batch = rng.gen_range(1..=4usize);

        let w = matrix(&mut rng, n, m);
        let config = AdapterConfig {
            rank,
            alpha: 2.0 * rank as f64,
            k,
            dropout_p: 0.0,
            variant,
            direction,
            seed: seed ^ case as u64,
        };
        let mut adapter = SpecLoraAdapter::init(w, config)?;
        for v in adapter.d_mut() {
            *v = rng.gen_range(0.5..1.5);
        }
        for v in adapter.b_mut().data_mut() {
            *v = rng.gen_range(-0.4..0.4);
        }
        let x = matrix(&mut rng, batch, m);

        // loss = 0.5 |y|^2, so the upstream gradient is y itself
        let y = adapter.forward(&x, ForwardMode::Eval)?;
        let mut grads = adapter.backward(&x, &y, ForwardMode::Eval)?;
        if inject_fault {
            let bump = 0.5 + rng.gen_range(0.0..0.5);
            if !grads.grad_d.is_empty() {
                grads.grad_d[0] += bump;
            } else {
                grads.grad_a.data_mut()[0] += bump;
            }
        }

        let loss = |ad: &SpecLoraAdapter| -> Result<f64> {
            let y = ad.forward(&x, ForwardMode::Eval)?;
            Ok(0.5 * y.data().iter().map(|v| v * v).sum::<f64>())
        };

        for i in 0..adapter.d().len() {
            let numeric = {
                let orig = adapter.d()[i];
                adapter.d_mut()[i] = orig + FD_STEP;
                let up = loss(&adapter)?;
                adapter.d_mut()[i] = orig - FD_STEP;
                let down = loss(&adapter)?;
                adapter.d_mut()[i] = orig;
                (up - down) / (2.0 * FD_STEP)
            };
            max_rel_err = max_rel_err.max(rel_err(grads.grad_d[i], numeric));
            components += 1;
        }
        for i in 0..adapter.a().data().len() {
            let numeric = {
                let orig = adapter.a().data()[i];
                adapter.a_mut().data_mut()[i] = orig + FD_STEP;
                let up = loss(&adapter)?;
                adapter.a_mut().data_mut()[i] = orig - FD_STEP;
                let down = loss(&adapter)?;
                adapter.a_mut().data_mut()[i] = orig;
                (up - down) / (2.0 * FD_STEP)
            };
            max_rel_err = max_rel_err.max(rel_err(grads.grad_a.data()[i], numeric));
            components += 1;
        }
        for i in 0..adapter.b().data().len() {
            let numeric = {
                let orig = adapter.b().data()[i];
                adapter.b_mut().data_mut()[i] = orig + FD_STEP;
                let up = loss(&adapter)?;
                adapter.b_mut().data_mut()[i] = orig - FD_STEP;
                let down = loss(&adapter)?;
                adapter.b_mut().data_mut()[i] = orig;
                (up - down) / (2.0 * FD_STEP)
            };
            max_rel_err = max_rel_err.max(rel_err(grads.grad_b.data()[i], numeric));
            components += 1;
        }
    }

    Ok(GradcheckReport {
        cases,
        components_checked: components,
        max_rel_err,
    })
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn matrix(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("length matches by construction")
}
