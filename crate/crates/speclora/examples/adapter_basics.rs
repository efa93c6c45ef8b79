//! Build an adapter on a frozen weight, poke its trainables, and fold
//! it back into a single dense matrix.
//!
//! ```bash
//! cargo run --example adapter_basics
//! ```

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;

use speclora::adapter::{build_mask, AdapterConfig, Direction, ForwardMode, SpecLoraAdapter, Variant};
use speclora::linalg::{frobenius_norm, matmul_transpose_b, DenseMatrix};

fn main() -> speclora::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let (n, m) = (6, 8);
    let data: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = DenseMatrix::from_vec(n, m, data)?;

    let config = AdapterConfig {
        rank: 2,
        alpha: 4.0,
        k: 2,
        dropout_p: 0.0,
        variant: Variant::Hadamard,
        direction: Direction::Top,
        seed: 1,
    };
    let mut adapter = SpecLoraAdapter::init(w.clone(), config.clone())?;
    println!(
        "adapter on a {n}x{m} weight: rank {}, k {}, {} trainable parameters",
        config.rank,
        config.k,
        adapter.trainable_params()
    );

    // identity at init: the adapter computes exactly the base function
    let drift = frobenius_norm(&adapter.effective_weight().sub(&w)?);
    println!("deviation from base at init: {drift:.1e}");

    // the mask view of the spectral part
    let mask = build_mask(n, m, 2, &[2.0, 0.5], Direction::Top)?;
    println!("\nmodulation mask for d = [2.0, 0.5] (row 0): {:?}", mask.row(0));

    // move the trainables and merge
    adapter.d_mut().copy_from_slice(&[2.0, 0.5]);
    for v in adapter.b_mut().data_mut() {
        *v = rng.gen_range(-0.2..0.2);
    }
    let merged = adapter.merge();
    let x = {
        let data: Vec<f64> = (0..3 * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(3, m, data)?
    };
    let via_adapter = adapter.forward(&x, ForwardMode::Eval)?;
    let via_merged = matmul_transpose_b(&x, &merged)?;
    let gap = frobenius_norm(&via_adapter.sub(&via_merged)?);
    println!("\nafter updates: |adapter(x) - x merged^T| = {gap:.1e}");
    println!("merged weight is a plain {n}x{m} dense matrix: zero inference overhead.");

    // the exact variant maintains the same contract
    let exact = SpecLoraAdapter::init(
        w.clone(),
        AdapterConfig {
            variant: Variant::SvdExact,
            ..config
        },
    )?;
    let drift = frobenius_norm(&exact.effective_weight().sub(&w)?);
    println!("\nexact variant deviation from base at init: {drift:.1e}");
    Ok(())
}
