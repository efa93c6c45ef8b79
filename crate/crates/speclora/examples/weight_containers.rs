//! The on-disk story: byte-exact tensor files, weight containers, and
//! adapter checkpoints, including what happens to corrupted files.
//!
//! ```bash
//! cargo run --example weight_containers
//! ```

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;

use speclora::adapter::{AdapterConfig, Direction, SpecLoraAdapter, Variant};
use speclora::io::{
    load_adapter, load_container, read_tensor, save_adapter, save_container, write_tensor, Dtype,
    WeightContainer,
};
use speclora::linalg::DenseMatrix;

fn main() -> speclora::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let matrix = |rng: &mut rand_chacha::ChaCha8Rng, r: usize, c: usize| {
        let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(r, c, data).unwrap()
    };

    // single tensors: 24-byte header + row-major little-endian payload
    let path = dir.path().join("w.bin");
    let w = matrix(&mut rng, 5, 4);
    write_tensor(&path, &w, Dtype::F64)?;
    let size = std::fs::metadata(&path)?.len();
    println!("5x4 f64 tensor file: {size} bytes (24 header + 160 data)");
    let back = read_tensor(&path)?;
    let bit_identical = w
        .data()
        .iter()
        .zip(back.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!("round trip bitwise identical: {bit_identical}");

    // corrupt one header byte: the reader refuses the file
    let mut bytes = std::fs::read(&path)?;
    bytes[4] ^= 0xff; // version field
    std::fs::write(&path, &bytes)?;
    match read_tensor(&path) {
        Err(e) => println!("corrupted version byte rejected: {e}"),
        Ok(_) => println!("BUG: corruption accepted"),
    }

    // containers: manifest + one file per named tensor
    let mut container = WeightContainer::new();
    for role in ["q", "k", "v", "up", "down"] {
        container.insert(&format!("layer.0.{role}"), matrix(&mut rng, 6, 6))?;
    }
    let cdir = dir.path().join("weights");
    save_container(&cdir, &container)?;
    let loaded = load_container(&cdir)?;
    println!("\ncontainer round trip: {} tensors", loaded.len());
    for name in loaded.names() {
        println!("  {name}");
    }

    // adapter checkpoints: trainable state only, base weight supplied at load
    let base = matrix(&mut rng, 6, 6);
    let config = AdapterConfig {
        rank: 2,
        alpha: 4.0,
        k: 2,
        dropout_p: 0.0,
        variant: Variant::SvdExact,
        direction: Direction::Top,
        seed: 8,
    };
    let mut adapter = SpecLoraAdapter::init(base.clone(), config)?;
    adapter.d_mut().copy_from_slice(&[1.8, 1.2]);
    let ckpt = dir.path().join("adapter");
    save_adapter(&ckpt, &adapter, "layer.0.q")?;
    let (restored, name) = load_adapter(&ckpt, base)?;
    println!(
        "\ncheckpoint round trip for {name}: d = {:?}, {} trainable parameters",
        restored.d(),
        restored.trainable_params()
    );
    Ok(())
}
