//! Saves a codebook in the binary format, reloads it and checks that the
//! bytes and nearest-code answers are unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vq_em::harness::synthetic;
use vq_em::Codebook;

fn main() -> vq_em::Result<()> {
    let data = synthetic::manifold(512, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cb = Codebook::init_from_batch(&data, 16, &mut rng)?;

    let path = std::env::temp_dir().join(format!("vq-em-example-{}.vqcb", std::process::id()));
    cb.save(&path)?;
    let back = Codebook::load(&path)?;
    let size = std::fs::metadata(&path)?.len();
    std::fs::remove_file(&path)?;

    println!("K = {}, D = {}, {} bytes on disk", back.k(), back.d(), size);
    println!("byte-identical: {}", back.to_bytes() == cb.to_bytes());
    println!(
        "same assignments: {}",
        back.nearest_code(&data)? == cb.nearest_code(&data)?
    );
    Ok(())
}
