//! Posterior over codes, Monte-Carlo assignment draws and the averaged
//! embedding they produce.

use vq_em::soft_em;
use vq_em::{Codebook, DataMatrix};

fn main() -> vq_em::Result<()> {
    let cb = Codebook::from_parts(3, 1, vec![0.0, 1.0, 3.0], vec![1.0; 3])?;
    let x = DataMatrix::from_rows(&[[0.5], [2.0], [10.0]])?;

    let post = soft_em::posterior(&x, &cb)?;
    for (i, p) in post.probs().row_iter().enumerate() {
        println!("x = {:>4}: posterior {:.4?}", x.get(i, 0), p);
    }

    for m in [1, 10, 1000] {
        let sample = soft_em::mc_sample(&post, m, 42)?;
        let avg = soft_em::averaged_embedding(&sample, &cb)?;
        println!(
            "m = {m:>4}: empirical weights of row 0 {:.3?}, averaged embeddings {:.3?}",
            sample.soft_weights().row(0),
            avg.as_slice()
        );
    }

    // a point far from every code other than one always samples that code
    let far = soft_em::mc_sample(&post, 1000, 7)?;
    assert!(far.row_samples(2).iter().all(|&c| c == 2));
    Ok(())
}
