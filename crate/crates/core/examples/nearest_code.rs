//! Nearest-code lookup, usage statistics and codebook perplexity.

use vq_em::{usage_stats, Codebook, DataMatrix};

fn main() -> vq_em::Result<()> {
    let cb = Codebook::from_parts(3, 2, vec![0.0, 0.0, 4.0, 0.0, 0.0, 4.0], vec![1.0; 3])?;
    let batch =
        DataMatrix::from_rows(&[[0.1, -0.2], [3.9, 0.3], [3.5, 0.5], [2.0, 0.0], [-1.0, 5.0]])?;

    let codes = cb.nearest_code(&batch)?;
    for (row, code) in batch.row_iter().zip(&codes) {
        println!("{row:?} -> code {code}");
    }
    // [2, 0] is equidistant from codes 0 and 1; the lower index wins
    assert_eq!(codes[3], 0);

    let usage = usage_stats(&codes, cb.k())?;
    println!("hits {:?}", usage.hit_counts);
    println!(
        "usage perplexity {:.3} of {}, dead codes {}",
        usage.usage_perplexity,
        cb.k(),
        usage.dead_codes
    );
    Ok(())
}
