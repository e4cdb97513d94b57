//! K-means (hard EM) on Gaussian blobs, comparing the recovered centers
//! with the true means.

use vq_em::hard_em;
use vq_em::harness::synthetic;

fn main() -> vq_em::Result<()> {
    let blobs = synthetic::blobs(4, 2, 250, 10.0, 1.0, 7)?;
    let fit = hard_em::kmeans_fit(&blobs.data, 4, 100, 0)?;
    println!(
        "objective {:.2} after {} iterations",
        fit.objective, fit.iterations
    );

    for mean in blobs.means.row_iter() {
        let (best, dist) = fit
            .centers
            .row_iter()
            .map(|c| {
                c.iter()
                    .zip(mean)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (j, d)| if d < acc.1 { (j, d) } else { acc },
            );
        println!("true mean {mean:?} -> center {best} at distance {dist:.3}");
    }

    let history: Vec<String> = fit
        .objective_history
        .iter()
        .map(|o| format!("{o:.1}"))
        .collect();
    println!("objective by iteration: {}", history.join(" "));
    Ok(())
}
