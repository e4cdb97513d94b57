//! Fits n-gram priors over latent code sequences and turns reconstruction
//! and prior losses into bits per dimension.

use vq_em::latent_prior::{bits_per_dim, NgramPrior};

fn main() -> vq_em::Result<()> {
    // a four-position latent sequence per example that mostly counts upward
    let k = 8;
    let sequences: Vec<Vec<usize>> = (0..300)
        .map(|i| {
            (0..4)
                .map(|t| (i + t + usize::from(i % 7 == 0 && t == 3)) % k)
                .collect()
        })
        .collect();
    let (train, heldout) = sequences.split_at(240);

    for order in 1..=3 {
        let prior = NgramPrior::fit(train, order, k, 0.1)?;
        let eval = prior.evaluate(heldout)?;
        println!(
            "order {order}: {:.3} nats per latent (uniform would be {:.3})",
            eval.nats_per_latent,
            (k as f64).ln()
        );
    }

    let prior = NgramPrior::fit(train, 2, k, 0.1)?;
    let l_lp = prior.evaluate(heldout)?.nats_per_latent;
    // 32 data dimensions, 4 latents, reconstruction cost 0.9 nats per dimension
    let b = bits_per_dim(0.9, l_lp, 32, 4)?;
    println!(
        "bits/dim {:.4} from l_p {:.3} and l_lp {:.3}",
        b.value, b.l_p, b.l_lp
    );
    Ok(())
}
