//! With decay 0 the EMA codebook update reproduces one K-means M-step;
//! with decay close to 1 it moves slowly toward it.

use vq_em::codebook::one_hot;
use vq_em::hard_em;
use vq_em::harness::synthetic;
use vq_em::Codebook;

fn main() -> vq_em::Result<()> {
    let blobs = synthetic::blobs(3, 2, 100, 6.0, 1.0, 1)?;
    let x = &blobs.data;
    let start = hard_em::init_centers(x, 3, 0)?;
    let codes = hard_em::e_step(x, &start)?;
    let (m_step, _) = hard_em::m_step(x, &codes, &start)?;
    let w = one_hot(&codes, 3)?;

    for decay in [0.0, 0.5, 0.99] {
        let mut cb = Codebook::from_matrix(&start)?.with_decay(decay)?;
        cb.ema_update(x, &w)?;
        let gap = cb
            .embedding_matrix()
            .as_slice()
            .iter()
            .zip(m_step.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "decay {decay:<4}: max |EMA - M-step| = {gap:.2e}, counts {:?}",
            cb.ema_counts()
        );
    }
    Ok(())
}
