//! Trains the dense autoencoder on the synthetic manifold in hard-EMA and
//! soft-EM mode and prints the loss and codebook usage as it goes.

use vq_em::harness::commands::Batcher;
use vq_em::harness::synthetic;
use vq_em::nn::{AutoencoderState, Mode, TrainConfig};

fn main() -> vq_em::Result<()> {
    let data = synthetic::manifold(4096, 0)?;
    for mode in [Mode::HardEma, Mode::SoftEm] {
        let config = TrainConfig {
            codebook_size: 64,
            max_steps: 1000,
            mode,
            ..TrainConfig::default()
        };
        let mut batches = Batcher::new(&data, config.batch_size, 1);
        let mut state = AutoencoderState::new(data.cols(), config)?;
        let mut cb = state.init_codebook(&batches.next_batch(), 2)?;
        println!("{mode:?}");
        for step in 0..1000u64 {
            let m = state.train_step(&mut cb, &batches.next_batch(), step)?;
            if step % 200 == 0 || step == 999 {
                println!(
                    "  step {:>4}  l_r {:.4}  commitment {:.4}  usage {:>5.1}  dead {}",
                    m.step, m.l_r, m.commitment, m.usage_perplexity, m.dead_codes
                );
            }
        }
    }
    Ok(())
}
