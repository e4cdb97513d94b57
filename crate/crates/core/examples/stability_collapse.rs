//! Starts every code in a tight cluster far from the encoder outputs and
//! compares how hard-EMA and soft-EM training recover codebook usage.

use vq_em::harness::{cmd_stability, RunConfig};

const CONFIG: &str = "
data = synthetic:manifold
synthetic_rows = 2048
codebook_size = 128
max_steps = 600
log_interval = 100
codebook_init = clustered
init_scale = 0.01
init_offset = 30
modes = hard_ema, soft_em:m=5, soft_em:m=10
";

fn main() -> vq_em::Result<()> {
    let cfg = RunConfig::parse(CONFIG, None)?;
    let out = std::env::temp_dir().join(format!("vq-em-stability-{}", std::process::id()));
    let (report, _) = cmd_stability(&cfg, &out)?;
    std::fs::remove_dir_all(&out)?;

    println!(
        "collapse threshold: usage perplexity < {}",
        report.collapse_threshold
    );
    for m in &report.modes {
        let trajectory: Vec<String> = m
            .trajectory
            .iter()
            .map(|p| format!("{:.1}", p.usage_perplexity))
            .collect();
        println!("{:<14} usage by step: {}", m.mode, trajectory.join(" "));
        println!("{:<14} collapsed at: {:?}", "", m.steps_to_collapse);
    }
    Ok(())
}
