//! The four CLI commands as library functions.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codebook::{self, Codebook};
use crate::error::{Error, Result};
use crate::hard_em::{self, KMeansResult};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{CodebookInit, DataSource, ModeSpec, RunConfig};
use crate::harness::dataset::{Dataset, Standardization};
use crate::harness::metrics::{MetricsRecord, MetricsWriter};
use crate::harness::stability::StabilityReport;
use crate::harness::synthetic;
use crate::latent_prior::{self, BitsPerDim, NgramPrior};
use crate::matrix::{DataMatrix, Matrix};
use crate::nn::{derive_seed, loss, AutoencoderState, Mode};
use crate::soft_em;

/// Seed of the built-in synthetic dataset; the run seed does not change the data.
pub const SYNTHETIC_DATA_SEED: u64 = 0;

const STREAM_BATCHES: u64 = 1;
const STREAM_CODEBOOK: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_PRIOR: u64 = 4;
const STREAM_STEPS: u64 = 1 << 32;

/// Loads the configured data and applies standardization if requested.
pub fn load_data(cfg: &RunConfig) -> Result<(DataMatrix, Option<Standardization>)> {
    let mut ds = match &cfg.data {
        None => return Err(Error::Config(vec!["missing required key `data`".into()])),
        Some(DataSource::SyntheticManifold) => {
            return Ok((
                synthetic::manifold(cfg.synthetic_rows, SYNTHETIC_DATA_SEED)?,
                None,
            ));
        }
        Some(DataSource::File(path)) => Dataset::load(path, cfg.data_layout)?,
    };
    if cfg.standardize {
        ds.standardize()?;
    }
    Ok((ds.data, ds.normalization))
}

/// Endless stream of mini-batches, reshuffled every epoch.
pub struct Batcher<'a> {
    data: &'a DataMatrix,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> Batcher<'a> {
    pub fn new(data: &'a DataMatrix, batch_size: usize, seed: u64) -> Self {
        let mut b = Self {
            data,
            batch_size: batch_size.min(data.rows()).max(1),
            seed,
            epoch: 0,
            order: (0..data.rows()).collect(),
            pos: 0,
        };
        b.shuffle();
        b
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, self.epoch));
        self.order.sort_unstable();
        self.order.shuffle(&mut rng);
    }

    pub fn next_batch(&mut self) -> DataMatrix {
        if self.pos + self.batch_size > self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        let idx = &self.order[self.pos..self.pos + self.batch_size];
        self.pos += self.batch_size;
        let cols = self.data.cols();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(self.data.row(i));
        }
        DataMatrix::new(idx.len(), cols, out).expect("rows of a valid matrix")
    }
}

/// Codebook for the start of training, following `codebook_init`.
pub fn initial_codebook(
    cfg: &RunConfig,
    state: &AutoencoderState,
    first_batch: &DataMatrix,
) -> Result<Codebook> {
    let seed = derive_seed(cfg.train.seed, STREAM_CODEBOOK);
    match cfg.codebook_init {
        CodebookInit::Data => state.init_codebook(first_batch, seed),
        CodebookInit::Clustered => {
            let z_e = state.encode(first_batch)?;
            let mut center = vec![0.0; z_e.cols()];
            for row in z_e.row_iter() {
                center.iter_mut().zip(row).for_each(|(c, v)| *c += v);
            }
            center.iter_mut().for_each(|c| *c /= z_e.rows() as f64);
            center[0] += cfg.init_offset;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cb = Codebook::init_gaussian(
                cfg.train.codebook_size,
                &center,
                cfg.init_scale,
                &mut rng,
            )?;
            state.configure_codebook(cb)
        }
    }
}

/// Sampling seed for a given training step.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    derive_seed(seed, STREAM_STEPS.wrapping_add(step))
}

/// Label written to the `mode` field of metrics records.
pub fn mode_label(cfg: &RunConfig) -> String {
    let samples = (cfg.train.mode == Mode::SoftEm).then_some(cfg.train.samples);
    ModeSpec {
        mode: cfg.train.mode,
        samples,
    }
    .label()
}

/// Result of a training loop.
#[derive(Debug)]
pub struct TrainOutcome {
    pub state: AutoencoderState,
    pub codebook: Codebook,
    pub records: Vec<MetricsRecord>,
    /// Set when training stopped on a non-finite value.
    pub diverged: Option<Error>,
}

/// Runs `max_steps` training steps on `data`.
///
/// A record is emitted at every multiple of `log_interval` and once more
/// after the last step, evaluated on a fresh batch. With `checkpoint_dir`
/// set, checkpoints are written before the first step, every
/// `checkpoint_interval` steps and at the end; a divergence leaves the last
/// one in place.
pub fn train_loop<W: Write>(
    cfg: &RunConfig,
    data: &DataMatrix,
    norm: Option<&Standardization>,
    metrics: &mut MetricsWriter<W>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let t = &cfg.train;
    let started = Instant::now();
    let wall = || {
        cfg.log_wall_time
            .then(|| started.elapsed().as_millis() as u64)
    };
    let label = mode_label(cfg);

    let mut state = AutoencoderState::new(data.cols(), t.clone())?;
    let mut batcher = Batcher::new(data, t.batch_size, derive_seed(t.seed, STREAM_BATCHES));
    let mut batch = batcher.next_batch();
    let mut cb = initial_codebook(cfg, &state, &batch)?;
    if let Some(dir) = checkpoint_dir {
        Checkpoint::save(dir, &state, &cb, norm)?;
    }

    let mut records = Vec::new();
    let mut emit = |rec: MetricsRecord, records: &mut Vec<MetricsRecord>| -> Result<()> {
        metrics.write(&rec)?;
        records.push(rec);
        Ok(())
    };

    for step in 0..t.max_steps {
        if step > 0 {
            batch = batcher.next_batch();
        }
        match state.train_step(&mut cb, &batch, step_seed(t.seed, step)) {
            Ok(m) => {
                if step % cfg.log_interval == 0 {
                    emit(
                        MetricsRecord::from_step(&m, &label, t.seed, wall()),
                        &mut records,
                    )?;
                }
            }
            Err(e @ Error::Diverged { .. }) => {
                emit(
                    MetricsRecord::diverged(step, &label, t.seed, wall()),
                    &mut records,
                )?;
                return Ok(TrainOutcome {
                    state,
                    codebook: cb,
                    records,
                    diverged: Some(e),
                });
            }
            Err(e) => return Err(e),
        }
        if let Some(dir) = checkpoint_dir {
            let done = step + 1;
            if cfg.checkpoint_interval > 0
                && done % cfg.checkpoint_interval == 0
                && done < t.max_steps
            {
                Checkpoint::save(dir, &state, &cb, norm)?;
            }
        }
    }

    let final_batch = if t.max_steps == 0 {
        batch
    } else {
        batcher.next_batch()
    };
    let (rec, diverged) = match state.evaluate(&cb, &final_batch, step_seed(t.seed, t.max_steps)) {
        Ok(m) if m.l_r.is_finite() && m.commitment.is_finite() => {
            (MetricsRecord::from_step(&m, &label, t.seed, wall()), None)
        }
        Ok(_) => (
            MetricsRecord::diverged(t.max_steps, &label, t.seed, wall()),
            Some(Error::Diverged {
                step: t.max_steps,
                reason: "non-finite loss on final evaluation".into(),
            }),
        ),
        Err(e @ Error::Diverged { .. }) => (
            MetricsRecord::diverged(t.max_steps, &label, t.seed, wall()),
            Some(e),
        ),
        Err(e) => return Err(e),
    };
    emit(rec, &mut records)?;
    if diverged.is_none() && t.max_steps > 0 {
        if let Some(dir) = checkpoint_dir {
            Checkpoint::save(dir, &state, &cb, norm)?;
        }
    }
    Ok(TrainOutcome {
        state,
        codebook: cb,
        records,
        diverged,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub rows: usize,
    pub dim: usize,
    pub seed: u64,
    pub objective: f64,
    pub iterations: usize,
    pub objective_history: Vec<f64>,
    pub usage_histogram: Vec<u64>,
    pub usage_perplexity: f64,
    pub dead_codes: usize,
}

/// K-means on the configured data. Writes `codebook.vqcb` (counts are the
/// cluster sizes) and `cluster_summary.json` into `out`.
pub fn cmd_cluster(cfg: &RunConfig, out: &Path) -> Result<(KMeansResult, ClusterSummary)> {
    let (data, _) = load_data(cfg)?;
    let k = cfg.train.codebook_size;
    if data.rows() < k {
        return Err(Error::Data(format!(
            "{} rows cannot fill {k} clusters",
            data.rows()
        )));
    }
    let result = hard_em::kmeans_fit(&data, k, cfg.max_iters, cfg.train.seed)?;
    let usage = codebook::usage_stats(&result.assignments, k)?;
    let embeddings = result
        .centers
        .as_slice()
        .iter()
        .map(|&v| v as f32)
        .collect();
    let counts = usage.hit_counts.iter().map(|&c| c as f32).collect();
    let cb = Codebook::from_parts(k, data.cols(), embeddings, counts)?;

    let summary = ClusterSummary {
        k,
        rows: data.rows(),
        dim: data.cols(),
        seed: cfg.train.seed,
        objective: result.objective,
        iterations: result.iterations,
        objective_history: result.objective_history.clone(),
        usage_histogram: usage.hit_counts,
        usage_perplexity: usage.usage_perplexity,
        dead_codes: usage.dead_codes,
    };
    ensure_dir(out)?;
    cb.save(out.join("codebook.vqcb"))?;
    write_json(&out.join("cluster_summary.json"), &summary)?;
    Ok((result, summary))
}

/// Trains with metrics written to `metrics`, checkpoints under
/// `out/checkpoint` and the final codebook at `out/codebook.vqcb`.
pub fn cmd_train<W: Write>(cfg: &RunConfig, out: &Path, metrics: W) -> Result<TrainOutcome> {
    let (data, norm) = load_data(cfg)?;
    ensure_dir(out)?;
    let mut writer = MetricsWriter::new(metrics);
    let outcome = train_loop(
        cfg,
        &data,
        norm.as_ref(),
        &mut writer,
        Some(&out.join("checkpoint")),
    )?;
    if outcome.diverged.is_none() {
        outcome.codebook.save(out.join("codebook.vqcb"))?;
    }
    Ok(outcome)
}

/// Opens `out/metrics.jsonl` for writing.
pub fn metrics_file(out: &Path) -> Result<BufWriter<File>> {
    ensure_dir(out)?;
    Ok(BufWriter::new(File::create(out.join("metrics.jsonl"))?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub bits_per_dim: f64,
    /// Reconstruction loss per data dimension on the held-out split.
    pub l_p: f64,
    /// Prior cross-entropy per latent position, nats.
    pub l_lp: f64,
    pub n_x: usize,
    pub n_z: usize,
    pub k: usize,
    pub train_rows: usize,
    pub heldout_rows: usize,
    pub prior_order: usize,
    pub prior_alpha: f64,
    pub zero_probability_events: usize,
    pub heldout_usage_perplexity: f64,
}

impl EvalReport {
    pub fn recompute(&self) -> Result<BitsPerDim> {
        latent_prior::bits_per_dim(self.l_p, self.l_lp, self.n_x, self.n_z)
    }
}

fn select_rows(data: &DataMatrix, idx: &[usize]) -> Result<DataMatrix> {
    let cols = data.cols();
    let mut out = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        out.extend_from_slice(data.row(i));
    }
    DataMatrix::new(idx.len(), cols, out)
}

fn code_sequences(codes: &[usize], positions: usize) -> Vec<Vec<usize>> {
    codes.chunks(positions).map(<[usize]>::to_vec).collect()
}

/// Evaluates the checkpoint named by `checkpoint` on the configured data.
///
/// Rows are split by `train_fraction` after a seeded shuffle. The prior is
/// fitted on the train split: on nearest codes for hard checkpoints, on
/// averaged Monte-Carlo labels for soft ones. Held-out latents use nearest
/// codes. Writes `eval.json` and `prior.txt` into `out`.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    let dir = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["missing required key `checkpoint`".into()]))?;
    let ckpt = Checkpoint::load(dir)?;
    let (mut data, _) = load_data(&RunConfig {
        standardize: false,
        ..cfg.clone()
    })?;
    if data.cols() != ckpt.state.input_dim() {
        return Err(Error::Data(format!(
            "data has {} columns but the checkpoint expects {}",
            data.cols(),
            ckpt.state.input_dim()
        )));
    }
    if let Some(norm) = &ckpt.normalization {
        data = norm.apply(&data)?;
    }
    let n = data.rows();
    let n_train = ((n as f64) * cfg.train_fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Data(format!(
            "{n} rows leave an empty train or held-out split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.train.seed,
        STREAM_SPLIT,
    )));
    let train = select_rows(&data, &order[..n_train])?;
    let heldout = select_rows(&data, &order[n_train..])?;

    let mut state = ckpt.state;
    let cb = ckpt.codebook;
    let trained_mode = state.config.mode;
    state.config.mode = Mode::HardEma;
    let positions = state.latent_positions();
    let k = cb.k();

    let z_train = state.encode(&train)?;
    let prior = match trained_mode {
        Mode::HardEma => NgramPrior::fit(
            &code_sequences(&cb.nearest_code(&z_train)?, positions),
            cfg.prior_order,
            k,
            cfg.prior_alpha,
        )?,
        Mode::SoftEm => {
            let post = soft_em::posterior(&z_train, &cb)?;
            let sample = soft_em::mc_sample(
                &post,
                state.config.samples,
                derive_seed(cfg.train.seed, STREAM_PRIOR),
            )?;
            let labels = soft_em::smoothed_labels(&sample);
            let targets = (0..train.rows())
                .map(|i| {
                    let start = i * positions * k;
                    Matrix::new(
                        positions,
                        k,
                        labels.as_slice()[start..start + positions * k].to_vec(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            NgramPrior::fit_smoothed(&targets, cfg.prior_order, cfg.prior_alpha)?
        }
    };

    let z_held = state.encode(&heldout)?;
    let held_codes = cb.nearest_code(&z_held)?;
    let usage = codebook::usage_stats(&held_codes, k)?;
    let prior_eval = prior.evaluate(&code_sequences(&held_codes, positions))?;
    let l_p = loss::reconstruction_loss(
        &recon_logits(&state, &held_codes, &cb)?,
        &heldout,
        state.config.loss,
    )?;
    let bpd =
        latent_prior::bits_per_dim(l_p, prior_eval.nats_per_latent, heldout.cols(), positions)?;

    let report = EvalReport {
        bits_per_dim: bpd.value,
        l_p,
        l_lp: prior_eval.nats_per_latent,
        n_x: bpd.n_x,
        n_z: bpd.n_z,
        k,
        train_rows: train.rows(),
        heldout_rows: heldout.rows(),
        prior_order: cfg.prior_order,
        prior_alpha: cfg.prior_alpha,
        zero_probability_events: prior_eval.zero_probability_events,
        heldout_usage_perplexity: usage.usage_perplexity,
    };
    ensure_dir(out)?;
    fs::write(out.join("prior.txt"), prior.to_text())?;
    write_json(&out.join("eval.json"), &report)?;
    Ok(report)
}

fn quantize_nearest(codes: &[usize], cb: &Codebook) -> Result<Matrix> {
    let mut out = Vec::with_capacity(codes.len() * cb.d());
    for &c in codes {
        out.extend(cb.embedding(c).iter().map(|&v| f64::from(v)));
    }
    Matrix::new(codes.len(), cb.d(), out)
}

/// Raw decoder outputs (before any output nonlinearity) for the given codes.
fn recon_logits(state: &AutoencoderState, codes: &[usize], cb: &Codebook) -> Result<Matrix> {
    let q = quantize_nearest(codes, cb)?;
    let b = codes.len() / state.latent_positions();
    state
        .decoder
        .predict(&q.reshape(b, state.decoder.input_dim())?)
}

/// Paths written by [`cmd_stability`].
#[derive(Debug, Clone)]
pub struct StabilityOutputs {
    pub report: PathBuf,
    pub csv: PathBuf,
    pub metrics: PathBuf,
}

/// Trains every configured mode from the same data, seed and initial
/// networks and compares codebook usage over time.
pub fn cmd_stability(cfg: &RunConfig, out: &Path) -> Result<(StabilityReport, StabilityOutputs)> {
    let (data, norm) = load_data(cfg)?;
    ensure_dir(out)?;
    let paths = StabilityOutputs {
        report: out.join("stability_report.json"),
        csv: out.join("stability.csv"),
        metrics: out.join("stability_metrics.jsonl"),
    };
    let mut all = Vec::new();
    for spec in &cfg.modes {
        let run_cfg = RunConfig {
            train: spec.apply(&cfg.train),
            ..cfg.clone()
        };
        let mut writer = MetricsWriter::new(Vec::new());
        let outcome = train_loop(&run_cfg, &data, norm.as_ref(), &mut writer, None)?;
        all.extend(outcome.records);
    }
    let labels: Vec<String> = cfg.modes.iter().map(ModeSpec::label).collect();
    let report = StabilityReport::from_records(
        &all,
        &labels,
        cfg.collapse_threshold(),
        cfg.train.codebook_size,
    )?;

    let mut jsonl = String::new();
    for r in &all {
        jsonl.push_str(&r.to_json());
        jsonl.push('\n');
    }
    fs::write(&paths.metrics, jsonl)?;
    fs::write(&paths.csv, StabilityReport::csv(&all))?;
    write_json(&paths.report, &report)?;
    Ok((report, paths))
}
