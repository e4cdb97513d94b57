use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bottleneck::{self, BottleneckOutput};
use crate::codebook::{self, Codebook};
use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, Matrix};
use crate::nn::dense::{Activation, DenseNet};
use crate::nn::loss::{self, ReconstructionLoss};
use crate::nn::optim::{LrSchedule, Optimizer, OptimizerKind};

/// How the bottleneck assigns codes during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Nearest code, one-hot EMA counts.
    HardEma,
    /// Averaged Monte-Carlo samples, fractional EMA counts.
    SoftEm,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::HardEma => "hard_ema",
            Mode::SoftEm => "soft_em",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hard_ema" => Ok(Mode::HardEma),
            "soft_em" => Ok(Mode::SoftEm),
            other => Err(format!(
                "unknown mode `{other}` (expected hard_ema or soft_em)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// K
    pub codebook_size: usize,
    /// D
    pub latent_dim: usize,
    /// Monte-Carlo samples per latent in soft mode.
    pub samples: usize,
    /// EMA decay λ.
    pub decay: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub lr_half_life: u64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub max_steps: u64,
    pub mode: Mode,
    /// Halvings of the input width that give the number of latent positions.
    pub downsample_factor: u32,
    pub hidden_dim: usize,
    pub loss: ReconstructionLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            codebook_size: 256,
            latent_dim: 16,
            samples: crate::soft_em::DEFAULT_SAMPLES,
            decay: codebook::DEFAULT_DECAY,
            beta: bottleneck::DEFAULT_BETA,
            epsilon: codebook::DEFAULT_EPSILON,
            seed: 0,
            learning_rate: 0.05,
            warmup_steps: 100,
            lr_half_life: 2000,
            optimizer: OptimizerKind::Sgd,
            batch_size: 64,
            max_steps: 2000,
            mode: Mode::HardEma,
            downsample_factor: 3,
            hidden_dim: 64,
            loss: ReconstructionLoss::Mse,
        }
    }
}

impl TrainConfig {
    /// Lists every violated constraint.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.codebook_size == 0 {
            errs.push("codebook_size must be positive".to_string());
        }
        if self.latent_dim == 0 {
            errs.push("latent_dim must be positive".to_string());
        }
        if self.samples == 0 {
            errs.push("samples must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.decay) {
            errs.push(format!("decay {} outside [0, 1]", self.decay));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            errs.push(format!("beta {} must be nonnegative", self.beta));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            errs.push(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            errs.push(format!(
                "learning_rate {} must be nonnegative",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be positive".to_string());
        }
        if self.hidden_dim == 0 {
            errs.push("hidden_dim must be positive".to_string());
        }
        if self.downsample_factor >= usize::BITS {
            errs.push(format!(
                "downsample_factor {} too large",
                self.downsample_factor
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Number of latent positions per example for an input of `input_dim`.
    pub fn latent_positions(&self, input_dim: usize) -> usize {
        let width = 1usize << self.downsample_factor.min(usize::BITS - 1);
        input_dim.div_ceil(width).max(1)
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.learning_rate,
            warmup_steps: self.warmup_steps,
            half_life: self.lr_half_life,
        }
    }
}

/// Per-step training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub l_r: f64,
    pub commitment: f64,
    pub total_loss: f64,
    pub usage_perplexity: f64,
    pub dead_codes: usize,
}

/// Mixes a run seed with a stream index into an independent 64-bit seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dense encoder and decoder around a vector-quantized bottleneck.
#[derive(Debug, Clone)]
pub struct AutoencoderState {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub config: TrainConfig,
    pub step: u64,
    enc_opt: Optimizer,
    dec_opt: Optimizer,
}

/// Everything a forward pass produces, kept for the backward pass.
struct Forward {
    enc_cache: crate::nn::dense::ForwardCache,
    dec_cache: crate::nn::dense::ForwardCache,
    z_e: DataMatrix,
    bottleneck: BottleneckOutput,
    decoded: Matrix,
    l_r: f64,
    recon_grad: Matrix,
}

impl AutoencoderState {
    /// Randomly initialized networks: `input → hidden → positions·D` and back.
    pub fn new(input_dim: usize, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x6e6e));
        let code_width = config.latent_positions(input_dim) * config.latent_dim;
        let h = config.hidden_dim;
        let encoder = DenseNet::random(
            &[input_dim, h, code_width],
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        )?;
        let decoder = DenseNet::random(
            &[code_width, h, input_dim],
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        )?;
        Self::from_parts(encoder, decoder, config)
    }

    pub fn from_parts(encoder: DenseNet, decoder: DenseNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let input_dim = encoder.input_dim();
        let code_width = config.latent_positions(input_dim) * config.latent_dim;
        if encoder.output_dim() != code_width {
            return Err(Error::shape(
                "encoder output",
                code_width,
                encoder.output_dim(),
            ));
        }
        if decoder.input_dim() != code_width {
            return Err(Error::shape(
                "decoder input",
                code_width,
                decoder.input_dim(),
            ));
        }
        if decoder.output_dim() != input_dim {
            return Err(Error::shape(
                "decoder output",
                input_dim,
                decoder.output_dim(),
            ));
        }
        let opt = Optimizer::new(config.optimizer, config.schedule());
        Ok(Self {
            encoder,
            decoder,
            step: 0,
            enc_opt: opt.clone(),
            dec_opt: opt,
            config,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_positions(&self) -> usize {
        self.config.latent_positions(self.input_dim())
    }

    /// Encoder outputs reshaped to one row per latent position, `(B·L)×D`.
    pub fn encode(&self, batch: &Matrix) -> Result<DataMatrix> {
        let out = self.encoder.predict(batch)?;
        let rows = batch.rows() * self.latent_positions();
        DataMatrix::try_from(out.reshape(rows, self.config.latent_dim)?)
    }

    /// Fresh codebook drawn from the encoder outputs of `batch`.
    pub fn init_codebook(&self, batch: &Matrix, seed: u64) -> Result<Codebook> {
        let z_e = self.encode(batch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.configure_codebook(Codebook::init_from_batch(
            &z_e,
            self.config.codebook_size,
            &mut rng,
        )?)
    }

    /// Applies this run's decay and epsilon to `cb`.
    pub fn configure_codebook(&self, cb: Codebook) -> Result<Codebook> {
        cb.with_decay(self.config.decay)?
            .with_epsilon(self.config.epsilon)
    }

    /// Bottleneck for already-encoded rows, following the configured mode.
    pub fn quantize(&self, z_e: &DataMatrix, cb: &Codebook, seed: u64) -> Result<BottleneckOutput> {
        match self.config.mode {
            Mode::HardEma => bottleneck::quantize_hard(z_e, cb, self.config.beta),
            Mode::SoftEm => {
                bottleneck::quantize_soft(z_e, cb, self.config.samples, seed, self.config.beta)
            }
        }
    }

    /// Decoder output for quantized rows `(B·L)×D`, in data space.
    pub fn decode(&self, quantized: &Matrix) -> Result<Matrix> {
        let b = quantized.rows() / self.latent_positions();
        let input = quantized.clone().reshape(b, self.decoder.input_dim())?;
        Ok(loss::reconstruct(
            &self.decoder.predict(&input)?,
            self.config.loss,
        ))
    }

    fn forward(&self, cb: &Codebook, batch: &DataMatrix, seed: u64) -> Result<Forward> {
        if cb.d() != self.config.latent_dim {
            return Err(Error::shape("codebook D", self.config.latent_dim, cb.d()));
        }
        let (enc_out, enc_cache) = self.encoder.forward(batch)?;
        let rows = batch.rows() * self.latent_positions();
        let z_e = DataMatrix::try_from(enc_out.reshape(rows, self.config.latent_dim)?)
            .map_err(|e| self.diverged(format!("encoder output: {e}")))?;
        let bottleneck = self
            .quantize(&z_e, cb, seed)
            .map_err(|e| self.diverged(format!("bottleneck: {e}")))?;
        let dec_in = bottleneck
            .quantized
            .as_ref()
            .clone()
            .reshape(batch.rows(), self.decoder.input_dim())?;
        let (decoded, dec_cache) = self.decoder.forward(&dec_in)?;
        let (l_r, recon_grad) = loss::loss_and_grad(&decoded, batch, self.config.loss)?;
        Ok(Forward {
            enc_cache,
            dec_cache,
            z_e,
            bottleneck,
            decoded,
            l_r,
            recon_grad,
        })
    }

    fn diverged(&self, reason: String) -> Error {
        Error::Diverged {
            step: self.step,
            reason,
        }
    }

    fn metrics(&self, fwd: &Forward, k: usize) -> Result<StepMetrics> {
        let usage = codebook::usage_stats(fwd.bottleneck.assignments.codes(), k)?;
        let commitment = fwd.bottleneck.commitment_loss;
        Ok(StepMetrics {
            step: self.step,
            l_r: fwd.l_r,
            commitment,
            total_loss: fwd.l_r + commitment,
            usage_perplexity: usage.usage_perplexity,
            dead_codes: usage.dead_codes,
        })
    }

    /// Metrics for `batch` without touching any parameter.
    pub fn evaluate(&self, cb: &Codebook, batch: &DataMatrix, seed: u64) -> Result<StepMetrics> {
        let fwd = self.forward(cb, batch, seed)?;
        self.metrics(&fwd, cb.k())
    }

    /// Reconstructions of `batch` through the bottleneck.
    pub fn reconstruct(&self, cb: &Codebook, batch: &DataMatrix, seed: u64) -> Result<Matrix> {
        let fwd = self.forward(cb, batch, seed)?;
        Ok(loss::reconstruct(&fwd.decoded, self.config.loss))
    }

    /// One optimization step: encode, quantize, decode, backpropagate with
    /// the straight-through rule, update both networks, then update the
    /// codebook by EMA. Returns the metrics of the forward pass.
    pub fn train_step(
        &mut self,
        cb: &mut Codebook,
        batch: &DataMatrix,
        seed: u64,
    ) -> Result<StepMetrics> {
        let fwd = self.forward(cb, batch, seed)?;
        let metrics = self.metrics(&fwd, cb.k())?;
        if !(metrics.l_r.is_finite() && metrics.commitment.is_finite()) {
            return Err(self.diverged(format!(
                "non-finite loss (l_r={}, commitment={})",
                metrics.l_r, metrics.commitment
            )));
        }

        let (dec_grads, dz_q) = self.decoder.backward(&fwd.dec_cache, &fwd.recon_grad)?;
        let rows = fwd.z_e.rows();
        let dz_q = dz_q.reshape(rows, self.config.latent_dim)?;
        let dz_e = bottleneck::backward(&dz_q, &fwd.bottleneck, &fwd.z_e)?;
        let dz_e = dz_e.reshape(batch.rows(), self.encoder.output_dim())?;
        let (enc_grads, _) = self.encoder.backward(&fwd.enc_cache, &dz_e)?;
        if !(enc_grads.is_finite() && dec_grads.is_finite()) {
            return Err(self.diverged("non-finite gradient".into()));
        }

        self.dec_opt
            .step(&mut self.decoder, &dec_grads, self.step)?;
        self.enc_opt
            .step(&mut self.encoder, &enc_grads, self.step)?;
        let weights = fwd.bottleneck.assignments.ema_weights(cb.k())?;
        cb.ema_update(&fwd.z_e, &weights)
            .map_err(|e| self.diverged(format!("codebook update: {e}")))?;

        if !(self.encoder.is_finite() && self.decoder.is_finite()) {
            return Err(self.diverged("non-finite parameters after update".into()));
        }
        self.step += 1;
        Ok(metrics)
    }
}
