//! Discretization layer between encoder and decoder.
//!
//! Forward passes replace encoder outputs `z_e` with quantized vectors `z_q`
//! (nearest code, or the average of sampled codes). The backward pass copies
//! the decoder gradient straight through to the encoder and adds the gradient
//! of the commitment term `β · mean_i ||z_e(x_i) − sg[z_q(x_i)]||²`. The
//! codebook gets no gradient; it is trained by EMA only.

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, Matrix};
use crate::soft_em::{self, AssignmentSample};

pub const DEFAULT_BETA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub enum Assignments {
    /// Nearest-code index per row.
    Hard(Vec<usize>),
    /// Monte-Carlo draws per row.
    Sampled(AssignmentSample),
}

impl Assignments {
    /// Every code index the bottleneck used, flattened.
    pub fn codes(&self) -> &[usize] {
        match self {
            Assignments::Hard(z) => z,
            Assignments::Sampled(s) => s.samples(),
        }
    }

    /// N×K EMA weights: one-hot rows for hard assignments, fractional
    /// counts for sampled ones.
    pub fn ema_weights(&self, k: usize) -> Result<Matrix> {
        match self {
            Assignments::Hard(z) => crate::codebook::one_hot(z, k),
            Assignments::Sampled(s) => Ok(soft_em::soft_m_step_weights(s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckOutput {
    pub quantized: DataMatrix,
    pub assignments: Assignments,
    /// Already multiplied by `beta`.
    pub commitment_loss: f64,
    pub beta: f64,
}

fn commitment(batch: &Matrix, quantized: &Matrix, beta: f64) -> f64 {
    let total: f64 = batch
        .as_slice()
        .iter()
        .zip(quantized.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    beta * total / batch.rows() as f64
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::invalid(format!(
            "beta {beta} must be finite and nonnegative"
        )));
    }
    Ok(())
}

/// Commitment loss for fixed quantized targets.
pub fn commitment_loss(batch: &Matrix, quantized: &Matrix, beta: f64) -> Result<f64> {
    if batch.rows() != quantized.rows() || batch.cols() != quantized.cols() {
        return Err(Error::shape(
            "commitment_loss",
            batch.as_slice().len(),
            quantized.as_slice().len(),
        ));
    }
    check_beta(beta)?;
    Ok(commitment(batch, quantized, beta))
}

/// `z_q(x_i) = e_{argmin_j ||z_e(x_i) − e_j||²}`.
pub fn quantize_hard(batch: &DataMatrix, cb: &Codebook, beta: f64) -> Result<BottleneckOutput> {
    check_beta(beta)?;
    let codes = cb.nearest_code(batch)?;
    let d = cb.d();
    let mut data = Vec::with_capacity(batch.rows() * d);
    for &z in &codes {
        data.extend(cb.embedding(z).iter().map(|&v| f64::from(v)));
    }
    let quantized = DataMatrix::new(batch.rows(), d, data)?;
    let commitment_loss = commitment(batch, &quantized, beta);
    Ok(BottleneckOutput {
        quantized,
        assignments: Assignments::Hard(codes),
        commitment_loss,
        beta,
    })
}

/// Average of `m` codes sampled from the posterior of each row.
pub fn quantize_soft(
    batch: &DataMatrix,
    cb: &Codebook,
    m: usize,
    seed: u64,
    beta: f64,
) -> Result<BottleneckOutput> {
    check_beta(beta)?;
    let post = soft_em::posterior(batch, cb)?;
    let sample = soft_em::mc_sample(&post, m, seed)?;
    let quantized = soft_em::averaged_embedding(&sample, cb)?;
    let commitment_loss = commitment(batch, &quantized, beta);
    Ok(BottleneckOutput {
        quantized,
        assignments: Assignments::Sampled(sample),
        commitment_loss,
        beta,
    })
}

/// Gradient reaching the encoder output: `upstream + 2β(z_e − z_q)/N`.
pub fn backward(upstream: &Matrix, out: &BottleneckOutput, batch: &Matrix) -> Result<Matrix> {
    let q = &out.quantized;
    if upstream.rows() != q.rows() || upstream.cols() != q.cols() {
        return Err(Error::shape(
            "bottleneck upstream gradient",
            q.as_slice().len(),
            upstream.as_slice().len(),
        ));
    }
    if batch.rows() != q.rows() || batch.cols() != q.cols() {
        return Err(Error::shape(
            "bottleneck batch",
            q.as_slice().len(),
            batch.as_slice().len(),
        ));
    }
    let mut grad = upstream.clone();
    if out.beta == 0.0 {
        return Ok(grad);
    }
    let scale = 2.0 * out.beta / batch.rows() as f64;
    for ((g, &ze), &zq) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(batch.as_slice())
        .zip(q.as_slice())
    {
        *g += scale * (ze - zq);
    }
    Ok(grad)
}
