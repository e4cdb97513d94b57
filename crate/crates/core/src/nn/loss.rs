use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// How decoder outputs are scored against the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructionLoss {
    /// Mean squared error over all elements.
    Mse,
    /// Mean per-element binary cross-entropy; decoder outputs are logits and
    /// targets lie in `[0, 1]`.
    BinaryCrossEntropy,
}

fn check(pred: &Matrix, target: &Matrix) -> Result<()> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(Error::shape(
            "reconstruction_loss",
            target.as_slice().len(),
            pred.as_slice().len(),
        ));
    }
    if pred.as_slice().is_empty() {
        return Err(Error::invalid("reconstruction loss of an empty batch"));
    }
    Ok(())
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean-reduced reconstruction loss `l_r`.
pub fn reconstruction_loss(
    pred: &Matrix,
    target: &Matrix,
    kind: ReconstructionLoss,
) -> Result<f64> {
    Ok(loss_and_grad(pred, target, kind)?.0)
}

/// `l_r` and its gradient with respect to `pred`.
pub fn loss_and_grad(
    pred: &Matrix,
    target: &Matrix,
    kind: ReconstructionLoss,
) -> Result<(f64, Matrix)> {
    check(pred, target)?;
    let n = pred.as_slice().len() as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut total = 0.0;
    match kind {
        ReconstructionLoss::Mse => {
            for ((g, &p), &t) in grad
                .as_mut_slice()
                .iter_mut()
                .zip(pred.as_slice())
                .zip(target.as_slice())
            {
                let diff = p - t;
                total += diff * diff;
                *g = 2.0 * diff / n;
            }
        }
        ReconstructionLoss::BinaryCrossEntropy => {
            for ((g, &z), &t) in grad
                .as_mut_slice()
                .iter_mut()
                .zip(pred.as_slice())
                .zip(target.as_slice())
            {
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::invalid(format!("binary target {t} outside [0, 1]")));
                }
                total += softplus(z) - t * z;
                *g = (sigmoid(z) - t) / n;
            }
        }
    }
    Ok((total / n, grad))
}

/// Maps raw decoder outputs to reconstructions in data space.
pub fn reconstruct(pred: &Matrix, kind: ReconstructionLoss) -> Matrix {
    match kind {
        ReconstructionLoss::Mse => pred.clone(),
        ReconstructionLoss::BinaryCrossEntropy => {
            let mut out = pred.clone();
            out.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
            out
        }
    }
}
