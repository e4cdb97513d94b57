//! Monte-Carlo soft EM over the codebook.
//!
//! The E-step turns squared distances into a posterior over codes (identity
//! covariance, uniform prior) and draws `m` codes per row from it. The same
//! draws define the averaged embedding sent to the decoder, the fractional
//! counts used by the EMA M-step, and the smoothed labels used to fit the
//! latent prior. All three are views of one [`AssignmentSample`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, Matrix};

/// Number of Monte-Carlo samples per row used unless configured otherwise.
pub const DEFAULT_SAMPLES: usize = 10;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Row-stochastic N×K matrix of code probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    probs: Matrix,
}

impl Posterior {
    /// Validates that every row is a probability distribution.
    pub fn new(probs: Matrix) -> Result<Self> {
        if probs.cols() == 0 {
            return Err(Error::invalid("posterior needs at least one code"));
        }
        for (i, row) in probs.row_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!(
                    "posterior row {i} has entries outside [0, 1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("posterior row {i} sums to {s}")));
            }
        }
        Ok(Self { probs })
    }

    /// Softmax of negated squared distances, row by row.
    pub fn from_sq_distances(dists: &Matrix) -> Result<Self> {
        if dists.cols() == 0 {
            return Err(Error::invalid("posterior needs at least one code"));
        }
        if !dists.is_finite() {
            return Err(Error::invalid("squared distances must be finite"));
        }
        let k = dists.cols();
        let mut probs = dists.clone();
        probs.as_mut_slice().par_chunks_mut(k).for_each(|row| {
            // max logit is the smallest distance
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (min - *v).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        });
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn into_matrix(self) -> Matrix {
        self.probs
    }
}

/// `P(z_i = j | z_e(x_i)) ∝ exp(−||e_j − z_e(x_i)||²)`.
pub fn posterior(batch: &Matrix, cb: &Codebook) -> Result<Posterior> {
    Posterior::from_sq_distances(&cb.pairwise_sq_distances(batch)?)
}

/// `m` sampled codes per row and the matching fractional weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentSample {
    samples: Vec<usize>,
    m: usize,
    soft_weights: Matrix,
}

impl AssignmentSample {
    /// Wraps explicit draws laid out row-major as N×m.
    pub fn from_samples(samples: Vec<usize>, m: usize, k: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("need at least one sample per row"));
        }
        if !samples.len().is_multiple_of(m) {
            return Err(Error::invalid(format!(
                "{} samples do not split into rows of {m}",
                samples.len()
            )));
        }
        let n = samples.len() / m;
        let inv = 1.0 / m as f64;
        let mut counts = vec![0u32; n * k];
        for (i, row) in samples.chunks_exact(m).enumerate() {
            for &z in row {
                if z >= k {
                    return Err(Error::invalid(format!(
                        "sampled code {z} out of range for K={k}"
                    )));
                }
                counts[i * k + z] += 1;
            }
        }
        let weights = counts.into_iter().map(|c| f64::from(c) * inv).collect();
        Ok(Self {
            samples,
            m,
            soft_weights: Matrix::new(n, k, weights)?,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rows(&self) -> usize {
        self.soft_weights.rows()
    }

    pub fn k(&self) -> usize {
        self.soft_weights.cols()
    }

    /// All draws, N×m row-major.
    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    pub fn row_samples(&self, i: usize) -> &[usize] {
        &self.samples[i * self.m..(i + 1) * self.m]
    }

    /// Row i, column j holds the fraction of row i's draws equal to j.
    pub fn soft_weights(&self) -> &Matrix {
        &self.soft_weights
    }
}

/// Per-row generator: the run seed selects the key and the row index the stream.
fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

/// Draws one index by inverting the cumulative distribution at `u ∈ [0, 1)`.
pub fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last_positive = j;
        if u < cum {
            return j;
        }
    }
    // rounding left the cumulative sum just below u
    last_positive
}

/// Draws `m` i.i.d. codes per posterior row. Output depends only on
/// `(post, m, seed)`, independent of thread count.
pub fn mc_sample(post: &Posterior, m: usize, seed: u64) -> Result<AssignmentSample> {
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    let probs = post.probs();
    let mut samples = vec![0usize; probs.rows() * m];
    samples.par_chunks_mut(m).enumerate().for_each(|(i, out)| {
        let mut rng = row_rng(seed, i);
        let row = probs.row(i);
        for o in out.iter_mut() {
            *o = inverse_cdf(row, rng.random::<f64>());
        }
    });
    AssignmentSample::from_samples(samples, m, probs.cols())
}

/// `z_q(x_i) = (1/m) Σ_l e_{z_i^l}`.
pub fn averaged_embedding(sample: &AssignmentSample, cb: &Codebook) -> Result<DataMatrix> {
    if sample.k() != cb.k() {
        return Err(Error::shape("averaged_embedding codes", cb.k(), sample.k()));
    }
    let d = cb.d();
    let inv = 1.0 / sample.m() as f64;
    let mut out = Matrix::zeros(sample.rows(), d);
    for i in 0..sample.rows() {
        let row = out.row_mut(i);
        for &z in sample.row_samples(i) {
            for (o, &e) in row.iter_mut().zip(cb.embedding(z)) {
                *o += f64::from(e);
            }
        }
        for o in row.iter_mut() {
            *o *= inv;
        }
    }
    DataMatrix::try_from(out)
}

/// Fractional assignment weights for the EMA M-step; column j sums to
/// `(1/m) Σ_i Σ_l 1[z_i^l = j]`.
pub fn soft_m_step_weights(sample: &AssignmentSample) -> Matrix {
    sample.soft_weights().clone()
}

/// Average of the one-hot labels of each row's draws, used as the latent
/// prior's training target.
pub fn smoothed_labels(sample: &AssignmentSample) -> Matrix {
    sample.soft_weights().clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_distances_split_evenly() {
        let d = Matrix::from_rows(&[[2.0, 2.0]]).unwrap();
        let p = Posterior::from_sq_distances(&d).unwrap();
        assert_eq!(p.probs().as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn ln3_gap_gives_three_to_one() {
        let d = Matrix::from_rows(&[[0.0, 3f64.ln()]]).unwrap();
        let p = Posterior::from_sq_distances(&d).unwrap();
        assert!((p.probs().get(0, 0) - 0.75).abs() < 1e-12);
        assert!((p.probs().get(0, 1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn extreme_distance_is_finite() {
        let d = Matrix::from_rows(&[[0.0, 1e6], [1e12, 1e12 + 1.0]]).unwrap();
        let p = Posterior::from_sq_distances(&d).unwrap();
        assert!(p.probs().is_finite());
        assert_eq!(p.probs().row(0), &[1.0, 0.0]);
    }

    #[test]
    fn point_mass_always_sampled() {
        let p = Posterior::new(Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap()).unwrap();
        let s = mc_sample(&p, 10, 7).unwrap();
        assert!(s.samples().iter().all(|&z| z == 0));
        assert_eq!(s.soft_weights().row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn single_draw_is_one_hot() {
        let p = Posterior::new(Matrix::from_rows(&[[0.2, 0.3, 0.5], [0.6, 0.4, 0.0]]).unwrap())
            .unwrap();
        let s = mc_sample(&p, 1, 11).unwrap();
        for i in 0..2 {
            let row = s.soft_weights().row(i);
            assert_eq!(row.iter().filter(|&&w| w == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&w| w == 0.0).count(), 2);
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let p = Posterior::new(Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert!(mc_sample(&p, 0, 0).is_err());
    }

    #[test]
    fn invalid_posterior_rejected() {
        assert!(Posterior::new(Matrix::from_rows(&[[0.5, 0.6]]).unwrap()).is_err());
        assert!(Posterior::new(Matrix::from_rows(&[[1.5, -0.5]]).unwrap()).is_err());
    }

    #[test]
    fn averaged_embedding_examples() {
        let cb =
            Codebook::from_matrix(&Matrix::from_rows(&[[0.0, 0.0], [2.0, 4.0]]).unwrap()).unwrap();
        let s = AssignmentSample::from_samples(vec![0, 1], 2, 2).unwrap();
        assert_eq!(averaged_embedding(&s, &cb).unwrap().as_slice(), &[1.0, 2.0]);

        let s = AssignmentSample::from_samples(vec![1, 1, 1], 3, 2).unwrap();
        assert_eq!(averaged_embedding(&s, &cb).unwrap().as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn weights_and_labels_examples() {
        let s = AssignmentSample::from_samples(vec![0, 0, 1, 1], 4, 2).unwrap();
        assert_eq!(soft_m_step_weights(&s).as_slice(), &[0.5, 0.5]);

        let s = AssignmentSample::from_samples(vec![2, 2, 2], 3, 4).unwrap();
        assert_eq!(smoothed_labels(&s).as_slice(), &[0.0, 0.0, 1.0, 0.0]);

        let s = AssignmentSample::from_samples(vec![0, 1, 1, 3], 4, 4).unwrap();
        assert_eq!(smoothed_labels(&s).as_slice(), &[0.25, 0.5, 0.0, 0.25]);
    }

    #[test]
    fn inverse_cdf_skips_zero_mass() {
        assert_eq!(inverse_cdf(&[0.0, 1.0, 0.0], 0.0), 1);
        assert_eq!(inverse_cdf(&[0.5, 0.5, 0.0], 0.999_999_999), 1);
    }
}
