//! Hard EM with identity-covariance Gaussians and a uniform prior, i.e.
//! Lloyd's K-means.
//!
//! This is the exact batch counterpart of the EMA codebook rule: one
//! [`Codebook::ema_update`](crate::codebook::Codebook::ema_update) with decay
//! zero reproduces [`m_step`] for every non-empty cluster.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codebook::{nearest_rows, sq_dist};
use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Matrix,
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each point to its assigned center.
    pub objective: f64,
    /// Number of M-steps performed.
    pub iterations: usize,
    /// Objective after every E-step, starting with the initial centers.
    pub objective_history: Vec<f64>,
}

fn check_centers(batch: &Matrix, centers: &Matrix) -> Result<()> {
    if centers.cols() != batch.cols() {
        return Err(Error::shape("centers", batch.cols(), centers.cols()));
    }
    if centers.rows() == 0 {
        return Err(Error::invalid("need at least one center"));
    }
    Ok(())
}

/// Assigns every row to its nearest center (lowest index on ties).
pub fn e_step(batch: &Matrix, centers: &Matrix) -> Result<Vec<usize>> {
    check_centers(batch, centers)?;
    Ok(nearest_rows(batch, centers.as_slice(), centers.rows()))
}

/// Recomputes each center as the mean of its assigned rows.
///
/// Clusters without members keep the center from `previous`. Returns the new
/// centers and the per-cluster counts.
pub fn m_step(
    batch: &Matrix,
    assignments: &[usize],
    previous: &Matrix,
) -> Result<(Matrix, Vec<usize>)> {
    check_centers(batch, previous)?;
    if assignments.len() != batch.rows() {
        return Err(Error::shape(
            "m_step assignments",
            batch.rows(),
            assignments.len(),
        ));
    }
    let (k, d) = (previous.rows(), previous.cols());
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0f64; k * d];
    for (x, &z) in batch.row_iter().zip(assignments) {
        if z >= k {
            return Err(Error::invalid(format!(
                "assignment {z} out of range for K={k}"
            )));
        }
        counts[z] += 1;
        for (s, &v) in sums[z * d..(z + 1) * d].iter_mut().zip(x) {
            *s += v;
        }
    }
    let mut centers = previous.clone();
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let n = c as f64;
        for (m, &s) in centers.row_mut(j).iter_mut().zip(&sums[j * d..(j + 1) * d]) {
            *m = s / n;
        }
    }
    Ok((centers, counts))
}

/// Quantization cost `Σ_i ||μ_{z_i} − x_i||²`.
pub fn objective(batch: &Matrix, centers: &Matrix, assignments: &[usize]) -> Result<f64> {
    check_centers(batch, centers)?;
    if assignments.len() != batch.rows() {
        return Err(Error::shape(
            "objective assignments",
            batch.rows(),
            assignments.len(),
        ));
    }
    let mut total = 0.0;
    for (x, &z) in batch.row_iter().zip(assignments) {
        if z >= centers.rows() {
            return Err(Error::invalid(format!("assignment {z} out of range")));
        }
        total += sq_dist(x, centers.row(z));
    }
    Ok(total)
}

/// Independent seeded starts tried by [`kmeans_fit`].
pub const DEFAULT_RESTARTS: usize = 32;

/// Centers initialized from K distinct rows chosen with a seeded generator.
pub fn init_centers(batch: &DataMatrix, k: usize, seed: u64) -> Result<Matrix> {
    init_centers_stream(batch, k, seed, 0)
}

fn init_centers_stream(batch: &DataMatrix, k: usize, seed: u64, stream: u64) -> Result<Matrix> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if batch.rows() < k {
        return Err(Error::invalid(format!(
            "cannot pick {k} distinct rows from {} points",
            batch.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut picked = index::sample(&mut rng, batch.rows(), k).into_vec();
    picked.sort_unstable();
    let rows: Vec<&[f64]> = picked.iter().map(|&r| batch.row(r)).collect();
    Matrix::from_rows(&rows)
}

/// Lloyd iterations from `centers` until assignments stop changing or
/// `max_iters` M-steps have run.
pub fn lloyd(batch: &DataMatrix, mut centers: Matrix, max_iters: usize) -> Result<KMeansResult> {
    let mut assignments = e_step(batch, &centers)?;
    let mut history = vec![objective(batch, &centers, &assignments)?];
    let mut iterations = 0;
    while iterations < max_iters {
        let (next, _) = m_step(batch, &assignments, &centers)?;
        centers = next;
        iterations += 1;
        let next_assign = e_step(batch, &centers)?;
        history.push(objective(batch, &centers, &next_assign)?);
        let converged = next_assign == assignments;
        assignments = next_assign;
        if converged {
            break;
        }
    }
    Ok(KMeansResult {
        objective: *history.last().unwrap(),
        centers,
        assignments,
        iterations,
        objective_history: history,
    })
}

/// Seeded K-means fit: the lowest-objective result of [`DEFAULT_RESTARTS`]
/// Lloyd runs, each started from K distinct random rows. The first start is
/// [`init_centers`] with the same seed.
pub fn kmeans_fit(
    batch: &DataMatrix,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KMeansResult> {
    kmeans_fit_restarts(batch, k, max_iters, seed, DEFAULT_RESTARTS)
}

/// As [`kmeans_fit`] with an explicit number of starts. Ties keep the
/// earliest start.
pub fn kmeans_fit_restarts(
    batch: &DataMatrix,
    k: usize,
    max_iters: usize,
    seed: u64,
    restarts: usize,
) -> Result<KMeansResult> {
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) as u64 {
        let run = lloyd(batch, init_centers_stream(batch, k, seed, r)?, max_iters)?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one start"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(rows: &[&[f64]]) -> DataMatrix {
        DataMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn e_step_examples() {
        let x = dm(&[&[0.0], &[10.0]]);
        let mu = Matrix::from_rows(&[[1.0], [9.0]]).unwrap();
        assert_eq!(e_step(&x, &mu).unwrap(), vec![0, 1]);

        let x = dm(&[&[2.0, 3.0], &[2.0, 3.0]]);
        let mu = Matrix::from_rows(&[[2.0, 3.0], [2.0, 3.0]]).unwrap();
        assert_eq!(e_step(&x, &mu).unwrap(), vec![0, 0]);
    }

    #[test]
    fn m_step_examples() {
        let x = dm(&[&[0.0], &[2.0]]);
        let prev = Matrix::from_rows(&[[5.0]]).unwrap();
        let (mu, c) = m_step(&x, &[0, 0], &prev).unwrap();
        assert_eq!(mu.as_slice(), &[1.0]);
        assert_eq!(c, vec![2]);

        let x = dm(&[&[0.0], &[2.0], &[10.0]]);
        let prev = Matrix::from_rows(&[[0.0], [0.0]]).unwrap();
        let (mu, c) = m_step(&x, &[0, 0, 1], &prev).unwrap();
        assert_eq!(mu.as_slice(), &[1.0, 10.0]);
        assert_eq!(c, vec![2, 1]);

        let prev = Matrix::from_rows(&[[0.0], [-7.5]]).unwrap();
        let (mu, c) = m_step(&x, &[0, 0, 0], &prev).unwrap();
        assert_eq!(mu.get(1, 0), -7.5);
        assert_eq!(c[1], 0);
    }

    #[test]
    fn objective_examples() {
        let x = dm(&[&[0.0], &[2.0]]);
        let mu = Matrix::from_rows(&[[1.0]]).unwrap();
        assert_eq!(objective(&x, &mu, &[0, 0]).unwrap(), 2.0);
        let mu = Matrix::from_rows(&[[0.0], [2.0]]).unwrap();
        assert_eq!(objective(&x, &mu, &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let x = dm(&[&[1.0, 0.0], &[3.0, 2.0], &[5.0, 1.0]]);
        let r = kmeans_fit(&x, 1, 50, 0).unwrap();
        assert_eq!(r.centers.as_slice(), &[3.0, 1.0]);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn k_equals_n_has_zero_objective() {
        let x = dm(&[&[1.0], &[4.0], &[9.0]]);
        let r = kmeans_fit(&x, 3, 10, 5).unwrap();
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn too_few_points_rejected() {
        let x = dm(&[&[1.0]]);
        assert!(kmeans_fit(&x, 2, 10, 0).is_err());
    }
}
