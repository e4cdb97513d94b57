//! Built-in synthetic datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, Matrix};

pub const MANIFOLD_ROWS: usize = 4096;
pub const MANIFOLD_AMBIENT_DIM: usize = 32;
pub const MANIFOLD_INTRINSIC_DIM: usize = 8;

/// Fixed seed for the embedding map so every draw lies on the same manifold.
const MANIFOLD_MAP_SEED: u64 = 0x0005_eed0_f3a4_f01d;

/// Points on a smooth 8-dimensional manifold embedded in 32 dimensions:
/// `x = tanh(W u)` with `u ~ N(0, I_8)` and a fixed `W`.
pub fn manifold(rows: usize, seed: u64) -> Result<DataMatrix> {
    manifold_with_dims(rows, MANIFOLD_AMBIENT_DIM, MANIFOLD_INTRINSIC_DIM, seed)
}

pub fn manifold_with_dims(
    rows: usize,
    ambient: usize,
    intrinsic: usize,
    seed: u64,
) -> Result<DataMatrix> {
    if rows == 0 || ambient == 0 || intrinsic == 0 {
        return Err(Error::invalid("manifold dimensions must be positive"));
    }
    let mut map_rng = ChaCha8Rng::seed_from_u64(MANIFOLD_MAP_SEED);
    let scale = 1.5 / (intrinsic as f64).sqrt();
    let w: Vec<f64> = (0..ambient * intrinsic)
        .map(|_| scale * map_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(rows * ambient);
    let mut u = vec![0.0; intrinsic];
    for _ in 0..rows {
        u.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        for a in 0..ambient {
            let dot: f64 = w[a * intrinsic..(a + 1) * intrinsic]
                .iter()
                .zip(&u)
                .map(|(wi, ui)| wi * ui)
                .sum();
            data.push(dot.tanh());
        }
    }
    DataMatrix::new(rows, ambient, data)
}

/// Isotropic Gaussian clusters.
#[derive(Debug, Clone)]
pub struct Blobs {
    pub data: DataMatrix,
    pub means: Matrix,
    pub labels: Vec<usize>,
}

/// `k` clusters of `per_cluster` points with standard deviation `std`
/// around means placed on a square grid with spacing `spacing` (first two
/// coordinates; remaining coordinates have zero mean). Points are listed
/// cluster by cluster.
pub fn blobs(
    k: usize,
    dim: usize,
    per_cluster: usize,
    spacing: f64,
    std: f64,
    seed: u64,
) -> Result<Blobs> {
    if k == 0 || dim == 0 || per_cluster == 0 {
        return Err(Error::invalid("blob counts must be positive"));
    }
    let side = (k as f64).sqrt().ceil() as usize;
    let mut means = Matrix::zeros(k, dim);
    for j in 0..k {
        means.set(j, 0, (j % side) as f64 * spacing);
        if dim > 1 {
            means.set(j, 1, (j / side) as f64 * spacing);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(k * per_cluster * dim);
    let mut labels = Vec::with_capacity(k * per_cluster);
    for j in 0..k {
        for _ in 0..per_cluster {
            for c in 0..dim {
                data.push(means.get(j, c) + std * rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(j);
        }
    }
    Ok(Blobs {
        data: DataMatrix::new(k * per_cluster, dim, data)?,
        means,
        labels,
    })
}
