//! The embedding table of a vector-quantization bottleneck.
//!
//! A [`Codebook`] holds K code vectors of dimension D together with the
//! exponential-moving-average assignment counts used by the EMA training
//! rule. Embeddings and counts are stored as `f32`, which is also the on-disk
//! precision; all arithmetic is carried out in `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, Matrix};

pub const DEFAULT_DECAY: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// File magic for serialized codebooks.
pub const MAGIC: &[u8; 4] = b"VQCB";
pub const FORMAT_VERSION: u32 = 1;
/// Bytes preceding the embedding payload: magic, version, K, D.
pub const HEADER_LEN: usize = 4 + 4 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    d: usize,
    embeddings: Vec<f32>,
    ema_counts: Vec<f32>,
    decay: f64,
    epsilon: f64,
}

/// Histogram of code assignments and the derived collapse diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageStats {
    pub hit_counts: Vec<u64>,
    /// `exp` of the entropy of the normalized histogram, in `[1, K]`.
    pub usage_perplexity: f64,
    pub dead_codes: usize,
}

impl Codebook {
    /// Creates a codebook from explicit parts with default decay and epsilon.
    pub fn from_parts(
        k: usize,
        d: usize,
        embeddings: Vec<f32>,
        ema_counts: Vec<f32>,
    ) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::invalid("codebook needs K >= 1 and D >= 1"));
        }
        let kd = k
            .checked_mul(d)
            .ok_or_else(|| Error::invalid("K*D overflows usize"))?;
        if embeddings.len() != kd {
            return Err(Error::shape("Codebook embeddings", kd, embeddings.len()));
        }
        if ema_counts.len() != k {
            return Err(Error::shape("Codebook counts", k, ema_counts.len()));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("codebook embeddings must be finite"));
        }
        if ema_counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::invalid("EMA counts must be finite and nonnegative"));
        }
        Ok(Self {
            k,
            d,
            embeddings,
            ema_counts,
            decay: DEFAULT_DECAY,
            epsilon: DEFAULT_EPSILON,
        })
    }

    /// Codebook whose rows are the rows of `embeddings`; counts start at 1.
    pub fn from_matrix(embeddings: &Matrix) -> Result<Self> {
        let data = embeddings.as_slice().iter().map(|&v| v as f32).collect();
        Self::from_parts(
            embeddings.rows(),
            embeddings.cols(),
            data,
            vec![1.0; embeddings.rows()],
        )
    }

    /// Initializes K codes from K distinct rows of `batch`, or from unit
    /// Gaussian draws when the batch has fewer than K rows.
    pub fn init_from_batch<R: Rng + ?Sized>(
        batch: &DataMatrix,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = batch.cols();
        if k == 0 {
            return Err(Error::invalid("codebook needs K >= 1"));
        }
        let embeddings: Vec<f32> = if batch.rows() >= k {
            let mut picked = index::sample(rng, batch.rows(), k).into_vec();
            picked.sort_unstable();
            picked
                .iter()
                .flat_map(|&r| batch.row(r).iter().map(|&v| v as f32))
                .collect()
        } else {
            (0..k * d)
                .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                .collect()
        };
        Self::from_parts(k, d, embeddings, vec![1.0; k])
    }

    /// Initializes K codes as isotropic Gaussian draws around `center`.
    pub fn init_gaussian<R: Rng + ?Sized>(
        k: usize,
        center: &[f64],
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let d = center.len();
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::invalid("scale must be finite and nonnegative"));
        }
        let mut embeddings = Vec::with_capacity(k * d);
        for _ in 0..k {
            for &c in center {
                let z: f64 = rng.sample(StandardNormal);
                embeddings.push((c + scale * z) as f32);
            }
        }
        Self::from_parts(k, d, embeddings, vec![1.0; k])
    }

    pub fn with_decay(mut self, decay: f64) -> Result<Self> {
        self.set_decay(decay)?;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    /// Decay 1.0 is accepted and freezes the codebook.
    pub fn set_decay(&mut self, decay: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::invalid(format!("decay {decay} outside [0, 1]")));
        }
        self.decay = decay;
        Ok(())
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn ema_counts(&self) -> &[f32] {
        &self.ema_counts
    }

    #[inline]
    pub fn embedding(&self, j: usize) -> &[f32] {
        &self.embeddings[j * self.d..(j + 1) * self.d]
    }

    /// Embeddings widened to an `f64` K×D matrix.
    pub fn embedding_matrix(&self) -> Matrix {
        Matrix::new(
            self.k,
            self.d,
            self.embeddings.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("codebook shape is consistent")
    }

    fn check_batch(&self, batch: &Matrix, context: &'static str) -> Result<()> {
        if batch.cols() != self.d {
            return Err(Error::shape(context, self.d, batch.cols()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings
            .iter()
            .chain(&self.ema_counts)
            .all(|v| v.is_finite())
    }

    /// Squared Euclidean distance from every batch row to every code.
    pub fn pairwise_sq_distances(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_batch(batch, "pairwise_sq_distances")?;
        Ok(sq_distances(batch, &self.embeddings, self.k))
    }

    /// Index of the closest code for every batch row; ties go to the lowest index.
    pub fn nearest_code(&self, batch: &Matrix) -> Result<Vec<usize>> {
        self.check_batch(batch, "nearest_code")?;
        Ok(nearest_rows(batch, &self.embeddings, self.k))
    }

    /// One EMA step on counts and embeddings.
    ///
    /// `weights` is N×K; row i holds the (hard or fractional) assignment of
    /// batch row i. Counts are updated first and the new counts divide the
    /// weighted sums. A code whose new count falls below epsilon keeps its
    /// embedding.
    pub fn ema_update(&mut self, batch: &Matrix, weights: &Matrix) -> Result<()> {
        self.check_batch(batch, "ema_update batch")?;
        if weights.rows() != batch.rows() {
            return Err(Error::shape(
                "ema_update weight rows",
                batch.rows(),
                weights.rows(),
            ));
        }
        if weights.cols() != self.k {
            return Err(Error::shape(
                "ema_update weight columns",
                self.k,
                weights.cols(),
            ));
        }
        if !batch.is_finite() {
            return Err(Error::invalid(
                "ema_update batch contains non-finite values",
            ));
        }
        if let Some(w) = weights
            .as_slice()
            .iter()
            .find(|w| !(w.is_finite() && **w >= 0.0))
        {
            return Err(Error::invalid(format!(
                "ema_update weight {w} is negative or non-finite"
            )));
        }

        let (k, d) = (self.k, self.d);
        let mut mass = vec![0.0f64; k];
        let mut sums = vec![0.0f64; k * d];
        for (x, w_row) in batch.row_iter().zip(weights.row_iter()) {
            for (j, &w) in w_row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                mass[j] += w;
                for (s, &v) in sums[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *s += w * v;
                }
            }
        }

        let lambda = self.decay;
        let mut counts = self.ema_counts.clone();
        let mut embeddings = self.embeddings.clone();
        for j in 0..k {
            let count = lambda * f64::from(counts[j]) + (1.0 - lambda) * mass[j];
            counts[j] = count as f32;
            if count < self.epsilon {
                continue;
            }
            let denom = count.max(self.epsilon);
            for (e, &s) in embeddings[j * d..(j + 1) * d]
                .iter_mut()
                .zip(&sums[j * d..(j + 1) * d])
            {
                *e = (lambda * f64::from(*e) + (1.0 - lambda) * s / denom) as f32;
            }
        }
        if !(counts.iter().chain(&embeddings).all(|v| v.is_finite())) {
            return Err(Error::invalid("ema_update result overflows f32 storage"));
        }
        self.ema_counts = counts;
        self.embeddings = embeddings;
        Ok(())
    }

    /// Serializes to the little-endian `VQCB` format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.embeddings.len() + self.k));
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.k as u64).to_le_bytes())?;
        w.write_all(&(self.d as u64).to_le_bytes())?;
        for v in self.embeddings.iter().chain(&self.ema_counts) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Decodes a `VQCB` stream. Decay and epsilon are not part of the format
    /// and take their default values.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|_| Error::format("truncated codebook header"))?;
        if &header[0..4] != MAGIC {
            return Err(Error::format("bad codebook magic"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported codebook version {version}"
            )));
        }
        let k = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let d = u64::from_le_bytes(header[16..24].try_into().unwrap());
        let payload = k
            .checked_mul(d)
            .and_then(|kd| kd.checked_add(k))
            .and_then(|n| n.checked_mul(4))
            .filter(|&n| usize::try_from(n).is_ok())
            .ok_or_else(|| Error::format(format!("K={k} D={d} overflows the payload size")))?;
        let (k, d) = (k as usize, d as usize);

        let mut bytes = Vec::new();
        r.take(payload).read_to_end(&mut bytes)?;
        if (bytes.len() as u64) < payload {
            return Err(Error::format(format!(
                "truncated codebook payload: expected {payload} bytes, got {}",
                bytes.len()
            )));
        }
        let mut floats = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let embeddings: Vec<f32> = floats.by_ref().take(k * d).collect();
        let counts: Vec<f32> = floats.collect();
        Self::from_parts(k, d, embeddings, counts).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let cb = Self::read_from(bytes)?;
        let expected = HEADER_LEN + 4 * (cb.k * cb.d + cb.k);
        if bytes.len() != expected {
            return Err(Error::format(format!(
                "trailing bytes after codebook: {} of {}",
                bytes.len() - expected,
                bytes.len()
            )));
        }
        Ok(cb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Squared distances between batch rows and the K rows of `centers`.
///
/// Uses direct per-pair subtraction so the argmin is exact.
pub(crate) fn sq_distances<T>(batch: &Matrix, centers: &[T], k: usize) -> Matrix
where
    T: Copy + Into<f64> + Sync,
{
    let d = batch.cols();
    let mut out = Matrix::zeros(batch.rows(), k);
    if k == 0 {
        return out;
    }
    out.as_mut_slice()
        .par_chunks_mut(k)
        .enumerate()
        .for_each(|(i, out_row)| {
            let x = batch.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = sq_dist(x, &centers[j * d..(j + 1) * d]);
            }
        });
    out
}

pub(crate) fn nearest_rows<T>(batch: &Matrix, centers: &[T], k: usize) -> Vec<usize>
where
    T: Copy + Into<f64> + Sync,
{
    let d = batch.cols();
    (0..batch.rows())
        .into_par_iter()
        .map(|i| {
            let x = batch.row(i);
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for j in 0..k {
                let dist = sq_dist(x, &centers[j * d..(j + 1) * d]);
                if dist < best_dist {
                    best = j;
                    best_dist = dist;
                }
            }
            best
        })
        .collect()
}

#[inline]
pub(crate) fn sq_dist<T: Copy + Into<f64>>(x: &[f64], c: &[T]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let diff = a - b.into();
            diff * diff
        })
        .sum()
}

/// Dense N×K one-hot matrix for hard assignments.
pub fn one_hot(assignments: &[usize], k: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(assignments.len(), k);
    for (i, &a) in assignments.iter().enumerate() {
        if a >= k {
            return Err(Error::invalid(format!(
                "assignment {a} out of range for K={k}"
            )));
        }
        m.set(i, a, 1.0);
    }
    Ok(m)
}

/// Exact assignment histogram and usage perplexity.
pub fn usage_stats(assignments: &[usize], k: usize) -> Result<UsageStats> {
    let mut hit_counts = vec![0u64; k];
    for &a in assignments {
        *hit_counts
            .get_mut(a)
            .ok_or_else(|| Error::invalid(format!("assignment {a} out of range for K={k}")))? += 1;
    }
    let total = assignments.len() as f64;
    let entropy: f64 = hit_counts
        .iter()
        .filter(|&&h| h > 0)
        .map(|&h| {
            let p = h as f64 / total;
            -p * p.ln()
        })
        .sum();
    let dead_codes = hit_counts.iter().filter(|&&h| h == 0).count();
    Ok(UsageStats {
        hit_counts,
        usage_perplexity: entropy.exp().clamp(1.0, k.max(1) as f64),
        dead_codes,
    })
}
