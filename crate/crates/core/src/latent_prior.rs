//! Count-based autoregressive prior over sequences of discrete latent codes,
//! and the bits/dim bound that combines it with the reconstruction loss.
//!
//! An [`NgramPrior`] of order `n` predicts each code from the previous
//! `n − 1` codes, padding the start of a sequence with a dedicated start
//! token. Probabilities use additive smoothing; contexts never seen in
//! training predict the uniform distribution.

use std::collections::BTreeMap;
use std::f64::consts::LOG2_E;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_ORDER: usize = 2;
pub const DEFAULT_ALPHA: f64 = 0.1;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct NgramPrior {
    order: usize,
    k: usize,
    alpha: f64,
    /// Context (oldest first, start token = `k`) to per-code counts.
    counts: BTreeMap<Vec<usize>, Vec<f64>>,
}

/// Held-out evaluation of a prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorEvaluation {
    /// Mean negative log-probability per latent, in nats.
    pub nats_per_latent: f64,
    pub positions: usize,
    /// Latents the prior assigned probability zero (only possible with alpha = 0).
    pub zero_probability_events: usize,
}

fn check_params(order: usize, k: usize, alpha: f64) -> Result<()> {
    if order == 0 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::invalid(format!(
            "alpha {alpha} must be finite and nonnegative"
        )));
    }
    Ok(())
}

impl NgramPrior {
    pub fn empty(order: usize, k: usize, alpha: f64) -> Result<Self> {
        check_params(order, k, alpha)?;
        Ok(Self {
            order,
            k,
            alpha,
            counts: BTreeMap::new(),
        })
    }

    /// Exact context counts over integer code sequences.
    pub fn fit(sequences: &[Vec<usize>], order: usize, k: usize, alpha: f64) -> Result<Self> {
        let mut prior = Self::empty(order, k, alpha)?;
        for seq in sequences {
            if let Some(&bad) = seq.iter().find(|&&z| z >= k) {
                return Err(Error::invalid(format!("code {bad} out of range for K={k}")));
            }
            for t in 0..seq.len() {
                let ctx = prior.context(seq, t);
                prior.counts.entry(ctx).or_insert_with(|| vec![0.0; k])[seq[t]] += 1.0;
            }
        }
        Ok(prior)
    }

    /// Fractional counts from soft targets, one T×K matrix per sequence.
    ///
    /// Each position adds the expected count of every (context, code) pair
    /// under independent per-position targets. One-hot targets reproduce
    /// [`NgramPrior::fit`] exactly.
    pub fn fit_smoothed(targets: &[Matrix], order: usize, alpha: f64) -> Result<Self> {
        let k = targets
            .first()
            .map(|m| m.cols())
            .ok_or_else(|| Error::invalid("no target sequences"))?;
        let mut prior = Self::empty(order, k, alpha)?;
        for (s, seq) in targets.iter().enumerate() {
            if seq.cols() != k {
                return Err(Error::shape("fit_smoothed target width", k, seq.cols()));
            }
            for (t, row) in seq.row_iter().enumerate() {
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::invalid(format!(
                        "target {s}:{t} has entries outside [0, 1]"
                    )));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::invalid(format!("target {s}:{t} sums to {total}")));
                }
            }
            for t in 0..seq.rows() {
                for (ctx, weight) in prior.soft_contexts(seq, t) {
                    let entry = prior.counts.entry(ctx).or_insert_with(|| vec![0.0; k]);
                    for (c, &p) in entry.iter_mut().zip(seq.row(t)) {
                        if p > 0.0 {
                            *c += weight * p;
                        }
                    }
                }
            }
        }
        Ok(prior)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Token used to pad contexts before the first position.
    pub fn start_token(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> &BTreeMap<Vec<usize>, Vec<f64>> {
        &self.counts
    }

    fn context(&self, seq: &[usize], t: usize) -> Vec<usize> {
        let n = self.order - 1;
        (0..n)
            .map(|back| {
                let offset = n - back;
                if t >= offset {
                    seq[t - offset]
                } else {
                    self.k
                }
            })
            .collect()
    }

    /// All contexts with nonzero probability at position `t` and their weights.
    fn soft_contexts(&self, seq: &Matrix, t: usize) -> Vec<(Vec<usize>, f64)> {
        let n = self.order - 1;
        let mut out = vec![(Vec::with_capacity(n), 1.0)];
        for back in 0..n {
            let offset = n - back;
            if t < offset {
                for (ctx, _) in &mut out {
                    ctx.push(self.k);
                }
                continue;
            }
            let row = seq.row(t - offset);
            let mut next = Vec::with_capacity(out.len());
            for (ctx, w) in &out {
                for (j, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        let mut c = ctx.clone();
                        c.push(j);
                        next.push((c, w * p));
                    }
                }
            }
            out = next;
        }
        out
    }

    /// Smoothed conditional distribution over the next code.
    pub fn distribution(&self, context: &[usize]) -> Vec<f64> {
        let uniform = vec![1.0 / self.k as f64; self.k];
        let Some(counts) = self.counts.get(context) else {
            return uniform;
        };
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return uniform;
        }
        let denom = total + self.alpha * self.k as f64;
        counts.iter().map(|&c| (c + self.alpha) / denom).collect()
    }

    pub fn prob(&self, context: &[usize], code: usize) -> f64 {
        self.distribution(context).get(code).copied().unwrap_or(0.0)
    }

    /// Most probable next code (lowest index on ties).
    pub fn predict(&self, context: &[usize]) -> usize {
        let dist = self.distribution(context);
        let mut best = 0;
        for (j, &p) in dist.iter().enumerate() {
            if p > dist[best] {
                best = j;
            }
        }
        best
    }

    pub fn evaluate(&self, sequences: &[Vec<usize>]) -> Result<PriorEvaluation> {
        let mut nll = 0.0;
        let mut positions = 0;
        let mut zero = 0;
        for seq in sequences {
            for t in 0..seq.len() {
                if seq[t] >= self.k {
                    return Err(Error::invalid(format!(
                        "code {} out of range for K={}",
                        seq[t], self.k
                    )));
                }
                let p = self.prob(&self.context(seq, t), seq[t]);
                if p == 0.0 {
                    zero += 1;
                }
                nll -= p.ln();
                positions += 1;
            }
        }
        if positions == 0 {
            return Err(Error::invalid("no latent positions to evaluate"));
        }
        Ok(PriorEvaluation {
            nats_per_latent: nll / positions as f64,
            positions,
            zero_probability_events: zero,
        })
    }

    /// Mean negative log-probability per latent (`l_lp`), in nats.
    /// Infinite when the prior assigns zero probability to some latent.
    pub fn log_perplexity(&self, sequences: &[Vec<usize>]) -> Result<f64> {
        Ok(self.evaluate(sequences)?.nats_per_latent)
    }

    /// Sorted text form: a header line, then one `context<TAB>code<TAB>count`
    /// line per nonzero count. Contexts are comma-separated, `^` is the start
    /// token and `-` the empty context.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "ngram order={} k={} alpha={}\n",
            self.order, self.k, self.alpha
        );
        for (ctx, counts) in &self.counts {
            let ctx_str = if ctx.is_empty() {
                "-".to_string()
            } else {
                ctx.iter()
                    .map(|&c| {
                        if c == self.k {
                            "^".to_string()
                        } else {
                            c.to_string()
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(",")
            };
            for (j, &c) in counts.iter().enumerate() {
                if c != 0.0 {
                    writeln!(out, "{ctx_str}\t{j}\t{c}").unwrap();
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("empty prior file"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("ngram") {
            return Err(Error::format("prior header must start with `ngram`"));
        }
        let mut order = None;
        let mut k = None;
        let mut alpha = None;
        for f in fields {
            let (key, value) = f
                .split_once('=')
                .ok_or_else(|| Error::format(format!("bad header field `{f}`")))?;
            let bad = || Error::format(format!("bad header value `{f}`"));
            match key {
                "order" => order = Some(value.parse::<usize>().map_err(|_| bad())?),
                "k" => k = Some(value.parse::<usize>().map_err(|_| bad())?),
                "alpha" => alpha = Some(value.parse::<f64>().map_err(|_| bad())?),
                _ => return Err(Error::format(format!("unknown header field `{key}`"))),
            }
        }
        let (Some(order), Some(k), Some(alpha)) = (order, k, alpha) else {
            return Err(Error::format("prior header needs order, k and alpha"));
        };
        let mut prior = Self::empty(order, k, alpha).map_err(|e| Error::format(e.to_string()))?;
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::format(format!("bad prior line {}: `{line}`", n + 2));
            let mut parts = line.split('\t');
            let (Some(ctx), Some(code), Some(count), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad());
            };
            let ctx: Vec<usize> = if ctx == "-" {
                Vec::new()
            } else {
                ctx.split(',')
                    .map(|t| {
                        if t == "^" {
                            Ok(k)
                        } else {
                            t.parse::<usize>().map_err(|_| bad())
                        }
                    })
                    .collect::<Result<_>>()?
            };
            let code: usize = code.parse().map_err(|_| bad())?;
            let count: f64 = count.parse().map_err(|_| bad())?;
            if ctx.len() != order - 1
                || ctx.iter().any(|&c| c > k)
                || code >= k
                || !(count.is_finite() && count >= 0.0)
            {
                return Err(bad());
            }
            prior.counts.entry(ctx).or_insert_with(|| vec![0.0; k])[code] = count;
        }
        Ok(prior)
    }
}

/// Negative log-likelihood bound per data dimension, in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitsPerDim {
    /// Reconstruction loss per data position, nats.
    pub l_p: f64,
    /// Prior loss per latent, nats.
    pub l_lp: f64,
    pub n_x: usize,
    pub n_z: usize,
    pub value: f64,
}

/// `((l_p·n_x + l_lp·n_z) / n_x) · log₂e`.
pub fn bits_per_dim(l_p: f64, l_lp: f64, n_x: usize, n_z: usize) -> Result<BitsPerDim> {
    if n_x == 0 || n_z == 0 {
        return Err(Error::invalid("n_x and n_z must be positive"));
    }
    if l_p.is_nan() || l_lp.is_nan() || l_p < 0.0 || l_lp < 0.0 {
        return Err(Error::invalid(format!(
            "losses must be nonnegative (l_p={l_p}, l_lp={l_lp})"
        )));
    }
    let (nx, nz) = (n_x as f64, n_z as f64);
    Ok(BitsPerDim {
        l_p,
        l_lp,
        n_x,
        n_z,
        value: ((l_p * nx + l_lp * nz) / nx) * LOG2_E,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unigram_on_constant_sequence() {
        let p = NgramPrior::fit(&[vec![0, 0, 0]], 1, 3, 0.0).unwrap();
        assert_eq!(p.prob(&[], 0), 1.0);
        assert_eq!(p.log_perplexity(&[vec![0, 0, 0]]).unwrap(), 0.0);
    }

    #[test]
    fn bigram_alternation() {
        let p = NgramPrior::fit(&[vec![0, 1, 0, 1]], 2, 2, 0.0).unwrap();
        assert_eq!(p.prob(&[0], 1), 1.0);
        assert_eq!(p.prob(&[1], 0), 1.0);
        assert_eq!(p.prob(&[p.start_token()], 0), 1.0);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let p = NgramPrior::fit(&[vec![0, 1]], 2, 4, 0.5).unwrap();
        assert_eq!(p.distribution(&[3]), vec![0.25; 4]);
    }

    #[test]
    fn uniform_prior_costs_ln_k() {
        let p = NgramPrior::empty(2, 256, 0.1).unwrap();
        let l = p.log_perplexity(&[vec![1, 200, 3], vec![9]]).unwrap();
        assert!((l - 256f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_reports_infinity() {
        let p = NgramPrior::fit(&[vec![0, 0]], 1, 2, 0.0).unwrap();
        let e = p.evaluate(&[vec![1]]).unwrap();
        assert!(e.nats_per_latent.is_infinite());
        assert_eq!(e.zero_probability_events, 1);
    }

    #[test]
    fn out_of_range_code_rejected() {
        assert!(NgramPrior::fit(&[vec![0, 5]], 2, 3, 0.1).is_err());
    }

    #[test]
    fn half_half_soft_target() {
        let t = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let p = NgramPrior::fit_smoothed(&[t], 1, 0.0).unwrap();
        assert_eq!(p.distribution(&[]), vec![0.5, 0.5]);
    }

    #[test]
    fn text_roundtrip() {
        let p = NgramPrior::fit(&[vec![0, 2, 1, 2, 2], vec![1, 1]], 3, 3, 0.25).unwrap();
        let text = p.to_text();
        assert!(text.starts_with("ngram order=3 k=3 alpha=0.25\n"));
        assert_eq!(NgramPrior::from_text(&text).unwrap(), p);
        assert!(NgramPrior::from_text("gram order=1").is_err());
    }

    #[test]
    fn bits_per_dim_examples() {
        let b = bits_per_dim(2f64.ln(), 0.0, 10, 10).unwrap();
        assert!((b.value - 1.0).abs() < 1e-15);
        assert!(bits_per_dim(1.0, 1.0, 0, 4).is_err());
        assert!(bits_per_dim(-1.0, 1.0, 4, 4).is_err());
    }
}
