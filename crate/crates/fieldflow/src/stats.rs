//! Monte-Carlo reduction machinery: pairwise sums, batch-mean standard
//! errors, and a streaming accumulator for self-normalized tilted averages
//! `⟨x⟩_w = Σ w_i x_i / Σ w_i`, `w_i = e^{l_i}`, kept stable by an online
//! max shift.
//!
//! Parallel reductions chunk the sample index range at a fixed width and
//! merge the per-chunk partials in index order, so results are bitwise
//! reproducible for a fixed seed regardless of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Fixed chunk width for deterministic parallel reductions.
pub const REDUCTION_CHUNK: usize = 1024;

/// Pairwise (tree) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// A scalar Monte-Carlo estimate with its standard error, sample count, and
/// effective sample size of the weights that produced it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
    pub ess: f64,
}

impl MCEstimate {
    pub fn exact(value: f64, n: usize) -> Self {
        Self {
            mean: value,
            se: 0.0,
            n,
            ess: n as f64,
        }
    }

    /// |a - b| ≤ k · sqrt(se_a² + se_b²)?
    pub fn agrees_with(&self, other: &MCEstimate, k: f64) -> bool {
        let combined = (self.se * self.se + other.se * other.se).sqrt();
        (self.mean - other.mean).abs() <= k * combined
    }
}

/// Mean and standard error of iid values.
pub fn mean_se(values: &[f64]) -> MCEstimate {
    let n = values.len();
    assert!(n >= 1);
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return MCEstimate {
            mean,
            se: 0.0,
            n,
            ess: 1.0,
        };
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    MCEstimate {
        mean,
        se: (var / n as f64).sqrt(),
        n,
        ess: n as f64,
    }
}

/// Batch-means estimate for (possibly autocorrelated) sequences: the series
/// is cut into `batches` contiguous blocks and the block means are treated
/// as iid.
pub fn batch_mean_se(values: &[f64], batches: usize) -> MCEstimate {
    let n = values.len();
    assert!(n >= 2);
    let b = batches.clamp(2, n / 2);
    let means: Vec<f64> = split_ranges(n, b)
        .into_iter()
        .map(|(lo, hi)| pairwise_sum(&values[lo..hi]) / (hi - lo) as f64)
        .collect();
    let est = mean_se(&means);
    MCEstimate {
        mean: est.mean,
        se: est.se,
        n,
        ess: n as f64,
    }
}

/// Contiguous near-equal index ranges covering `0..n`.
pub fn split_ranges(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let parts = parts.clamp(1, n.max(1));
    let base = n / parts;
    let extra = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut lo = 0;
    for i in 0..parts {
        let len = base + usize::from(i < extra);
        out.push((lo, lo + len));
        lo += len;
    }
    out
}

/// Streaming accumulator for tilted sums with log-weights.
///
/// Tracks `Σ w̃`, `Σ w̃²` and a payload vector `Σ w̃ · x_i` under a running
/// max shift `w̃_i = e^{l_i - max}`.
#[derive(Debug, Clone)]
pub struct TiltedAccumulator {
    max_lw: f64,
    sum_w: f64,
    sum_w2: f64,
    n: usize,
    payload: Vec<f64>,
}

impl TiltedAccumulator {
    pub fn new(payload_len: usize) -> Self {
        Self {
            max_lw: f64::NEG_INFINITY,
            sum_w: 0.0,
            sum_w2: 0.0,
            n: 0,
            payload: vec![0.0; payload_len],
        }
    }

    fn rescale(&mut self, new_max: f64) {
        if self.max_lw > f64::NEG_INFINITY {
            let r = (self.max_lw - new_max).exp();
            self.sum_w *= r;
            self.sum_w2 *= r * r;
            for p in &mut self.payload {
                *p *= r;
            }
        }
        self.max_lw = new_max;
    }

    /// Add one sample: `lw` is the log-weight, `sample` the payload vector.
    pub fn push(&mut self, lw: f64, sample: &[f64]) {
        debug_assert_eq!(sample.len(), self.payload.len());
        if lw > self.max_lw {
            self.rescale(lw);
        }
        let w = (lw - self.max_lw).exp();
        self.sum_w += w;
        self.sum_w2 += w * w;
        for (p, x) in self.payload.iter_mut().zip(sample) {
            *p += w * x;
        }
        self.n += 1;
    }

    pub fn merge(&mut self, other: &TiltedAccumulator) {
        if other.n == 0 {
            return;
        }
        if other.max_lw > self.max_lw {
            self.rescale(other.max_lw);
        }
        let r = (other.max_lw - self.max_lw).exp();
        self.sum_w += other.sum_w * r;
        self.sum_w2 += other.sum_w2 * r * r;
        for (p, q) in self.payload.iter_mut().zip(&other.payload) {
            *p += q * r;
        }
        self.n += other.n;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_log_weight(&self) -> f64 {
        self.max_lw
    }

    pub fn sum_weights(&self) -> f64 {
        self.sum_w
    }

    pub fn sum_weights_sq(&self) -> f64 {
        self.sum_w2
    }

    /// Effective sample size (Σw)²/Σw²; shift-invariant.
    pub fn ess(&self) -> f64 {
        if self.sum_w2 > 0.0 {
            self.sum_w * self.sum_w / self.sum_w2
        } else {
            0.0
        }
    }

    /// Tilted mean of payload slot `j`.
    pub fn tilted(&self, j: usize) -> f64 {
        self.payload[j] / self.sum_w
    }

    pub fn tilted_slice(&self) -> Vec<f64> {
        self.payload.iter().map(|p| p / self.sum_w).collect()
    }

    pub fn payload(&self) -> &[f64] {
        &self.payload
    }

    /// `-log( (Σ e^{l_i}) / n )`, the stabilized log-mean-exp with sign for
    /// the renormalized potential.
    pub fn neg_log_mean_weight(&self) -> f64 {
        -(self.max_lw + (self.sum_w / self.n as f64).ln())
    }

    /// Delta-method standard error of [`neg_log_mean_weight`]:
    /// sd(w)/(√n · mean(w)), shift-invariant.
    pub fn neg_log_mean_weight_se(&self) -> f64 {
        let n = self.n as f64;
        if self.n < 2 {
            return 0.0;
        }
        let mean_w = self.sum_w / n;
        let var_w = (self.sum_w2 / n - mean_w * mean_w).max(0.0) * n / (n - 1.0);
        var_w.sqrt() / (n.sqrt() * mean_w)
    }
}

/// Deterministic parallel tilted accumulation over `n` samples.
///
/// `eval(i, out)` fills the payload for sample `i` and returns its
/// log-weight. Samples are processed in fixed chunks of [`REDUCTION_CHUNK`]
/// and merged in chunk order.
pub fn accumulate_tilted<F>(n: usize, payload_len: usize, eval: F) -> TiltedAccumulator
where
    F: Fn(usize, &mut [f64]) -> f64 + Sync,
{
    let ranges = split_chunks(n);
    let partials: Vec<TiltedAccumulator> = ranges
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut acc = TiltedAccumulator::new(payload_len);
            let mut buf = vec![0.0; payload_len];
            for i in lo..hi {
                let lw = eval(i, &mut buf);
                acc.push(lw, &buf);
            }
            acc
        })
        .collect();
    let mut total = TiltedAccumulator::new(payload_len);
    for p in &partials {
        total.merge(p);
    }
    total
}

/// Like [`accumulate_tilted`], but additionally returns per-block partials
/// for block-resampling standard errors. Blocks are contiguous index ranges.
pub fn accumulate_tilted_blocked<F>(
    n: usize,
    blocks: usize,
    payload_len: usize,
    eval: F,
) -> (TiltedAccumulator, Vec<TiltedAccumulator>)
where
    F: Fn(usize, &mut [f64]) -> f64 + Sync,
{
    let blocks = blocks.clamp(1, n.max(1));
    let per_block: Vec<TiltedAccumulator> = split_ranges(n, blocks)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut acc = TiltedAccumulator::new(payload_len);
            let mut buf = vec![0.0; payload_len];
            for i in lo..hi {
                let lw = eval(i, &mut buf);
                acc.push(lw, &buf);
            }
            acc
        })
        .collect();
    let mut total = TiltedAccumulator::new(payload_len);
    for p in &per_block {
        total.merge(p);
    }
    (total, per_block)
}

fn split_chunks(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n / REDUCTION_CHUNK + 1);
    let mut lo = 0;
    while lo < n {
        let hi = (lo + REDUCTION_CHUNK).min(n);
        out.push((lo, hi));
        lo = hi;
    }
    out
}

/// Mean ± SE over per-block statistics: `f` maps each block accumulator to a
/// scalar, the spread across blocks gives the error bar.
pub fn block_statistic<F: Fn(&TiltedAccumulator) -> f64>(
    blocks: &[TiltedAccumulator],
    pooled_value: f64,
    f: F,
) -> MCEstimate {
    let vals: Vec<f64> = blocks.iter().filter(|b| b.n() > 0).map(&f).collect();
    if vals.len() < 2 {
        return MCEstimate {
            mean: pooled_value,
            se: 0.0,
            n: vals.len(),
            ess: vals.len() as f64,
        };
    }
    let est = mean_se(&vals);
    MCEstimate {
        mean: pooled_value,
        se: est.se,
        n: vals.len(),
        ess: vals.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pairwise_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert_relative_eq!(pairwise_sum(&v), naive, max_relative = 1e-12);
    }

    #[test]
    fn tilted_accumulator_matches_direct() {
        let lws = [-3.0, 0.5, 1.2, -0.7, 2.0, 2.0];
        let xs = [1.0, -2.0, 0.5, 3.0, -1.0, 0.25];
        let mut acc = TiltedAccumulator::new(1);
        for (lw, x) in lws.iter().zip(&xs) {
            acc.push(*lw, &[*x]);
        }
        let ws: Vec<f64> = lws.iter().map(|l| l.exp()).collect();
        let wsum: f64 = ws.iter().sum();
        let expect: f64 = ws.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / wsum;
        assert_relative_eq!(acc.tilted(0), expect, max_relative = 1e-12);
        let ess = wsum * wsum / ws.iter().map(|w| w * w).sum::<f64>();
        assert_relative_eq!(acc.ess(), ess, max_relative = 1e-12);
        assert_relative_eq!(
            acc.neg_log_mean_weight(),
            -(wsum / 6.0).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn merge_is_exact_under_shifts() {
        let mut a = TiltedAccumulator::new(1);
        let mut b = TiltedAccumulator::new(1);
        let mut whole = TiltedAccumulator::new(1);
        for i in 0..40 {
            let lw = (i as f64 * 0.37).sin() * 50.0;
            let x = (i as f64).cos();
            whole.push(lw, &[x]);
            if i < 17 {
                a.push(lw, &[x]);
            } else {
                b.push(lw, &[x]);
            }
        }
        a.merge(&b);
        assert_relative_eq!(a.tilted(0), whole.tilted(0), max_relative = 1e-12);
        assert_relative_eq!(a.ess(), whole.ess(), max_relative = 1e-12);
    }

    #[test]
    fn parallel_accumulation_is_deterministic() {
        let eval = |i: usize, out: &mut [f64]| {
            out[0] = (i as f64).sqrt();
            -0.001 * i as f64
        };
        let a = accumulate_tilted(5000, 1, eval);
        let b = accumulate_tilted(5000, 1, eval);
        assert_eq!(a.tilted(0).to_bits(), b.tilted(0).to_bits());
        assert_eq!(a.sum_weights().to_bits(), b.sum_weights().to_bits());
    }

    #[test]
    fn batch_means_reasonable_on_iid() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..4096).map(|_| rng.random::<f64>()).collect();
        let plain = mean_se(&v);
        let batched = batch_mean_se(&v, 32);
        assert_relative_eq!(plain.mean, batched.mean, max_relative = 1e-12);
        assert!(batched.se < 3.0 * plain.se && batched.se > plain.se / 3.0);
    }
}
