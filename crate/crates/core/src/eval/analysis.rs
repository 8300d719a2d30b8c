use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use super::codecs::{check_shape, Codec};
use crate::bits::Bits;
use crate::channel::ChannelSpec;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

/// Euclidean distance between the codewords of two messages.
pub fn codeword_distance(codec: &dyn Codec, u1: &[u8], u2: &[u8]) -> Result<f64> {
    let x = codec.encode(&Bits::from_rows(&[u1.to_vec(), u2.to_vec()])?)?;
    Ok(x.row(0)
        .iter()
        .zip(x.row(1))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub n: usize,
    pub pairs: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// `(bin_low, bin_high, count)`
    pub histogram: Vec<(f64, f64, u64)>,
    /// Distance mean and std between two i.i.d. unit-variance Gaussian
    /// codewords of length `n`.
    pub gaussian_mean: f64,
    pub gaussian_std: f64,
    /// Expected Gaussian-codebook count per histogram bin.
    pub gaussian_counts: Vec<f64>,
}

/// Mean and std of `|c1 - c2|` for independent `N(0, I_n)` codewords:
/// `|c1 - c2|^2 / 2` is chi-squared with `n` degrees of freedom.
pub fn gaussian_distance_moments(n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = 2.0 * (ln_gamma((nf + 1.0) / 2.0) - ln_gamma(nf / 2.0)).exp();
    (mean, (2.0 * nf - mean * mean).max(0.0).sqrt())
}

impl DistanceProfile {
    /// `bin_low,bin_high,count,gaussian_expected`
    pub fn histogram_csv(&self, header: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = header {
            for line in h.lines() {
                let _ = writeln!(s, "# {line}");
            }
        }
        s.push_str("bin_low,bin_high,count,gaussian_expected\n");
        for ((lo, hi, c), g) in self.histogram.iter().zip(&self.gaussian_counts) {
            let _ = writeln!(s, "{lo:.6},{hi:.6},{c},{g:.3}");
        }
        s
    }

    /// Number of local maxima in the histogram after merging equal
    /// neighbours; a rough unimodality check.
    pub fn peak_count(&self) -> usize {
        let counts: Vec<u64> = self.histogram.iter().map(|h| h.2).collect();
        let mut dedup: Vec<u64> = Vec::new();
        for c in counts {
            if dedup.last() != Some(&c) {
                dedup.push(c);
            }
        }
        (0..dedup.len())
            .filter(|&i| {
                let left = i == 0 || dedup[i - 1] < dedup[i];
                let right = i + 1 == dedup.len() || dedup[i + 1] < dedup[i];
                dedup[i] > 0 && left && right
            })
            .count()
    }
}

/// Pairwise codeword distances over `num_pairs` uniformly drawn message
/// pairs (equal pairs are redrawn), histogrammed into `bins` bins.
pub fn distance_profile(codec: &dyn Codec, num_pairs: usize, bins: usize, seed: u64) -> Result<DistanceProfile> {
    let (n, k) = (codec.n(), codec.k());
    if num_pairs == 0 || bins == 0 {
        return Err(Error::Config("num_pairs and bins must be positive".into()));
    }
    if k == 0 {
        return Err(Error::Input("code has a single codeword".into()));
    }
    let mut rng = stream_rng(seed, streams::ANALYSIS, 0);
    let mut a = Vec::with_capacity(num_pairs);
    let mut b = Vec::with_capacity(num_pairs);
    while a.len() < num_pairs {
        let pair = Bits::random(2, k, &mut rng);
        if pair.row(0) != pair.row(1) {
            a.push(pair.row(0).to_vec());
            b.push(pair.row(1).to_vec());
        }
    }
    let xa = codec.encode(&Bits::from_rows(&a)?)?;
    let xb = codec.encode(&Bits::from_rows(&b)?)?;
    let d: Vec<f64> = (0..num_pairs)
        .map(|r| {
            xa.row(r)
                .iter()
                .zip(xb.row(r))
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let m = d.len() as f64;
    let mean = d.iter().sum::<f64>() / m;
    let std = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m).sqrt();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let max = d.iter().copied().fold(0.0, f64::max);

    let (g_mean, g_std) = gaussian_distance_moments(n);
    let hi = max.max(g_mean + 6.0 * g_std).max(2.0 * (n as f64).sqrt()) * (1.0 + 1e-9);
    let width = hi / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in &d {
        counts[((v / width) as usize).min(bins - 1)] += 1;
    }
    let chi = ChiSquared::new(n as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    let cdf = |x: f64| chi.cdf(x * x / 2.0);
    let histogram: Vec<(f64, f64, u64)> = (0..bins)
        .map(|i| (i as f64 * width, (i + 1) as f64 * width, counts[i]))
        .collect();
    let gaussian_counts = histogram.iter().map(|&(lo, hi, _)| m * (cdf(hi) - cdf(lo))).collect();
    Ok(DistanceProfile {
        n,
        pairs: num_pairs,
        mean,
        std,
        min,
        max,
        histogram,
        gaussian_mean: g_mean,
        gaussian_std: g_std,
        gaussian_counts,
    })
}

/// Smallest information index where the estimate differs.
pub fn first_error(u: &[u8], estimate: &[u8]) -> Option<usize> {
    u.iter().zip(estimate).position(|(a, b)| a != b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstErrorHistogram {
    pub blocks: u64,
    pub erroneous: u64,
    /// Count per information index.
    pub counts: Vec<u64>,
}

impl FirstErrorHistogram {
    pub fn distribution(&self) -> Vec<f64> {
        let t = self.erroneous.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Most frequent first-error index; the lowest one on ties.
    pub fn mode(&self) -> Option<usize> {
        if self.erroneous == 0 {
            return None;
        }
        let best = *self.counts.iter().max()?;
        self.counts.iter().position(|&c| c == best)
    }

    /// `position,count`
    pub fn to_csv(&self, header: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = header {
            for line in h.lines() {
                let _ = writeln!(s, "# {line}");
            }
        }
        s.push_str("position,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{i},{c}");
        }
        s
    }
}

/// First-error positions over `num_blocks` blocks sent through `channel`.
pub fn first_error_histogram(
    codec: &dyn Codec,
    channel: &ChannelSpec,
    num_blocks: u64,
    batch: usize,
    seed: u64,
) -> Result<FirstErrorHistogram> {
    channel.validate()?;
    if batch == 0 {
        return Err(Error::Config("batch must be positive".into()));
    }
    let (n, k) = (codec.n(), codec.k());
    let mut hist = FirstErrorHistogram {
        blocks: 0,
        erroneous: 0,
        counts: vec![0; k],
    };
    let mut b = 0u64;
    while hist.blocks < num_blocks {
        let rows = (num_blocks - hist.blocks).min(batch as u64) as usize;
        let u = Bits::random(rows, k, &mut stream_rng(seed, streams::EVAL_MESSAGES, b));
        let x = codec.encode(&u)?;
        let y = channel
            .draw(rows, n, &mut stream_rng(seed, streams::EVAL_NOISE, b))
            .apply(&x);
        let uh = codec.decode(&y, channel)?;
        check_shape(codec, &u, &uh)?;
        for r in 0..rows {
            if let Some(i) = first_error(u.row(r), uh.row(r)) {
                hist.counts[i] += 1;
                hist.erroneous += 1;
            }
        }
        hist.blocks += rows as u64;
        b += 1;
    }
    Ok(hist)
}
