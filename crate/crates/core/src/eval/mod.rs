//! Monte-Carlo error rates, codebook distance profiles and first-error
//! statistics.

mod analysis;
mod codecs;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use analysis::{
    codeword_distance, distance_profile, first_error, first_error_histogram, gaussian_distance_moments,
    DistanceProfile, FirstErrorHistogram,
};
pub use codecs::{Codec, DeepPolar, PolarMl, PolarSc, Uncoded};

use crate::bits::Bits;
use crate::channel::{snr_db_to_sigma, ChannelModel};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Half-width of the 95% Wilson score interval for `errors` out of `trials`.
pub fn wilson_half_width(errors: u64, trials: u64) -> f64 {
    if trials == 0 {
        return 0.5;
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = Z95 * Z95;
    Z95 / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    pub channel: ChannelModel,
    pub snrs: Vec<f64>,
    pub batch: usize,
    pub min_block_errors: u64,
    pub max_blocks: u64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            channel: ChannelModel::Awgn,
            snrs: vec![-2.0, 0.0, 2.0],
            batch: 1000,
            min_block_errors: 100,
            max_blocks: 1_000_000,
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.max_blocks == 0 {
            return Err(Error::Config("batch and max_blocks must be positive".into()));
        }
        if self.snrs.is_empty() || self.snrs.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("snrs must be a non-empty list of numbers".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub snr_db: f64,
    pub blocks: u64,
    pub bit_errors: u64,
    pub block_errors: u64,
    pub ber: f64,
    pub bler: f64,
    pub ber_ci: f64,
    pub bler_ci: f64,
    /// No block error was seen; only the upper end of the interval is
    /// meaningful.
    pub one_sided: bool,
}

impl EvalRow {
    fn new(snr_db: f64, k: usize, blocks: u64, bit_errors: u64, block_errors: u64) -> Self {
        let bits = blocks * k as u64;
        Self {
            snr_db,
            blocks,
            bit_errors,
            block_errors,
            ber: bit_errors as f64 / bits.max(1) as f64,
            bler: block_errors as f64 / blocks.max(1) as f64,
            ber_ci: wilson_half_width(bit_errors, bits),
            bler_ci: wilson_half_width(block_errors, blocks),
            one_sided: block_errors == 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub codec: String,
    pub channel: ChannelModel,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// CSV with one row per SNR. Each line of `header` is written first as
    /// a `# ` comment.
    pub fn to_csv(&self, header: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = header {
            for line in h.lines() {
                let _ = writeln!(s, "# {line}");
            }
        }
        s.push_str("snr_db,blocks,bit_errors,block_errors,ber,bler,ber_ci,bler_ci,one_sided\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6e},{:.6e},{:.3e},{:.3e},{}",
                r.snr_db, r.blocks, r.bit_errors, r.block_errors, r.ber, r.bler, r.ber_ci, r.bler_ci, r.one_sided
            );
        }
        s
    }
}

/// Stream index of batch `batch` at sweep point `point`.
fn block_index(point: usize, batch: u64) -> u64 {
    ((point as u64) << 40) | batch
}

/// Simulates each SNR of `spec` in batches until `min_block_errors` block
/// errors or `max_blocks` blocks. Messages and noise of batch `b` at point
/// `p` come from fixed streams, so codecs with the same `(n, k)` see the
/// same messages and noise under the same seed.
pub fn monte_carlo(codec: &dyn Codec, spec: &EvalSpec, seed: u64) -> Result<EvalReport> {
    spec.validate()?;
    let (n, k) = (codec.n(), codec.k());
    let mut rows = Vec::with_capacity(spec.snrs.len());
    for (p, &snr) in spec.snrs.iter().enumerate() {
        let ch = spec.channel.at_sigma(snr_db_to_sigma(snr));
        ch.validate()?;
        let (mut blocks, mut bit_errors, mut block_errors) = (0u64, 0u64, 0u64);
        let mut b = 0u64;
        while blocks < spec.max_blocks && block_errors < spec.min_block_errors {
            let rows_now = (spec.max_blocks - blocks).min(spec.batch as u64) as usize;
            let idx = block_index(p, b);
            let u = Bits::random(rows_now, k, &mut stream_rng(seed, streams::EVAL_MESSAGES, idx));
            let x = codec.encode(&u)?;
            if x.cols() != n {
                return Err(Error::Input(format!("{} produced width {}", codec.name(), x.cols())));
            }
            let draw = ch.draw(rows_now, n, &mut stream_rng(seed, streams::EVAL_NOISE, idx));
            let y = draw.apply(&x);
            let uh = codec.decode(&y, &ch)?;
            codecs::check_shape(codec, &u, &uh)?;
            for r in 0..rows_now {
                let e = u.row(r).iter().zip(uh.row(r)).filter(|(a, b)| a != b).count() as u64;
                bit_errors += e;
                block_errors += u64::from(e > 0);
            }
            blocks += rows_now as u64;
            b += 1;
        }
        log::debug!(
            "{} at {snr} dB: {block_errors} block errors in {blocks} blocks",
            codec.name()
        );
        rows.push(EvalRow::new(snr, k, blocks, bit_errors, block_errors));
    }
    Ok(EvalReport {
        codec: codec.name(),
        channel: spec.channel,
        rows,
    })
}
