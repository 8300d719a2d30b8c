//! Noise models and SNR bookkeeping.
//!
//! SNR is per real symbol with unit symbol power: `sigma = 10^(-snr_db / 20)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::rng::{stream_rng, streams};

pub fn snr_db_to_sigma(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

pub fn sigma_to_snr_db(sigma: f64) -> f64 {
    -20.0 * sigma.log10()
}

/// A fully specified corruption law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    /// `y = x + z`
    Awgn { sigma: f64 },
    /// `y_i = h_i x_i + z_i`, `h_i ~ N(0, 1)` drawn per symbol.
    RayleighFast { sigma: f64 },
    /// `y = x + z + w`, `w_i ~ N(0, sigma_b^2)` with probability `rho`.
    Bursty { sigma: f64, rho: f64, sigma_b: f64 },
}

/// Channel family without a noise level; the level comes from an SNR.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelModel {
    #[default]
    Awgn,
    RayleighFast,
    /// Burst std is `burst_ratio * sigma` when `absolute_burst` is false,
    /// otherwise `burst_ratio` itself.
    Bursty {
        rho: f64,
        burst_ratio: f64,
        #[serde(default)]
        absolute_burst: bool,
    },
}

impl ChannelModel {
    pub fn at_sigma(&self, sigma: f64) -> ChannelSpec {
        match *self {
            ChannelModel::Awgn => ChannelSpec::Awgn { sigma },
            ChannelModel::RayleighFast => ChannelSpec::RayleighFast { sigma },
            ChannelModel::Bursty {
                rho,
                burst_ratio,
                absolute_burst,
            } => ChannelSpec::Bursty {
                sigma,
                rho,
                sigma_b: if absolute_burst {
                    burst_ratio
                } else {
                    burst_ratio * sigma
                },
            },
        }
    }

    pub fn at_snr_db(&self, snr_db: f64) -> ChannelSpec {
        self.at_sigma(snr_db_to_sigma(snr_db))
    }
}

/// One realization of the channel for a batch: `y = gain * x + noise`.
#[derive(Clone, Debug)]
pub struct ChannelDraw {
    pub gain: Option<Mat>,
    pub noise: Mat,
    /// Which entries received a burst (bursty channel only).
    pub bursts: Option<Vec<bool>>,
}

impl ChannelDraw {
    pub fn apply(&self, x: &Mat) -> Mat {
        let mut y = x.clone();
        if let Some(h) = &self.gain {
            for (v, g) in y.data_mut().iter_mut().zip(h.data()) {
                *v *= g;
            }
        }
        y.add_assign(&self.noise);
        y
    }
}

impl ChannelSpec {
    pub fn sigma(&self) -> f64 {
        match *self {
            ChannelSpec::Awgn { sigma } | ChannelSpec::RayleighFast { sigma } | ChannelSpec::Bursty { sigma, .. } => {
                sigma
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigma = self.sigma();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Input(format!("noise std {sigma} must be positive")));
        }
        if let ChannelSpec::Bursty { rho, sigma_b, .. } = *self {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::Input(format!("burst probability {rho} outside [0, 1]")));
            }
            if !(sigma_b >= 0.0 && sigma_b.is_finite()) {
                return Err(Error::Input(format!("burst std {sigma_b} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Draws gains and noise for a `rows x cols` batch.
    pub fn draw<R: Rng + ?Sized>(&self, rows: usize, cols: usize, rng: &mut R) -> ChannelDraw {
        let len = rows * cols;
        let sigma = self.sigma();
        let mut noise = Vec::with_capacity(len);
        let mut gain = None;
        let mut bursts = None;
        match *self {
            ChannelSpec::Awgn { .. } => {
                for _ in 0..len {
                    let z: f64 = rng.sample(StandardNormal);
                    noise.push(sigma * z);
                }
            }
            ChannelSpec::RayleighFast { .. } => {
                let mut h = Vec::with_capacity(len);
                for _ in 0..len {
                    let hv: f64 = rng.sample(StandardNormal);
                    let z: f64 = rng.sample(StandardNormal);
                    h.push(hv);
                    noise.push(sigma * z);
                }
                gain = Some(Mat::from_vec(rows, cols, h).expect("shape"));
            }
            ChannelSpec::Bursty { rho, sigma_b, .. } => {
                let mut active = Vec::with_capacity(len);
                for _ in 0..len {
                    let z: f64 = rng.sample(StandardNormal);
                    let mut v = sigma * z;
                    let on = rng.random::<f64>() < rho;
                    if on {
                        let w: f64 = rng.sample(StandardNormal);
                        v += sigma_b * w;
                    }
                    active.push(on);
                    noise.push(v);
                }
                bursts = Some(active);
            }
        }
        ChannelDraw {
            gain,
            noise: Mat::from_vec(rows, cols, noise).expect("shape"),
            bursts,
        }
    }
}

/// Passes a batch of codewords through the channel. The same
/// `(spec, x, seed)` always gives the same output.
pub fn apply_channel(spec: &ChannelSpec, x: &Mat, seed: u64) -> Result<Mat> {
    spec.validate()?;
    if !x.is_finite() {
        return Err(Error::Numeric("non-finite channel input".into()));
    }
    let mut rng = stream_rng(seed, streams::NOISE, 0);
    Ok(spec.draw(x.rows(), x.cols(), &mut rng).apply(x))
}
