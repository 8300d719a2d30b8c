use serde::{Deserialize, Serialize};

use super::layout::CodeLayout;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScMode {
    Exact,
    MinSum,
}

/// Hard decisions on the information positions plus their decision LLRs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScOutput {
    pub bits: Vec<u8>,
    pub llrs: Vec<f64>,
}

const TANH_CLAMP: f64 = 1.0 - 1e-12;

/// Check-node update `2 atanh(tanh(a/2) tanh(b/2))`.
pub fn f_exact(a: f64, b: f64) -> f64 {
    let p = ((a / 2.0).tanh() * (b / 2.0).tanh()).clamp(-TANH_CLAMP, TANH_CLAMP);
    2.0 * p.atanh()
}

/// Min-sum approximation of [`f_exact`].
pub fn f_minsum(a: f64, b: f64) -> f64 {
    let s = if (a < 0.0) != (b < 0.0) { -1.0 } else { 1.0 };
    s * a.abs().min(b.abs())
}

/// Variable-node update given the left partial sum `beta`.
#[inline]
pub fn g_update(beta: u8, a: f64, b: f64) -> f64 {
    if beta == 0 {
        b + a
    } else {
        b - a
    }
}

/// AWGN channel LLRs `2 y / sigma^2` (positive favors bit 0).
pub fn awgn_llrs(y: &[f64], sigma: f64) -> Vec<f64> {
    let s = 2.0 / (sigma * sigma);
    y.iter().map(|v| v * s).collect()
}

struct Sc<'a> {
    frozen: &'a [bool],
    f: fn(f64, f64) -> f64,
    out: ScOutput,
}

impl Sc<'_> {
    fn node(&mut self, alpha: &[f64], offset: usize) -> Vec<u8> {
        let len = alpha.len();
        if len == 1 {
            if self.frozen[offset] {
                return vec![0];
            }
            let bit = u8::from(alpha[0] < 0.0);
            self.out.bits.push(bit);
            self.out.llrs.push(alpha[0]);
            return vec![bit];
        }
        let half = len / 2;
        let (a, b) = alpha.split_at(half);
        let left_alpha: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| (self.f)(x, y)).collect();
        let left = self.node(&left_alpha, offset);
        let right_alpha: Vec<f64> = (0..half).map(|i| g_update(left[i], a[i], b[i])).collect();
        let right = self.node(&right_alpha, offset + half);
        let mut beta: Vec<u8> = left.iter().zip(&right).map(|(l, r)| l ^ r).collect();
        beta.extend_from_slice(&right);
        beta
    }
}

/// Successive cancellation decoding of the (binary-equivalent) polar code.
///
/// Any power-of-two kernel layout in natural order describes the same code
/// as the 2x2 kernel, so the binary tree is used regardless of `ell`.
pub fn sc_decode(layout: &CodeLayout, channel_llrs: &[f64], mode: ScMode) -> Result<ScOutput> {
    if channel_llrs.len() != layout.n() {
        return Err(Error::Input(format!(
            "{} LLRs for block length {}",
            channel_llrs.len(),
            layout.n()
        )));
    }
    if channel_llrs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite channel LLR".into()));
    }
    let mut sc = Sc {
        frozen: layout.frozen_mask(),
        f: match mode {
            ScMode::Exact => f_exact,
            ScMode::MinSum => f_minsum,
        },
        out: ScOutput {
            bits: Vec::with_capacity(layout.k()),
            llrs: Vec::with_capacity(layout.k()),
        },
    };
    sc.node(channel_llrs, 0);
    Ok(sc.out)
}
