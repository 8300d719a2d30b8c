use super::encode::polar_encode;
use super::layout::CodeLayout;
use crate::error::{Error, Result};

/// Largest message length the exhaustive decoder accepts.
pub const ML_MAX_K: usize = 20;

/// Exhaustive minimum-distance decoder over the bipolar codebook.
#[derive(Clone, Debug)]
pub struct MlDecoder {
    k: usize,
    n: usize,
    codebook: Vec<f64>,
}

impl MlDecoder {
    pub fn new(layout: &CodeLayout) -> Result<Self> {
        let (k, n) = (layout.k(), layout.n());
        if k > ML_MAX_K {
            return Err(Error::Unsupported(format!(
                "exhaustive decoding with k = {k} > {ML_MAX_K}"
            )));
        }
        let mut codebook = Vec::with_capacity(n << k);
        for idx in 0..1usize << k {
            let u = Self::message(idx, k);
            let x = polar_encode(layout, &u)?;
            codebook.extend(x.iter().map(|&b| 1.0 - 2.0 * b as f64));
        }
        Ok(Self { k, n, codebook })
    }

    /// Message with lexicographic rank `idx` (u_0 most significant).
    fn message(idx: usize, k: usize) -> Vec<u8> {
        (0..k).map(|i| ((idx >> (k - 1 - i)) & 1) as u8).collect()
    }

    /// Message whose codeword is closest to `y`; ties go to the
    /// lexicographically smallest message.
    pub fn decode(&self, y: &[f64]) -> Result<Vec<u8>> {
        if y.len() != self.n {
            return Err(Error::Input(format!("{} samples for block length {}", y.len(), self.n)));
        }
        let mut best = (f64::INFINITY, 0usize);
        for (idx, c) in self.codebook.chunks_exact(self.n).enumerate() {
            let d: f64 = c.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, idx);
            }
        }
        Ok(Self::message(best.1, self.k))
    }
}

/// One-shot exhaustive ML decoding. `sigma` does not change the decision
/// on an AWGN channel; it is validated only.
pub fn ml_decode(layout: &CodeLayout, y: &[f64], sigma: f64) -> Result<Vec<u8>> {
    if !(sigma > 0.0) {
        return Err(Error::Input(format!("noise level {sigma} must be positive")));
    }
    MlDecoder::new(layout)?.decode(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polar_2_1_example() {
        let l = CodeLayout::new(2, 2, &[1]).unwrap();
        // codewords (+1,+1) and (-1,-1): distances 1.70 and 2.50
        assert_eq!(ml_decode(&l, &[0.3, -0.1], 1.0).unwrap(), vec![0]);
    }

    #[test]
    fn exact_codeword_is_recovered() {
        let l = CodeLayout::new(8, 2, &[3, 5, 6, 7]).unwrap();
        let dec = MlDecoder::new(&l).unwrap();
        for idx in 0..16usize {
            let u = MlDecoder::message(idx, 4);
            let y: Vec<f64> = polar_encode(&l, &u)
                .unwrap()
                .iter()
                .map(|&b| 1.0 - 2.0 * b as f64)
                .collect();
            assert_eq!(dec.decode(&y).unwrap(), u);
        }
    }

    #[test]
    fn ties_go_to_smallest_message() {
        let l = CodeLayout::new(2, 2, &[1]).unwrap();
        assert_eq!(ml_decode(&l, &[0.0, 0.0], 1.0).unwrap(), vec![0]);
    }

    #[test]
    fn large_k_refused() {
        let info: Vec<usize> = (0..21).collect();
        let l = CodeLayout::new(32, 2, &info).unwrap();
        assert!(matches!(MlDecoder::new(&l), Err(Error::Unsupported(_))));
    }
}
